"""
Two facts about the softmax classifier
======================================

The cross-entropy loss is convex in the bias, and adding one vector to every
weight row moves the weight norms without changing a single probability.
"""

import numpy as np

from ltretrain.analysis import bias_hessian, psd_check, shift_invariance_check, shifted_params
from ltretrain.classifier import ClassifierParams
from ltretrain.losses import softmax
from ltretrain.metrics import weight_norms

rng = np.random.default_rng(0)
s = softmax(rng.standard_normal(8) * 2)
H = bias_hessian(s)
print("smallest eigenvalue of the bias Hessian:", np.linalg.eigvalsh(H).min())
print("smallest x H x over 1000 random directions:", psd_check(H, 1000, seed=0))
print("the all-ones direction:", np.ones(8) @ H @ np.ones(8))

params = ClassifierParams(rng.standard_normal((8, 5)), rng.standard_normal(8), np.ones(8))
X = rng.standard_normal((100, 5))
eps = rng.standard_normal(5)
eps *= 10 / np.linalg.norm(eps)
print("\nmax probability change after a common row shift:", shift_invariance_check(params, X, eps))
print("weight norms before:", np.round(weight_norms(params), 2))
print("weight norms after: ", np.round(weight_norms(shifted_params(params, eps)), 2))
