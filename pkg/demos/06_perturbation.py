"""
Logit noise and the lognormal mean
==================================

Noise proportional to r_i L_i is added to each class logit; when every class
has the same r_i L_i the mean softmax moves by the same factor everywhere.
"""

import math

import numpy as np

from ltretrain.analysis import PerturbationSpec, lognormal_mean_mc, perturbation_sim

est = lognormal_mean_mc(0.5, 1_000_000, seed=0)
print(f"E[exp(D)], D ~ N(0, 0.25): Monte Carlo {est:.5f}  exact {math.exp(0.125):.5f}")

rng = np.random.default_rng(0)
base = rng.standard_normal((500, 10)) + 4 * np.eye(10)[rng.integers(0, 10, 500)]

equal = perturbation_sim(np.full(10, 4.0), np.full(10, 0.25), PerturbationSpec(0.5, 200_000, seed=1), base)
print("\nequal r*L: ratios", np.round(equal.ratios, 4), f"spread {equal.spread:.4f}")

uneven = perturbation_sim(np.linspace(1, 8, 10), np.full(10, 0.25), PerturbationSpec(0.5, 200_000, seed=1), base)
print("uneven L:  ratios", np.round(uneven.ratios, 4), f"spread {uneven.spread:.4f}")
