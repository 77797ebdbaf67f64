"""
A long-tailed feature set
=========================

Frozen backbone features are stood in for by a Gaussian mixture whose
training split thins out exponentially from the head class to the tail.
"""

import numpy as np

from ltretrain.data import SyntheticSpec, class_stats, exponential_profile, generate_synthetic

# class sizes fall from 500 to 5 across 20 classes
counts = exponential_profile(20, 500, 100)
print("train counts:", counts.tolist())

train, test = generate_synthetic(SyntheticSpec(K=20, D=16, n_max=500, imbalance_ratio=100, seed=0))
print(f"train N={train.n}  test N={test.n}  D={train.dim}")

# Many / Medium / Few split used when reporting accuracy
stats = class_stats(train)
for g in ("Many", "Medium", "Few"):
    print(f"{g:>6}: {int(stats.group_mask(g).sum())} classes")

# the evaluation split is balanced
print("test counts:", np.unique(test.counts()).tolist())
