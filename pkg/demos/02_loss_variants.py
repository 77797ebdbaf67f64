"""
One batch, seven losses
=======================

Every re-weighting or re-targeting loss is evaluated on the same logits so
their values and gradients can be compared side by side.
"""

import numpy as np

from ltretrain import losses as L
from ltretrain.losses import LossSpec, logit_loss_and_grad, lort_targets

rng = np.random.default_rng(0)
counts = np.array([500, 120, 30, 5])
z = rng.standard_normal((6, 4)) * 2
y = np.array([0, 1, 2, 3, 3, 0])

# retargeted labels keep a little mass on every class
print("LORT targets, delta=0.98:", lort_targets(4, 0, 0.98))

for spec in (
    LossSpec(L.CE),
    LossSpec(L.LORT, delta=0.98),
    LossSpec(L.FOCAL, gamma=2.0),
    LossSpec(L.CB_CE, beta=0.999),
    LossSpec(L.CB_BCE, beta=0.999),
    LossSpec(L.LDAM),
    LossSpec(L.BALANCED_SOFTMAX),
):
    loss, G = logit_loss_and_grad(spec.resolve(counts), z, y, counts)
    print(f"{spec.method:>24}: mean loss {loss.mean():7.4f}   |dL/dz| {np.abs(G).mean():.4f}")
