"""
Logits Magnitude versus weight norm
===================================

The gap between mean positive and mean negative logits is tracked per class,
normalised so that methods at different scales can be compared.
"""

import numpy as np

from ltretrain import analysis as A
from ltretrain.metrics import binned_means, magnitude_spread

b = A.benchmark(seed=1)
presets = A.method_presets()
table = A.method_comparison(b.train, b.test, [presets["ce"], presets["lort"]], b.finetune, b.pretrained, b.stats)

for (name,), report in zip(table.keys, table.reports):
    print(f"\n{name}")
    print("  bin-averaged regularized magnitude:", np.round(binned_means(report.L_regularized), 3))
    print("  bin-averaged weight norm:          ", np.round(binned_means(report.weight_norms), 3))
    print(f"  max/min magnitude spread: {magnitude_spread(report.L_regularized):.3f}")
    print(f"  All {report.acc_all:.1f}  Few {report.acc_few:.1f}")
