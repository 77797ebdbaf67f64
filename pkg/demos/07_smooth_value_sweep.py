"""
Sweeping the smooth value
=========================

Each cell finetunes the same CE head with a different LORT delta; delta=0 is
plain cross-entropy.
"""

from ltretrain import analysis as A

b = A.benchmark(seed=2)
sweep = A.delta_sweep(b.train, b.test, [0.0, 0.5, 0.9, 0.98, 0.99], b.finetune, b.pretrained, b.stats)
print(" delta    All   Many  Medium   Few")
for (delta,), (all_, many, medium, few) in zip(sweep.keys, sweep.cells):
    print(f"{delta:6.2f}  {all_:5.1f}  {many:5.1f}  {medium:5.1f}  {few:5.1f}")
