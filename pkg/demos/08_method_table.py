"""
A desk-scale method table
=========================

Every retraining recipe finetunes the same CE-pretrained head on one seed of
the synthetic benchmark.
"""

from ltretrain import analysis as A

b = A.benchmark(seed=0)
methods = list(A.method_presets().values())
table = A.method_comparison(b.train, b.test, methods, b.finetune, b.pretrained, b.stats)

print(f"{'method':>8}    All   Many  Medium   Few")
for (name,), (all_, many, medium, few) in zip(table.keys, table.cells):
    print(f"{name:>8}  {all_:5.1f}  {many:5.1f}  {medium:5.1f}  {few:5.1f}")
