"""
Retraining the classifier head
==============================

A linear head is first trained with cross-entropy, then finetuned with
logits retargeting. Both runs are seeded and fully reproducible.
"""

from dataclasses import replace

from ltretrain import losses as L
from ltretrain.analysis import benchmark
from ltretrain.losses import LossSpec
from ltretrain.metrics import group_accuracy
from ltretrain.classifier import NO_POSTHOC
from ltretrain.training import train_classifier

b = benchmark(seed=0)
print("CE-pretrained head:", group_accuracy(b.pretrained, NO_POSTHOC, b.test, b.stats))

params, hist = train_classifier(b.train, b.test, LossSpec(L.LORT, delta=0.98), b.finetune, b.pretrained, b.stats)
for epoch in (0, 9, 19):
    print(f"epoch {epoch + 1:2d}: loss {hist.loss[epoch]:.4f}  lr {hist.lr[epoch]:.5f}  test acc {hist.eval_acc[epoch]:.1f}")

acc = group_accuracy(params, NO_POSTHOC, b.test, b.stats)
print("after LORT finetune (All, Many, Medium, Few):", tuple(round(a, 1) for a in acc))

# MaxNorm keeps every weight row inside a ball
capped, _ = train_classifier(b.train, None, LossSpec(L.CE), replace(b.finetune, maxnorm=1.0), b.pretrained, b.stats)
print("largest row norm with maxnorm=1:", float((capped.W ** 2).sum(axis=1).max() ** 0.5))
