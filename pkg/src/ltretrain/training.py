"""Seeded SGD retraining of a classifier head on frozen features."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .classifier import (
    COSINE,
    DEFAULT_COSINE_SCALE,
    HEADS,
    LINEAR,
    LWS,
    NO_POSTHOC,
    ClassifierParams,
    infer_logits,
    maxnorm_project,
    predict,
)
from .data import FeatureDataset, class_stats
from .errors import DivergenceError, InvalidArgument, InvalidDataset, NumericalDomainError
from .losses import LossSpec, batch_loss_and_grad, logit_loss_and_grad

SHUFFLE = "Shuffle"
CLASS_BALANCED = "ClassBalanced"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    lr0: float = 0.1
    weight_decay: float = 5e-4
    momentum: float = 0.9
    seed: int = 0
    sampler: str = SHUFFLE
    maxnorm: float | None = None
    cosine_scale: float = DEFAULT_COSINE_SCALE
    head: str = LINEAR

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgument("epochs and batch_size must be >= 1")
        if not (math.isfinite(self.lr0) and self.lr0 > 0):
            raise InvalidArgument("lr0 must be positive and finite")
        if not (math.isfinite(self.weight_decay) and self.weight_decay >= 0):
            raise InvalidArgument("weight_decay must be >= 0")
        if not 0 <= self.momentum < 1:
            raise InvalidArgument("momentum must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgument("seed must fit in an unsigned 64-bit integer")
        if self.sampler not in (SHUFFLE, CLASS_BALANCED):
            raise InvalidArgument(f"unknown sampler {self.sampler!r}")
        if self.maxnorm is not None and not self.maxnorm > 0:
            raise InvalidArgument("maxnorm must be positive")
        if not (math.isfinite(self.cosine_scale) and self.cosine_scale > 0):
            raise InvalidArgument("cosine_scale must be positive")
        if self.head not in HEADS:
            raise InvalidArgument(f"unknown head {self.head!r}")


@dataclass
class OptimizerState:
    vW: np.ndarray
    vb: np.ndarray
    vc: np.ndarray
    step: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(np.zeros_like(params.W), np.zeros_like(params.b), np.zeros_like(params.c))


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    eval_acc: list = field(default_factory=list)
    # LWS runs keep the preceding weight/bias phase here
    pretrain: "TrainHistory | None" = None

    def __len__(self):
        return len(self.loss)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "lr", "eval_acc"])
            for i, (loss, lr, acc) in enumerate(zip(self.loss, self.lr, self.eval_acc), start=1):
                w.writerow([i, repr(loss), repr(lr), "" if acc is None else repr(acc)])


def derive_seed(seed: int, *key) -> int:
    """Deterministic 64-bit sub-seed for a labelled stream."""
    h = hashlib.blake2b(repr((int(seed),) + key).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if total_steps < 1:
        raise InvalidArgument("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise InvalidArgument(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


def per_class_indices(labels, K):
    labels = np.asarray(labels)
    return [np.flatnonzero(labels == k) for k in range(K)]


def balanced_sample_indices(stats, per_class, epoch_len, seed):
    """Pick a class uniformly, then a member of it uniformly, with replacement.

    ``seed`` may be an int or a ``numpy.random.Generator`` (which is advanced).
    """
    if any(len(idx) == 0 for idx in per_class):
        raise InvalidDataset("every class needs at least one sample")
    K = len(per_class)
    if stats is not None and stats.num_classes != K:
        raise InvalidArgument("stats and index lists disagree on K")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    classes = rng.integers(0, K, size=epoch_len)
    sizes = np.array([len(idx) for idx in per_class])
    picks = np.floor(rng.random(epoch_len) * sizes[classes]).astype(np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    flat = np.concatenate(per_class)
    return flat[offsets[classes] + picks]


def sgd_step(params, grads, opt: OptimizerState, lr, weight_decay, momentum, trainable=("W", "b", "c")):
    """Heavy-ball SGD; weight decay touches W only. Updates in place and returns both."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericalDomainError(f"non-finite gradient at step {opt.step}")
    if "W" in trainable:
        opt.vW = momentum * opt.vW + (grads.W + weight_decay * params.W)
        params.W = params.W - lr * opt.vW
    if "b" in trainable:
        opt.vb = momentum * opt.vb + grads.b
        params.b = params.b - lr * opt.vb
    if "c" in trainable:
        opt.vc = momentum * opt.vc + grads.c
        params.c = params.c - lr * opt.vc
    opt.step += 1
    return params, opt


def accuracy(params, ds, cosine_scale=DEFAULT_COSINE_SCALE, posthoc=NO_POSTHOC, counts=None):
    z = infer_logits(params, ds.features, posthoc, counts, cosine_scale)
    return 100.0 * float(np.mean(predict(z) == ds.labels))


def _run(train, eval_ds, spec, cfg, params, stats, trainable, rng):
    N = train.n
    steps_per_epoch = math.ceil(N / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    sampler = CLASS_BALANCED if spec.use_resampling else cfg.sampler
    per_class = per_class_indices(train.labels, train.num_classes)
    opt = OptimizerState.for_params(params)
    hist = TrainHistory()
    X, y = train.features, train.labels
    for epoch in range(1, cfg.epochs + 1):
        if sampler == CLASS_BALANCED:
            order = balanced_sample_indices(stats, per_class, N, rng)
        else:
            order = rng.permutation(N)
        epoch_loss = 0.0
        lr = cfg.lr0
        for start in range(0, N, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads = batch_loss_and_grad(spec, params, stats, X[idx], y[idx], cfg.cosine_scale)
            except NumericalDomainError as exc:
                raise DivergenceError(str(exc), epoch - 1) from None
            if not math.isfinite(loss):
                raise DivergenceError("loss became non-finite", epoch - 1)
            lr = cosine_lr(opt.step, total, cfg.lr0)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    sgd_step(params, grads, opt, lr, cfg.weight_decay, cfg.momentum, trainable)
            except NumericalDomainError as exc:
                raise DivergenceError(str(exc), epoch - 1) from None
            if cfg.maxnorm is not None:
                params.W = maxnorm_project(params, cfg.maxnorm).W
            epoch_loss += loss * len(idx)
        if not (np.all(np.isfinite(params.W)) and np.all(np.isfinite(params.b)) and np.all(np.isfinite(params.c))):
            raise DivergenceError("parameters became non-finite", epoch - 1)
        hist.loss.append(epoch_loss / N)
        hist.lr.append(lr)
        hist.eval_acc.append(
            None if eval_ds is None else accuracy(params, eval_ds, cfg.cosine_scale)
        )
    return params, hist


def train_classifier(train: FeatureDataset, eval=None, spec=None, cfg=None, init=None, stats=None):
    """Retrain a classifier head on frozen features.

    The head type comes from ``init.head`` when ``init`` is given, else from
    ``cfg.head``. LWS without an initial checkpoint runs two phases of
    ``cfg.epochs`` each: W and b as a plain linear head, then only the scales
    c with W and b frozen. With an LWS ``init`` only the scales are trained.
    """
    spec = spec if spec is not None else LossSpec()
    cfg = cfg if cfg is not None else TrainConfig()
    if eval is not None and (eval.dim != train.dim or eval.num_classes != train.num_classes):
        raise InvalidArgument("train and eval datasets disagree on D or K")
    if stats is None:
        stats = class_stats(train)
    spec = spec.resolve(stats)
    head = init.head if init is not None else cfg.head
    K, D = train.num_classes, train.dim

    init_rng = np.random.default_rng(derive_seed(cfg.seed, "init"))
    sample_rng = np.random.default_rng(derive_seed(cfg.seed, "sample"))

    if init is not None:
        if init.W.shape != (K, D):
            raise InvalidArgument("initial checkpoint shape does not match the data")
        params = init.copy()
    else:
        params = ClassifierParams.init(K, D, init_rng, LINEAR if head == LWS else head)

    if head == LWS:
        pre = None
        if init is None:
            params, pre = _run(train, eval, spec, cfg, params, stats, ("W", "b"), sample_rng)
            params = params.with_head(LWS)
        params, hist = _run(train, eval, spec, cfg, params, stats, ("c",), sample_rng)
        hist.pretrain = pre
        if np.any(params.c <= 0):
            raise DivergenceError("LWS scales left the positive orthant", cfg.epochs - 1)
        return params, hist

    trainable = ("W",) if head == COSINE else ("W", "b")
    return _run(train, eval, spec, cfg, params, stats, trainable, sample_rng)


def train_bias_only(X, y, W, b0, counts, spec=None, epochs=200, lr=0.5):
    """Full-batch gradient descent on the bias with W frozen; returns (b, loss)."""
    spec = spec if spec is not None else LossSpec()
    params = ClassifierParams(W, b0, np.ones(len(b0)))
    for _ in range(epochs):
        loss, g = batch_loss_and_grad(spec, params, counts, X, y)
        params.b = params.b - lr * g.b
    loss, _ = batch_loss_and_grad(spec, params, counts, X, y)
    return params.b, loss


def relative_error(analytic, numeric) -> float:
    """Norm-wise relative error ||a - n|| / max(||a||, ||n||), 0 when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def stacked_logits(Ws, bs, cs, head, X, cosine_scale=DEFAULT_COSINE_SCALE):
    """Logits for P parameter sets at once: (P, K, D), (P, K), (P, K) -> (P, N, K)."""
    if head == COSINE:
        Wh = Ws / np.linalg.norm(Ws, axis=2, keepdims=True)
        Xh = X / np.linalg.norm(X, axis=1, keepdims=True)
        return cosine_scale * np.einsum("nd,pkd->pnk", Xh, Wh)
    u = np.einsum("nd,pkd->pnk", X, Ws)
    if head == LWS:
        u = cs[:, None, :] * u
    return u + bs[:, None, :]


def gradcheck(spec, K, D, trials=100, h=1e-5, head=LINEAR, seed=0, batch=3, cosine_scale=DEFAULT_COSINE_SCALE):
    """Worst relative error between analytic and central-difference gradients.

    Each trial draws random parameters, a small batch of features and labels,
    and random class counts, then differentiates the scalar batch loss with
    respect to every entry of W, b and c. All 2P shifted parameter vectors of
    a trial are evaluated in one stacked pass.
    """
    rng = np.random.default_rng(derive_seed(seed, "gradcheck", spec.method, head, K, D))
    worst = 0.0
    P = K * D + 2 * K
    shifts = np.concatenate([np.eye(P) * h, -np.eye(P) * h])
    for _ in range(trials):
        counts = rng.integers(1, 200, size=K)
        rspec = spec.resolve(counts)
        W = rng.standard_normal((K, D))
        b = rng.standard_normal(K) * 0.5 if head != COSINE else np.zeros(K)
        c = rng.uniform(0.5, 2.0, size=K) if head == LWS else np.ones(K)
        params = ClassifierParams(W, b, c, head)
        X = rng.standard_normal((batch, D))
        y = rng.integers(0, K, size=batch)
        _, g = batch_loss_and_grad(rspec, params, counts, X, y, cosine_scale)
        analytic = np.concatenate([g.W.ravel(), g.b, g.c])

        thetas = np.concatenate([W.ravel(), b, c])[None, :] + shifts
        Ws = thetas[:, : K * D].reshape(-1, K, D)
        z = stacked_logits(Ws, thetas[:, K * D : K * D + K], thetas[:, K * D + K :], head, X, cosine_scale)
        losses, _ = logit_loss_and_grad(rspec, z.reshape(-1, K), np.tile(y, 2 * P), counts)
        f = losses.reshape(2 * P, batch).sum(axis=1) / batch
        numeric = (f[:P] - f[P:]) / (2 * h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
