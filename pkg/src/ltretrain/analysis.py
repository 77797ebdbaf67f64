"""Numerical checks of the convexity/invariance results, the perturbation
model, and the experiment sweeps (smooth-value sweep, LR x WD grid, method
comparison) run on a desk-scale synthetic benchmark."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses as L
from .classifier import (
    COSINE,
    LINEAR,
    LWS,
    NO_POSTHOC,
    ClassifierParams,
    PosthocSpec,
    forward_logits,
)
from .data import SyntheticSpec, class_stats, generate_synthetic
from .errors import DivergenceError, InvalidArgument
from .losses import LossSpec, softmax
from .metrics import group_accuracy, metrics_report, weight_norms
from .training import TrainConfig, derive_seed, train_classifier

# ---------------------------------------------------------------------------
# convexity in the bias


def bias_hessian(s) -> np.ndarray:
    """Hessian of softmax cross-entropy w.r.t. the bias: diag(s) - s s^T."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or np.any(s <= 0) or abs(s.sum() - 1.0) > 1e-9:
        raise InvalidArgument("s must be a strictly positive probability vector")
    return np.diag(s) - np.outer(s, s)


def psd_check(H, trials=1000, seed=0) -> float:
    """Smallest x H x^T over ``trials`` random unit directions."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise InvalidArgument("H must be square")
    if not np.allclose(H, H.T, rtol=0, atol=1e-15):
        raise InvalidArgument("H must be symmetric")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((trials, H.shape[0]))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return float(np.min(np.einsum("ij,jk,ik->i", X, H, X)))


def random_probability_vectors(rng, count, max_k=50):
    out = []
    for _ in range(count):
        K = int(rng.integers(2, max_k + 1))
        # log-normal logits give everything from near-uniform to peaked vectors
        out.append(softmax(rng.standard_normal(K) * rng.uniform(0.1, 5.0)))
    return out


# ---------------------------------------------------------------------------
# common row shift


def shift_invariance_check(params: ClassifierParams, dataset, epsilon) -> float:
    """Max |change| of softmax probabilities after adding ``epsilon`` to every W row."""
    if params.head != LINEAR:
        raise InvalidArgument("row-shift invariance holds for the linear head only")
    epsilon = np.asarray(epsilon, dtype=np.float64)
    X = getattr(dataset, "features", dataset)
    shifted = ClassifierParams(params.W + epsilon, params.b, params.c, params.head)
    s0 = softmax(forward_logits(params, X))
    s1 = softmax(forward_logits(shifted, X))
    return float(np.max(np.abs(s1 - s0)))


def shifted_params(params, epsilon):
    return ClassifierParams(params.W + np.asarray(epsilon), params.b, params.c, params.head)


# ---------------------------------------------------------------------------
# perturbation model


@dataclass(frozen=True)
class PerturbationSpec:
    xi_std: float = 0.1
    trials: int = 1_000_000
    seed: int = 0
    distribution: str = "Normal"
    shared: bool = False  # one xi for all classes instead of one per class

    def __post_init__(self):
        if self.distribution != "Normal":
            raise InvalidArgument("only Normal perturbations are supported")
        if self.trials < 1:
            raise InvalidArgument("trials must be >= 1")
        if not self.xi_std >= 0:
            raise InvalidArgument("xi_std must be >= 0")


@dataclass
class PerturbationResult:
    ratios: np.ndarray  # E[s'_i] / E[s_i] per class
    spread: float  # (max - min) / mean of the ratios

    @property
    def max_abs_deviation(self) -> float:
        return float(np.max(np.abs(self.ratios - 1.0)))


def perturbation_sim(L_vec, r_vec, pspec: PerturbationSpec, base_logits, chunk=50_000) -> PerturbationResult:
    """Monte Carlo estimate of how logit noise Delta_i = xi_i r_i L_i moves mean softmax.

    Each trial picks one row of ``base_logits`` uniformly, perturbs it, and
    accumulates the clean and perturbed softmax, so the two means share the
    same base samples.
    """
    L_vec = np.asarray(L_vec, dtype=np.float64)
    r_vec = np.asarray(r_vec, dtype=np.float64)
    base = np.atleast_2d(np.asarray(base_logits, dtype=np.float64))
    if not (np.all(np.isfinite(L_vec)) and np.all(np.isfinite(r_vec))):
        raise InvalidArgument("L and r must be finite")
    K = base.shape[1]
    scale = r_vec * L_vec
    rng = np.random.default_rng(pspec.seed)
    clean = np.zeros(K)
    pert = np.zeros(K)
    done = 0
    while done < pspec.trials:
        m = min(chunk, pspec.trials - done)
        rows = base[rng.integers(0, base.shape[0], size=m)]
        xi_shape = (m, 1) if pspec.shared else (m, K)
        xi = rng.standard_normal(xi_shape) * pspec.xi_std
        clean += softmax(rows).sum(axis=0)
        pert += softmax(rows + xi * scale).sum(axis=0)
        done += m
    ratios = pert / clean
    return PerturbationResult(ratios, float((ratios.max() - ratios.min()) / ratios.mean()))


def lognormal_mean_mc(sigma, trials=1_000_000, seed=0) -> float:
    """Monte Carlo E[exp(D)] for D ~ Normal(0, sigma^2); exact value exp(sigma^2 / 2)."""
    rng = np.random.default_rng(seed)
    return float(np.mean(np.exp(rng.standard_normal(trials) * sigma)))


# ---------------------------------------------------------------------------
# methods and sweeps


@dataclass(frozen=True)
class Method:
    """A retraining recipe: loss, head, optional MaxNorm and post-hoc rule."""

    name: str
    loss: LossSpec = field(default_factory=LossSpec)
    posthoc: PosthocSpec = NO_POSTHOC
    head: str | None = None
    maxnorm: float | None = None


def method_presets(delta=0.98, tau=1.0, maxnorm=1.0):
    return {
        "ce": Method("ce", LossSpec(L.CE)),
        "lort": Method("lort", LossSpec(L.LORT, delta=delta)),
        "focal": Method("focal", LossSpec(L.FOCAL)),
        "cb-ce": Method("cb-ce", LossSpec(L.CB_CE)),
        "cb-bce": Method("cb-bce", LossSpec(L.CB_BCE)),
        "ldam": Method("ldam", LossSpec(L.LDAM)),
        "bs": Method("bs", LossSpec(L.BALANCED_SOFTMAX)),
        "rs": Method("rs", LossSpec(L.CE, use_resampling=True)),
        "cosine": Method("cosine", LossSpec(L.CE), head=COSINE),
        "lws": Method("lws", LossSpec(L.CE), head=LWS),
        "maxnorm": Method("maxnorm", LossSpec(L.CE), maxnorm=maxnorm),
        "taunorm": Method("taunorm", LossSpec(L.CE), PosthocSpec("TauNorm", tau)),
        "la": Method("la", LossSpec(L.CE), PosthocSpec("LogitAdjust", tau)),
    }


ACC_FIELDS = ("acc_all", "acc_many", "acc_medium", "acc_few")


@dataclass
class SweepResult:
    axes: tuple  # column names of the key, e.g. ("delta",) or ("lr", "wd")
    keys: list
    cells: list  # (all, many, medium, few) per key, or None for a diverged run
    seeds: list
    reports: list = field(default_factory=list)

    def cell(self, *key):
        return self.cells[self.keys.index(tuple(key))]

    def matrix(self, field_index=0):
        """Heat-map array for a two-axis sweep (rows: first axis)."""
        rows = sorted({k[0] for k in self.keys})
        cols = sorted({k[1] for k in self.keys})
        out = np.full((len(rows), len(cols)), np.nan)
        for k, c in zip(self.keys, self.cells):
            if c is not None and c[field_index] is not None:
                out[rows.index(k[0]), cols.index(k[1])] = c[field_index]
        return out

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(self.axes) + list(ACC_FIELDS))
            for k, c in zip(self.keys, self.cells):
                vals = ["" if c is None or v is None else repr(float(v)) for v in (c or (None,) * 4)]
                w.writerow([_key_str(v) for v in k] + vals)


def _key_str(v):
    return v if isinstance(v, str) else repr(float(v))


def _run_method(train, eval_ds, method: Method, cfg, init, stats):
    head = method.head or (init.head if init is not None else cfg.head)
    cfg = replace(cfg, head=head, maxnorm=method.maxnorm if method.maxnorm is not None else cfg.maxnorm)
    start = None
    if init is not None:
        start = init.with_head(head)
        if head == LWS and init.head != LWS:
            start.c = np.ones(init.num_classes)
        if head == COSINE:
            start.b = np.zeros(init.num_classes)
    params, _ = train_classifier(train, None, method.loss, cfg, start, stats)
    return params, cfg


def _cell(args):
    train, eval_ds, method, cfg, init, stats, with_report = args
    try:
        params, run_cfg = _run_method(train, eval_ds, method, cfg, init, stats)
    except DivergenceError:
        return None, None
    if with_report:
        report = metrics_report(params, method.posthoc, eval_ds, stats, run_cfg.cosine_scale)
        return (report.acc_all, report.acc_many, report.acc_medium, report.acc_few), report
    return group_accuracy(params, method.posthoc, eval_ds, stats, run_cfg.cosine_scale), None


def _run_cells(train, eval_ds, plan, init, stats, jobs=1, with_report=False):
    """Train every (method, cfg) pair; cells share nothing, so order is irrelevant."""
    args = [(train, eval_ds, m, c, init, stats, with_report) for m, c in plan]
    if jobs > 1 and len(args) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_cell, args))
    return [_cell(a) for a in args]


def delta_sweep(train, eval_ds, deltas, cfg: TrainConfig, init=None, stats=None, jobs=1) -> SweepResult:
    """One LORT run per smooth value; every cell reuses ``cfg.seed``."""
    stats = stats if stats is not None else class_stats(train)
    for d in deltas:
        if not 0 <= d < 1:
            raise InvalidArgument(f"delta {d} outside [0, 1)")
    plan = [(Method("lort", LossSpec(L.LORT, delta=float(d))), cfg) for d in deltas]
    out = _run_cells(train, eval_ds, plan, init, stats, jobs)
    keys = [(float(d),) for d in deltas]
    return SweepResult(("delta",), keys, [c for c, _ in out], [cfg.seed] * len(keys))


def lr_wd_grid(train, eval_ds, lrs, wds, cfg: TrainConfig, spec: LossSpec, init=None, stats=None, jobs=1) -> SweepResult:
    """Cartesian LR x WD grid; a cell's result depends only on its (lr, wd) key."""
    if not len(lrs) or not len(wds):
        raise InvalidArgument("both axes must be non-empty")
    stats = stats if stats is not None else class_stats(train)
    keys = [(float(lr), float(wd)) for lr in lrs for wd in wds]
    plan = [(Method("grid", spec), replace(cfg, lr0=lr, weight_decay=wd)) for lr, wd in keys]
    out = _run_cells(train, eval_ds, plan, init, stats, jobs)
    return SweepResult(("lr", "wd"), keys, [c for c, _ in out], [cfg.seed] * len(keys))


def grid_spread(result: SweepResult) -> float:
    """max - min overall accuracy across grid cells; diverged cells count as 0%."""
    vals = [0.0 if c is None else c[0] for c in result.cells]
    return max(vals) - min(vals)


def method_comparison(train, eval_ds, methods, cfg: TrainConfig, init=None, stats=None, jobs=1) -> SweepResult:
    """Desk-scale comparison table: one row per method with its metrics report.

    ``methods`` holds ``Method`` objects or ``(LossSpec, PosthocSpec)`` pairs.
    """
    stats = stats if stats is not None else class_stats(train)
    methods = [m if isinstance(m, Method) else Method(m[0].method, m[0], m[1]) for m in methods]
    out = _run_cells(train, eval_ds, [(m, cfg) for m in methods], init, stats, jobs, with_report=True)
    keys = [(m.name,) for m in methods]
    return SweepResult(
        ("method",), keys, [c for c, _ in out], [cfg.seed] * len(keys), [r for _, r in out]
    )


# ---------------------------------------------------------------------------
# the synthetic benchmark


BENCHMARK_SEEDS = (0, 1, 2, 3, 4)
# frozen-backbone stand-in: a CE-trained linear head plays the role of the
# first decoupled stage; each method then finetunes from it
PRETRAIN_CFG = TrainConfig(epochs=20, batch_size=128, lr0=0.1, weight_decay=5e-4, momentum=0.9)
FINETUNE_CFG = TrainConfig(epochs=20, batch_size=128, lr0=0.003, weight_decay=5e-4, momentum=0.9)


def benchmark_spec(seed=0, **overrides) -> SyntheticSpec:
    base = dict(
        K=20, D=16, n_max=500, imbalance_ratio=100.0, test_per_class=50,
        class_separation=5.0, within_std=1.0, seed=seed,
    )
    base.update(overrides)
    return SyntheticSpec(**base)


@dataclass
class Benchmark:
    train: object
    test: object
    stats: object
    pretrained: ClassifierParams
    finetune: TrainConfig


def benchmark(seed=0, **overrides) -> Benchmark:
    train, test = generate_synthetic(benchmark_spec(seed, **overrides))
    stats = class_stats(train)
    pre_cfg = replace(PRETRAIN_CFG, seed=derive_seed(seed, "pretrain"))
    pretrained, _ = train_classifier(train, None, LossSpec(L.CE), pre_cfg, None, stats)
    return Benchmark(train, test, stats, pretrained, replace(FINETUNE_CFG, seed=derive_seed(seed, "finetune")))


# ---------------------------------------------------------------------------
# verification suite


@dataclass
class Check:
    name: str
    observed: float
    tolerance: float
    passed: bool
    reduced_confidence: bool = False
    detail: str = ""

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        rc = " [reduced confidence]" if self.reduced_confidence else ""
        return f"{flag} {self.name}: observed={self.observed:.3e} tolerance={self.tolerance:.3e}{rc}"


def run_verification(trials=None, negate_hessian=False, seed=0):
    """Run the analytic property suite; returns a list of Check.

    ``trials`` scales every randomized check down from its default; a value
    below a check's default marks that check as reduced-confidence.
    """
    from .training import gradcheck

    checks = []

    def n(default):
        return default if trials is None else min(trials, default)

    def reduced(default):
        return trials is not None and trials < default

    # analytic gradients vs central differences, every loss on every head
    gc_trials = n(100)
    worst = 0.0
    for method in L.METHODS:
        spec = LossSpec(method, delta=0.98 if method == L.LORT else 0.0)
        for head in (LINEAR, COSINE, LWS):
            worst = max(worst, gradcheck(spec, 10, 8, trials=gc_trials, h=1e-5, head=head, seed=seed))
    checks.append(Check("gradcheck (all losses x heads)", worst, 1e-6, worst <= 1e-6, reduced(100)))

    # convexity of the loss in the bias
    rng = np.random.default_rng(derive_seed(seed, "psd"))
    n_vec = n(1000)
    worst_q, worst_ones = math.inf, 0.0
    for i, s in enumerate(random_probability_vectors(rng, n_vec)):
        H = bias_hessian(s)
        if negate_hessian:
            H = -H
        K = s.size
        worst_q = min(worst_q, psd_check(H, n(1000), seed=derive_seed(seed, "psd", i)) / (1e-12 * K))
        ones = np.ones(K)
        worst_ones = max(worst_ones, abs(ones @ H @ ones) / K)
    # normalised so the threshold is -1 (i.e. -1e-12 * K)
    checks.append(Check("bias Hessian PSD (min xHx / 1e-12K)", worst_q, -1.0, worst_q >= -1.0, reduced(1000)))
    checks.append(Check("bias Hessian all-ones direction (/K)", worst_ones, 1e-15, worst_ones <= 1e-15))

    # common row shift leaves probabilities alone
    bm_train, _ = generate_synthetic(benchmark_spec(seed))
    prng = np.random.default_rng(derive_seed(seed, "shift"))
    params = ClassifierParams.init(bm_train.num_classes, bm_train.dim, prng)
    params.W *= 5.0
    eps = prng.standard_normal(bm_train.dim)
    eps *= 10.0 / np.linalg.norm(eps)
    dprob = shift_invariance_check(params, bm_train, eps)
    checks.append(Check("row-shift probability change", dprob, 1e-12, dprob <= 1e-12))
    dnorm = float(np.max(np.abs(weight_norms(shifted_params(params, eps)) - weight_norms(params))))
    checks.append(Check("row-shift weight norm change (must exceed 1)", dnorm, 1.0, dnorm > 1.0))

    # lognormal mean and balanced perturbation consistency
    mc = n(1_000_000)
    est = lognormal_mean_mc(0.5, mc, seed=derive_seed(seed, "lognormal"))
    rel = abs(est / math.exp(0.125) - 1.0)
    checks.append(Check("lognormal E[exp(D)] relative error", rel, 0.01, rel <= 0.01, reduced(1_000_000)))
    spread = balanced_perturbation_spread(trials=mc, seed=seed)
    checks.append(Check("balanced perturbation ratio spread", spread, 0.02, spread <= 0.02, reduced(1_000_000)))

    # retargeted labels
    worst_sum, margin_ok = 0.0, True
    for K in (2, 5, 20, 100):
        for d in (0.0, 0.2, 0.5, 0.9, 0.98, 0.99):
            t = L.lort_targets(K, 0, d)
            worst_sum = max(worst_sum, abs(t.sum() - 1.0))
            margin_ok &= bool(t[0] > t[1:].max())
    checks.append(Check("LORT target sum", worst_sum, 1e-12, worst_sum <= 1e-12 and margin_ok))
    return checks


def balanced_perturbation_spread(trials=1_000_000, seed=0, xi_std=0.1) -> float:
    """Ratio spread when every class shares the same r_i L_i on a balanced model."""
    train, test = generate_synthetic(benchmark_spec(seed, imbalance_ratio=1.0, n_max=100))
    cfg = replace(PRETRAIN_CFG, seed=derive_seed(seed, "balanced"))
    params, _ = train_classifier(train, None, LossSpec(L.CE), cfg)
    base = forward_logits(params, test.features)
    report = metrics_report(params, NO_POSTHOC, test, class_stats(train))
    K = train.num_classes
    L_vec = np.full(K, float(np.mean(report.L)))
    r_vec = np.full(K, float(np.mean(report.r)))
    res = perturbation_sim(L_vec, r_vec, PerturbationSpec(xi_std, trials, derive_seed(seed, "pert")), base)
    return res.spread
