"""Per-class logit diagnostics and group-wise top-1 accuracy."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .classifier import DEFAULT_COSINE_SCALE, NO_POSTHOC, infer_logits, predict
from .data import FEW, MANY, MEDIUM
from .errors import InvalidArgument, MetricUndefined

DEFAULT_MAGNITUDE_TOL = 1e-9


@dataclass
class LogitsStats:
    pos_mean: np.ndarray
    neg_mean: np.ndarray
    pos_std: np.ndarray
    neg_std: np.ndarray
    pos_count: np.ndarray
    neg_count: np.ndarray


@dataclass
class MetricsReport:
    L: np.ndarray
    L_regularized: np.ndarray
    r: np.ndarray
    r_neg: np.ndarray
    weight_norms: np.ndarray
    acc_all: float
    acc_many: float | None
    acc_medium: float | None
    acc_few: float | None
    counts: np.ndarray
    groups: tuple

    def write_text(self, path):
        lines = [
            f"acc_all={_num(self.acc_all)}",
            f"acc_many={_num(self.acc_many)}",
            f"acc_medium={_num(self.acc_medium)}",
            f"acc_few={_num(self.acc_few)}",
            f"num_classes={len(self.L)}",
            "L=" + ",".join(_num(v) for v in self.L),
            "L_regularized=" + ",".join(_num(v) for v in self.L_regularized),
            "r=" + ",".join(_num(v) for v in self.r),
            "r_neg=" + ",".join(_num(v) for v in self.r_neg),
            "weight_norms=" + ",".join(_num(v) for v in self.weight_norms),
        ]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "count", "group", "L", "L_reg", "r", "weight_norm"])
            for i in range(len(self.L)):
                w.writerow([
                    i, int(self.counts[i]), self.groups[i], _num(self.L[i]),
                    _num(self.L_regularized[i]), _num(self.r[i]), _num(self.weight_norms[i]),
                ])

    def write_binned_csv(self, path, bin_size=10):
        binned = binned_curves(self, bin_size)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin", "first_class", "last_class", "L", "L_reg", "r", "weight_norm"])
            for row in binned:
                w.writerow([row[0], row[1], row[2]] + [_num(v) for v in row[3:]])


def _num(v):
    if v is None:
        return ""
    return repr(float(v))


def collect_logits_stats(params, posthoc, eval_ds, stats=None, cosine_scale=DEFAULT_COSINE_SCALE):
    counts = None if stats is None else stats.counts
    z = infer_logits(params, eval_ds.features, posthoc, counts, cosine_scale)
    return logits_stats_from(z, eval_ds.labels)


def logits_stats_from(z, labels) -> LogitsStats:
    """Split column i of ``z`` into rows labelled i (positives) and the rest."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    N, K = z.shape
    pos_count = np.bincount(labels, minlength=K)
    missing = np.flatnonzero(pos_count == 0)
    if missing.size:
        raise MetricUndefined(f"class {missing[0]} has no positive samples", cls=int(missing[0]))
    neg_count = N - pos_count
    pos = np.zeros((N, K), dtype=bool)
    pos[np.arange(N), labels] = True
    pos_mean = np.sum(np.where(pos, z, 0.0), axis=0) / pos_count
    pos_var = np.sum(np.where(pos, (z - pos_mean) ** 2, 0.0), axis=0) / pos_count
    with np.errstate(invalid="ignore", divide="ignore"):
        neg_mean = np.sum(np.where(pos, 0.0, z), axis=0) / neg_count
        neg_var = np.sum(np.where(pos, 0.0, (z - neg_mean) ** 2), axis=0) / neg_count
    return LogitsStats(pos_mean, neg_mean, np.sqrt(pos_var), np.sqrt(neg_var), pos_count, neg_count)


def logits_magnitude(ls: LogitsStats) -> np.ndarray:
    return ls.pos_mean - ls.neg_mean


def regularized_std(ls: LogitsStats, L, tol=DEFAULT_MAGNITUDE_TOL, use_negatives=False) -> np.ndarray:
    """Logit spread of each class divided by its Logits Magnitude.

    The spread is the positive-sample standard deviation unless
    ``use_negatives`` is set.
    """
    L = np.asarray(L, dtype=np.float64)
    small = np.flatnonzero(np.abs(L) <= tol)
    if small.size:
        raise MetricUndefined(f"|L| too small for class {small[0]}", cls=int(small[0]))
    sigma = ls.neg_std if use_negatives else ls.pos_std
    return sigma / L


def l1_regularize_magnitude(L) -> np.ndarray:
    L = np.asarray(L, dtype=np.float64)
    total = np.sum(np.abs(L))
    if total == 0:
        raise InvalidArgument("cannot normalise an all-zero magnitude vector")
    return L * (L.size / total)


def weight_norms(params) -> np.ndarray:
    return np.linalg.norm(params.W, axis=1)


def group_accuracy(params, posthoc, eval_ds, stats, cosine_scale=DEFAULT_COSINE_SCALE):
    """(all, many, medium, few) top-1 accuracy in percent; None for an empty group."""
    z = infer_logits(params, eval_ds.features, posthoc, stats.counts, cosine_scale)
    return accuracy_by_group(predict(z), eval_ds.labels, stats.groups)


def accuracy_by_group(pred, labels, groups):
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise InvalidArgument("empty evaluation set")
    correct = pred == labels
    sample_group = np.asarray(groups, dtype=object)[labels]
    out = [100.0 * float(np.mean(correct))]
    for g in (MANY, MEDIUM, FEW):
        mask = sample_group == g
        out.append(100.0 * float(np.mean(correct[mask])) if mask.any() else None)
    return tuple(out)


def binned_means(values, bin_size=10) -> np.ndarray:
    """Means over consecutive class blocks of ``bin_size`` (the last may be short)."""
    values = np.asarray(values, dtype=np.float64)
    return np.array([values[i : i + bin_size].mean() for i in range(0, values.size, bin_size)])


def binned_curves(report: MetricsReport, bin_size=10):
    rows = []
    K = len(report.L)
    cols = [binned_means(v, bin_size) for v in (report.L, report.L_regularized, report.r, report.weight_norms)]
    for j, start in enumerate(range(0, K, bin_size)):
        rows.append((j, start, min(start + bin_size, K) - 1) + tuple(c[j] for c in cols))
    return rows


def magnitude_spread(L_regularized, bin_size=10) -> float:
    """max/min ratio of the bin-averaged magnitude curve; inf if any bin is <= 0."""
    bins = binned_means(L_regularized, bin_size)
    lo = bins.min()
    if lo <= 0:
        return float("inf")
    return float(bins.max() / lo)


def metrics_report(params, posthoc, eval_ds, stats, cosine_scale=DEFAULT_COSINE_SCALE) -> MetricsReport:
    ls = collect_logits_stats(params, posthoc, eval_ds, stats, cosine_scale)
    L = logits_magnitude(ls)
    accs = group_accuracy(params, posthoc, eval_ds, stats, cosine_scale)
    return MetricsReport(
        L=L,
        L_regularized=l1_regularize_magnitude(L),
        r=regularized_std(ls, L),
        r_neg=regularized_std(ls, L, use_negatives=True),
        weight_norms=weight_norms(params),
        acc_all=accs[0],
        acc_many=accs[1],
        acc_medium=accs[2],
        acc_few=accs[3],
        counts=np.asarray(stats.counts),
        groups=tuple(stats.groups),
    )
