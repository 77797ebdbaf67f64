"""Long-tailed feature datasets: synthetic generation, text I/O, class statistics."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import IngestionError, InvalidArgument, InvalidDataset

MANY = "Many"
MEDIUM = "Medium"
FEW = "Few"
GROUPS = (MANY, MEDIUM, FEW)

DEFAULT_MANY_THRESHOLD = 100
DEFAULT_FEW_THRESHOLD = 20


@dataclass(frozen=True, eq=False)
class FeatureDataset:
    """Frozen backbone features with integer labels.

    Arrays are copied and marked read-only on construction.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.labels, copy=True)
        if X.ndim != 2:
            raise InvalidDataset(f"features must be 2-D, got shape {X.shape}")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise InvalidDataset("labels must be 1-D with one entry per feature row")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise InvalidDataset("labels must be integers")
        y = y.astype(np.int64)
        K = int(self.num_classes)
        if K < 2:
            raise InvalidDataset(f"need at least 2 classes, got K={K}")
        if X.shape[1] < 1:
            raise InvalidDataset("feature dimension must be >= 1")
        if self.split not in ("train", "test"):
            raise InvalidDataset(f"unknown split {self.split!r}")
        bad = np.flatnonzero((y < 0) | (y >= K))
        if bad.size:
            raise InvalidDataset(f"label {y[bad[0]]} at row {bad[0]} outside [0, {K})")
        if not np.all(np.isfinite(X)):
            raise InvalidDataset("features contain NaN or Inf")
        if self.split == "train" and X.shape[0] < K:
            raise InvalidDataset(f"train split needs N >= K, got N={X.shape[0]}, K={K}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "num_classes", K)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def __eq__(self, other):
        if not isinstance(other, FeatureDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.split == other.split
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ClassStats:
    counts: np.ndarray
    imbalance_ratio: float
    groups: tuple
    many_threshold: int = DEFAULT_MANY_THRESHOLD
    few_threshold: int = DEFAULT_FEW_THRESHOLD

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    def group_mask(self, group: str) -> np.ndarray:
        return np.array([g == group for g in self.groups], dtype=bool)


@dataclass(frozen=True)
class SyntheticSpec:
    K: int = 20
    D: int = 16
    n_max: int = 500
    imbalance_ratio: float = 100.0
    test_per_class: int = 20
    class_separation: float = 4.0
    within_std: float = 1.0
    seed: int = 0

    def validate(self):
        if self.K < 2:
            raise InvalidArgument(f"K must be >= 2, got {self.K}")
        if self.D < 1:
            raise InvalidArgument(f"D must be >= 1, got {self.D}")
        if self.n_max < 1:
            raise InvalidArgument(f"n_max must be >= 1, got {self.n_max}")
        if not self.imbalance_ratio >= 1:
            raise InvalidArgument(f"imbalance ratio must be >= 1, got {self.imbalance_ratio}")
        if self.test_per_class < 1:
            raise InvalidArgument("test_per_class must be >= 1")
        if not (self.class_separation > 0 and self.within_std > 0):
            raise InvalidArgument("class_separation and within_std must be positive")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgument("seed must fit in an unsigned 64-bit integer")


def exponential_profile(K: int, n_max: int, IR: float) -> np.ndarray:
    """Per-class training counts decaying exponentially from n_max to n_max/IR.

    >>> exponential_profile(3, 100, 100).tolist()
    [100, 10, 1]
    """
    if K < 2:
        raise InvalidArgument(f"K must be >= 2, got {K}")
    if n_max < 1:
        raise InvalidArgument(f"n_max must be >= 1, got {n_max}")
    if not IR >= 1:
        raise InvalidArgument(f"imbalance ratio must be >= 1, got {IR}")
    i = np.arange(K, dtype=np.float64)
    raw = n_max * np.power(float(IR), -i / (K - 1))
    # np.rint rounds half to even
    counts = np.maximum(np.rint(raw), 1).astype(np.int64)
    counts[0] = n_max
    return counts


def _class_means(rng, K, D, separation):
    directions = rng.standard_normal((K, D))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    # unit vectors scaled by sep/sqrt(2): orthogonal pairs sit exactly `separation` apart
    return directions * (separation / math.sqrt(2.0))


def generate_synthetic(spec: SyntheticSpec):
    """Draw an isotropic Gaussian mixture with a long-tailed train split.

    Returns ``(train, test)``; the test split is balanced with
    ``spec.test_per_class`` points per class.
    """
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    means = _class_means(rng, spec.K, spec.D, spec.class_separation)
    counts = exponential_profile(spec.K, spec.n_max, spec.imbalance_ratio)

    def draw(per_class):
        labels = np.repeat(np.arange(spec.K), per_class)
        noise = rng.standard_normal((labels.size, spec.D)) * spec.within_std
        return means[labels] + noise, labels

    X_tr, y_tr = draw(counts)
    X_te, y_te = draw(np.full(spec.K, spec.test_per_class))
    train = FeatureDataset(X_tr, y_tr, spec.K, "train")
    test = FeatureDataset(X_te, y_te, spec.K, "test")
    return train, test


def class_stats(
    ds: FeatureDataset,
    many_threshold: int = DEFAULT_MANY_THRESHOLD,
    few_threshold: int = DEFAULT_FEW_THRESHOLD,
) -> ClassStats:
    return stats_from_counts(ds.counts(), many_threshold, few_threshold)


def stats_from_counts(counts, many_threshold=DEFAULT_MANY_THRESHOLD, few_threshold=DEFAULT_FEW_THRESHOLD):
    counts = np.asarray(counts, dtype=np.int64).copy()
    if counts.ndim != 1 or counts.size < 2:
        raise InvalidDataset("need a count for each of at least 2 classes")
    if not many_threshold > few_threshold:
        raise InvalidArgument("many_threshold must exceed few_threshold")
    empty = np.flatnonzero(counts <= 0)
    if empty.size:
        raise InvalidDataset(f"class {empty[0]} has no training samples")
    groups = tuple(
        MANY if n > many_threshold else FEW if n < few_threshold else MEDIUM for n in counts
    )
    counts.setflags(write=False)
    return ClassStats(
        counts=counts,
        imbalance_ratio=float(counts.max()) / float(counts.min()),
        groups=groups,
        many_threshold=int(many_threshold),
        few_threshold=int(few_threshold),
    )


# ---------------------------------------------------------------------------
# text format

HEADER_TAG = "LTFEAT"
FORMAT_VERSION = "v1"


def _fmt(x: float) -> str:
    return repr(float(x))


def save_features(ds: FeatureDataset, path) -> None:
    lines = [f"{HEADER_TAG} {FORMAT_VERSION} N={ds.n} D={ds.dim} K={ds.num_classes} SPLIT={ds.split}"]
    for row, label in zip(ds.features, ds.labels):
        lines.append(" ".join(_fmt(v) for v in row) + f" {int(label)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_header(line, tag, keys):
    parts = line.split()
    if len(parts) < 2 or parts[0] != tag or parts[1] != FORMAT_VERSION:
        raise IngestionError(f"expected header starting with '{tag} {FORMAT_VERSION}'")
    fields = {}
    for tok in parts[2:]:
        if "=" not in tok:
            raise IngestionError(f"malformed header field {tok!r}")
        k, v = tok.split("=", 1)
        fields[k] = v
    missing = [k for k in keys if k not in fields]
    if missing:
        raise IngestionError(f"header missing {', '.join(missing)}")
    return fields


def load_features(path) -> FeatureDataset:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise IngestionError("empty file")
    hdr = _parse_header(lines[0], HEADER_TAG, ("N", "D", "K", "SPLIT"))
    try:
        N, D, K = int(hdr["N"]), int(hdr["D"]), int(hdr["K"])
    except ValueError as exc:
        raise IngestionError(f"non-integer header field: {exc}") from None
    split = hdr["SPLIT"]
    if split not in ("train", "test"):
        raise IngestionError(f"unknown split {split!r}")
    if len(lines) - 1 != N:
        raise IngestionError(f"header declares N={N} but file has {len(lines) - 1} rows")
    X = np.empty((N, D))
    y = np.empty(N, dtype=np.int64)
    for r, line in enumerate(lines[1:], start=1):
        toks = line.split()
        if len(toks) != D + 1:
            raise IngestionError(f"expected {D} features and a label, got {len(toks)} fields", row=r)
        try:
            vals = [float(t) for t in toks[:D]]
            label = int(toks[D])
        except ValueError as exc:
            raise IngestionError(str(exc), row=r) from None
        if not all(math.isfinite(v) for v in vals):
            raise IngestionError("non-finite feature value", row=r)
        if not 0 <= label < K:
            raise IngestionError(f"label {label} outside [0, {K})", row=r)
        X[r - 1] = vals
        y[r - 1] = label
    try:
        return FeatureDataset(X, y, K, split)
    except InvalidDataset as exc:
        raise IngestionError(str(exc)) from None


def manifest_path(path) -> str:
    return os.fspath(path) + ".manifest"


def load_manifest(path) -> dict:
    """Read the optional ``key=value`` sidecar for a feature file.

    Recognised keys: ``many_threshold`` and ``few_threshold``. Returns an
    empty dict when no sidecar exists.
    """
    mpath = manifest_path(path)
    if not os.path.exists(mpath):
        return {}
    out = {}
    with open(mpath, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise IngestionError(f"{mpath}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in ("many_threshold", "few_threshold"):
                raise IngestionError(f"{mpath}:{lineno}: unknown key {key!r}")
            try:
                out[key] = int(value)
            except ValueError:
                raise IngestionError(f"{mpath}:{lineno}: {key} must be an integer") from None
    return out
