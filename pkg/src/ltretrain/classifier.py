"""Classifier heads, training-time logit transforms and post-hoc adjustments.

Every function that takes a feature ``x`` accepts either a single vector of
length D or a batch of shape (N, D); logits come back as (K,) or (N, K)
accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import IngestionError, InvalidArgument, NumericalDomainError

LINEAR = "Linear"
COSINE = "Cosine"
LWS = "LWS"
HEADS = (LINEAR, COSINE, LWS)

DEFAULT_COSINE_SCALE = 16.0


@dataclass(eq=False)
class ClassifierParams:
    W: np.ndarray
    b: np.ndarray
    c: np.ndarray
    head: str = LINEAR

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        if self.head not in HEADS:
            raise InvalidArgument(f"unknown head {self.head!r}")
        K = self.W.shape[0]
        if self.W.ndim != 2 or self.b.shape != (K,) or self.c.shape != (K,):
            raise InvalidArgument("W must be K x D with b and c of length K")
        for name in ("W", "b", "c"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericalDomainError(f"non-finite entries in {name}")
        if self.head == LWS and np.any(self.c <= 0):
            raise InvalidArgument("LWS scales must be strictly positive")

    @classmethod
    def zeros(cls, K, D, head=LINEAR):
        return cls(np.zeros((K, D)), np.zeros(K), np.ones(K), head)

    @classmethod
    def init(cls, K, D, rng, head=LINEAR):
        """Uniform(-1/sqrt(D), 1/sqrt(D)) weights, zero bias, unit scales."""
        bound = 1.0 / np.sqrt(D)
        W = rng.uniform(-bound, bound, size=(K, D))
        return cls(W, np.zeros(K), np.ones(K), head)

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(self.W.copy(), self.b.copy(), self.c.copy(), self.head)

    def with_head(self, head) -> "ClassifierParams":
        return replace(self.copy(), head=head)

    def __eq__(self, other):
        if not isinstance(other, ClassifierParams):
            return NotImplemented
        return (
            self.head == other.head
            and np.array_equal(self.W, other.W)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.c, other.c)
        )

    __hash__ = None


@dataclass(frozen=True)
class PosthocSpec:
    kind: str = "None"
    tau: float = 1.0

    KINDS = ("None", "TauNorm", "LogitAdjust")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidArgument(f"unknown post-hoc kind {self.kind!r}")
        if not (np.isfinite(self.tau) and self.tau >= 0):
            raise InvalidArgument(f"tau must be finite and >= 0, got {self.tau}")


NO_POSTHOC = PosthocSpec()


def _row_norms(W):
    return np.sqrt(np.einsum("ij,ij->i", W, W))


def forward_logits(params: ClassifierParams, x, cosine_scale=DEFAULT_COSINE_SCALE):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.dim:
        raise InvalidArgument(f"feature length {x.shape[-1]} != D={params.dim}")
    if params.head == LINEAR:
        return x @ params.W.T + params.b
    if params.head == LWS:
        return params.c * (x @ params.W.T) + params.b
    if not cosine_scale > 0:
        raise InvalidArgument("cosine_scale must be positive")
    wn = _row_norms(params.W)
    xn = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(wn == 0) or np.any(xn == 0):
        raise NumericalDomainError("cosine head needs non-zero weight rows and features")
    return cosine_scale * ((x / xn) @ (params.W / wn[:, None]).T)


def _counts(counts):
    # accepts ClassStats or a plain count vector
    return np.asarray(getattr(counts, "counts", counts), dtype=np.float64)


def ldam_margins(counts, C, gamma):
    return C / np.power(_counts(counts), gamma)


def apply_ldam_margin(z, y, counts, C, gamma):
    """Subtract the label-dependent margin C / n_y**gamma from the true-class logit.

    ``y`` may be a scalar with ``z`` of shape (K,), or an int array matching
    the rows of a (N, K) batch.
    """
    z = np.array(z, dtype=np.float64, copy=True)
    m = ldam_margins(counts, C, gamma)
    if z.ndim == 1:
        z[y] -= m[y]
    else:
        rows = np.arange(z.shape[0])
        z[rows, y] -= m[y]
    return z


def apply_balanced_softmax_offset(z, counts):
    n = _counts(counts)
    if np.any(n <= 0):
        raise InvalidArgument("counts must be positive")
    return np.asarray(z, dtype=np.float64) + np.log(n)


def posthoc_adjust(params, z, spec: PosthocSpec, counts, x):
    if spec.kind == "None":
        return np.asarray(z, dtype=np.float64)
    if spec.kind == "LogitAdjust":
        return np.asarray(z, dtype=np.float64) - spec.tau * np.log(_counts(counts))
    # TauNorm recomputes from W and x; the learned bias is dropped
    wn = _row_norms(params.W)
    if np.any(wn == 0):
        raise NumericalDomainError("tau-normalisation needs non-zero weight rows")
    W_eff = params.W / np.power(wn, spec.tau)[:, None]
    return np.asarray(x, dtype=np.float64) @ W_eff.T


def maxnorm_project(params: ClassifierParams, delta_max: float) -> ClassifierParams:
    if not delta_max > 0:
        raise InvalidArgument("delta_max must be positive")
    out = params.copy()
    wn = _row_norms(out.W)
    over = wn > delta_max
    if np.any(over):
        out.W[over] *= (delta_max / wn[over])[:, None]
    return out


def predict(z):
    """Top-1 class; ties go to the lowest index (np.argmax semantics)."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(np.isnan(z)):
        raise NumericalDomainError("NaN in logits")
    return np.argmax(z, axis=-1)


def infer_logits(params, x, posthoc=NO_POSTHOC, counts=None, cosine_scale=DEFAULT_COSINE_SCALE):
    """Inference-time logits: head forward pass followed by the post-hoc rule."""
    z = forward_logits(params, x, cosine_scale)
    if posthoc.kind == "LogitAdjust" and counts is None:
        raise InvalidArgument("logit adjustment needs class counts")
    return posthoc_adjust(params, z, posthoc, counts, x)


# ---------------------------------------------------------------------------
# checkpoint format

CKPT_TAG = "LTCLS"


def save_checkpoint(params: ClassifierParams, path) -> None:
    K, D = params.W.shape
    lines = [f"{CKPT_TAG} v1 K={K} D={D} HEAD={params.head}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in params.W]
    lines.append(" ".join(repr(float(v)) for v in params.b))
    lines.append(" ".join(repr(float(v)) for v in params.c))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> ClassifierParams:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise IngestionError("empty checkpoint")
    parts = lines[0].split()
    if len(parts) != 5 or parts[0] != CKPT_TAG or parts[1] != "v1":
        raise IngestionError(f"expected '{CKPT_TAG} v1 K=.. D=.. HEAD=..' header")
    try:
        fields = dict(p.split("=", 1) for p in parts[2:])
        K, D, head = int(fields["K"]), int(fields["D"]), fields["HEAD"]
    except (KeyError, ValueError):
        raise IngestionError("malformed checkpoint header") from None
    if len(lines) != K + 3:
        raise IngestionError(f"expected {K + 3} lines, got {len(lines)}")

    def row(i, n):
        toks = lines[i].split()
        if len(toks) != n:
            raise IngestionError(f"expected {n} values, got {len(toks)}", row=i)
        try:
            return [float(t) for t in toks]
        except ValueError as exc:
            raise IngestionError(str(exc), row=i) from None

    W = np.array([row(i, D) for i in range(1, K + 1)]).reshape(K, D)
    b = np.array(row(K + 1, K))
    c = np.array(row(K + 2, K))
    try:
        return ClassifierParams(W, b, c, head)
    except (InvalidArgument, NumericalDomainError) as exc:
        raise IngestionError(str(exc)) from None
