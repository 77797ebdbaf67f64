"""Unified loss engine for classifier retraining.

All softmax losses are written as a soft-label cross-entropy
``-sum_i t_i log softmax(z)_i`` against a target distribution ``t`` (one-hot,
or retargeted for LORT), multiplied by a per-sample weight. The gradient with
respect to the logits is ``w * (softmax(z) - t)``, plus the extra term focal
loss picks up from differentiating its weight.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .classifier import (
    COSINE,
    DEFAULT_COSINE_SCALE,
    LWS,
    apply_balanced_softmax_offset,
    apply_ldam_margin,
    forward_logits,
)
from .errors import InvalidArgument, NumericalDomainError

CE = "CE"
LORT = "LORT"
FOCAL = "Focal"
CB_CE = "ClassBalancedCE"
CB_BCE = "ClassBalancedBCE"
LDAM = "LDAM"
BALANCED_SOFTMAX = "BalancedSoftmax"
METHODS = (CE, LORT, FOCAL, CB_CE, CB_BCE, LDAM, BALANCED_SOFTMAX)

# the largest LDAM margin (rarest class) when C is left to calibration
LDAM_MAX_MARGIN = 0.5


@dataclass(frozen=True)
class LossSpec:
    """One loss configuration.

    ``gamma`` is shared by Focal (default 1.0) and LDAM (default 0.25); leave
    it as None to take the method's default. ``C=None`` calibrates the LDAM
    constant so the rarest class receives a margin of 0.5.
    """

    method: str = CE
    delta: float = 0.98
    gamma: float | None = None
    beta: float = 0.9999
    C: float | None = None
    use_resampling: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgument(f"unknown loss method {self.method!r}")
        if not (np.isfinite(self.delta) and 0 <= self.delta < 1):
            raise InvalidArgument(f"delta must lie in [0, 1), got {self.delta}")
        if self.gamma is not None and not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise InvalidArgument(f"gamma must be finite and >= 0, got {self.gamma}")
        if not (np.isfinite(self.beta) and 0 <= self.beta < 1):
            raise InvalidArgument(f"beta must lie in [0, 1), got {self.beta}")
        if self.C is not None and not (np.isfinite(self.C) and self.C >= 0):
            raise InvalidArgument(f"C must be finite and >= 0, got {self.C}")

    @property
    def resolved_gamma(self) -> float:
        if self.gamma is not None:
            return float(self.gamma)
        return 0.25 if self.method == LDAM else 1.0

    def resolved_C(self, counts) -> float:
        if self.C is not None:
            return float(self.C)
        n_min = float(np.min(getattr(counts, "counts", counts)))
        return LDAM_MAX_MARGIN * n_min**self.resolved_gamma

    def resolve(self, counts) -> "LossSpec":
        """Copy with every data-dependent default filled in."""
        return replace(self, gamma=self.resolved_gamma, C=self.resolved_C(counts))


class Gradients(NamedTuple):
    W: np.ndarray
    b: np.ndarray
    c: np.ndarray


def lort_targets(K: int, y: int, delta: float) -> np.ndarray:
    """Retargeted label: 1 - delta + delta/K on the true class, delta/K elsewhere."""
    if K < 2:
        raise InvalidArgument("K must be >= 2")
    if not 0 <= y < K:
        raise InvalidArgument(f"label {y} outside [0, {K})")
    if not (np.isfinite(delta) and 0 <= delta < 1):
        raise InvalidArgument(f"delta must lie in [0, 1), got {delta}")
    t = np.full(K, delta / K)
    t[y] = 1.0 - delta + delta / K
    return t


def _targets(K, y, delta):
    T = np.full((y.size, K), delta / K)
    T[np.arange(y.size), y] = 1.0 - delta + delta / K
    return T


def log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    if np.any(np.isnan(z)):
        raise NumericalDomainError("NaN in logits")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(z))


def soft_ce_loss(z, target) -> float:
    target = np.asarray(target, dtype=np.float64)
    if np.any(np.isnan(target)):
        raise NumericalDomainError("NaN in target")
    logp = log_softmax(z)
    # 0 * log(0) contributes nothing; avoid 0 * -inf
    return float(-np.sum(np.where(target > 0, target * logp, 0.0)))


def soft_ce_grad(z, target) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    if np.any(np.isnan(target)):
        raise NumericalDomainError("NaN in target")
    return softmax(z) - target


def focal_weight(p_y, gamma):
    return np.power(1.0 - np.asarray(p_y, dtype=np.float64), gamma)


def cb_weight(n_y, beta):
    """(1 - beta) / (1 - beta**n_y), the inverse effective number of samples."""
    n_y = np.asarray(n_y, dtype=np.float64)
    if np.any(n_y < 1):
        raise InvalidArgument("n_y must be >= 1")
    if beta == 0:
        return np.ones_like(n_y)[()]
    # beta**n via exp(n log beta); expm1 keeps precision when beta**n is near 1
    return ((1.0 - beta) / -np.expm1(n_y * np.log(beta)))[()]


def normalized_cb_weights(counts, beta) -> np.ndarray:
    """Per-class weights rescaled to sum to K."""
    w = np.atleast_1d(cb_weight(np.asarray(getattr(counts, "counts", counts)), beta))
    return w * (w.size / w.sum())


def transformed_logits(spec: LossSpec, z, y, counts):
    """Training-time logit transform for margin and prior-offset losses."""
    if spec.method == LDAM:
        return apply_ldam_margin(z, y, counts, spec.resolved_C(counts), spec.resolved_gamma)
    if spec.method == BALANCED_SOFTMAX:
        return apply_balanced_softmax_offset(z, counts)
    return z


def logit_loss_and_grad(spec: LossSpec, z, y, counts):
    """Per-sample losses (N,) and dL_n/dz (N, K) for a batch of logits.

    The logits are the raw head outputs; the method's transform is applied
    here, and since every transform is an additive constant in z the gradient
    passes through it unchanged.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    N, K = z.shape
    rows = np.arange(N)
    zt = transformed_logits(spec, z, y, counts)
    if np.any(np.isnan(zt)):
        raise NumericalDomainError("NaN in logits")

    if spec.method == CB_BCE:
        onehot = np.zeros((N, K))
        onehot[rows, y] = 1.0
        w = normalized_cb_weights(counts, spec.beta)[y]
        # softplus(z) - t z, stable for both signs
        per_class = np.logaddexp(0.0, zt) - onehot * zt
        sig = np.exp(-np.logaddexp(0.0, -zt))
        return w * per_class.sum(axis=1), w[:, None] * (sig - onehot)

    delta = spec.delta if spec.method == LORT else 0.0
    T = _targets(K, y, delta)
    logp = log_softmax(zt)
    s = np.exp(logp)
    ce = -np.sum(np.where(T > 0, T * logp, 0.0), axis=1)
    G = s - T

    if spec.method == FOCAL:
        gamma = spec.resolved_gamma
        logp_y = logp[rows, y]
        p_y = s[rows, y]
        one_minus_p = -np.expm1(logp_y)
        w = np.power(one_minus_p, gamma)
        # d/dz of (1-p)^gamma is -gamma (1-p)^(gamma-1) p (e_y - s)
        coef = np.zeros(N)
        live = one_minus_p > 0
        if gamma > 0:
            coef[live] = gamma * np.power(one_minus_p[live], gamma - 1.0) * p_y[live]
        E = np.zeros((N, K))
        E[rows, y] = 1.0
        G = w[:, None] * G - (ce * coef)[:, None] * (E - s)
        return w * ce, G

    if spec.method == CB_CE:
        w = normalized_cb_weights(counts, spec.beta)[y]
        return w * ce, w[:, None] * G

    return ce, G


def backprop(params, X, G, cosine_scale=DEFAULT_COSINE_SCALE) -> Gradients:
    """Chain dL/dz of shape (N, K) through the head to W, b and c."""
    X = np.atleast_2d(X)
    zeros_k = np.zeros(params.num_classes)
    if params.head == COSINE:
        wn = np.linalg.norm(params.W, axis=1)
        Wh = params.W / wn[:, None]
        Xh = X / np.linalg.norm(X, axis=1, keepdims=True)
        cos = Xh @ Wh.T
        dW = (cosine_scale / wn)[:, None] * (G.T @ Xh - np.sum(G * cos, axis=0)[:, None] * Wh)
        return Gradients(dW, zeros_k, zeros_k.copy())
    if params.head == LWS:
        u = X @ params.W.T
        return Gradients((G * params.c).T @ X, G.sum(axis=0), np.sum(G * u, axis=0))
    return Gradients(G.T @ X, G.sum(axis=0), zeros_k)


def batch_loss_and_grad(spec, params, counts, X, y, cosine_scale=DEFAULT_COSINE_SCALE):
    """Mean loss over a batch and its gradient with respect to W, b, c."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    z = forward_logits(params, X, cosine_scale)
    losses, G = logit_loss_and_grad(spec, z, y, counts)
    N = X.shape[0]
    return float(np.sum(losses) / N), backprop(params, X, G / N, cosine_scale)


def per_sample_loss_and_grad(spec, params, counts, x, y, cosine_scale=DEFAULT_COSINE_SCALE):
    return batch_loss_and_grad(spec, params, counts, np.asarray(x)[None, :], [int(y)], cosine_scale)
