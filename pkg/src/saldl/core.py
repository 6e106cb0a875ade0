"""Discrete label distributions and the composite training loss.

Targets are Gaussians evaluated on the integer label grid and renormalized,
so boundary-truncated targets stay valid distributions. All losses are
per-sample here; batch reductions (means) live with the callers. Gradients
are hand-derived and checked against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidInputError,
    InvalidLabelError,
    InvalidParameterError,
    ShapeError,
)

# Floor applied inside logs so KL/CE stay finite for one-hot predictions
# and far-tail target entries.
PROB_FLOOR = 1e-12

# Smallest usable target spread. A spread of zero makes the Gaussian target
# ill-defined, so adaptive spreads are parameterized to stay above this.
SIGMA_MIN = 0.25

# Fixed weight of the squared-error term in the composite loss.
MSE_WEIGHT = 0.01


@dataclass(frozen=True)
class LabelSupport:
    """Consecutive integer labels from ``min_label`` to ``max_label`` inclusive."""

    min_label: int = 0
    max_label: int = 100

    def __post_init__(self):
        if self.max_label - self.min_label + 1 < 2:
            raise InvalidParameterError(
                f"label support needs at least 2 labels, got "
                f"[{self.min_label}, {self.max_label}]"
            )

    @property
    def size(self) -> int:
        return self.max_label - self.min_label + 1

    def labels(self) -> np.ndarray:
        return np.arange(self.min_label, self.max_label + 1)

    def contains(self, label: int) -> bool:
        return self.min_label <= label <= self.max_label

    def index_of(self, label: int) -> int:
        if not self.contains(label):
            raise InvalidLabelError(
                f"label {label} outside support [{self.min_label}, {self.max_label}]"
            )
        return int(label) - self.min_label


@dataclass(frozen=True)
class LossBreakdown:
    """One composite-loss evaluation split into its weighted components.

    ``total`` always recomposes as ``alpha_used * kl + (1 - alpha_used) * ce
    + MSE_WEIGHT * mse``. For batches with per-sample weights the components
    are weight-normalized means so this identity stays exact.
    """

    kl: float
    ce: float
    mse: float
    total: float
    alpha_used: float

    @classmethod
    def compose(cls, kl: float, ce: float, mse: float, alpha: float) -> "LossBreakdown":
        _check_alpha(alpha)
        total = alpha * kl + (1.0 - alpha) * ce + MSE_WEIGHT * mse
        return cls(kl=float(kl), ce=float(ce), mse=float(mse), total=float(total),
                   alpha_used=float(alpha))


def _check_sigma(sigma: float) -> None:
    if not np.isfinite(sigma) or sigma <= 0:
        raise InvalidParameterError(f"sigma must be positive and finite, got {sigma}")


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha < 1.0):
        raise InvalidParameterError(f"alpha must lie strictly in (0, 1), got {alpha}")


def gaussian_label_distribution(label: int, sigma: float,
                                support: LabelSupport) -> np.ndarray:
    """Gaussian target centered on ``label``, renormalized over the support.

    Entry k is proportional to exp(-(k - label)^2 / (2 sigma^2)); dividing by
    the discrete sum keeps truncated targets (labels near the boundary) valid
    distributions.
    """
    _check_sigma(sigma)
    idx = support.index_of(label)
    k = support.labels().astype(np.float64)
    w = np.exp(-((k - k[idx]) ** 2) / (2.0 * sigma * sigma))
    return w / w.sum()


def softmax(logits: np.ndarray) -> np.ndarray:
    """Probability vector from logits, with max-subtraction for overflow safety."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits must be finite")
    e = np.exp(z - z.max())
    return e / e.sum()


def is_distribution(p: np.ndarray, tol: float = 1e-9) -> bool:
    p = np.asarray(p, dtype=np.float64)
    return bool(np.all(p >= 0.0) and abs(p.sum() - 1.0) <= tol)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) with the 0 * log(0 / q) = 0 convention and floored logs."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"distributions differ in shape: {p.shape} vs {q.shape}")
    log_ratio = np.log(np.maximum(p, PROB_FLOOR)) - np.log(np.maximum(q, PROB_FLOOR))
    val = float(np.where(p > 0.0, p * log_ratio, 0.0).sum())
    # The true value is nonnegative; flooring can leave a ~1e-9 residue.
    return max(val, 0.0)


def cross_entropy(pred: np.ndarray, label: int, support: LabelSupport) -> float:
    """Negative log-probability of the true label under ``pred`` (one sample)."""
    idx = support.index_of(label)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != (support.size,):
        raise ShapeError(f"prediction has shape {pred.shape}, support size {support.size}")
    return float(-np.log(max(float(pred[idx]), PROB_FLOOR)))


def mse_loss(pred_age: float, label: int) -> float:
    return float((float(pred_age) - float(label)) ** 2)


def expected_age(dist: np.ndarray, support: LabelSupport) -> float:
    """Expectation read-out: sum of label * probability."""
    dist = np.asarray(dist, dtype=np.float64)
    if dist.shape != (support.size,):
        raise ShapeError(f"distribution has shape {dist.shape}, support size {support.size}")
    return float(np.dot(support.labels().astype(np.float64), dist))


def saw_loss(logits: np.ndarray, label: int, sigma: float, alpha: float,
             support: LabelSupport) -> LossBreakdown:
    """Composite loss: alpha * KL + (1 - alpha) * CE + MSE_WEIGHT * squared error.

    The KL target is the Gaussian label distribution at ``sigma``; the
    squared-error term uses the differentiable expectation read-out.
    """
    _check_sigma(sigma)
    _check_alpha(alpha)
    target = gaussian_label_distribution(label, sigma, support)
    pred = softmax(logits)
    kl = kl_divergence(target, pred)
    ce = cross_entropy(pred, label, support)
    mse = mse_loss(expected_age(pred, support), label)
    return LossBreakdown.compose(kl, ce, mse, alpha)


def saw_gradient_logits(logits: np.ndarray, label: int, sigma: float, alpha: float,
                        support: LabelSupport) -> np.ndarray:
    """Exact gradient of the composite loss w.r.t. each logit.

    KL term: pred - target. CE term: pred - onehot. Squared-error term:
    2 (age_hat - label) * pred_k * (k - age_hat), from the softmax Jacobian
    applied to the expectation read-out.
    """
    _check_sigma(sigma)
    _check_alpha(alpha)
    target = gaussian_label_distribution(label, sigma, support)
    pred = softmax(logits)
    idx = support.index_of(label)
    onehot = np.zeros(support.size, dtype=np.float64)
    onehot[idx] = 1.0
    k = support.labels().astype(np.float64)
    age_hat = float(np.dot(k, pred))
    g_kl = pred - target
    g_ce = pred - onehot
    g_mse = 2.0 * (age_hat - label) * pred * (k - age_hat)
    return alpha * g_kl + (1.0 - alpha) * g_ce + MSE_WEIGHT * g_mse


def kl_gradient_sigma(label: int, sigma: float, pred: np.ndarray,
                      support: LabelSupport) -> float:
    """Derivative of KL(target(sigma) || pred) w.r.t. sigma.

    Differentiates through the renormalized Gaussian target: with
    a_k = (k - label)^2 / sigma^3 the target derivative is
    d_k (a_k - mean_d(a)), giving
    dKL/dsigma = sum_k d_k (a_k - mean_d(a)) (log d_k - log pred_k).
    Spreads below SIGMA_MIN are clamped so degenerate inputs stay finite.
    """
    _check_sigma(sigma)
    s = max(float(sigma), SIGMA_MIN)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != (support.size,):
        raise ShapeError(f"prediction has shape {pred.shape}, support size {support.size}")
    idx = support.index_of(label)
    k = support.labels().astype(np.float64)
    diff2 = (k - k[idx]) ** 2
    w = np.exp(-diff2 / (2.0 * s * s))
    d = w / w.sum()
    a = diff2 / s**3
    a_bar = float(np.dot(d, a))
    log_ratio = np.log(np.maximum(d, PROB_FLOOR)) - np.log(np.maximum(pred, PROB_FLOOR))
    terms = np.where(d > 0.0, d * (a - a_bar) * log_ratio, 0.0)
    return float(terms.sum())
