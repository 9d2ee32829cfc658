"""Classification loss that discourages overconfident trail labels.

The loss on one head's prediction y (a probability triple) against a
smoothed target p is

    L = CE(p, y) - entropy_weight * H(y) + side_swap_weight * swap(y)

where CE is cross entropy, H is the entropy of the prediction (so the
entropy term rewards keeping some probability mass off the winner),
and swap(y) is the probability the prediction puts on the side
opposite the true side (zero when the truth is center).  A confident
wrong-side prediction is the most damaging failure for a lateral
controller, hence the extra penalty.  The side-swap term is normally
enabled only for the lateral offset head.

Gradients with respect to the pre-softmax logits are provided in
closed form and can be cross-checked against central finite
differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .labels import Category, SoftLabel3

__all__ = [
    "PROB_FLOOR",
    "LossConfig",
    "SmoothedLabel",
    "smooth_labels",
    "side_swap_penalty",
    "loss_value",
    "softmax",
    "loss_grad_logits",
    "finite_diff_check",
    "batch_loss_and_grad",
]

# Floor applied inside every logarithm so degenerate probabilities
# cannot produce infinities.
PROB_FLOOR = 1e-12

# Index of the side category opposite each truth index; -1 marks center
# (no penalty).
_SWAP_INDEX = np.array([Category.RIGHT, -1, Category.LEFT], dtype=int)


@dataclass(frozen=True)
class LossConfig:
    entropy_weight: float = 0.1
    side_swap_weight: float = 0.3
    label_smoothing: float = 0.1
    apply_side_swap: bool = True

    def __post_init__(self) -> None:
        if not (math.isfinite(self.entropy_weight) and self.entropy_weight >= 0.0):
            raise ValueError(f"entropy_weight must be >= 0, got {self.entropy_weight}")
        if not (math.isfinite(self.side_swap_weight) and self.side_swap_weight >= 0.0):
            raise ValueError(f"side_swap_weight must be >= 0, got {self.side_swap_weight}")
        if not (0.0 <= self.label_smoothing < 1.0):
            raise ValueError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")

    @classmethod
    def for_orientation_head(cls, **kw) -> "LossConfig":
        kw.setdefault("apply_side_swap", False)
        return cls(**kw)

    @classmethod
    def for_offset_head(cls, **kw) -> "LossConfig":
        kw.setdefault("apply_side_swap", True)
        return cls(**kw)


@dataclass(frozen=True)
class SmoothedLabel:
    """Smoothed one-hot target plus the index it was smoothed from."""

    probs: np.ndarray
    truth: Category

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (3,):
            raise ValueError(f"target must have 3 entries, got shape {p.shape}")
        if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("target must be a probability triple")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "truth", Category(self.truth))


def smooth_labels(truth: Category, smoothing: float) -> SmoothedLabel:
    """Exchange ``smoothing`` of the one-hot mass for a uniform floor."""
    if not (0.0 <= smoothing < 1.0):
        raise ValueError(f"smoothing must lie in [0, 1), got {smoothing}")
    probs = np.full(3, smoothing / 3.0)
    probs[int(truth)] += 1.0 - smoothing
    return SmoothedLabel(probs, Category(truth))


def side_swap_penalty(y: SoftLabel3, truth: Category) -> float:
    """Probability assigned to the side opposite the true side.

    Zero when the truth is center: there is no opposite side to swap to.
    """
    if truth is Category.CENTER:
        return 0.0
    return y.p_right if truth is Category.LEFT else y.p_left


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _loss_terms(y: np.ndarray, label: SmoothedLabel, cfg: LossConfig):
    log_y = np.log(np.maximum(y, PROB_FLOOR))
    ce = -float(label.probs @ log_y)
    entropy = -float(y @ log_y)
    swap_idx = _SWAP_INDEX[int(label.truth)]
    swap = float(y[swap_idx]) if (cfg.apply_side_swap and swap_idx >= 0) else 0.0
    return ce, entropy, swap


def loss_value(y: SoftLabel3, label: SmoothedLabel, cfg: LossConfig) -> float:
    """Scalar loss of one prediction against one smoothed target."""
    ce, entropy, swap = _loss_terms(y.as_array(), label, cfg)
    return ce - cfg.entropy_weight * entropy + cfg.side_swap_weight * swap


def loss_grad_logits(logits, label: SmoothedLabel, cfg: LossConfig) -> np.ndarray:
    """Closed-form gradient of the loss with respect to the logits.

    With y = softmax(z):
      d(CE)/dz      = y - p
      d(-H)/dz_j    = y_j * (log y_j + H(y))
      d(y_swap)/dz_j = y_swap * (1[j == swap] - y_j)
    """
    y = softmax(logits)
    log_y = np.log(np.maximum(y, PROB_FLOOR))
    grad = y - label.probs
    if cfg.entropy_weight != 0.0:
        entropy = -float(y @ log_y)
        grad = grad + cfg.entropy_weight * y * (log_y + entropy)
    swap_idx = _SWAP_INDEX[int(label.truth)]
    if cfg.apply_side_swap and swap_idx >= 0 and cfg.side_swap_weight != 0.0:
        one_hot = np.zeros(3)
        one_hot[swap_idx] = 1.0
        grad = grad + cfg.side_swap_weight * y[swap_idx] * (one_hot - y)
    return grad


def finite_diff_check(logits, label: SmoothedLabel, cfg: LossConfig, step: float = 1e-6) -> float:
    """Worst relative disagreement between analytic and numeric gradients.

    Central differences with the given step; relative error per
    coordinate is |analytic - numeric| / (|analytic| + 1e-12).
    """
    z = np.asarray(logits, dtype=float)
    analytic = loss_grad_logits(z, label, cfg)
    numeric = np.empty(3)
    for j in range(3):
        zp, zm = z.copy(), z.copy()
        zp[j] += step
        zm[j] -= step
        lp = loss_value(SoftLabel3.from_array(softmax(zp)), label, cfg)
        lm = loss_value(SoftLabel3.from_array(softmax(zm)), label, cfg)
        numeric[j] = (lp - lm) / (2.0 * step)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-12)))


def batch_loss_and_grad(logits: np.ndarray, truth: np.ndarray, cfg: LossConfig):
    """Mean loss and per-row logit gradients for a batch of predictions.

    ``logits`` is (n, 3); ``truth`` is (n,) integer categories.  The
    target for each row is the smoothed one-hot of its truth.  Returns
    (mean loss, gradient of the mean loss, shape (n, 3)).  Vectorized
    equivalent of the scalar operations; training uses this path.
    """
    z = np.asarray(logits, dtype=float)
    t = np.asarray(truth, dtype=int)
    n = z.shape[0]
    y = softmax(z)
    log_y = np.log(np.maximum(y, PROB_FLOOR))

    eps = cfg.label_smoothing
    p = np.full_like(y, eps / 3.0)
    p[np.arange(n), t] += 1.0 - eps

    ce = -(p * log_y).sum(axis=1)
    entropy = -(y * log_y).sum(axis=1)
    loss = ce - cfg.entropy_weight * entropy

    grad = y - p + cfg.entropy_weight * y * (log_y + entropy[:, None])

    if cfg.apply_side_swap and cfg.side_swap_weight != 0.0:
        swap_idx = _SWAP_INDEX[t]
        has_side = swap_idx >= 0
        rows = np.nonzero(has_side)[0]
        y_swap = y[rows, swap_idx[rows]]
        loss[rows] += cfg.side_swap_weight * y_swap
        one_hot = np.zeros((len(rows), 3))
        one_hot[np.arange(len(rows)), swap_idx[rows]] = 1.0
        grad[rows] += cfg.side_swap_weight * y_swap[:, None] * (one_hot - y[rows])

    return float(loss.mean()), grad / n
