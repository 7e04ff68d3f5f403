"""Loss kernels for distilling merged teacher targets into a single-class student.

Each kernel returns ``(loss, gradient)`` in double precision. The objective is

    total = l_sup + lambda(t) * (l_kd_cls + l_kd_box + l_kd_mask) + lambda_cons * l_cons

where lambda(t) ramps linearly from 0 to ``lambda_kd`` over the warm-up epochs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bridge import sigmoid
from .geometry import Box
from .rle import DimensionMismatch, RleMask, rle_decode

EPS = 1e-7


@dataclass(frozen=True)
class KdConfig:
    tau: float = 2.0
    lambda_kd: float = 1.0
    lambda_cons: float = 1.0
    warmup_epochs: float = 10
    conf_start: float = 0.6
    conf_end: float = 0.4
    total_epochs: float = 100

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.lambda_kd < 0 or self.lambda_cons < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs <= total_epochs")
        if not (0 <= self.conf_start <= 1 and 0 <= self.conf_end <= 1):
            raise ValueError("confidence thresholds must lie in [0, 1]")


@dataclass(frozen=True)
class LossBreakdown:
    l_sup: float
    l_kd_cls: float
    l_kd_box: float
    l_kd_mask: float
    l_cons: float
    lambda_t: float
    total: float


def _log_sigmoid(z: float) -> float:
    # log(sigmoid(z)) = -softplus(-z)
    return -(max(-z, 0.0) + math.log1p(math.exp(-abs(z))))


def kd_cls_loss(z_student: float, z_tree: float, tau: float = 2.0) -> tuple[float, float]:
    """tau^2 * KL(Bern(sigmoid(z_tree/tau)) || Bern(sigmoid(z_student/tau))).

    Gradient with respect to ``z_student`` is ``tau * (p_s - p_t)``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    s, t = z_student / tau, z_tree / tau
    p_t, p_s = sigmoid(t), sigmoid(s)
    # log(1 - sigmoid(x)) = log_sigmoid(-x)
    kl = p_t * (_log_sigmoid(t) - _log_sigmoid(s)) + (1.0 - p_t) * (
        _log_sigmoid(-t) - _log_sigmoid(-s)
    )
    return tau * tau * max(kl, 0.0), tau * (p_s - p_t)


def kd_box_loss(b_student: Box, b_tree: Box) -> tuple[float, np.ndarray]:
    """Mean absolute corner error; subgradient is sign(delta)/4, 0 at equality."""
    delta = np.subtract(b_student.as_tuple(), b_tree.as_tuple(), dtype=float)
    return float(np.mean(np.abs(delta))), np.sign(delta) / 4.0


def _grid(p: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != shape:
        raise DimensionMismatch(f"grid shape {p.shape} does not match mask shape {shape}")
    return p


def kd_mask_loss(p_student: np.ndarray, m_tree: RleMask) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy against the merged mask.

    Probabilities are clamped to [EPS, 1 - EPS]; the gradient is taken through
    the clamp, so clamped cells get zero gradient.
    """
    p_raw = _grid(p_student, m_tree.shape)
    target = rle_decode(m_tree).astype(float)
    p = np.clip(p_raw, EPS, 1.0 - EPS)
    n = p.size
    loss = -np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    grad = (p - target) / (p * (1.0 - p)) / n
    grad = np.where((p_raw < EPS) | (p_raw > 1.0 - EPS), 0.0, grad)
    return max(float(loss), 0.0), grad


def consistency_loss(p_weak: np.ndarray, p_strong: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared difference; gradient is with respect to ``p_strong``."""
    p_weak = np.asarray(p_weak, dtype=float)
    p_strong = _grid(p_strong, p_weak.shape)
    diff = p_weak - p_strong
    return float(np.mean(diff**2)), -2.0 * diff / diff.size


def lambda_at(epoch: float, cfg: KdConfig = KdConfig()) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if cfg.warmup_epochs == 0 or epoch >= cfg.warmup_epochs:
        return cfg.lambda_kd
    return cfg.lambda_kd * (epoch / cfg.warmup_epochs)


def conf_threshold_at(epoch: float, cfg: KdConfig = KdConfig()) -> float:
    """Linear decay from ``conf_start`` at epoch 0 to ``conf_end`` at the last epoch."""
    if not 0 <= epoch <= cfg.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.total_epochs}]")
    if cfg.total_epochs == 0:
        return cfg.conf_end
    f = epoch / cfg.total_epochs
    return cfg.conf_start * (1.0 - f) + cfg.conf_end * f


def total_loss(
    l_sup: float,
    l_kd_cls: float,
    l_kd_box: float,
    l_kd_mask: float,
    l_cons: float,
    cfg: KdConfig = KdConfig(),
    epoch: float = 0,
) -> LossBreakdown:
    parts = (l_sup, l_kd_cls, l_kd_box, l_kd_mask, l_cons)
    if any(p < 0 for p in parts):
        raise ValueError(f"loss components must be non-negative, got {parts}")
    if not 0 <= epoch <= cfg.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.total_epochs}]")
    lam = lambda_at(epoch, cfg)
    total = l_sup + lam * (l_kd_cls + l_kd_box + l_kd_mask) + cfg.lambda_cons * l_cons
    return LossBreakdown(l_sup, l_kd_cls, l_kd_box, l_kd_mask, l_cons, lam, total)
