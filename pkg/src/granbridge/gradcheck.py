"""Central finite-difference checks for the distillation kernels."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import distill
from .geometry import Box
from .rle import rle_encode

STEP = 1e-5
TOLERANCE = 1e-6
KINK_MARGIN = 1e-3


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        up = f(x)
        x.flat[i] = old - h
        down = f(x)
        x.flat[i] = old
        grad.flat[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|); entries where both vanish count as 0."""
    a = np.atleast_1d(np.asarray(analytic, dtype=float))
    n = np.atleast_1d(np.asarray(numeric, dtype=float))
    scale = np.maximum(np.abs(a), np.abs(n))
    err = np.where(scale > 0, np.abs(a - n) / np.where(scale > 0, scale, 1.0), 0.0)
    return float(err.max()) if err.size else 0.0


def check_cls(rng: np.random.Generator) -> float:
    z_s, z_t = rng.uniform(-10, 10, size=2)
    tau = rng.uniform(0.5, 4.0)
    _, g = distill.kd_cls_loss(z_s, z_t, tau)
    n = numeric_grad(lambda x: distill.kd_cls_loss(x[0], z_t, tau)[0], np.array([z_s]))
    return relative_error(g, n)


def check_box(rng: np.random.Generator) -> float:
    x0, y0 = rng.uniform(0, 50, size=2)
    w, h = rng.uniform(20, 60, size=2)
    target = Box(x0, y0, x0 + w, y0 + h)
    while True:
        delta = rng.uniform(-5, 5, size=4)
        if np.all(np.abs(delta) > KINK_MARGIN):
            break
    s = np.array(target.as_tuple()) + delta
    _, g = distill.kd_box_loss(Box(*s), target)
    return relative_error(g, numeric_grad(lambda x: distill.kd_box_loss(Box(*x), target)[0], s))


def check_mask(rng: np.random.Generator) -> float:
    h, w = 4, 4
    mask = rle_encode(rng.random((h, w)) < 0.5)
    p = rng.uniform(0.05, 0.95, size=(h, w))
    _, g = distill.kd_mask_loss(p, mask)
    return relative_error(g, numeric_grad(lambda x: distill.kd_mask_loss(x, mask)[0], p))


def check_cons(rng: np.random.Generator) -> float:
    p_weak = rng.uniform(0, 1, size=(4, 4))
    p_strong = rng.uniform(0, 1, size=(4, 4))
    _, g = distill.consistency_loss(p_weak, p_strong)
    return relative_error(
        g, numeric_grad(lambda x: distill.consistency_loss(p_weak, x)[0], p_strong)
    )


KERNELS: dict[str, Callable[[np.random.Generator], float]] = {
    "cls": check_cls,
    "box": check_box,
    "mask": check_mask,
    "cons": check_cons,
}


def run_checks(
    kernels: list[str] | None = None, samples: int = 100, seed: int = 0
) -> dict[str, float]:
    """Max relative gradient error per kernel over ``samples`` random inputs."""
    names = list(KERNELS) if kernels is None else kernels
    unknown = [k for k in names if k not in KERNELS]
    if unknown:
        raise KeyError(f"unknown kernels: {unknown}")
    out = {}
    for name in names:
        rng = np.random.default_rng([seed, list(KERNELS).index(name)])
        out[name] = max(KERNELS[name](rng) for _ in range(samples))
    return out
