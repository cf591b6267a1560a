"""hKR and least-squares losses with their derivatives w.r.t. the network outputs.

Batch means replace the integrals against the sampling density, so the hinge
weight ``lam`` keeps its meaning across batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LossInputError(ValueError):
    pass


@dataclass(frozen=True)
class HkrConfig:
    margin: float = 1e-2
    lam: float = 100.0

    def __post_init__(self):
        if not self.margin > 0:
            raise LossInputError(f"margin must be positive, got {self.margin}")
        if not self.lam > 0:
            raise LossInputError(f"lambda must be positive, got {self.lam}")


@dataclass
class LossReport:
    kr: float
    hinge: float
    total: float
    grad: np.ndarray  # dL/df per sample


def _check(f, y):
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if f.shape != y.shape:
        raise LossInputError(f"{f.shape[0]} outputs but {y.shape[0]} labels")
    if f.size == 0:
        raise LossInputError("empty batch")
    if not np.all((y == 1.0) | (y == -1.0)):
        raise LossInputError("labels must be -1 or +1")
    return f, y


def kr_loss(f, y) -> tuple[float, np.ndarray]:
    """Mean of ``-y f``."""
    f, y = _check(f, y)
    n = f.size
    return float(np.mean(-y * f)), -y / n


def hinge_loss(f, y, margin: float) -> tuple[float, np.ndarray]:
    """Mean of ``max(0, margin - y f)``; subgradient 0 where the margin is met exactly."""
    if not margin > 0:
        raise LossInputError(f"margin must be positive, got {margin}")
    f, y = _check(f, y)
    n = f.size
    slack = margin - y * f
    active = slack > 0
    return float(np.mean(np.where(active, slack, 0.0))), np.where(active, -y / n, 0.0)


def hkr_loss(f, y, cfg: HkrConfig) -> LossReport:
    kr, g_kr = kr_loss(f, y)
    hinge, g_h = hinge_loss(f, y, cfg.margin)
    return LossReport(kr, hinge, kr + cfg.lam * hinge, g_kr + cfg.lam * g_h)


def fit_loss(f, s_true) -> tuple[float, np.ndarray]:
    """Mean squared error against ground-truth signed distances."""
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    s = np.asarray(s_true, dtype=np.float64).reshape(-1)
    if f.shape != s.shape:
        raise LossInputError(f"{f.shape[0]} outputs but {s.shape[0]} targets")
    if f.size == 0:
        raise LossInputError("empty batch")
    r = f - s
    return float(np.mean(r * r)), 2.0 * r / f.size
