"""Regression scores."""

import numpy as np

from ..errors import DegenerateInput, DegenerateTarget, LengthMismatch


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise LengthMismatch(f"need two equal-length vectors of >= 2 items, got {a.size} and {b.size}")
    return a, b


def r2(y, y_pred) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    y, y_pred = _pair(y, y_pred)
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise DegenerateTarget("R² is undefined for a constant target")
    return float(1.0 - np.sum((y - y_pred) ** 2) / ss_tot)


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(np.sum(dx * dx)), np.sqrt(np.sum(dy * dy))
    if sx == 0 or sy == 0:
        raise DegenerateInput("Pearson correlation of a constant sequence")
    return float(np.clip(np.sum(dx * dy) / (sx * sy), -1.0, 1.0))
