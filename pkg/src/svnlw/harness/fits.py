"""Least-squares line fits used by the scaling and growth checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LineFit", "fit_loglinear", "upper_envelope"]


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r2: float
    points: int

    def predict(self, x):
        return self.intercept + self.slope * np.asarray(x, dtype=np.float64)


def fit_loglinear(xs, ys) -> LineFit:
    """Ordinary least squares ``y = intercept + slope * x``.

    The caller applies any transform (``log t``, ``lambda^{2/k}``, ...)
    before the call.  Needs at least three points and non-constant ``xs``.
    """
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("xs and ys must have the same length")
    if len(x) < 3:
        raise ValueError("a line fit needs at least 3 points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in fit data")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-14 * max(1.0, float(np.abs(x).max())) ** 2:
        raise ValueError("degenerate xs: all points share one abscissa")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    yc = y - y.mean()
    syy = float(yc @ yc)
    r2 = 1.0 - float(resid @ resid) / syy if syy > 0 else 1.0
    return LineFit(slope, intercept, r2, len(x))


def upper_envelope(xs, ys, slope: float | None = None) -> LineFit:
    """Affine function lying above all points.

    With ``slope=None`` the least-squares slope is used; the intercept is
    raised until no point lies above the line.
    """
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if slope is None:
        slope = fit_loglinear(x, y).slope
    intercept = float(np.max(y - slope * x))
    resid = y - (intercept + slope * x)
    yc = y - y.mean()
    syy = float(yc @ yc)
    r2 = 1.0 - float(resid @ resid) / syy if syy > 0 else 1.0
    return LineFit(float(slope), intercept, r2, len(x))
