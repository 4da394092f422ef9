"""Correlation and least-squares kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularDesignError, UndefinedCorrelationError

_EPS = 1e-16
_TINY = 1e-300


def _betacf(a: float, b: float, x: float, max_iter: int = 10_000) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """Two-tailed p-value of Student's t statistic."""
    if math.isinf(t):
        return 0.0
    return betainc_regularized(df / 2.0, 0.5, df / (df + t * t))


def pearson(x, y) -> tuple[float, float]:
    """Sample Pearson r and its two-tailed p-value (``n - 2`` degrees of freedom)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and of equal length")
    n = x.shape[0]
    if n < 3:
        raise ValueError("pearson needs at least 3 samples")
    dx = x - math.fsum(x) / n
    dy = y - math.fsum(y) / n
    sxx = math.fsum(dx * dx)
    syy = math.fsum(dy * dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for zero-variance input")
    r = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, t_two_sided_p(t, n - 2)


@dataclass(frozen=True)
class OLSFit:
    betas: np.ndarray
    residuals: np.ndarray
    r_squared: float


def ols(design, target, rcond: float = 1e-10) -> OLSFit:
    """Least squares via Householder QR; raises on rank deficiency."""
    X = np.asarray(design, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("design must be n x p and target length n")
    n, p = X.shape
    if n <= p:
        raise SingularDesignError(f"need more samples than coefficients (n={n}, p={p})")
    q, r = np.linalg.qr(X, mode="reduced")
    diag = np.abs(np.diag(r))
    scale = np.linalg.norm(X, axis=0)
    if np.any(diag <= rcond * np.maximum(scale, _TINY)):
        raise SingularDesignError("design matrix is rank deficient")
    betas = np.linalg.solve(r, q.T @ y)
    resid = y - X @ betas
    # one refinement step keeps residuals orthogonal to the columns at roundoff level
    betas = betas + np.linalg.solve(r, q.T @ resid)
    resid = y - X @ betas
    dy = y - y.mean()
    sst = float(dy @ dy)
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 1.0
    return OLSFit(betas, resid, r2)


def ols_fit(design, target) -> list[float]:
    """Coefficients of the least-squares fit of ``target`` on ``design``."""
    return [float(b) for b in ols(design, target).betas]
