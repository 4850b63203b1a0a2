"""Least-squares kernels: single-predictor regression with a slope t-test,
Pearson correlation, and Lawson-Hanson non-negative least squares."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, NnlsConvergenceError

_BETACF_EPS = 1e-16
_BETACF_TINY = 1e-300
_BETACF_MAXIT = 100_000


@dataclass(frozen=True)
class SimpleFit:
    slope: float
    intercept: float
    pcc: float
    p_value: float
    n: int


@dataclass(frozen=True)
class NnlsSolution:
    weights: np.ndarray
    residual_norm: float
    iterations: int


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_TINY:
        d = _BETACF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with `df` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return betainc_reg(0.5 * df, 0.5, df / (df + t * t))


def slope_p_value(r: float, n: int) -> float:
    """Two-sided p-value of the regression slope given the sample correlation r."""
    if n < 3:
        raise ValueError("p-value needs n >= 3")
    df = n - 2
    one_minus_r2 = (1.0 - r) * (1.0 + r)
    if one_minus_r2 <= 0.0:
        return 0.0
    if r == 0.0:
        return 1.0
    # I_{df/(df+t^2)}(df/2, 1/2) with df/(df+t^2) = 1 - r^2
    return betainc_reg(0.5 * df, 0.5, one_minus_r2)


def _moments(x: np.ndarray, y: np.ndarray):
    dx = x - x.mean()
    dy = y - y.mean()
    return float(dx @ dx), float(dy @ dy), float(dx @ dy)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-D vectors of equal length")
    if len(x) < 2:
        raise ValueError("pearson needs at least 2 samples")
    sxx, syy, sxy = _moments(x, y)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateError("undefined correlation: zero variance")
    return float(np.clip(sxy / math.sqrt(sxx * syy), -1.0, 1.0))


def simple_lls(x, y) -> SimpleFit:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    n = len(x)
    if n < 3:
        raise ValueError("simple_lls needs at least 3 samples")
    sxx, syy, sxy = _moments(x, y)
    if sxx == 0.0:
        raise DegenerateError("degenerate predictor: zero variance")
    slope = sxy / sxx
    intercept = float(y.mean() - slope * x.mean())
    if syy == 0.0:
        return SimpleFit(0.0, float(y.mean()), 0.0, 1.0, n)
    r = float(np.clip(sxy / math.sqrt(sxx * syy), -1.0, 1.0))
    return SimpleFit(float(slope), intercept, r, slope_p_value(r, n), n)


def default_tol(A: np.ndarray, b: np.ndarray) -> float:
    return 1e-10 * max(1.0, float(np.max(np.abs(A.T @ b), initial=0.0)))


def kkt_violation(A, b, x) -> float:
    """Largest violation of the NNLS optimality conditions at x.

    With g = A^T (b - A x): zero weights need g <= 0, positive weights need g = 0.
    """
    A = np.asarray(A, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    g = A.T @ (np.asarray(b, dtype=np.float64) - A @ x)
    worst = float(max(0.0, -x.min(initial=0.0)))
    zero = x <= 0
    if zero.any():
        worst = max(worst, float(g[zero].max()))
    if (~zero).any():
        worst = max(worst, float(np.abs(g[~zero]).max()))
    return worst


def _polish(As, bs, x, passive, g, norms):
    """Admit columns whose gradient is positive but below tol.

    A column joins only if the enlarged least-squares solution stays strictly
    positive and lowers the residual, so every accepted step is a genuine
    NNLS improvement. This recovers weak but real components that a
    gradient tolerance alone would leave at zero.
    """
    passive = passive.copy()
    res = float(np.linalg.norm(bs - As @ x))
    tried = np.zeros(len(x), dtype=bool)
    while True:
        cand = np.where(~passive & ~tried & (norms > 0) & (g > 0), g, -np.inf)
        if not np.any(cand > 0):
            return x
        j = int(np.argmax(cand))
        tried[j] = True
        idx = np.flatnonzero(passive | (np.arange(len(x)) == j))
        z = np.zeros(len(x))
        z[idx] = np.linalg.lstsq(As[:, idx], bs, rcond=None)[0]
        r = float(np.linalg.norm(bs - As @ z))
        if np.all(z[idx] > 0) and r < res:
            x, res = z, r
            passive[j] = True
            tried[:] = False
            g = As.T @ (bs - As @ x)


def nnls(A, b, tol: float | None = None, max_iter: int | None = None) -> NnlsSolution:
    """Lawson-Hanson active-set solution of min ||Ax - b|| subject to x >= 0.

    Columns and b are scaled to unit norm internally. Positive column scaling
    does not move the constraint set and keeps rate columns (~1e9) and the ones
    column commensurate; the solution is positively homogeneous in b. `tol`
    applies to the gradient of the scaled problem. When several gradient
    components tie for the maximum, the lowest column index enters first.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} and {b.shape}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("nnls inputs must be finite")
    m, n = A.shape
    norms = np.linalg.norm(A, axis=0)
    scale = np.where(norms > 0, norms, 1.0)
    As = A / scale
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return NnlsSolution(np.zeros(n), 0.0, 0)
    bs = b / b_norm
    if tol is None:
        tol = default_tol(As, bs)
    if max_iter is None:
        max_iter = 3 * n

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    # columns whose entry made no progress; cleared whenever x moves
    blocked = np.zeros(n, dtype=bool)
    iterations = 0

    def result(xs):
        w = xs * b_norm / scale
        return NnlsSolution(w, float(np.linalg.norm(A @ w - b)), iterations)

    while True:
        g = As.T @ (bs - As @ x)
        cand = np.where(~passive & ~blocked & (norms > 0), g, -np.inf)
        if not np.any(cand > tol):
            return result(_polish(As, bs, x, passive, g, norms))
        if iterations >= max_iter:
            raise NnlsConvergenceError(
                f"nnls did not converge within {max_iter} iterations", best=result(x))
        iterations += 1
        j = int(np.argmax(cand))
        passive[j] = True
        first = True
        while True:
            idx = np.flatnonzero(passive)
            z = np.zeros(n)
            z[idx] = np.linalg.lstsq(As[:, idx], bs, rcond=None)[0]
            if np.all(z[idx] > 0):
                x = z
                blocked[:] = False
                break
            if first and z[j] <= 0:
                # rounding defeated the entering column; set it aside
                passive[j] = False
                blocked[j] = True
                break
            first = False
            neg = idx[z[idx] <= 0]
            den = x[neg] - z[neg]
            ratios = np.divide(x[neg], den, out=np.zeros(len(neg)), where=den > 0)
            k = int(np.argmin(ratios))
            x = x + ratios[k] * (z - x)
            x[neg[k]] = 0.0
            drop = passive & (x <= 0)
            x[drop] = 0.0
            passive &= ~drop
            blocked[:] = False
            if not passive.any():
                break
