"""Special functions, small dense linear algebra and the RNG contract.

Random streams are numpy ``Generator`` objects backed by PCG64 and seeded
through ``SeedSequence``; a stream is keyed by ``(master_seed, run_index)``
so every run of a sweep owns an independent, replayable sequence.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "logistic",
    "reg_inc_beta",
    "unit_ball_volume",
    "min_eigenvalue",
    "solve_spd",
    "symmetrize",
    "make_rng",
    "NotPositiveDefiniteError",
]

_EPS = 1e-16
_TINY = 1e-300


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


def logistic(z):
    """Numerically stable logistic function, scalar or array."""
    if np.ndim(z) == 0:
        z = float(z)
        if z >= 0:
            return 1.0 / (1.0 + math.exp(-z))
        e = math.exp(z)
        return e / (1.0 + e)
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _betacf(x: float, a: float, b: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, 10_000):
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
    raise ArithmeticError(f"continued fraction did not converge for x={x}, a={a}, b={b}")


def _simpson_beta(x: float, a: float, b: float) -> float:
    # fallback: adaptive Simpson on t = u**(1/a) so the integrand is regular at 0
    log_beta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)

    def f(u: float) -> float:
        if u <= 0.0:
            return 1.0 if b >= 1.0 or x < 1.0 else 0.0
        t = u ** (1.0 / a)
        return (1.0 - t) ** (b - 1.0) if t < 1.0 else (1.0 if b == 1.0 else 0.0)

    def rec(lo, hi, flo, fmid, fhi, whole, tol, depth):
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return rec(lo, mid, flo, flm, fmid, left, tol / 2, depth - 1) + rec(
            mid, hi, fmid, frm, fhi, right, tol / 2, depth - 1
        )

    upper = x**a
    flo, fhi, fmid = f(0.0), f(upper), f(0.5 * upper)
    whole = upper / 6.0 * (flo + 4.0 * fmid + fhi)
    integral = rec(0.0, upper, flo, fmid, fhi, whole, 1e-13, 50)
    return min(1.0, max(0.0, integral / a / math.exp(log_beta)))


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``, the Beta(a, b) CDF at ``x``.

    Continued fraction with the usual symmetry switch for ``x > (a+1)/(a+b+2)``;
    falls back to adaptive Simpson if the fraction fails to converge.
    """
    if not (a > 0 and b > 0) or not math.isfinite(a) or not math.isfinite(b):
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    try:
        if x < (a + 1.0) / (a + b + 2.0):
            return front * _betacf(x, a, b) / a
        return 1.0 - front * _betacf(1.0 - x, b, a) / b
    except ArithmeticError:
        return _simpson_beta(x, a, b)


def unit_ball_volume(d: int) -> float:
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return math.exp(0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1.0))


def symmetrize(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return 0.5 * (m + m.T)


def min_eigenvalue(m) -> float:
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return float(np.linalg.eigvalsh(symmetrize(m))[0])


def solve_spd(m, rhs) -> np.ndarray:
    """Solve ``m v = rhs`` for symmetric positive definite ``m`` via Cholesky."""
    m = symmetrize(m)
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc
    y = np.linalg.solve(chol, np.asarray(rhs, dtype=float))
    return np.linalg.solve(chol.T, y)


def make_rng(master_seed: int, run_index: int = 0) -> np.random.Generator:
    """PCG64 stream keyed by ``(master_seed, run_index)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(master_seed), int(run_index)])))
