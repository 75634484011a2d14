"""Regularized logistic MLE, design matrix and confidence ellipsoid radius."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .numerics import logistic, min_eigenvalue, solve_spd

__all__ = [
    "ConvergenceError",
    "DesignState",
    "ThetaEstimate",
    "log_likelihood",
    "log_likelihood_grad",
    "fit_mle",
    "confidence_radius",
    "project_theta",
    "update_design",
    "uncertainty_width",
    "uncertainty_widths",
]

KAPPA_DEFAULT = 6.0


class ConvergenceError(RuntimeError):
    pass


@dataclass
class DesignState:
    """``V = kappa I + sum x x^T`` over the labeled set."""

    d: int
    kappa: float = KAPPA_DEFAULT
    V: np.ndarray = field(default=None)
    n_theta: int = 0

    def __post_init__(self):
        if self.V is None:
            self.V = self.kappa * np.eye(self.d)

    def min_eig(self) -> float:
        return min_eigenvalue(self.V)

    def copy(self) -> "DesignState":
        return DesignState(self.d, self.kappa, self.V.copy(), self.n_theta)


@dataclass
class ThetaEstimate:
    theta_hat: np.ndarray
    theta_L: np.ndarray
    B: float


def update_design(state: DesignState, x) -> DesignState:
    x = np.asarray(x, dtype=float)
    state.V += np.outer(x, x)
    state.n_theta += 1
    return state


def log_likelihood(theta, X, y) -> float:
    """Regularized log-likelihood ``sum[y log mu + (1-y) log(1-mu)] - |theta|^2 / 2``."""
    theta = np.asarray(theta, dtype=float)
    z = X @ theta
    return float(np.sum(y * z - np.logaddexp(0.0, z)) - 0.5 * theta @ theta)


def log_likelihood_grad(theta, X, y) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return X.T @ (y - logistic(X @ theta)) - theta


def _as_arrays(X, y, d=None):
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        X = X.reshape(0, d if d is not None else 0)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(X) != len(y):
        raise ValueError("X and y lengths differ")
    return X, y


def _roundoff_floor(X, theta) -> float:
    # achievable gradient accuracy for an n-term float64 sum
    return max(1e-10, 64 * np.finfo(float).eps * (len(X) + float(np.linalg.norm(theta))))


def fit_mle(X, y, warm_start=None, *, d: Optional[int] = None, tol: float = 1e-10,
            max_iter: int = 100, trace: Optional[list] = None) -> np.ndarray:
    """Maximize the regularized log-likelihood by damped Newton.

    ``X`` is ``(n, d)`` and may be empty (pass ``d`` then).  If ``trace`` is a
    list, the objective after every accepted step is appended to it.
    """
    if d is None:
        d = np.asarray(X).shape[-1] if np.asarray(X).ndim == 2 else len(warm_start)
    X, y = _as_arrays(X, y, d)
    theta = np.zeros(d) if warm_start is None else np.array(warm_start, dtype=float)
    obj = log_likelihood(theta, X, y)
    if trace is not None:
        trace.append(obj)
    for _ in range(max_iter):
        mu = logistic(X @ theta)
        grad = X.T @ (y - mu) - theta
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return theta
        w = mu * (1.0 - mu)
        H = (X.T * w) @ X + np.eye(d)
        step = solve_spd(H, grad)
        decrement = float(grad @ step)
        t = 1.0
        while True:
            cand = theta + t * step
            cand_obj = log_likelihood(cand, X, y)
            if cand_obj >= obj + 0.25 * t * decrement:
                break
            # objective differences below roundoff: fall back to the gradient norm as merit
            if abs(cand_obj - obj) <= 1e-13 * max(1.0, abs(obj)) and \
                    np.linalg.norm(log_likelihood_grad(cand, X, y)) < gnorm:
                break
            t *= 0.5
            if t < 1e-12:
                if gnorm <= _roundoff_floor(X, theta):
                    return theta
                raise ConvergenceError(f"line search failed, gradient norm {gnorm:.3e}")
        theta, obj = cand, cand_obj
        if trace is not None:
            trace.append(obj)
    if float(np.linalg.norm(log_likelihood_grad(theta, X, y))) <= _roundoff_floor(X, theta):
        return theta
    raise ConvergenceError(f"Newton did not converge in {max_iter} iterations")


def confidence_radius(n_theta: int, d: int, kappa: float, delta_prime: float, scale: float = 1.0) -> float:
    """Ellipsoid radius ``2 kappa (1 + sqrt(log(1/delta') + 2 d log(1 + n/(kappa d))))``."""
    if n_theta < 0 or not 0 < delta_prime <= 1:
        raise ValueError("need n_theta >= 0 and delta_prime in (0, 1]")
    inner = math.log(1.0 / delta_prime) + 2.0 * d * math.log1p(n_theta / (kappa * d))
    return scale * 2.0 * kappa * (1.0 + math.sqrt(inner))


def _g(theta, X):
    return X.T @ logistic(X @ theta) + theta


def _ball_qp(A, b):
    """Minimize ``u.A u / 2 - b.u`` over ``||u|| <= 1`` for SPD ``A``."""
    lam, Q = np.linalg.eigh(A)
    c = Q.T @ b
    u = Q @ (c / lam)
    if np.linalg.norm(u) <= 1.0:
        return u
    phi = lambda nu: float(np.linalg.norm(c / (lam + nu))) - 1.0
    hi = float(np.linalg.norm(b))
    nu = brentq(phi, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    u = Q @ (c / (lam + nu))
    return u / max(1.0, float(np.linalg.norm(u)))


def project_theta(theta_hat, design: DesignState, X, *, tol: float = 1e-8, max_iter: int = 200) -> np.ndarray:
    """Project the MLE onto the unit ball in the ``g``-mismatch metric.

    Minimizes ``||g(theta) - g(theta_hat)||_{V^-1}`` over ``||theta|| <= 1`` with
    ``g(theta) = sum mu(x.theta) x + theta``.  Gauss-Newton steps with an exact
    ball-constrained subproblem and backtracking; stops when the KKT residual
    (tangential gradient on the sphere, full gradient inside) falls below
    ``tol`` relative to the initial gradient.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    if np.linalg.norm(theta_hat) <= 1.0:
        return theta_hat
    d = len(theta_hat)
    X = np.asarray(X, dtype=float).reshape(-1, d)
    target = _g(theta_hat, X)
    V = design.V

    def evaluate(th):
        mu = logistic(X @ th)
        r = X.T @ mu + th - target
        s = solve_spd(V, r)
        J = (X.T * (mu * (1.0 - mu))) @ X + np.eye(d)
        return 0.5 * float(r @ s), J @ s, r, J, s

    def kkt(th, grad):
        if np.linalg.norm(th) < 1.0 - 1e-12:
            return float(np.linalg.norm(grad))
        radial = float(th @ grad)
        return float(np.linalg.norm(grad - radial * th)) + max(radial, 0.0)

    theta = theta_hat / np.linalg.norm(theta_hat)
    f, grad, r, J, s = evaluate(theta)
    scale = max(1.0, float(np.linalg.norm(grad)))
    # r is a difference of n-term sums; its rounding error propagates to f through V^-1 r
    r_noise = 64 * np.finfo(float).eps * (len(X) + float(np.linalg.norm(target)))
    for _ in range(max_iter):
        if kkt(theta, grad) <= tol * scale:
            return theta
        JV = solve_spd(V, J).T  # J V^-1 (both symmetric)
        u = _ball_qp(JV @ J, -JV @ (r - J @ theta))
        direction = u - theta
        slope = float(grad @ direction)
        t = 1.0
        if -slope <= max(1e-12 * abs(f), r_noise * float(np.linalg.norm(s))):
            # predicted decrease below the roundoff of f: the local model is exact enough
            theta = theta + direction
            f, grad, r, J, s = evaluate(theta)
            continue
        while True:
            cand = theta + t * direction
            fc, gc, rc, Jc, sc = evaluate(cand)
            if fc <= f + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-14:
                if kkt(theta, grad) <= 1e3 * tol * scale:
                    return theta
                raise ConvergenceError(f"projection stalled, KKT residual {kkt(theta, grad):.3e}")
        theta, f, grad, r, J, s = cand, fc, gc, rc, Jc, sc
    raise ConvergenceError("projection did not converge")


def uncertainty_width(design: DesignState, B: float, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(B * math.sqrt(max(0.0, float(x @ solve_spd(design.V, x)))))


def uncertainty_widths(V_inv: np.ndarray, B: float, X: np.ndarray) -> np.ndarray:
    """Row-wise ``B ||x||_{V^-1}`` given a precomputed inverse."""
    q = np.einsum("ij,jk,ik->i", X, V_inv, X)
    return B * np.sqrt(np.maximum(q, 0.0))
