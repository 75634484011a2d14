"""Numeric validation checks against closed forms for the uniform ball."""

from __future__ import annotations

import math

import numpy as np

from .calibrator import _segment_fraction_quadrature, segment_fraction
from .environment import sample_contexts, uniform_ball
from .estimator import log_likelihood, log_likelihood_grad
from .numerics import make_rng, min_eigenvalue, reg_inc_beta, unit_ball_volume


def arcsine_beta(x: float) -> float:
    """``I_x(1/2, 3/2)`` in closed form."""
    return (2.0 / math.pi) * (math.asin(math.sqrt(x)) + math.sqrt(x * (1.0 - x)))


def covariance_check(d: int, n: int, seed: int) -> tuple[float, float]:
    x = sample_contexts(uniform_ball(d), n, make_rng(seed, d))
    return min_eigenvalue(x.T @ x / n), 1.0 / (d + 2)


def segment_check(tau: float, d: int, n: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo and analytic mass of the slab ``|x_1| <= tau`` in the unit ball."""
    # rejection sampling from the enclosing cube
    rng = make_rng(seed, 1000 + d)
    hits = inside = 0
    while inside < n:
        u = rng.uniform(-1.0, 1.0, size=(min(n, 2_000_000), d))
        u = u[np.einsum("ij,ij->i", u, u) <= 1.0][: n - inside]
        inside += len(u)
        hits += int(np.sum(np.abs(u[:, 0]) <= tau))
    return hits / n, segment_fraction(tau, d)


def gradient_check(n_instances: int, seed: int, h: float = 1e-5) -> float:
    """Worst relative error of the analytic log-likelihood gradient against central differences."""
    rng = make_rng(seed, 77)
    worst = 0.0
    for _ in range(n_instances):
        d = int(rng.integers(1, 6))
        n = int(rng.integers(0, 40))
        X = sample_contexts(uniform_ball(d), n, rng)
        y = rng.integers(0, 2, n).astype(float)
        theta = rng.normal(size=d) * 2.0
        g = log_likelihood_grad(theta, X, y)
        fd = np.empty(d)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            fd[i] = (log_likelihood(theta + e, X, y) - log_likelihood(theta - e, X, y)) / (2 * h)
        worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-8)))
    return worst


def run_all(n_samples: int = 1_000_000, seed: int = 0) -> list[tuple[str, bool, str]]:
    out = []
    val, ref = reg_inc_beta(0.25, 0.5, 1.5), arcsine_beta(0.25)
    out.append(("incomplete beta vs arcsine form", abs(val - ref) <= 1e-6, f"{val:.9f} vs {ref:.9f}"))
    worst = 0.0
    for x in np.linspace(0.01, 0.99, 25):
        for a, b in ((0.5, 1.5), (2.0, 3.5), (0.5, 4.5), (7.0, 1.2)):
            worst = max(worst, abs(reg_inc_beta(x, a, b) + reg_inc_beta(1 - x, b, a) - 1.0))
    out.append(("incomplete beta reflection", worst <= 1e-9, f"max defect {worst:.2e}"))
    for d in (2, 3):
        est, ref = covariance_check(d, n_samples, seed)
        out.append((f"uniform covariance eigenvalue d={d}", abs(est - ref) <= 0.01, f"{est:.5f} vs {ref:.5f}"))
    for d in (2, 5):
        for tau in (0.3, 0.5, 0.8):
            mc, ref = segment_check(tau, d, n_samples, seed)
            rel = abs(mc - ref) / ref
            out.append((f"segment fraction d={d} tau={tau}", rel <= 0.01,
                        f"mc {mc:.5f} vs {ref:.5f} (volume {ref * unit_ball_volume(d):.4f}), rel {rel:.2e}"))
    one = segment_fraction(1.0, 2)
    out.append(("segment fraction tau=1", one == 1.0, f"{one}"))
    worst = max(abs(segment_fraction(t, d) - _segment_fraction_quadrature(t, d))
                for d in (2, 5, 8) for t in (0.1, 0.4, 0.7, 0.95))
    out.append(("segment fraction beta vs quadrature", worst <= 1e-6, f"max diff {worst:.2e}"))
    rel = gradient_check(100, seed)
    out.append(("log-likelihood gradient vs finite differences", rel <= 1e-5, f"max rel err {rel:.2e}"))
    return out
