"""Context and label generation for the simulated test-or-predict stream."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .numerics import logistic, min_eigenvalue, unit_ball_volume

__all__ = [
    "ContextDistribution",
    "GroundTruth",
    "uniform_ball",
    "radial_density",
    "sample_context",
    "sample_contexts",
    "sample_label",
    "sample_labels",
    "random_unit_vector",
    "conditional_min_eig_estimate",
    "ConditionalEigResult",
]


@dataclass(frozen=True)
class ContextDistribution:
    """Distribution of contexts on the unit ball in ``R^d``.

    ``kind`` is ``"uniform"`` or ``"radial"``.  A radial density is piecewise
    constant in ``||x||`` on the shells delimited by ``edges`` (starting at 0,
    ending at 1) with unnormalised heights ``heights``.
    """

    d: int
    kind: str = "uniform"
    edges: tuple = ()
    heights: tuple = ()

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.kind == "uniform":
            return
        if self.kind != "radial":
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        edges = np.asarray(self.edges, dtype=float)
        heights = np.asarray(self.heights, dtype=float)
        if edges.ndim != 1 or len(edges) != len(heights) + 1 or len(heights) == 0:
            raise ValueError("radial profile needs len(edges) == len(heights) + 1")
        if edges[0] != 0.0 or edges[-1] != 1.0 or np.any(np.diff(edges) <= 0):
            raise ValueError("radial edges must increase strictly from 0 to 1")
        if np.any(~np.isfinite(heights)) or np.any(heights <= 0):
            raise ValueError("radial heights must be positive and finite")

    @property
    def is_uniform(self) -> bool:
        return self.kind == "uniform"

    def _shell_masses(self) -> np.ndarray:
        e = np.asarray(self.edges, dtype=float) ** self.d
        return np.asarray(self.heights, dtype=float) * np.diff(e)

    def density_bounds(self) -> tuple[float, float]:
        """Lower and upper bounds ``(m, M)`` of the normalised density."""
        vol = unit_ball_volume(self.d)
        if self.is_uniform:
            return 1.0 / vol, 1.0 / vol
        z = self._shell_masses().sum() * vol
        h = np.asarray(self.heights, dtype=float)
        return float(h.min() / z), float(h.max() / z)


def uniform_ball(d: int) -> ContextDistribution:
    return ContextDistribution(d=d)


def radial_density(d: int, edges: Sequence[float], heights: Sequence[float],
                   m: Optional[float] = None, M: Optional[float] = None) -> ContextDistribution:
    """Radial profile with heights optionally clipped to ``[m, M]``."""
    h = np.asarray(heights, dtype=float)
    if m is not None or M is not None:
        h = np.clip(h, m if m is not None else -np.inf, M if M is not None else np.inf)
    return ContextDistribution(d=d, kind="radial", edges=tuple(map(float, edges)), heights=tuple(map(float, h)))


@dataclass
class GroundTruth:
    theta_star: np.ndarray
    distribution: ContextDistribution = field(default=None)

    def __post_init__(self):
        theta = np.asarray(self.theta_star, dtype=float)
        norm = np.linalg.norm(theta)
        if theta.ndim != 1 or norm == 0 or not np.isfinite(norm):
            raise ValueError("theta_star must be a nonzero finite vector")
        self.theta_star = theta / norm
        if self.distribution is None:
            self.distribution = uniform_ball(len(theta))
        if self.distribution.d != len(theta):
            raise ValueError("theta_star and distribution dimensions differ")

    @property
    def d(self) -> int:
        return len(self.theta_star)


def random_unit_vector(d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _radii(dist: ContextDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(n)
    if dist.is_uniform:
        return u ** (1.0 / dist.d)
    masses = dist._shell_masses()
    cdf = np.cumsum(masses) / masses.sum()
    shell = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(masses) - 1)
    e = np.asarray(dist.edges, dtype=float) ** dist.d
    lo, hi = e[shell], e[shell + 1]
    return (lo + u * (hi - lo)) ** (1.0 / dist.d)


def sample_contexts(dist: ContextDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. contexts as an ``(n, d)`` array."""
    g = rng.standard_normal((n, dist.d))
    norms = np.linalg.norm(g, axis=1)
    norms[norms == 0] = 1.0
    x = g / norms[:, None] * _radii(dist, n, rng)[:, None]
    # radius ** (1/d) is at most 1 but the normalisation can overshoot by an ulp
    over = np.linalg.norm(x, axis=1) > 1.0
    if np.any(over):
        x[over] /= np.linalg.norm(x[over], axis=1)[:, None]
    return x


def sample_context(dist: ContextDistribution, rng: np.random.Generator) -> np.ndarray:
    return sample_contexts(dist, 1, rng)[0]


def sample_labels(x: np.ndarray, gt: GroundTruth, rng: np.random.Generator) -> np.ndarray:
    p = logistic(np.atleast_2d(x) @ gt.theta_star)
    return (rng.random(len(p)) < p).astype(np.int8)


def sample_label(x: np.ndarray, gt: GroundTruth, rng: np.random.Generator) -> int:
    return int(sample_labels(x, gt, rng)[0])


@dataclass(frozen=True)
class ConditionalEigResult:
    estimate: float
    lower_bound: float
    p_star: float
    n_kept: int


def conditional_min_eig_estimate(gt: GroundTruth, tau: float, n: int, rng: np.random.Generator,
                                 p_star: Optional[float] = None) -> ConditionalEigResult:
    """Monte-Carlo ``lambda_min(E[X X^T | |<X, theta*>| <= tau])`` and its analytic floor.

    The floor is ``m tau^(d+2) V_d(1) / (p* (d+2))``.  ``p_star`` defaults to the
    Monte-Carlo fraction of retained samples.
    """
    d = gt.d
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    if n < 10 * d * d:
        raise ValueError(f"need at least {10 * d * d} samples, got {n}")
    x = sample_contexts(gt.distribution, n, rng)
    keep = np.abs(x @ gt.theta_star) <= tau
    kept = x[keep]
    if len(kept) < d + 1:
        raise ValueError(f"only {len(kept)} samples survived conditioning on tau={tau}")
    est = min_eigenvalue(kept.T @ kept / len(kept))
    if p_star is None:
        p_star = len(kept) / n
    m, _ = gt.distribution.density_bounds()
    bound = m * tau ** (d + 2) * unit_ball_volume(d) / (p_star * (d + 2))
    return ConditionalEigResult(estimate=est, lower_bound=bound, p_star=float(p_star), n_kept=int(len(kept)))
