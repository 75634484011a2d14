"""Threshold calibration: empirical error rates, quantized thresholds and schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .estimator import DesignState
from .numerics import reg_inc_beta

__all__ = [
    "ALWAYS_TEST",
    "EmpiricalDistribution",
    "ThresholdBundle",
    "error_weights",
    "p_err_empirical",
    "SortedScores",
    "tau_star_continuous",
    "tau_star_quantized",
    "zeta",
    "alpha_schedule",
    "alpha_slack",
    "eps_q_schedule",
    "assemble_tau",
    "p_err_uniform",
    "segment_fraction",
    "oracle_tau_p_star",
    "monte_carlo_tau_p_star",
]

# No threshold meets a negative budget; the policy tests every context.
ALWAYS_TEST = math.inf
EPS_MIN_DEFAULT = 1e-4


class EmpiricalDistribution:
    """Append-only store of contexts backing the plug-in distribution estimate."""

    def __init__(self, d: int, capacity: int = 64):
        self.d = d
        self._buf = np.empty((max(capacity, 1), d))
        self.n_p = 0

    def append(self, x) -> None:
        if self.n_p == len(self._buf):
            grown = np.empty((2 * len(self._buf), self.d))
            grown[: self.n_p] = self._buf[: self.n_p]
            self._buf = grown
        self._buf[self.n_p] = x
        self.n_p += 1

    def extend(self, X) -> None:
        X = np.atleast_2d(X)
        need = self.n_p + len(X)
        if need > len(self._buf):
            grown = np.empty((max(2 * len(self._buf), need), self.d))
            grown[: self.n_p] = self._buf[: self.n_p]
            self._buf = grown
        self._buf[self.n_p : need] = X
        self.n_p = need

    @property
    def contexts(self) -> np.ndarray:
        return self._buf[: self.n_p]

    def __len__(self) -> int:
        return self.n_p

    @classmethod
    def from_array(cls, X) -> "EmpiricalDistribution":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        dist = cls(X.shape[1], capacity=len(X))
        dist._buf[: len(X)] = X
        dist.n_p = len(X)
        return dist


def error_weights(abs_scores):
    """Bayes misclassification probability ``1 / (1 + exp(|s|))``."""
    return np.exp(-np.logaddexp(0.0, abs_scores))


def _scores(theta, dist: EmpiricalDistribution) -> np.ndarray:
    if len(dist) == 0:
        raise ValueError("empirical distribution is empty")
    return np.abs(dist.contexts @ np.asarray(theta, dtype=float))


def p_err_empirical(theta, dist: EmpiricalDistribution, tau: float) -> float:
    s = _scores(theta, dist)
    return float(np.sum(error_weights(s[s > tau])) / len(s))


class SortedScores:
    """Sorted absolute scores with suffix sums of their error weights.

    ``p_err(tau)`` is the normalised suffix sum past the last score ``<= tau``.
    """

    def __init__(self, abs_scores):
        a = np.sort(np.asarray(abs_scores, dtype=float))
        if len(a) == 0:
            raise ValueError("empirical distribution is empty")
        self.a = a
        w = error_weights(a)
        suffix = np.zeros(len(a) + 1)
        suffix[:-1] = np.cumsum(w[::-1])[::-1]
        self.suffix = suffix / len(a)

    @classmethod
    def from_dist(cls, theta, dist: EmpiricalDistribution) -> "SortedScores":
        return cls(_scores(theta, dist))

    def p_err(self, tau: float) -> float:
        return float(self.suffix[np.searchsorted(self.a, tau, side="right")])

    def tau_star(self, alpha: float) -> float:
        """Smallest ``tau >= 0`` with ``p_err(tau) <= alpha``; ALWAYS_TEST if ``alpha < 0``."""
        if alpha < 0:
            return ALWAYS_TEST
        if self.p_err(0.0) <= alpha:
            return 0.0
        # p_err just at a[j] counts only the scores strictly above a[j]
        after = self.suffix[np.searchsorted(self.a, self.a, side="right")]
        j = int(np.argmax(after <= alpha))
        return float(self.a[j])

    def tau_star_quantized(self, alpha: float, eps_q: float) -> float:
        tau = self.tau_star(alpha)
        if tau == ALWAYS_TEST or tau == 0.0:
            return tau
        k = math.ceil(tau / eps_q)
        while k * eps_q < tau:
            k += 1
        while k > 0 and (k - 1) * eps_q >= tau:
            k -= 1
        return k * eps_q


def tau_star_continuous(theta, dist: EmpiricalDistribution, alpha: float) -> float:
    return SortedScores.from_dist(theta, dist).tau_star(alpha)


def tau_star_quantized(theta, dist: EmpiricalDistribution, alpha_eff: float, eps_q: float) -> float:
    """Smallest point of the grid ``{0, eps_q, 2 eps_q, ...}`` meeting the error budget.

    Returns ``ALWAYS_TEST`` when ``alpha_eff < 0``.
    """
    if not 0 < eps_q <= 1:
        raise ValueError("eps_q must lie in (0, 1]")
    return SortedScores.from_dist(theta, dist).tau_star_quantized(alpha_eff, eps_q)


def zeta(t: int, d: int, eps_q: float, delta_prime: float) -> float:
    if t < 1:
        raise ValueError("round index starts at 1")
    num = (d + 1) * math.log(1.0 / eps_q) + math.log(math.pi**2 * t * t / delta_prime)
    return math.sqrt(max(num, 0.0) / (4.0 * t))


def alpha_slack(t: int, delta_prime: float) -> float:
    """Hoeffding slack ``sqrt(log(2 t^2 / delta') / (2t))`` removed from the error budget."""
    return math.sqrt(max(math.log(2.0 * t * t / delta_prime), 0.0) / (2.0 * t))


def alpha_schedule(t: int, alpha: float, delta_prime: float) -> float:
    if t < 1:
        raise ValueError("round index starts at 1")
    return max(0.0, alpha - alpha_slack(t, delta_prime))


def eps_q_schedule(t: int, eps_min: float = EPS_MIN_DEFAULT) -> float:
    return max(1.0 / (t * t), eps_min)


@dataclass
class ThresholdBundle:
    tau_t: float
    alpha_t: float
    zeta_t: float
    eps_q: float
    b_over_sqrt_lambda: float
    inner_alpha: float = field(default=0.0)
    tau_inner: float = field(default=0.0)

    @property
    def always_test(self) -> bool:
        return self.tau_t == ALWAYS_TEST


def assemble_tau(theta_L, dist: EmpiricalDistribution, design: DesignState, B: float, t: int,
                 alpha: float, delta_prime: float, eps_min: float = EPS_MIN_DEFAULT,
                 eps_q: float | None = None) -> ThresholdBundle:
    """Pessimistic threshold: inner quantized tau at a deflated budget plus inflations."""
    if eps_q is None:
        eps_q = eps_q_schedule(t, eps_min)
    lam = design.min_eig()
    ratio = B / math.sqrt(lam)
    a_t = alpha_schedule(t, alpha, delta_prime)
    z_t = zeta(t, dist.d, eps_q, delta_prime)
    inner = a_t - z_t - 2.0 * ratio - eps_q
    tau_inner = tau_star_quantized(theta_L, dist, inner, eps_q)
    tau = tau_inner + 3.0 * ratio + eps_q
    return ThresholdBundle(tau_t=tau, alpha_t=a_t, zeta_t=z_t, eps_q=eps_q,
                           b_over_sqrt_lambda=ratio, inner_alpha=inner, tau_inner=tau_inner)


# --- closed forms for the uniform ball ------------------------------------

def segment_fraction(tau: float, d: int) -> float:
    """Mass of ``{|<x, u>| <= tau}`` under the uniform law on the unit ball."""
    tau = min(max(tau, 0.0), 1.0)
    return reg_inc_beta(tau * tau, 0.5, 0.5 * (d + 1))


def _marginal_const(d: int) -> float:
    # density of s = <x, u> is c (1 - s^2)^((d-1)/2) on [-1, 1]
    return math.exp(math.lgamma(0.5 * d + 1.0) - 0.5 * math.log(math.pi) - math.lgamma(0.5 * (d + 1)))


def p_err_uniform(tau: float, d: int) -> float:
    c = _marginal_const(d)
    if tau >= 1.0:
        return 0.0
    f = lambda s: (1.0 - s * s) ** (0.5 * (d - 1)) / (1.0 + math.exp(s))
    val, _ = integrate.quad(f, max(tau, 0.0), 1.0, epsabs=1e-12, epsrel=1e-12, limit=200)
    return 2.0 * c * val


def _segment_fraction_quadrature(tau: float, d: int) -> float:
    c = _marginal_const(d)
    val, _ = integrate.quad(lambda s: (1.0 - s * s) ** (0.5 * (d - 1)), 0.0, tau,
                            epsabs=1e-13, epsrel=1e-13, limit=200)
    return 2.0 * c * val


@dataclass(frozen=True)
class OracleThreshold:
    tau_star: float
    p_star: float
    p_star_quadrature: float


def oracle_tau_p_star(alpha: float, d: int, tol: float = 1e-10) -> OracleThreshold:
    """Baseline threshold and test probability under the uniform ball law.

    Bisection on ``p_err(tau) = alpha``; ``p*`` from the incomplete beta and
    cross-checked by quadrature of the score marginal.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if alpha >= p_err_uniform(0.0, d):
        return OracleThreshold(0.0, 0.0, 0.0)
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if p_err_uniform(mid, d) <= alpha:
            hi = mid
        else:
            lo = mid
    tau = hi
    return OracleThreshold(tau, segment_fraction(tau, d), _segment_fraction_quadrature(tau, d))


def monte_carlo_tau_p_star(theta_star, contexts, alpha: float) -> tuple[float, float, float]:
    """Plug-in ``(tau*, p*, se(p*))`` from a large context sample."""
    scores = np.abs(np.asarray(contexts) @ np.asarray(theta_star, dtype=float))
    ss = SortedScores(scores)
    tau = ss.tau_star(alpha)
    p = float(np.mean(scores <= tau))
    return tau, p, math.sqrt(p * (1 - p) / len(scores))
