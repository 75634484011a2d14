"""Test-or-predict policies: SCOUT, the known-parameter threshold baseline and
the in-expectation fractional-knapsack optimum."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .calibrator import (
    ALWAYS_TEST,
    EPS_MIN_DEFAULT,
    EmpiricalDistribution,
    SortedScores,
    ThresholdBundle,
    alpha_slack,
    assemble_tau,
    eps_q_schedule,
    zeta,
)
from .estimator import (
    KAPPA_DEFAULT,
    DesignState,
    confidence_radius,
    fit_mle,
    project_theta,
    uncertainty_widths,
)

__all__ = [
    "Mode",
    "Provenance",
    "Decision",
    "ScoutParams",
    "ScoutAgent",
    "oracle_decide",
    "knapsack_hindsight",
]


class Mode(str, Enum):
    RIGOROUS = "rigorous"
    PRACTICAL = "practical"


class Provenance(str, Enum):
    FORCED = "forced"
    THRESHOLD = "threshold"
    ALWAYS_TEST = "always_test"


@dataclass
class Decision:
    z: int
    y_hat: Optional[int]
    provenance: Provenance
    score: float = 0.0
    threshold: float = ALWAYS_TEST
    model_prediction: int = 0


@dataclass
class ScoutParams:
    """Tuning of a SCOUT run.

    ``c_B`` scales the confidence radius.  ``c_slack`` scales the budget
    deflations (Hoeffding slack and ``zeta``) in practical mode only; rigorous
    mode always uses the exact schedules.
    """

    d: int
    alpha: float
    delta_prime: float
    mode: Mode = Mode.PRACTICAL
    kappa: float = KAPPA_DEFAULT
    c_B: float = 1.0
    c_slack: float = 1.0
    eps_min: float = EPS_MIN_DEFAULT
    refit_growth: float = 2.0
    project: Optional[bool] = None

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.project is None:
            self.project = self.mode is Mode.RIGOROUS
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 < self.delta_prime < 1:
            raise ValueError("delta_prime must lie in (0, 1)")
        if self.c_B <= 0 or self.c_slack < 0:
            raise ValueError("c_B must be positive and c_slack nonnegative")
        if self.refit_growth <= 1:
            raise ValueError("refit_growth must exceed 1")


class ScoutAgent:
    """Stateful SCOUT learner.

    Odd rounds feed the context store, even tested rounds feed the labeled set.
    Rigorous mode refits every round; practical mode refits at round 3 and at
    the checkpoints 4, 8, 16, ... (ratio ``refit_growth``), and tests when
    ``|x.theta| <= tau + c_B B ||x||_{V^-1}``.
    """

    def __init__(self, params: ScoutParams):
        self.params = params
        d = params.d
        self.t = 0  # rounds completed
        self.design = DesignState(d, params.kappa)
        self._X = np.empty((64, d))
        self._y = np.empty(64)
        self.s_p = EmpiricalDistribution(d)
        self.theta_hat = np.zeros(d)
        self.theta = np.zeros(d)
        self.B = confidence_radius(0, d, params.kappa, params.delta_prime, params.c_B)
        self.bundle: Optional[ThresholdBundle] = None
        self.lambda_min = params.kappa
        self._V_inv = np.eye(d) / params.kappa
        self._fitted_at = 0
        self._next_refit = 3
        self.n_refits = 0

    # -- data access -------------------------------------------------------
    @property
    def n_theta(self) -> int:
        return self.design.n_theta

    @property
    def n_p(self) -> int:
        return len(self.s_p)

    @property
    def labeled(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.design.n_theta
        return self._X[:n], self._y[:n]

    def _add_labeled(self, X, y) -> None:
        X = np.atleast_2d(X)
        n, k = self.design.n_theta, len(X)
        if n + k > len(self._X):
            cap = max(2 * len(self._X), n + k)
            self._X = np.concatenate([self._X[:n], np.empty((cap - n, self.params.d))])
            self._y = np.concatenate([self._y[:n], np.empty(cap - n)])
        self._X[n : n + k] = X
        self._y[n : n + k] = y
        self.design.V += X.T @ X
        self.design.n_theta += k

    # -- estimation --------------------------------------------------------
    def needs_refit(self, t: int) -> bool:
        if t <= 2:
            return False
        if self.params.mode is Mode.RIGOROUS:
            return self._fitted_at != t
        return self._fitted_at == 0 or t >= self._next_refit

    def next_refit_round(self) -> int:
        """First round after the current one at which cached estimates change."""
        if self.params.mode is Mode.RIGOROUS:
            return self.t + 2
        return self._next_refit

    def refit(self, t: int) -> None:
        """Recompute theta and the threshold for round ``t`` from data before it."""
        p = self.params
        X, y = self.labeled
        self.theta_hat = fit_mle(X, y, warm_start=self.theta_hat, d=p.d)
        self.theta = project_theta(self.theta_hat, self.design, X) if p.project else self.theta_hat
        self.B = confidence_radius(self.n_theta, p.d, p.kappa, p.delta_prime, p.c_B)
        self.lambda_min = self.design.min_eig()
        if p.mode is Mode.RIGOROUS:
            self.bundle = assemble_tau(self.theta, self.s_p, self.design, self.B, t, p.alpha,
                                       p.delta_prime, p.eps_min)
        else:
            eps_q = eps_q_schedule(t, p.eps_min)
            a_t = max(0.0, p.alpha - p.c_slack * alpha_slack(t, p.delta_prime))
            z_t = p.c_slack * zeta(t, p.d, eps_q, p.delta_prime)
            inner = a_t - z_t
            tau_inner = SortedScores.from_dist(self.theta, self.s_p).tau_star_quantized(inner, eps_q)
            self.bundle = ThresholdBundle(
                tau_t=tau_inner + eps_q, alpha_t=a_t, zeta_t=z_t, eps_q=eps_q,
                b_over_sqrt_lambda=self.B / math.sqrt(self.lambda_min),
                inner_alpha=inner, tau_inner=tau_inner,
            )
            self._V_inv = np.linalg.inv(self.design.V)
            while self._next_refit <= t:
                if self._next_refit < 4:
                    self._next_refit = 4
                else:
                    self._next_refit = max(self._next_refit + 1, math.ceil(self._next_refit * p.refit_growth))
        self._fitted_at = t
        self.n_refits += 1

    # -- decisions ---------------------------------------------------------
    def thresholds(self, X: np.ndarray) -> np.ndarray:
        """Per-context test thresholds under the cached estimates."""
        tau = self.bundle.tau_t
        if tau == ALWAYS_TEST:
            return np.full(len(X), ALWAYS_TEST)
        if self.params.mode is Mode.RIGOROUS:
            return np.full(len(X), tau)
        return tau + uncertainty_widths(self._V_inv, self.B, X)

    def decide(self, x) -> Decision:
        t = self.t + 1
        x = np.asarray(x, dtype=float)
        if self.needs_refit(t):
            self.refit(t)
        score = float(x @ self.theta)
        model = int(score > 0)
        if t <= 2:
            return Decision(1, None, Provenance.FORCED, score, ALWAYS_TEST, model)
        thr = float(self.thresholds(x[None, :])[0])
        if thr == ALWAYS_TEST:
            return Decision(1, None, Provenance.ALWAYS_TEST, score, thr, model)
        if abs(score) <= thr:
            return Decision(1, None, Provenance.THRESHOLD, score, thr, model)
        return Decision(0, model, Provenance.THRESHOLD, score, thr, model)

    def update(self, x, decision: Decision, observed_label: Optional[int] = None) -> None:
        t = self.t + 1
        if (observed_label is not None) != bool(decision.z):
            raise ValueError(f"round {t}: a label must be supplied exactly when the context was tested")
        if decision.z:
            decision.y_hat = int(observed_label)
        if t % 2 == 1:
            self.s_p.append(x)
        elif decision.z:
            self._add_labeled(np.asarray(x, dtype=float)[None, :], [observed_label])
        self.t = t

    def step_block(self, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Process consecutive rounds sharing the cached estimates.

        Equivalent to ``decide``/``update`` round by round as long as no refit
        is due inside the block.  Returns ``(z, y_hat, scores, thresholds)``.
        """
        t0 = self.t + 1
        n = len(X)
        if t0 > 2 and self.needs_refit(t0):
            self.refit(t0)
        if n > 1 and self.params.mode is Mode.RIGOROUS and t0 + n - 1 > 2:
            raise ValueError("rigorous mode refits every round; blocks must have length 1")
        rounds = np.arange(t0, t0 + n)
        if t0 + n - 1 >= self._next_refit and t0 > 2 and self.params.mode is Mode.PRACTICAL:
            raise ValueError("block crosses a refit checkpoint")
        scores = X @ self.theta
        forced = rounds <= 2
        if self.bundle is None:
            thr = np.full(n, ALWAYS_TEST)
        else:
            thr = self.thresholds(X)
        thr[forced] = ALWAYS_TEST
        z = (np.abs(scores) <= thr).astype(np.int8)
        model = (scores > 0).astype(np.int8)
        y_hat = np.where(z == 1, Y, model).astype(np.int8)
        odd = rounds % 2 == 1
        if odd.any():
            self.s_p.extend(X[odd])
        lab = (~odd) & (z == 1)
        if lab.any():
            self._add_labeled(X[lab], Y[lab])
        self.t += n
        return z, y_hat, scores, thr

    def state_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.design.V, self.theta, self.theta_hat, self.labeled[0], self.labeled[1], self.s_p.contexts):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr((self.t, self.bundle.tau_t if self.bundle else None)).encode())
        return h.hexdigest()


def oracle_decide(x, theta_star, tau_star: float) -> Decision:
    """Known-parameter threshold rule: test on ``|x.theta*| <= tau*``, else predict the side."""
    s = float(np.asarray(x, dtype=float) @ np.asarray(theta_star, dtype=float))
    if abs(s) <= tau_star:
        return Decision(1, None, Provenance.THRESHOLD, s, tau_star, int(s > 0))
    return Decision(0, int(s > tau_star), Provenance.THRESHOLD, s, tau_star, int(s > 0))


def knapsack_hindsight(p, alpha: float, horizon: Optional[int] = None) -> tuple[float, np.ndarray]:
    """In-expectation optimum given the label probabilities of every round.

    Skips tests (``eta = 1``) on the rounds with the smallest Bayes error
    ``min(p, 1-p)`` until the error budget ``alpha * T`` is spent, splitting
    the boundary round fractionally.  Returns expected tests and the plan.
    """
    p = np.asarray(p, dtype=float)
    T = len(p) if horizon is None else horizon
    cost = np.minimum(p, 1.0 - p)
    budget = alpha * T
    eta = np.zeros(len(p))
    for i in np.argsort(cost, kind="stable"):
        c = cost[i]
        if c <= budget:
            eta[i] = 1.0
            budget -= c
        else:
            eta[i] = budget / c
            break
    return float(len(p) - eta.sum()), eta
