"""Episode runner, seed sweeps and safety/regret bookkeeping."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .calibrator import (
    ALWAYS_TEST,
    EPS_MIN_DEFAULT,
    SortedScores,
    alpha_schedule,
    oracle_tau_p_star,
    p_err_uniform,
)
from .environment import (
    ContextDistribution,
    GroundTruth,
    radial_density,
    random_unit_vector,
    sample_contexts,
    sample_labels,
    uniform_ball,
)
from .estimator import KAPPA_DEFAULT
from .numerics import make_rng
from .policies import Mode, ScoutAgent, ScoutParams

log = logging.getLogger(__name__)

__all__ = [
    "PRACTICAL_C_B",
    "PRACTICAL_C_SLACK",
    "ExperimentConfig",
    "RoundRecord",
    "Trace",
    "RunSummary",
    "AggregateReport",
    "TrueErrorCurve",
    "EpisodeError",
    "run_episode",
    "run_sweep",
    "aggregate",
    "safety_check",
    "time_grid",
    "fit_loglog_slope",
]

# Practical-mode constant reductions (rigorous mode uses 1.0 for both).
PRACTICAL_C_B = 0.002
PRACTICAL_C_SLACK = 0.2
MC_ORACLE_SAMPLES = 1_000_000
GRID_POINTS = 200

# stream ids under each run seed
_ENV_STREAM, _THETA_STREAM, _ORACLE_STREAM = 0, 1, 2


class EpisodeError(RuntimeError):
    def __init__(self, seed: int, round_index: int, cause: BaseException):
        super().__init__(f"seed {seed}, round {round_index}: {cause!r}")
        self.seed = seed
        self.round_index = round_index


@dataclass
class ExperimentConfig:
    d: int = 2
    T: int = 1000
    alpha: float = 0.1
    delta: float = 0.05
    mode: str = "practical"
    distribution: str = "uniform"
    theta_star: str = "random"
    seeds: list = field(default_factory=lambda: [1])
    refit_growth: float = 2.0
    c_B: Optional[float] = None
    c_slack: Optional[float] = None
    eps_min: float = EPS_MIN_DEFAULT
    kappa: float = KAPPA_DEFAULT
    project: Optional[bool] = None
    out: str = "out"

    def __post_init__(self):
        self.mode = Mode(self.mode).value
        if self.c_B is None:
            self.c_B = PRACTICAL_C_B if self.mode == "practical" else 1.0
        if self.c_slack is None:
            self.c_slack = PRACTICAL_C_SLACK if self.mode == "practical" else 1.0
        if self.project is None:
            self.project = self.mode == "rigorous"
        self.seeds = [int(s) for s in self.seeds]
        self.validate()

    def validate(self) -> None:
        if not 0 < self.alpha < 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.T < 2:
            raise ValueError(f"T must be at least 2, got {self.T}")
        if self.d < 1:
            raise ValueError(f"d must be positive, got {self.d}")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be nonnegative")
        if not 0 < self.c_B or self.c_slack < 0:
            raise ValueError("c_B must be positive and c_slack nonnegative")
        if not 0 < self.eps_min <= 1:
            raise ValueError("eps_min must lie in (0, 1]")
        self.context_distribution()

    @property
    def delta_prime(self) -> float:
        return self.delta / 7.0

    def context_distribution(self) -> ContextDistribution:
        """Parse ``uniform`` or ``radial:e0,e1,...;h0,h1,...``."""
        text = self.distribution.strip()
        if text == "uniform":
            return uniform_ball(self.d)
        if text.startswith("radial:"):
            try:
                edges, heights = text[len("radial:"):].split(";")
                return radial_density(self.d, [float(v) for v in edges.split(",")],
                                      [float(v) for v in heights.split(",")])
            except ValueError as exc:
                raise ValueError(f"bad radial distribution {text!r}: {exc}") from exc
        raise ValueError(f"unknown distribution {text!r}")

    def ground_truth(self, seed: int) -> GroundTruth:
        dist = self.context_distribution()
        if self.theta_star == "random":
            theta = random_unit_vector(self.d, make_rng(seed, _THETA_STREAM))
        else:
            theta = np.array([float(v) for v in self.theta_star.split(",")])
            if len(theta) != self.d:
                raise ValueError("theta_star length differs from d")
        return GroundTruth(theta, dist)

    def scout_params(self) -> ScoutParams:
        return ScoutParams(d=self.d, alpha=self.alpha, delta_prime=self.delta_prime, mode=self.mode,
                           kappa=self.kappa, c_B=self.c_B, c_slack=self.c_slack, eps_min=self.eps_min,
                           refit_growth=self.refit_growth, project=self.project)

    def to_dict(self) -> dict:
        return asdict(self)


class TrueErrorCurve:
    """Vectorised ``p_err(theta*, P, tau)`` and the baseline threshold for the true law.

    Uniform laws use quadrature on a fine grid; others a large Monte-Carlo sample.
    """

    _GRID = 4001

    def __init__(self, gt: GroundTruth, alpha: float, rng: Optional[np.random.Generator] = None,
                 n_mc: int = MC_ORACLE_SAMPLES):
        d = gt.d
        if gt.distribution.is_uniform:
            o = oracle_tau_p_star(alpha, d)
            self.tau_star, self.p_star, self.p_star_se = o.tau_star, o.p_star, 0.0
            self._taus = np.linspace(0.0, 1.0, self._GRID)
            self._vals = np.array([p_err_uniform(t, d) for t in self._taus])
            self._sorted = None
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            xs = sample_contexts(gt.distribution, n_mc, rng)
            scores = np.abs(xs @ gt.theta_star)
            self._sorted = SortedScores(scores)
            self.tau_star = self._sorted.tau_star(alpha)
            self.p_star = float(np.mean(scores <= self.tau_star))
            self.p_star_se = math.sqrt(self.p_star * (1 - self.p_star) / n_mc)

    def __call__(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if self._sorted is None:
            return np.interp(tau, self._taus, self._vals, right=0.0)
        idx = np.searchsorted(self._sorted.a, tau, side="right")
        return self._sorted.suffix[idx]


@dataclass
class RoundRecord:
    t: int
    z: int
    y: int
    y_hat: int
    score: float
    tau_t: float
    b_t: float
    lambda_min: float
    n_theta: int
    n_p: int
    cum_tests: int
    cum_errors: int


CSV_COLUMNS = tuple(f.name for f in fields(RoundRecord))


class Trace:
    """Column store of per-round records."""

    def __init__(self, **cols):
        missing = set(CSV_COLUMNS) - set(cols)
        if missing:
            raise ValueError(f"missing columns {sorted(missing)}")
        self.cols = {k: np.asarray(cols[k]) for k in CSV_COLUMNS}

    def __len__(self) -> int:
        return len(self.cols["t"])

    def __getitem__(self, i: int) -> RoundRecord:
        return RoundRecord(**{k: self.cols[k][i].item() for k in CSV_COLUMNS})

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __getattr__(self, name):
        cols = self.__dict__.get("cols")
        if cols is not None and name in cols:
            return cols[name]
        raise AttributeError(name)


@dataclass
class RunSummary:
    seed: int
    T: int
    total_tests: int
    total_errors: int
    p_star: float
    tau_star: float
    excess_tests: float
    max_prefix_error_rate: float
    safety_satisfied: bool
    first_violation: Optional[int]
    grid: list
    cum_tests_grid: list
    excess_grid: list
    cum_errors_grid: list
    baseline_tests: int
    baseline_errors: int
    baseline_safety_satisfied: bool
    pessimism_violations: int
    dominates_baseline: bool
    n_refits: int
    p_star_se: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def time_grid(T: int, n: int = GRID_POINTS) -> np.ndarray:
    """Log-spaced checkpoints in ``[1, T]`` plus ``T/4``, ``T/2`` and ``T``."""
    g = np.unique(np.round(np.logspace(0, math.log10(T), n)).astype(int))
    extra = [max(1, T // 4), max(1, T // 2), T]
    return np.unique(np.concatenate([g, extra]))


def safety_check(y, y_hat, alpha: float) -> tuple[bool, Optional[int]]:
    """Check every prefix misclassification rate against ``alpha``.

    Returns ``(ok, first_violating_round)``; rounds are 1-based.
    """
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty trace")
    errs = np.cumsum(np.asarray(y_hat) != y)
    t = np.arange(1, len(y) + 1)
    bad = np.nonzero(errs > alpha * t)[0]
    if len(bad) == 0:
        return True, None
    return False, int(bad[0] + 1)


def _play(agent: ScoutAgent, X: np.ndarray, Y: np.ndarray, seed: int):
    """Drive the agent over the whole stream; practical mode uses refit-free blocks."""
    T = len(X)
    z = np.empty(T, dtype=np.int8)
    y_hat = np.empty(T, dtype=np.int8)
    score = np.empty(T)
    thr = np.empty(T)
    b_t = np.empty(T)
    lam = np.empty(T)
    i = 0
    while i < T:
        t = i + 1
        try:
            if agent.params.mode is Mode.RIGOROUS or t <= 2:
                end = i + 1 if t > 2 else min(2, T)
            else:
                if agent.needs_refit(t):
                    agent.refit(t)
                end = min(T, agent.next_refit_round() - 1)
            zz, yh, sc, th = agent.step_block(X[i:end], Y[i:end])
        except Exception as exc:  # attach the round for triage
            raise EpisodeError(seed, t, exc) from exc
        z[i:end], y_hat[i:end], score[i:end], thr[i:end] = zz, yh, sc, th
        b_t[i:end] = agent.B
        lam[i:end] = agent.lambda_min
        i = end
    return z, y_hat, score, thr, b_t, lam


def run_episode(config: ExperimentConfig, seed: int,
                truth: Optional[TrueErrorCurve] = None) -> tuple[Trace, RunSummary]:
    """Simulate one seeded run of SCOUT alongside the known-parameter baseline."""
    T, alpha = config.T, config.alpha
    gt = config.ground_truth(seed)
    rng = make_rng(seed, _ENV_STREAM)
    X = sample_contexts(gt.distribution, T, rng)
    Y = sample_labels(X, gt, rng)
    if truth is None:
        truth = TrueErrorCurve(gt, alpha, make_rng(seed, _ORACLE_STREAM))

    agent = ScoutAgent(config.scout_params())
    z, y_hat, score, thr, b_t, lam = _play(agent, X, Y, seed)

    t = np.arange(1, T + 1)
    even_tested = ((t % 2 == 0) & (z == 1)).astype(np.int64)
    n_theta = np.concatenate([[0], np.cumsum(even_tested)[:-1]])
    n_p = t // 2
    errors = (y_hat != Y).astype(np.int64)
    cum_tests = np.cumsum(z.astype(np.int64))
    cum_errors = np.cumsum(errors)
    trace = Trace(t=t, z=z, y=Y, y_hat=y_hat, score=score, tau_t=thr, b_t=b_t, lambda_min=lam,
                  n_theta=n_theta, n_p=n_p, cum_tests=cum_tests, cum_errors=cum_errors)

    # known-parameter baselines
    s_true = X @ gt.theta_star
    base_z = np.abs(s_true) <= truth.tau_star
    base_hat = np.where(base_z, Y, (s_true > truth.tau_star).astype(np.int8))
    base_errors = (base_hat != Y).astype(np.int64)
    alpha_t = np.array([alpha_schedule(int(k), alpha, config.delta_prime) for k in t])
    # the alpha_t-level baseline tests iff p_err(|s|) >= alpha_t (continuous, decreasing p_err)
    base_t_z = truth(np.abs(s_true)) >= alpha_t
    base_t_hat = np.where(base_t_z, Y, (s_true > 0).astype(np.int8))
    base_t_errors = np.cumsum(base_t_hat != Y)

    summary = summarize(trace, seed, alpha, truth.p_star, truth.tau_star)
    summary.baseline_tests = int(base_z.sum())
    summary.baseline_errors = int(base_errors.sum())
    summary.baseline_safety_satisfied = safety_check(Y, base_hat, alpha)[0]
    summary.pessimism_violations = int(np.sum(base_t_z & (z == 0)))
    summary.dominates_baseline = bool(np.all(cum_errors <= base_t_errors))
    summary.n_refits = agent.n_refits
    summary.p_star_se = truth.p_star_se
    if summary.pessimism_violations:
        bad = np.nonzero(base_t_z & (z == 0))[0][:5] + 1
        log.warning("seed %d: %d pessimism violations, first rounds %s",
                    seed, summary.pessimism_violations, bad.tolist())
    return trace, summary


def summarize(trace: Trace, seed: int, alpha: float, p_star: float, tau_star: float) -> RunSummary:
    """Summary fields derived from the per-round records alone."""
    T = len(trace)
    t = np.arange(1, T + 1)
    cum_tests = np.cumsum(trace.z.astype(np.int64))
    cum_errors = np.cumsum((trace.y_hat != trace.y).astype(np.int64))
    ok, first = safety_check(trace.y, trace.y_hat, alpha)
    grid = time_grid(T)
    return RunSummary(
        seed=int(seed), T=T, total_tests=int(cum_tests[-1]), total_errors=int(cum_errors[-1]),
        p_star=float(p_star), tau_star=float(tau_star),
        excess_tests=float(cum_tests[-1] - p_star * T),
        max_prefix_error_rate=float(np.max(cum_errors / t)),
        safety_satisfied=ok, first_violation=first,
        grid=grid.tolist(),
        cum_tests_grid=cum_tests[grid - 1].tolist(),
        excess_grid=(cum_tests[grid - 1] - p_star * grid).tolist(),
        cum_errors_grid=cum_errors[grid - 1].tolist(),
        baseline_tests=0, baseline_errors=0, baseline_safety_satisfied=True,
        pessimism_violations=0, dominates_baseline=True, n_refits=0,
    )


def _episode_summary(args):
    config, seed = args
    return run_episode(config, seed)


def run_sweep(config: ExperimentConfig, keep_traces: bool = True, workers: Optional[int] = None):
    """Run every seed of ``config``; results come back in seed-list order."""
    if workers is None:
        workers = int(os.environ.get("SCOUT_THREADS", "1") or 1)
    jobs = [(config, s) for s in config.seeds]
    gt0 = config.ground_truth(config.seeds[0])
    shared = None
    if config.theta_star != "random" or gt0.distribution.is_uniform:
        # the oracle only depends on (theta*, P) up to rotation for the uniform law
        shared = TrueErrorCurve(gt0, config.alpha, make_rng(config.seeds[0], _ORACLE_STREAM))
    results = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_episode_summary, jobs))
    else:
        for cfg, seed in jobs:
            results.append(run_episode(cfg, seed, truth=shared))
    if not keep_traces:
        results = [(None, s) for _, s in results]
    return results


@dataclass
class AggregateReport:
    n_runs: int
    grid: list
    test_rate_q10: list
    test_rate_q50: list
    test_rate_q90: list
    mean_excess: list
    mean_excess_final: float
    safety_violations: int
    safety_violation_fraction: float
    slope: float
    slope_window: tuple
    p_star: float
    tau_star: float
    mean_test_rate_final: float
    pessimism_violations: int
    baseline_safety_violations: int

    def to_dict(self) -> dict:
        return asdict(self)


def fit_loglog_slope(t, y) -> float:
    """Least-squares slope of ``log y`` against ``log t`` over positive entries."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (t > 0) & (y > 0)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(t[keep]), np.log(y[keep]), 1)[0])


def aggregate(runs: Sequence[RunSummary], window: Optional[tuple] = None) -> AggregateReport:
    """Quantile curves, mean excess tests, safety counts and the excess-test growth exponent."""
    if not runs:
        raise ValueError("need at least one run")
    runs = sorted(runs, key=lambda r: r.seed)
    grid = np.asarray(runs[0].grid)
    if any(r.grid != runs[0].grid for r in runs):
        raise ValueError("runs use different time grids")
    T = runs[0].T
    rates = np.array([r.cum_tests_grid for r in runs], dtype=float) / grid
    excess = np.array([r.excess_grid for r in runs], dtype=float)
    q10, q50, q90 = np.quantile(rates, [0.1, 0.5, 0.9], axis=0)
    mean_excess = excess.mean(axis=0)
    lo, hi = window if window is not None else (T / 10, T)
    sel = (grid >= lo) & (grid <= hi)
    n_bad = sum(not r.safety_satisfied for r in runs)
    return AggregateReport(
        n_runs=len(runs), grid=grid.tolist(),
        test_rate_q10=q10.tolist(), test_rate_q50=q50.tolist(), test_rate_q90=q90.tolist(),
        mean_excess=mean_excess.tolist(), mean_excess_final=float(mean_excess[-1]),
        safety_violations=n_bad, safety_violation_fraction=n_bad / len(runs),
        slope=fit_loglog_slope(grid[sel], mean_excess[sel]), slope_window=(float(lo), float(hi)),
        p_star=float(np.mean([r.p_star for r in runs])), tau_star=float(np.mean([r.tau_star for r in runs])),
        mean_test_rate_final=float(rates[:, -1].mean()),
        pessimism_violations=int(sum(r.pessimism_violations for r in runs)),
        baseline_safety_violations=int(sum(not r.baseline_safety_satisfied for r in runs)),
    )
