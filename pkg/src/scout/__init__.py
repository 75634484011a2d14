"""Safe sequential testing for logistic outcome models.

Decides each round whether to pay for a ground-truth label or predict from
features, keeping the running misclassification rate under a target with high
probability.
"""

from .calibrator import ALWAYS_TEST, EmpiricalDistribution, oracle_tau_p_star
from .environment import ContextDistribution, GroundTruth, uniform_ball
from .harness import ExperimentConfig, aggregate, run_episode, run_sweep, safety_check
from .policies import Mode, ScoutAgent, ScoutParams, knapsack_hindsight, oracle_decide

__version__ = "0.1.0"

__all__ = [
    "ALWAYS_TEST",
    "ContextDistribution",
    "EmpiricalDistribution",
    "ExperimentConfig",
    "GroundTruth",
    "Mode",
    "ScoutAgent",
    "ScoutParams",
    "aggregate",
    "knapsack_hindsight",
    "oracle_decide",
    "oracle_tau_p_star",
    "run_episode",
    "run_sweep",
    "safety_check",
    "uniform_ball",
]
