"""Policy-replay equilibrium learning for multi-player Markov games."""

from .envs import Environment, FeatureMap, env_from_dict
from .evaluation import (all_gaps, best_modification_value, best_response_value, cce_gap, ce_gap, evaluate_value,
                         nash_gap)
from .game import MixtureMarkovPolicy, TabularMarkovGame, trajectory_count
from .kernels import BACKEND
from .nash_ca import default_nash_params, run_nash_ca, solve_linear_mdp
from .oracles import Mode, RegretLearner
from .prebo import default_prebo_params, run_prebo
from .prefi import default_params, run_prefi, run_prefi_agile
from .regression import CovarianceAccumulator, fit_constrained_ls

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CovarianceAccumulator", "Environment", "FeatureMap", "MixtureMarkovPolicy", "Mode", "RegretLearner",
    "TabularMarkovGame", "all_gaps", "best_modification_value", "best_response_value", "cce_gap", "ce_gap",
    "default_nash_params", "default_params", "default_prebo_params", "env_from_dict", "evaluate_value",
    "fit_constrained_ls", "nash_gap", "run_nash_ca", "run_prebo", "run_prefi", "run_prefi_agile", "solve_linear_mdp",
    "trajectory_count",
]
