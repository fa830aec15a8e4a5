"""Robust constrained RL for tabular CMDPs under delta-contamination uncertainty."""

from importlib.metadata import PackageNotFoundError, version

from ._validation import ValidationError
from .counterexample import run_counterexample
from .envs import EnvSpec, frozen_lake, garnet, make_env, n_chain, robust_threshold, taxi
from .estimators import (
    HeuristicPrimalDual,
    NonRobustPrimalDual,
    OnlinePrimalDual,
    RobustPrimalDual,
    SmoothedRobustTD,
)
from .gradient import GradientResult, b_term, finite_diff_gradient, smoothed_gradient
from .mdp import SoftmaxPolicy, TabularCMDP, Visitation, evaluate, load_mdp, policy_probs, save_mdp, visitation
from .online import OnlineConfig, evaluate_trace, heuristic_pd_run, nonrobust_pd_run, online_rpd_run
from .robust import (
    ContaminationSet,
    RobustValues,
    lse,
    robust_bellman_apply,
    robust_value,
    smoothed_bellman_apply,
    smoothed_robust_value,
    worst_case_kernel,
)
from .rpd import (
    DualIterate,
    GradMapping,
    RunRecord,
    Schedule,
    check_feasibility,
    constants,
    gradient_mapping,
    lagrangian,
    lambda_star,
    rpd_run,
    rpd_step,
)
from .td import TDConfig, robust_td, td_value_estimate

try:
    __version__ = version("robust-crl")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

__all__ = [
    "ContaminationSet", "DualIterate", "EnvSpec", "GradMapping", "GradientResult",
    "HeuristicPrimalDual", "NonRobustPrimalDual", "OnlineConfig", "OnlinePrimalDual",
    "RobustPrimalDual", "RobustValues", "RunRecord", "Schedule", "SmoothedRobustTD",
    "SoftmaxPolicy", "TDConfig", "TabularCMDP", "ValidationError", "Visitation", "b_term",
    "check_feasibility", "constants", "evaluate", "evaluate_trace", "finite_diff_gradient",
    "frozen_lake", "garnet", "gradient_mapping", "heuristic_pd_run", "lagrangian", "lambda_star",
    "load_mdp", "lse", "make_env", "n_chain", "nonrobust_pd_run", "online_rpd_run",
    "policy_probs", "robust_bellman_apply", "robust_td", "robust_threshold", "robust_value",
    "rpd_run", "rpd_step", "run_counterexample", "save_mdp", "smoothed_bellman_apply",
    "smoothed_gradient", "smoothed_robust_value", "taxi", "td_value_estimate", "visitation",
    "worst_case_kernel",
]
