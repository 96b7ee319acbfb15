"""Status updates and relaying for a secondary user sharing a primary user's channel.

The secondary user (SU) may relay the primary user's (PU) packets in exchange
for channel access.  The package models this as a constrained average-cost
MDP over the ages of information of both users, solves its Lagrangian
relaxation by relative value iteration, mixes two multiplier policies to meet
the PU's AoI constraint, and simulates the resulting policies.
"""

from .model import (
    INITIAL_STATE,
    Action,
    ModelParams,
    ParameterError,
    StateType,
    SystemState,
    available_actions,
    classify,
    constraint_cost,
    enumerate_states,
    lagrangian_cost,
    stage_cost,
    transition,
)
from .solver import (
    ConvergenceError,
    EvalResult,
    Policy,
    StructureError,
    ThresholdSummary,
    ValueTable,
    extract_thresholds,
    policy_evaluation,
    rvi_solve,
    structured_rvi_solve,
    verify_value_structure,
)
from .cmdp import (
    DualSolveReport,
    MixturePolicy,
    bisect_lambda,
    build_mixture,
    constraint_curve,
    robbins_monro_lambda,
    solve_cmdp,
)
from .simulator import Metrics, SimConfig, baseline_policy, compare, convergence_log, simulate, trace

__all__ = [
    "Action",
    "ConvergenceError",
    "DualSolveReport",
    "EvalResult",
    "INITIAL_STATE",
    "Metrics",
    "MixturePolicy",
    "ModelParams",
    "ParameterError",
    "Policy",
    "SimConfig",
    "StateType",
    "StructureError",
    "SystemState",
    "ThresholdSummary",
    "ValueTable",
    "available_actions",
    "baseline_policy",
    "bisect_lambda",
    "build_mixture",
    "classify",
    "compare",
    "constraint_cost",
    "constraint_curve",
    "convergence_log",
    "enumerate_states",
    "extract_thresholds",
    "lagrangian_cost",
    "policy_evaluation",
    "robbins_monro_lambda",
    "rvi_solve",
    "simulate",
    "solve_cmdp",
    "stage_cost",
    "structured_rvi_solve",
    "trace",
    "transition",
    "verify_value_structure",
]

__version__ = "0.1.0"
