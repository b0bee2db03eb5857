"""Incentive-based distributed voltage regulation on radial distribution feeders.

The package couples a network operator, which prices voltage-limit
violations and deviations, with price-taking device owners that adjust
their active and reactive power setpoints.
"""
from .acpf import (BranchFlowState, FeederPlant, InjectionVector, NoConvergence,
                   branch_flow_residuals, estimate_model_error, linear_voltage,
                   solve_branch_flow)
from .agents import (AgentPool, CostParams, DerAgent, FeasibleSet, IncentiveSignal, Setpoint,
                     best_response, cost_gradient, cost_value, primal_step, project)
from .feeder import (Bus, CycleDetected, DisconnectedBus, DuplicateId, FeederTopology,
                     InvalidElement, Line, SensitivityModel, TopologyError, build_topology,
                     compute_sensitivity)
from .kernels import BACKEND
from .operator import (Certificate, DualState, OperatorConfig, certify_step_sizes, dual_step,
                       incentive_signals, kkt_residual, network_gradient, network_objective)
from .oracle import NotConverged, OracleSolution, exactness_check, grid_search, saddle_point
from .runtime import (IterateState, OnlineTrace, RunDiagnostics, UncertifiedStepSizes,
                      empirical_contraction, offline_solve, online_run,
                      regularization_gap_report, tracking_bound_report)
from .scenario import (FeederSpec, ParseError, ProfileShape, RunConfig, ScenarioTimeline,
                       ValidationError, build_ieee37_phase_c, load_scenario, synth_profiles)

__all__ = [
    "BranchFlowState", "FeederPlant", "InjectionVector", "NoConvergence",
    "branch_flow_residuals", "estimate_model_error", "linear_voltage", "solve_branch_flow",
    "AgentPool", "CostParams", "DerAgent", "FeasibleSet", "IncentiveSignal", "Setpoint",
    "best_response", "cost_gradient", "cost_value", "primal_step", "project", "Bus",
    "CycleDetected", "DisconnectedBus", "DuplicateId", "FeederTopology", "InvalidElement",
    "Line", "SensitivityModel", "TopologyError", "build_topology", "compute_sensitivity",
    "BACKEND", "Certificate", "DualState", "OperatorConfig", "certify_step_sizes", "dual_step",
    "incentive_signals", "kkt_residual", "network_gradient", "network_objective",
    "NotConverged", "OracleSolution", "exactness_check", "grid_search", "saddle_point",
    "IterateState", "OnlineTrace", "RunDiagnostics", "UncertifiedStepSizes",
    "empirical_contraction", "offline_solve", "online_run", "regularization_gap_report",
    "tracking_bound_report", "FeederSpec", "ParseError", "ProfileShape", "RunConfig",
    "ScenarioTimeline", "ValidationError", "build_ieee37_phase_c", "load_scenario",
    "synth_profiles",
]

__version__ = "0.1.0"
