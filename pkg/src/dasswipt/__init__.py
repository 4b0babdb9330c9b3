"""Robust beamforming, RRH selection and energy cooperation for distributed-antenna SWIPT networks."""
from .baselines import baseline_colocated, baseline_full_cooperation, baseline_no_energy_share, colocated_scenario
from .conic import (
    DualCertificate, PrimalOutcome, build_l1_feasibility, build_primal, build_sca, rank_one_recovery, solve,
    solve_fixed, solve_with_fallback, verify_policy,
)
from .errors import (
    InstanceInfeasible, NumericalFailure, RecoveryFailed, RoundedPatternInfeasible, RoundingViolatesBackhaul,
    StructuralError, SwiptError,
)
from .experiments import ExperimentSpec, run_experiment
from .gbd import Cut, RunTrace, enumerate_patterns, enumeration_optimum, run_gbd
from .model import BeamVectors, Policy, Scenario, check_deterministic_constraints, secrecy_rate
from .robust import verify_policy_robust
from .sca import run_sca
from .scenario import SystemParams, TopologyConfig, apply_csi_error, generate_scenario, load_config

__version__ = "0.1.0"

__all__ = [
    "Scenario", "Policy", "BeamVectors", "secrecy_rate", "check_deterministic_constraints",
    "TopologyConfig", "SystemParams", "generate_scenario", "apply_csi_error", "load_config",
    "verify_policy_robust", "PrimalOutcome", "DualCertificate", "build_primal", "build_l1_feasibility", "build_sca",
    "solve", "solve_fixed", "solve_with_fallback", "rank_one_recovery", "verify_policy",
    "Cut", "RunTrace", "run_gbd", "enumerate_patterns", "enumeration_optimum", "run_sca",
    "baseline_full_cooperation", "baseline_no_energy_share", "baseline_colocated", "colocated_scenario",
    "ExperimentSpec", "run_experiment",
    "SwiptError", "StructuralError", "InstanceInfeasible", "NumericalFailure", "RecoveryFailed",
    "RoundingViolatesBackhaul", "RoundedPatternInfeasible",
]
