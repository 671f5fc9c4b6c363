"""Data-driven predictive control with implicit-differentiation poisoning attacks."""

from .plant import (
    ContinuousLti,
    DiscreteLti,
    HankelPair,
    IoLog,
    build_hankel,
    collect_excitation,
    discretize,
    oscillating_masses,
    simulate,
)
from .deepc import (
    CompactQp,
    DpcProblem,
    assemble_compact,
    build_problem,
    compute_regularizer,
    project_box,
)
from .solver import MaxIterationsError, SaddlePoint, Workspace, solve_qp
from .sensitivity import (
    Adjoint,
    DegenerateSolutionError,
    Residual,
    SensitivityOperators,
    assemble_sensitivity,
    directional_sensitivity,
    projection_jacobian,
    residual,
    solve_adjoint,
)
from .attack import (
    AttackSpec,
    OracleResult,
    Perturbation,
    attack_algorithm1,
    attack_oracle,
    attack_random,
    ball_lmo,
    psi_gradient,
)
from .config import ExperimentConfig, ParseError, ValidationError, load_config
from .harness import (
    Metrics,
    RunResult,
    compute_metrics,
    masses_attack_instance,
    report_lsq_sizes,
    run_closed_loop,
)

__all__ = [
    "ContinuousLti",
    "DiscreteLti",
    "HankelPair",
    "IoLog",
    "build_hankel",
    "collect_excitation",
    "discretize",
    "oscillating_masses",
    "simulate",
    "CompactQp",
    "DpcProblem",
    "assemble_compact",
    "build_problem",
    "compute_regularizer",
    "project_box",
    "MaxIterationsError",
    "SaddlePoint",
    "Workspace",
    "solve_qp",
    "Adjoint",
    "DegenerateSolutionError",
    "Residual",
    "SensitivityOperators",
    "assemble_sensitivity",
    "directional_sensitivity",
    "projection_jacobian",
    "residual",
    "solve_adjoint",
    "AttackSpec",
    "OracleResult",
    "Perturbation",
    "attack_algorithm1",
    "attack_oracle",
    "attack_random",
    "ball_lmo",
    "psi_gradient",
    "ExperimentConfig",
    "ParseError",
    "ValidationError",
    "load_config",
    "Metrics",
    "RunResult",
    "compute_metrics",
    "masses_attack_instance",
    "report_lsq_sizes",
    "run_closed_loop",
]
