"""L2-type discrete Caputo operators on graded meshes for semilinear subdiffusion."""

from .caputo import DiscreteCaputoMatrix, apply_history, assemble, assemble_l1, assemble_l2
from .harness import (
    ErrorReport,
    energy_diagnostic,
    estimate_order,
    gamma_exponent,
    run_convergence_study,
    theoretical_bound,
)
from .mesh import MeshAssumptionConfig, TemporalMesh, analyze_mesh, build_graded, lambda_cap
from .mittag_leffler import ml_neg
from .monotone import (
    BarrierProfile,
    MonotoneRepresentation,
    barrier_check,
    comparison_trial,
    compute_representation,
    inverse_monotonicity_oracle,
    plus_lambda_probe,
)
from .spatial import EllipticOperator1D, SpatialGrid1D, assemble_elliptic, discrete_sine_eigenpairs, solve_shifted
from .stepper import NonlinearSolveConfig, ProblemSpec, SolutionTrajectory, residual_norm, solve, step

__version__ = "0.1.0"

__all__ = [
    "BarrierProfile",
    "DiscreteCaputoMatrix",
    "EllipticOperator1D",
    "ErrorReport",
    "MeshAssumptionConfig",
    "MonotoneRepresentation",
    "NonlinearSolveConfig",
    "ProblemSpec",
    "SolutionTrajectory",
    "SpatialGrid1D",
    "TemporalMesh",
    "analyze_mesh",
    "apply_history",
    "assemble",
    "assemble_elliptic",
    "assemble_l1",
    "assemble_l2",
    "barrier_check",
    "build_graded",
    "comparison_trial",
    "compute_representation",
    "discrete_sine_eigenpairs",
    "energy_diagnostic",
    "estimate_order",
    "gamma_exponent",
    "inverse_monotonicity_oracle",
    "lambda_cap",
    "ml_neg",
    "plus_lambda_probe",
    "residual_norm",
    "run_convergence_study",
    "solve",
    "solve_shifted",
    "step",
    "theoretical_bound",
]
