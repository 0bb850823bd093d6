"""Inverse free-boundary heat solver.

Recovers a boundary heat flux, a distributed source, and a moving phase
boundary from final-time and interface temperature measurements, by
projected gradient descent on a penalized least-squares functional.  The
forward model is an implicit finite-difference scheme on a grid that tracks
the moving boundary; gradients come from a discrete adjoint march.
"""

from .adjoint import (
    AdjointTrajectory,
    ControlDirection,
    GradientVector,
    adjoint_solve,
    assemble_gradient,
    check_optimality,
    discrete_cost_gradient,
    fd_gradient_pairings,
    pairing,
    perturbed_control,
)
from .controls import (
    ContinuousControl,
    DiscreteControl,
    boundary_h2_norm,
    control_norm,
    discretize_control,
    flux_h1_norm,
    gagliardo_seminorm,
    interpolate_control,
    load_control,
    project_control,
    save_control,
    source_l2_norm,
)
from .fields import Field, load_table_csv
from .forward import (
    EnergyReport,
    SingularStepError,
    StateTrajectory,
    TridiagonalSystem,
    assemble_step,
    energy_diagnostics,
    forward_solve,
    solve_step,
)
from .grids import (
    GridCouplingError,
    SpatialGrid,
    TimeGrid,
    build_spatial_grid,
    build_time_grid,
    reflect_index,
    reflection_count,
)
from .objective import CostBreakdown, cost_continuous, cost_discrete, subplus
from .optimizer import (
    RunRecord,
    SolverConfig,
    minimize,
    violation_measure,
)
from .problem import (
    ProblemData,
    load_problem,
    save_problem,
    steklov_cell_average,
    steklov_time_average,
    steklov_trace_average,
)

__version__ = "0.1.0"

__all__ = [
    "AdjointTrajectory",
    "ContinuousControl",
    "ControlDirection",
    "CostBreakdown",
    "DiscreteControl",
    "EnergyReport",
    "Field",
    "GradientVector",
    "GridCouplingError",
    "ProblemData",
    "RunRecord",
    "SingularStepError",
    "SolverConfig",
    "SpatialGrid",
    "StateTrajectory",
    "TimeGrid",
    "TridiagonalSystem",
    "adjoint_solve",
    "assemble_gradient",
    "assemble_step",
    "boundary_h2_norm",
    "build_spatial_grid",
    "build_time_grid",
    "check_optimality",
    "control_norm",
    "cost_continuous",
    "cost_discrete",
    "discrete_cost_gradient",
    "discretize_control",
    "energy_diagnostics",
    "fd_gradient_pairings",
    "flux_h1_norm",
    "forward_solve",
    "gagliardo_seminorm",
    "interpolate_control",
    "load_control",
    "load_problem",
    "load_table_csv",
    "minimize",
    "pairing",
    "perturbed_control",
    "project_control",
    "reflect_index",
    "reflection_count",
    "save_control",
    "save_problem",
    "solve_step",
    "source_l2_norm",
    "steklov_cell_average",
    "steklov_time_average",
    "steklov_trace_average",
    "subplus",
    "violation_measure",
    "__version__",
]
