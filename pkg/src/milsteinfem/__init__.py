"""Milstein-corrected semi-implicit P1 finite element solver for semilinear
SPDEs with one-sided-Lipschitz polynomial drift and multiplicative scalar
noise, plus Monte Carlo machinery for strong convergence and moment
stability studies."""

from .mesh import Mesh, MeshError, build_structured_mesh, check_mesh_condition, validate_mesh
from .fem import (
    Field,
    FemError,
    LinearSolveError,
    SparseOperator,
    apply_discrete_laplacian,
    assemble_mass,
    assemble_stiffness,
    check_diagonal_dominance,
    eval_field,
    h1_seminorm,
    interpolate_nodal,
    l2_norm,
    l2_project,
    lp_norm,
    norm,
    smallest_laplacian_eigenvalue,
    write_field_csv,
)
from .levelset import write_levelset_csv, zero_level_set
from .noise import BrownianPath, NoiseError, coarsen_increments, generate_path, milstein_bracket
from .model import (
    DiffusionSpec,
    DriftSpec,
    InitialCondition,
    Model,
    ModelError,
    eval_diffusion,
    eval_drift,
    eval_drift_derivative,
    validate_diffusion_assumptions,
    validate_one_sided_lipschitz,
)
from .solver import (
    DivergenceError,
    NewtonError,
    SchemeConfig,
    SolverError,
    StepFailureError,
    StepWorkspace,
    TrajectoryRecord,
    euler_maruyama_step,
    milstein_step,
    newton_solve,
    run_trajectory,
)
from .config import ConfigError, ExperimentConfig
from .studies import (
    RateTable,
    StabilitySeries,
    StudyError,
    estimate_rate,
    evolution_study,
    stability_study,
    strong_error_study,
)
from .cli import cli_main

__version__ = "0.1.0"
