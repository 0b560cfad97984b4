"""Multiscale model reduction for semilinear stochastic diffusion problems.

Coarse spaces come from constraint energy minimization over oversampled
coarse blocks; nonlinear terms are reduced by greedy interpolation with an
optional per-trajectory online basis correction.  The harness reproduces
error studies and speedup comparisons at configurable scale.
"""

from .errors import (
    ConfigurationError,
    DataError,
    EigenSolveError,
    MsromError,
    SaddleSolveError,
    StepError,
)
from .grid import OversampleRegion, StructuredMesh, build_mesh, oversample
from .fem import (
    OperatorSet,
    PermeabilityField,
    apply_dirichlet,
    assemble_mass,
    assemble_stiffness,
    build_operators,
    load_permeability,
    save_permeability,
    solve_reference,
)
from .msbasis import (
    AuxiliarySpace,
    MultiscaleSpace,
    build_auxiliary_space,
    build_multiscale_space,
    gradient_energy_weight,
    load_basis,
    localization_decay,
    partition_of_unity,
    save_basis,
    solve_auxiliary_spectral,
    solve_constrained_minimization,
)
from .noise import (
    NoisePath,
    QWienerField,
    ScalarBrownian,
    covariance_check,
    load_noise_path,
    sample_path,
    save_noise_path,
    truncated_trace,
)
from .rom import (
    DeimModel,
    OnlineUpdateRecord,
    build_offline_model,
    deim_points,
    load_snapshots,
    mean_states,
    nonlinear_snapshots,
    online_update,
    pod,
    projection_factor,
    reduced_nonlinear_terms,
    save_snapshots,
)
from .integrator import (
    CoupledConfig,
    DeimSetup,
    NewtonConfig,
    Nonlinearity,
    Problem,
    SOLVER_MODES,
    TimeGrid,
    TrajectoryResult,
    drift_implicit_sde_step,
    implicit_step,
    make_nonlinearity,
    run_trajectory,
)
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    deviation,
    relative_energy_error,
    relative_l2_error,
    report,
    run_experiment,
    snapshot_windows,
    synthetic_permeability,
)

__version__ = "0.1.0"
