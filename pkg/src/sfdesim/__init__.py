"""Strong simulation of delayed jump-diffusion equations.

The state of such an equation is a path segment: the solution's recent
history over a fixed window, not just its current value.  This package
integrates those equations with a segment-aware Euler scheme driven by
exactly coupled Brownian and Poisson lattices, and measures strong
convergence rates against exact or fine-grid references.
"""

from .analysis import (
    ErrorStat,
    RateEstimate,
    ReferenceSpec,
    StudyConfig,
    StudyReport,
    convergence_study,
    fit_rate,
    segment_interp_error,
    strong_error,
    write_study_csvs,
)
from .coefficients import (
    CoefficientSet,
    DelayMeasure,
    EquationSpec,
    distributed_delay_drift,
    linear_delay_coefficients,
    log_growth_coefficients,
    make_truncated,
    project,
    truncate_segment,
)
from .noise import (
    NoiseLattice,
    check_brownian_moments,
    check_poisson_moments,
    coarsen,
    gaussian_abs_moment,
    generate_lattice,
    lattice_from_increments,
    load_lattice,
    poisson_increment_moment,
    save_lattice,
    stream_generator,
)
from .segments import Segment, SegmentGrid, segment_eval, segment_sup_norm
from .solver import (
    EmConfig,
    InitialSpec,
    NumericalError,
    PathGrid,
    PicardResult,
    constant_initial,
    cosine_initial,
    em_dense_eval,
    em_discrete,
    exact_linear_jump_path,
    picard_solve,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "CoefficientSet",
    "DelayMeasure",
    "EquationSpec",
    "EmConfig",
    "ErrorStat",
    "InitialSpec",
    "NoiseLattice",
    "NumericalError",
    "PathGrid",
    "PicardResult",
    "RateEstimate",
    "ReferenceSpec",
    "Segment",
    "SegmentGrid",
    "StudyConfig",
    "StudyReport",
    "check_brownian_moments",
    "check_poisson_moments",
    "coarsen",
    "constant_initial",
    "convergence_study",
    "cosine_initial",
    "distributed_delay_drift",
    "em_dense_eval",
    "em_discrete",
    "exact_linear_jump_path",
    "fit_rate",
    "gaussian_abs_moment",
    "generate_lattice",
    "lattice_from_increments",
    "linear_delay_coefficients",
    "load_lattice",
    "log_growth_coefficients",
    "make_truncated",
    "picard_solve",
    "poisson_increment_moment",
    "project",
    "save_lattice",
    "segment_eval",
    "segment_interp_error",
    "segment_sup_norm",
    "strong_error",
    "stream_generator",
    "truncate_segment",
    "write_study_csvs",
]
