"""Gaussian random fields from elliptic precision operators on bounded domains."""

__version__ = "0.1.0"

from .assembly import (  # noqa: E402
    Coefficient,
    OperatorSpec,
    SparsePrecision,
    assemble,
    assemble_1d,
    assemble_2d,
    interpolation_matrix,
    mass_matrix,
    product_covariance,
    product_mode_solve,
)
from .errors import (  # noqa: E402
    ConfigError,
    ConflictError,
    ConstraintDegeneracyError,
    DomainError,
    ModelError,
    NumericError,
    OpfieldError,
)
from .gaussian import (  # noqa: E402
    Cholesky,
    HardPosterior,
    ObservationSet,
    Posterior,
    condition_covariance,
    condition_precision,
    dtn_discrete,
    generating_functional_check,
    hard_condition,
    linear_image,
    point_observations,
    sample,
    schur_marginal,
    separable_precision,
)
from .mesh import BoundaryCondition, Grid2D, Mesh1D, uniform_grid, uniform_interval  # noqa: E402
