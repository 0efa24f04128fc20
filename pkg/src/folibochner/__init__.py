"""Numerical workbench for the adapted connection on Riemannian foliations."""

from .bochner import (
    IdentityResult,
    TestFunction,
    bochner_residuals,
    cd_check,
    converse_slacks,
    finite_difference_check,
    gamma2,
    horizontal_laplacian,
    lemma_checks,
    random_polynomial,
)
from .comparison import (
    comparison_bound,
    diameter_bound,
    dimension_from_lambda,
    eigenvalue_bounds,
    flat_product_check,
)
from .connection import connection_axioms, geometry_at
from .errors import FoliBochnerError
from .expressions import Expression, parse
from .geometry import ModelSpec, build_frames, sample_points
from .heat import (
    HeatConfig,
    be_check,
    bch_multiply,
    estimate_semigroup,
    lambda1_estimate,
    regularization_scan,
    simulate_paths,
)
from .jets import Jet
from .models import (
    ACCEPTANCE_MODELS,
    CarnotStructure,
    build_model,
    carnot_table,
    carnot_table_residuals,
    classify,
    load_model,
)
from .tensors import CDParams, cd_constants_extract, frak_R_lower_bound, tensor_report

__version__ = "0.1.0"
