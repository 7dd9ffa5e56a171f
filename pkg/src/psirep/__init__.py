"""Weighted generalized psi-estimators and their monotone representation."""

from .core import (
    ComparisonFunction,
    Crossing,
    ParamInterval,
    PsiModel,
    SignChangeResult,
    SolveOptions,
    WeightedSample,
    comparison_function,
    estimate,
    locate_sign_change,
    sign_profile,
    theta1,
    theta1_value,
    weighted_psi_sum,
)
from .models import (
    LocationModel,
    NormalVarianceModel,
    OscillatingModel,
    make_model,
    normal_variance_reference,
    weighted_mle_oracle,
)
from .quadrature import QuadratureOptions
from .representation import (
    ConvexifiedLoss,
    Envelope,
    EnvelopeConfig,
    MinimizeOptions,
    MonotoneWeight,
    argmin_objective,
    build_monotone_weight,
    convexified_loss,
    log_derivative_ratio,
    lower_envelope,
    objective_sum,
    one_sided_fill,
    q_star_envelope,
    weighted_psi,
    working_grid,
    working_span,
)
from .diagnostics import (
    CheckResult,
    DiagnosticReport,
    NonStrictWarning,
    check_comparison_monotone,
    check_decreasing_product,
    check_weighted_estimator_family,
    check_z_property,
    comparison_samples,
)

__version__ = "0.1.0"
