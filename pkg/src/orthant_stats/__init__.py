"""Geometry and statistics on orthant spaces."""

from .clt import (
    CltPrediction,
    EmpiricalCLT,
    HypothesisNotMet,
    PreconditionFailed,
    SingularMatrix,
    a_matrix,
    folded_density,
    monte_carlo,
    predict,
    sample_measure,
    support_frequencies,
)
from .frechet import (
    DiscreteMeasure,
    InvalidMeasure,
    MeanCertificate,
    NonConvergence,
    ThetaEstimate,
    check_consistency_identities,
    frechet_mean,
    frechet_value,
    inductive_mean,
    theta_set,
    verify_mean,
)
from .geodesic import (
    Geodesic,
    GeodesicSupport,
    NoSupportFound,
    ParameterOutOfRange,
    brute_force_distance,
    distance,
    eval_geodesic,
    find_support,
    geodesic,
    validate_support,
)
from .logmap import (
    OnSingularSet,
    StabilizationFailure,
    TangentVector,
    derivative_matrix,
    directional_derivative_matrix,
    directional_limit,
    in_D,
    is_singular,
    log_map,
    phi_sigma,
    psi_tau,
    translated_log,
)
from .orthant_complex import (
    AxisOutOfRange,
    FlagViolation,
    InvalidPoint,
    OrthantError,
    OrthantSpace,
    Point,
    bounding_strata,
    build_space,
    cobounding_strata,
    common_axes,
    compatible,
    local_codimension,
)

__all__ = [name for name in dir() if not name.startswith("_")]
