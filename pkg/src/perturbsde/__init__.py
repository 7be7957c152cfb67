"""Numerical laboratory for diffusions with running-supremum feedback.

The package simulates the dynamics

    X_t = x0 + int_0^t b(X_s) ds + int_0^t sigma(X_s) dB_s
          + alpha * sup_{s<=t} X_s,        alpha < 1,

propagates pathwise noise derivatives, evaluates closed-form lower bounds
on the derivative norm, changes variables to unit diffusion, estimates the
terminal density, and cross-checks all of it against exact special cases.

Layers, bottom up: ``model`` (coefficients, specs, validation),
``integrate`` (path simulation), ``malliavin`` (derivative propagation),
``bounds`` (regime classification), ``lamperti`` (unit-diffusion
transform), ``density`` (kernel estimation and the closed-form oracle),
``verify`` (invariant suites), ``io``/``cli`` (configs and artifacts).
"""

from .bounds import (
    RegimeReport,
    diff_bound,
    final_lower_bound,
    max_horizon,
    regime_report,
    sup_lower_bound,
    theta,
)
from .density import (
    DensityEstimate,
    SmoothnessReport,
    bandwidth_rule,
    derivative_bandwidth_rule,
    ensemble,
    kde,
    l1_distance,
    oracle_driftless,
    smoothness_diagnostic,
)
from .errors import (
    AlphaOutOfRange,
    ConfigError,
    DegenerateDiffusion,
    DomainTooSmall,
    EmptySample,
    GridMismatch,
    InconsistentDerivatives,
    IntegrationFailure,
    NonFinite,
    OutOfDomain,
    PerturbSDEError,
    UnknownPreset,
    UnsupportedOrder,
    VerificationFailure,
)
from .integrate import (
    NoiseBlock,
    PathBatch,
    PathState,
    PicardResult,
    TerminalSample,
    euler_path,
    explicit_additive_path,
    generate_increments,
    kahan_cumsum,
    picard_solve,
    resolve_step,
    simulate_batch,
    simulate_terminal,
)
from .io import TOOL_VERSION as __version_source__
from .lamperti import (
    TransformTable,
    build_transform,
    forward,
    inverse,
    lift_bound_check,
    tilde_b,
    transformed_drift_bound,
    transformed_field,
    transformed_spec,
)
from .malliavin import (
    DerivativeField,
    DerivativeFieldBatch,
    cameron_martin_fd,
    h_norm_sq,
    inner_product,
    propagate_derivative,
    propagate_derivative_batch,
    sup_h_norm_sq,
)
from .model import (
    Coefficient,
    EffectiveBounds,
    GridSpec,
    ProblemSpec,
    SupNormBounds,
    ValidatedSpec,
    eval_coefficient,
    sup_norm_estimate,
    validate,
)
from .verify import ALL_SUITES, SuiteResult, run_suites

__version__ = __version_source__

__all__ = [
    "__version__",
    # model
    "Coefficient", "SupNormBounds", "EffectiveBounds", "ProblemSpec",
    "ValidatedSpec", "GridSpec", "validate", "eval_coefficient",
    "sup_norm_estimate",
    # integrate
    "NoiseBlock", "PathState", "PathBatch", "TerminalSample", "PicardResult",
    "generate_increments", "resolve_step", "euler_path", "simulate_batch",
    "simulate_terminal", "explicit_additive_path", "kahan_cumsum",
    "picard_solve",
    # malliavin
    "DerivativeField", "DerivativeFieldBatch", "propagate_derivative",
    "propagate_derivative_batch", "h_norm_sq", "sup_h_norm_sq",
    "inner_product", "cameron_martin_fd",
    # bounds
    "theta", "diff_bound", "sup_lower_bound", "final_lower_bound",
    "max_horizon", "RegimeReport", "regime_report",
    # lamperti
    "TransformTable", "build_transform", "forward", "inverse", "tilde_b",
    "transformed_spec", "transformed_drift_bound", "transformed_field",
    "lift_bound_check",
    # density
    "ensemble", "oracle_driftless", "bandwidth_rule",
    "derivative_bandwidth_rule", "kde", "DensityEstimate",
    "smoothness_diagnostic", "SmoothnessReport", "l1_distance",
    # verify
    "SuiteResult", "ALL_SUITES", "run_suites",
    # errors
    "PerturbSDEError", "ConfigError", "AlphaOutOfRange", "UnknownPreset",
    "UnsupportedOrder", "InconsistentDerivatives", "DegenerateDiffusion",
    "GridMismatch", "NonFinite", "OutOfDomain", "DomainTooSmall",
    "IntegrationFailure", "EmptySample", "VerificationFailure",
]
