//! Valuation and forecast-error robustness analysis for parameter-dependent
//! public-policy cashflows.
//!
//! A policy's adjusted net cashflow `Q(q, q̇, t′)` depends on generalized
//! parameters `q_k` (causal kernel averages of observable parameters `p_k`)
//! and their rates of change. Its terminal value `V(T) = ∫₀ᵀ Q dt′` is
//! balanced on the forecast by design; this crate measures what happens when
//! the observed parameters drift away from the forecast and builds policies
//! that are insensitive to such drift.
//!
//! Modules, bottom-up:
//!
//! * [`numerics`]: time grid, Simpson quadrature, finite differences.
//! * [`path`]: parameter paths and generalized-parameter kernels.
//! * [`policy`]: cashflow policies and valuation.
//! * [`robustness`]: Euler-Lagrange residuals, perturbation sweeps, verdicts.
//! * [`constructors`]: robust and super-robust policy builders.
//! * [`toy_ss`]: a toy Social Security model with closed forms.
//! * [`scenario`] and [`cli`]: JSON scenario files and the `policy-forge` commands.

pub mod cli;
pub mod constructors;
pub mod error;
pub mod numerics;
pub mod path;
pub mod policy;
pub mod robustness;
pub mod scenario;
pub mod toy_ss;

pub use constructors::{
    balance_c_profile, from_generating_function, from_super_robust_spec, robust_extension,
    GeneratingFunction, RobustExtension, SuperRobustSpec,
};
pub use error::{ForgeError, Result};
pub use numerics::{
    differentiate_path, integrate, partial_derivative, SampledFunction, Segment, TimeGrid,
};
pub use path::{
    build_generalized_path, GeneralizedParameterSpec, Kernel, ParameterPath, PathKind, PointMap,
};
pub use policy::{
    check_derivative_independence, policy_value, running_value, terminal_value, CashflowPolicy,
    ValuationConfig,
};
pub use robustness::{
    boundary_residual, classify, el_residual, fit_scaling_exponent, perturbation_sweep,
    PerturbationFamily, PerturbationShape, RobustnessReport, ScalingFit, SweepPoint, Verdict,
};
pub use toy_ss::{PayIn, ToySsParams};
