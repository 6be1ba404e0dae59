//! Robustness diagnostics.
//!
//! A policy is robust at first order when, along the forecast path,
//!
//! ```text
//! ∂Q/∂q_k − d/dt′ ∂Q/∂q̇_k = 0   for all t′ ∈ [0, T]
//! ∂Q/∂q̇_k |_{t′=T}        = 0
//! ```
//!
//! [`el_residual`] and [`boundary_residual`] evaluate both conditions with
//! finite differences. [`perturbation_sweep`] measures the actual change of
//! `V(T)` under forecasting errors by full re-valuation, and
//! [`fit_scaling_exponent`] reads off whether that change is `O(ε)` or `O(ε²)`.
//! [`classify`] combines the three into a [`RobustnessReport`].

use std::f64::consts::PI;
use std::fmt;

use serde::Serialize;

use crate::error::{ForgeError, Result};
use crate::numerics::{
    differentiate_path, integrate_samples, partial_derivative, probe_step, TimeGrid,
};
use crate::path::{build_generalized_path, GeneralizedParameterSpec, ParameterPath};
use crate::policy::{
    cashflow_series, check_paths, policy_value, CashflowPolicy, NodeState, ValuationConfig,
};

/// Log-spaced amplitudes used by [`classify`].
pub const DEFAULT_EPSILONS: [f64; 7] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
/// Amplitude of the large-error probe for super-robustness.
pub const LARGE_EPSILON: f64 = 0.5;
/// Minimum fitted slope for a first-order robust verdict.
pub const ROBUST_SLOPE: f64 = 1.9;
/// `|ΔV|` below this is dropped from the scaling fit.
pub const ZERO_RESPONSE_FLOOR: f64 = 1e-13;
/// `|ΔV|` below this fraction of `∫|Q̂ − Q| dt′` is quadrature noise.
pub const QUADRATURE_NOISE_RATIO: f64 = 1e-9;
pub const RESIDUAL_TOL: f64 = 1e-5;
pub const BOUNDARY_TOL: f64 = 1e-6;
pub const SUPER_ROBUST_TOL: f64 = 1e-6;

/// Shape of a forecasting error `δp(t′)`. Every shape vanishes for `t′ ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PerturbationShape {
    /// `δp = ε·t′`
    Linear,
    /// `δp = ε·sin(ω t′)`
    Sinusoid { omega: f64 },
    /// `δp = ε·16·t′²(T − t′)²/T⁴`, peak `ε` at `T/2`.
    Bump,
}

impl PerturbationShape {
    /// Default sinusoid frequency: `ω = 3π/(2T)`, so `∫₀ᵀ δp ≠ 0` and `δp(T) ≠ 0`.
    pub fn default_omega(t_end: f64) -> f64 {
        1.5 * PI / t_end
    }

    pub fn defaults(t_end: f64) -> Vec<Self> {
        vec![
            Self::Linear,
            Self::Sinusoid {
                omega: Self::default_omega(t_end),
            },
            Self::Bump,
        ]
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Sinusoid { .. } => "sinusoid",
            Self::Bump => "bump",
        }
    }

    /// `(δp, δṗ)` at unit amplitude. At `t′ = 0` the value is 0 and the
    /// derivative is the right-sided one.
    pub fn unit(&self, t: f64, t_end: f64) -> (f64, f64) {
        if t < 0.0 {
            return (0.0, 0.0);
        }
        match *self {
            Self::Linear => (t, 1.0),
            Self::Sinusoid { omega } => ((omega * t).sin(), omega * (omega * t).cos()),
            Self::Bump => {
                let norm = 16.0 / t_end.powi(4);
                let u = t * (t_end - t);
                (norm * u * u, norm * 2.0 * u * (t_end - 2.0 * t))
            }
        }
    }
}

/// A shape at a given amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationFamily {
    pub shape: PerturbationShape,
    pub epsilon: f64,
}

impl PerturbationFamily {
    pub fn new(shape: PerturbationShape, epsilon: f64) -> Self {
        Self { shape, epsilon }
    }

    /// `(δp(t′), δṗ(t′))`.
    pub fn delta(&self, t: f64, t_end: f64) -> (f64, f64) {
        let (v, d) = self.shape.unit(t, t_end);
        (self.epsilon * v, self.epsilon * d)
    }

    pub fn apply(&self, forecast: &ParameterPath) -> ParameterPath {
        let t_end = forecast.grid().t_end();
        forecast.observe(|t| self.delta(t, t_end))
    }
}

/// Which raw parameters a perturbation is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    All,
    Parameter(usize),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::All => f.write_str("all"),
            Target::Parameter(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    NonRobust,
    RobustFirstOrder,
    SuperRobustEmpirical,
}

impl Verdict {
    /// `RobustFirstOrder` or `SuperRobustEmpirical`.
    pub fn is_robust(&self) -> bool {
        !matches!(self, Verdict::NonRobust)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::NonRobust => "NonRobust",
            Verdict::RobustFirstOrder => "RobustFirstOrder",
            Verdict::SuperRobustEmpirical => "SuperRobustEmpirical",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    /// `V̂(T) − V(T)`.
    pub delta_v: f64,
    /// `∫₀ᵀ |Q̂ − Q| dt′`, the size of the cashflow disturbance.
    pub gross_variation: f64,
}

impl SweepPoint {
    /// True when `|ΔV|` is indistinguishable from quadrature error.
    pub fn is_numerically_zero(&self) -> bool {
        self.delta_v.abs()
            < f64::max(
                ZERO_RESPONSE_FLOOR,
                QUADRATURE_NOISE_RATIO * self.gross_variation,
            )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFit {
    /// Slope of `log|ΔV|` against `log ε`; `+∞` means numerically zero response.
    pub slope: f64,
    pub r2: f64,
    /// Number of pairs that survived the zero floor.
    pub used: usize,
}

impl ScalingFit {
    pub fn zero_response(&self) -> bool {
        self.slope == f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyReport {
    pub shape: PerturbationShape,
    pub target: String,
    pub scaling_exponent: Option<f64>,
    pub scaling_r2: Option<f64>,
    pub zero_response: bool,
    pub large_epsilon: f64,
    pub large_epsilon_delta_v: f64,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub el_residual_sup: f64,
    pub boundary_residual: f64,
    /// Worst (smallest) slope across families; `None` when every family is a zero response.
    pub scaling_exponent: Option<f64>,
    pub scaling_r2: Option<f64>,
    pub zero_response: bool,
    pub verdict: Verdict,
    pub policy_scale: f64,
    pub residual_tolerance: f64,
    pub boundary_tolerance: f64,
    pub super_robust_tolerance: f64,
    pub per_family: Vec<FamilyReport>,
}

impl RobustnessReport {
    /// Worst slope, with the zero-response sentinel as `+∞`.
    pub fn slope(&self) -> f64 {
        self.scaling_exponent.unwrap_or(f64::INFINITY)
    }
}

/// `Q` as a function of slot `k` of `q` (or of `q̇`), other slots fixed.
fn slot_fn<'a>(
    policy: &'a CashflowPolicy,
    q: &'a [f64],
    q_dot: &'a [f64],
    t: f64,
    k: usize,
    wrt_derivative: bool,
) -> impl FnMut(f64) -> f64 + 'a {
    let mut buf = if wrt_derivative {
        q_dot.to_vec()
    } else {
        q.to_vec()
    };
    move |x| {
        buf[k] = x;
        if wrt_derivative {
            policy.evaluate(q, &buf, t)
        } else {
            policy.evaluate(&buf, q_dot, t)
        }
    }
}

fn partial_in_slot(
    policy: &CashflowPolicy,
    q: &[f64],
    q_dot: &[f64],
    t: f64,
    k: usize,
    wrt_derivative: bool,
) -> Result<f64> {
    let at = if wrt_derivative { q_dot[k] } else { q[k] };
    partial_derivative(slot_fn(policy, q, q_dot, t, k, wrt_derivative), at, None)
}

/// `h·|∂²Q/∂x²|` at the probe step `h`: how far a slope resolved at that step
/// can be off. Zero for affine slots.
fn probe_curvature(
    policy: &CashflowPolicy,
    q: &[f64],
    q_dot: &[f64],
    t: f64,
    k: usize,
    wrt_derivative: bool,
) -> f64 {
    let at = if wrt_derivative { q_dot[k] } else { q[k] };
    let h = probe_step(at);
    let mut f = slot_fn(policy, q, q_dot, t, k, wrt_derivative);
    let c = (f(at + h) - 2.0 * f(at) + f(at - h)).abs() / h;
    if c.is_finite() {
        c
    } else {
        0.0
    }
}

/// `∂Q/∂q_k` and `∂Q/∂q̇_k` at every main node.
fn node_partials(
    policy: &CashflowPolicy,
    q_paths: &[ParameterPath],
    k: usize,
) -> Result<(TimeGrid, Vec<f64>, Vec<f64>)> {
    let grid = check_paths(policy, q_paths)?;
    if k >= policy.n_params() {
        return Err(ForgeError::Precondition(format!(
            "parameter index {k} out of range for {} parameters",
            policy.n_params()
        )));
    }
    let state = NodeState::gather(q_paths);
    let mut d_q = Vec::with_capacity(grid.len());
    let mut d_qdot = Vec::with_capacity(grid.len());
    for (i, t) in grid.nodes().into_iter().enumerate() {
        let bad = |_| ForgeError::ResidualNonFinite {
            param: k,
            node: i,
            t,
        };
        d_q.push(partial_in_slot(policy, state.q(i), state.q_dot(i), t, k, false).map_err(bad)?);
        d_qdot.push(partial_in_slot(policy, state.q(i), state.q_dot(i), t, k, true).map_err(bad)?);
    }
    Ok((grid, d_q, d_qdot))
}

/// Node series of `∂Q/∂q_k − d/dt′ ∂Q/∂q̇_k` along `q_paths`.
pub fn el_residual(
    policy: &CashflowPolicy,
    q_paths: &[ParameterPath],
    param_index: usize,
) -> Result<Vec<f64>> {
    let (grid, d_q, d_qdot) = node_partials(policy, q_paths, param_index)?;
    let ddt = differentiate_path(&d_qdot, &grid)?;
    Ok(d_q.iter().zip(&ddt).map(|(a, b)| a - b).collect())
}

/// `|∂Q/∂q̇_k|` at `t′ = T`.
pub fn boundary_residual(
    policy: &CashflowPolicy,
    q_paths: &[ParameterPath],
    param_index: usize,
) -> Result<f64> {
    let grid = check_paths(policy, q_paths)?;
    if param_index >= policy.n_params() {
        return Err(ForgeError::Precondition(format!(
            "parameter index {param_index} out of range for {} parameters",
            policy.n_params()
        )));
    }
    let state = NodeState::gather(q_paths);
    let last = grid.n_steps();
    let t = grid.t_end();
    partial_in_slot(
        policy,
        state.q(last),
        state.q_dot(last),
        t,
        param_index,
        true,
    )
    .map(f64::abs)
    .map_err(|_| ForgeError::ResidualNonFinite {
        param: param_index,
        node: last,
        t,
    })
}

/// First-order diagnostics along one set of generalized paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSummary {
    pub el_residual_sup: f64,
    pub boundary_residual: f64,
    /// `sup` over nodes and parameters of `max(|Q|, |∂Q/∂q|, |d/dt′ ∂Q/∂q̇|, |∂Q/∂q̇|/T)`,
    /// also covering `h·|∂²Q/∂q²|` and `h·|∂²Q/∂q̇²|/T` at the probe step so that
    /// policies whose first-order partials vanish on the forecast still get a
    /// meaningful scale. Linear in the evaluator, so tolerances built on it are unit-free.
    pub policy_scale: f64,
}

impl ResidualSummary {
    pub fn residual_tolerance(&self) -> f64 {
        RESIDUAL_TOL * self.policy_scale
    }

    pub fn boundary_tolerance(&self) -> f64 {
        BOUNDARY_TOL * self.policy_scale
    }

    pub fn passes(&self) -> bool {
        self.el_residual_sup < self.residual_tolerance()
            && self.boundary_residual < self.boundary_tolerance()
    }
}

pub fn residual_summary(
    policy: &CashflowPolicy,
    q_paths: &[ParameterPath],
) -> Result<ResidualSummary> {
    let cash = cashflow_series(policy, q_paths)?;
    let t_end = q_paths[0].grid().t_end();
    let mut scale = cash.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut el_sup = 0.0f64;
    let mut boundary = 0.0f64;
    let state = NodeState::gather(q_paths);
    for k in 0..policy.n_params() {
        let (grid, d_q, d_qdot) = node_partials(policy, q_paths, k)?;
        let ddt = differentiate_path(&d_qdot, &grid)?;
        for (i, t) in grid.nodes().into_iter().enumerate() {
            el_sup = el_sup.max((d_q[i] - ddt[i]).abs());
            let (q, qd) = (state.q(i), state.q_dot(i));
            scale = scale
                .max(d_q[i].abs())
                .max(ddt[i].abs())
                .max(d_qdot[i].abs() / t_end)
                .max(probe_curvature(policy, q, qd, t, k, false))
                .max(probe_curvature(policy, q, qd, t, k, true) / t_end);
        }
        boundary = boundary.max(d_qdot[grid.n_steps()].abs());
    }
    Ok(ResidualSummary {
        el_residual_sup: el_sup,
        boundary_residual: boundary,
        policy_scale: scale + 1e-30,
    })
}

fn generalize(
    forecasts: &[ParameterPath],
    specs: &[GeneralizedParameterSpec],
) -> Result<Vec<ParameterPath>> {
    if forecasts.len() != specs.len() {
        return Err(ForgeError::Precondition(format!(
            "{} raw paths but {} kernel specs",
            forecasts.len(),
            specs.len()
        )));
    }
    forecasts
        .iter()
        .zip(specs)
        .map(|(p, s)| build_generalized_path(p, s))
        .collect()
}

/// Re-values the policy on observed paths `p̂ = p + δp` and returns the change
/// in `V(T)`. Negative amplitudes are allowed here.
pub fn terminal_value_change(
    policy: &CashflowPolicy,
    forecasts: &[ParameterPath],
    specs: &[GeneralizedParameterSpec],
    config: &ValuationConfig,
    family: PerturbationFamily,
    target: Target,
) -> Result<SweepPoint> {
    let q_forecast = generalize(forecasts, specs)?;
    let base_cash = cashflow_series(policy, &q_forecast)?;
    change_against(policy, forecasts, specs, config, family, target, &base_cash)
}

fn change_against(
    policy: &CashflowPolicy,
    forecasts: &[ParameterPath],
    specs: &[GeneralizedParameterSpec],
    config: &ValuationConfig,
    family: PerturbationFamily,
    target: Target,
    base_cash: &[f64],
) -> Result<SweepPoint> {
    let observed: Vec<ParameterPath> = forecasts
        .iter()
        .enumerate()
        .map(|(k, p)| match target {
            Target::All => family.apply(p),
            Target::Parameter(j) if j == k => family.apply(p),
            Target::Parameter(_) => p.clone(),
        })
        .collect();
    let q_hat = generalize(&observed, specs)?;
    let grid = *q_hat[0].grid();
    let cash = cashflow_series(policy, &q_hat)?;
    let v_hat = policy_value(policy, &q_hat, config, grid.t_end())?;
    let v = integrate_samples(base_cash, grid.step());
    let diff: Vec<f64> = cash
        .iter()
        .zip(base_cash)
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(SweepPoint {
        epsilon: family.epsilon,
        delta_v: v_hat - v,
        gross_variation: integrate_samples(&diff, grid.step()),
    })
}

/// `ΔV(ε)` for each amplitude, perturbing every raw parameter with the same shape.
pub fn perturbation_sweep(
    policy: &CashflowPolicy,
    forecasts: &[ParameterPath],
    shape: PerturbationShape,
    specs: &[GeneralizedParameterSpec],
    config: &ValuationConfig,
    epsilons: &[f64],
) -> Result<Vec<SweepPoint>> {
    sweep_target(
        policy,
        forecasts,
        shape,
        specs,
        config,
        epsilons,
        Target::All,
    )
}

pub fn sweep_target(
    policy: &CashflowPolicy,
    forecasts: &[ParameterPath],
    shape: PerturbationShape,
    specs: &[GeneralizedParameterSpec],
    config: &ValuationConfig,
    epsilons: &[f64],
    target: Target,
) -> Result<Vec<SweepPoint>> {
    if epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(ForgeError::Precondition(
            "sweep amplitudes must be positive".to_string(),
        ));
    }
    if epsilons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ForgeError::Precondition(
            "sweep amplitudes must be sorted ascending".to_string(),
        ));
    }
    let q_forecast = generalize(forecasts, specs)?;
    let base_cash = cashflow_series(policy, &q_forecast)?;
    epsilons
        .iter()
        .map(|&eps| {
            change_against(
                policy,
                forecasts,
                specs,
                config,
                PerturbationFamily::new(shape, eps),
                target,
                &base_cash,
            )
        })
        .collect()
}

/// Least-squares slope of `log|ΔV|` against `log ε`.
///
/// Needs at least four pairs. Pairs with `|ΔV| ≤ 1e−13` are dropped; if fewer
/// than two survive the slope is `+∞` (numerically zero response).
pub fn fit_scaling_exponent(pairs: &[(f64, f64)]) -> Result<ScalingFit> {
    if pairs.len() < 4 {
        return Err(ForgeError::Precondition(format!(
            "scaling fit needs at least 4 (ε, ΔV) pairs, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|(e, _)| !(e.is_finite() && *e > 0.0)) {
        return Err(ForgeError::Precondition(
            "scaling fit needs positive ε".to_string(),
        ));
    }
    let pts: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(_, dv)| dv.abs() > ZERO_RESPONSE_FLOOR)
        .map(|(e, dv)| (e.ln(), dv.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return Ok(ScalingFit {
            slope: f64::INFINITY,
            r2: f64::NAN,
            used: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(ForgeError::Precondition(
            "scaling fit needs distinct ε values".to_string(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(ScalingFit {
        slope,
        r2,
        used: pts.len(),
    })
}

/// Full robustness classification of `policy` around the raw `forecasts`.
///
/// Needs at least two perturbation shapes. Single-parameter policies are
/// perturbed in that parameter; multi-parameter policies are perturbed in
/// each parameter separately and in all of them at once.
pub fn classify(
    policy: &CashflowPolicy,
    forecasts: &[ParameterPath],
    specs: &[GeneralizedParameterSpec],
    config: &ValuationConfig,
    shapes: &[PerturbationShape],
) -> Result<RobustnessReport> {
    if shapes.len() < 2 {
        return Err(ForgeError::Precondition(
            "classification needs at least two perturbation families".to_string(),
        ));
    }
    let q_forecast = generalize(forecasts, specs)?;
    let summary = residual_summary(policy, &q_forecast)?;
    let grid = *q_forecast[0].grid();
    let base_cash = cashflow_series(policy, &q_forecast)?;
    let super_tol = SUPER_ROBUST_TOL * summary.policy_scale * grid.t_end();

    let targets: Vec<Target> = if policy.n_params() == 1 {
        vec![Target::Parameter(0)]
    } else {
        std::iter::once(Target::All)
            .chain((0..policy.n_params()).map(Target::Parameter))
            .collect()
    };

    let mut per_family = Vec::new();
    for &shape in shapes {
        for &target in &targets {
            let points: Vec<SweepPoint> = DEFAULT_EPSILONS
                .iter()
                .map(|&eps| {
                    change_against(
                        policy,
                        forecasts,
                        specs,
                        config,
                        PerturbationFamily::new(shape, eps),
                        target,
                        &base_cash,
                    )
                })
                .collect::<Result<_>>()?;
            let pairs: Vec<(f64, f64)> = points
                .iter()
                .map(|p| {
                    (
                        p.epsilon,
                        if p.is_numerically_zero() {
                            0.0
                        } else {
                            p.delta_v
                        },
                    )
                })
                .collect();
            let fit = fit_scaling_exponent(&pairs)?;
            let large = change_against(
                policy,
                forecasts,
                specs,
                config,
                PerturbationFamily::new(shape, LARGE_EPSILON),
                target,
                &base_cash,
            )?;
            per_family.push(FamilyReport {
                shape,
                target: target.to_string(),
                scaling_exponent: (!fit.zero_response()).then_some(fit.slope),
                scaling_r2: (!fit.zero_response()).then_some(fit.r2),
                zero_response: fit.zero_response(),
                large_epsilon: LARGE_EPSILON,
                large_epsilon_delta_v: large.delta_v,
                points,
            });
        }
    }

    let worst = per_family
        .iter()
        .filter(|f| !f.zero_response)
        .min_by(|a, b| {
            a.scaling_exponent
                .partial_cmp(&b.scaling_exponent)
                .expect("finite slopes")
        });
    let slope = worst
        .and_then(|f| f.scaling_exponent)
        .unwrap_or(f64::INFINITY);

    let first_order = summary.passes() && slope >= ROBUST_SLOPE;
    let super_robust = first_order
        && per_family
            .iter()
            .all(|f| f.large_epsilon_delta_v.abs() < super_tol);
    let verdict = if super_robust {
        Verdict::SuperRobustEmpirical
    } else if first_order {
        Verdict::RobustFirstOrder
    } else {
        Verdict::NonRobust
    };

    Ok(RobustnessReport {
        el_residual_sup: summary.el_residual_sup,
        boundary_residual: summary.boundary_residual,
        scaling_exponent: worst.and_then(|f| f.scaling_exponent),
        scaling_r2: worst.and_then(|f| f.scaling_r2),
        zero_response: worst.is_none(),
        verdict,
        policy_scale: summary.policy_scale,
        residual_tolerance: summary.residual_tolerance(),
        boundary_tolerance: summary.boundary_tolerance(),
        super_robust_tolerance: super_tol,
        per_family,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: f64 = 10.0;

    fn grid() -> TimeGrid {
        TimeGrid::new(T, 1000, 0).unwrap()
    }

    fn toy_base() -> CashflowPolicy {
        CashflowPolicy::new(1, false, |q, _, _| 1.0 * (1.0 - q[0]) - 3.0 * q[0])
    }

    fn toy_robust() -> CashflowPolicy {
        CashflowPolicy::new(1, true, |q, qd, t| {
            1.0 * (1.0 - q[0]) - 3.0 * q[0] + 4.0 * (T - t) * qd[0]
        })
    }

    fn forecast() -> Vec<ParameterPath> {
        vec![ParameterPath::constant(grid(), 0.25)]
    }

    #[test]
    fn shapes_vanish_before_inception() {
        for s in PerturbationShape::defaults(T) {
            assert_eq!(s.unit(0.0, T).0, 0.0);
            assert_eq!(s.unit(-1.0, T), (0.0, 0.0));
        }
        assert_eq!(PerturbationShape::Linear.unit(0.0, T).1, 1.0);
        let (peak, slope) = PerturbationShape::Bump.unit(T / 2.0, T);
        assert!((peak - 1.0).abs() < 1e-14);
        assert!(slope.abs() < 1e-14);
        assert!(PerturbationShape::Bump.unit(T, T).0.abs() < 1e-14);
    }

    #[test]
    fn residual_of_time_only_policy() {
        let pol = CashflowPolicy::new(1, false, |_, _, t| t.cos());
        let r = el_residual(&pol, &forecast(), 0).unwrap();
        assert!(r.iter().all(|x| x.abs() < 1e-9));
        assert!(boundary_residual(&pol, &forecast(), 0).unwrap() < 1e-10);
    }

    #[test]
    fn residual_of_toy_base_is_minus_four() {
        let r = el_residual(&toy_base(), &forecast(), 0).unwrap();
        assert!(r.iter().all(|x| (x + 4.0).abs() < 1e-6));
    }

    #[test]
    fn residual_of_toy_extension_vanishes() {
        let r = el_residual(&toy_robust(), &forecast(), 0).unwrap();
        assert!(r.iter().all(|x| x.abs() < 1e-6));
        assert!(boundary_residual(&toy_robust(), &forecast(), 0).unwrap() < 1e-9);
    }

    #[test]
    fn boundary_of_pure_derivative_policy() {
        let pol = CashflowPolicy::new(1, true, |_, qd, _| qd[0]);
        assert!((boundary_residual(&pol, &forecast(), 0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn residual_index_out_of_range() {
        assert!(el_residual(&toy_base(), &forecast(), 1).is_err());
        assert!(boundary_residual(&toy_base(), &forecast(), 3).is_err());
    }

    #[test]
    fn residual_non_finite_names_the_node() {
        let pol = CashflowPolicy::new(1, false, |q, _, t| {
            if t > 9.0 {
                q[0].ln() - f64::INFINITY
            } else {
                q[0]
            }
        });
        match el_residual(&pol, &forecast(), 0) {
            Err(ForgeError::ResidualNonFinite { node, .. }) => assert!(node > 900),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sweep_of_zero_policy_is_zero() {
        let zero = CashflowPolicy::new(1, false, |_, _, _| 0.0);
        let pts = perturbation_sweep(
            &zero,
            &forecast(),
            PerturbationShape::Linear,
            &[GeneralizedParameterSpec::identity()],
            &ValuationConfig::default(),
            &DEFAULT_EPSILONS,
        )
        .unwrap();
        assert!(pts.iter().all(|p| p.delta_v == 0.0));
    }

    #[test]
    fn sweep_of_toy_matches_closed_form() {
        let specs = [GeneralizedParameterSpec::identity()];
        let cfg = ValuationConfig::default();
        let base = perturbation_sweep(
            &toy_base(),
            &forecast(),
            PerturbationShape::Linear,
            &specs,
            &cfg,
            &[0.01],
        )
        .unwrap();
        assert!((base[0].delta_v + 2.0).abs() < 1e-8);
        let robust = perturbation_sweep(
            &toy_robust(),
            &forecast(),
            PerturbationShape::Linear,
            &specs,
            &cfg,
            &[0.01],
        )
        .unwrap();
        assert!(robust[0].delta_v.abs() < 1e-8);
    }

    #[test]
    fn sweep_rejects_unsorted_amplitudes() {
        let specs = [GeneralizedParameterSpec::identity()];
        let cfg = ValuationConfig::default();
        for eps in [&[0.1, 0.01][..], &[-0.1, 0.2][..]] {
            assert!(perturbation_sweep(
                &toy_base(),
                &forecast(),
                PerturbationShape::Bump,
                &specs,
                &cfg,
                eps
            )
            .is_err());
        }
    }

    #[test]
    fn fit_exact_power_laws() {
        let lin: Vec<(f64, f64)> = DEFAULT_EPSILONS.iter().map(|&e| (e, -3.0 * e)).collect();
        let fit = fit_scaling_exponent(&lin).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.01 && fit.r2 > 0.9999);
        let quad: Vec<(f64, f64)> = DEFAULT_EPSILONS.iter().map(|&e| (e, 0.7 * e * e)).collect();
        assert!((fit_scaling_exponent(&quad).unwrap().slope - 2.0).abs() < 0.01);
    }

    #[test]
    fn fit_zero_sentinel_and_preconditions() {
        let zeros: Vec<(f64, f64)> = DEFAULT_EPSILONS.iter().map(|&e| (e, 0.0)).collect();
        let fit = fit_scaling_exponent(&zeros).unwrap();
        assert!(fit.zero_response());
        let one_left = [(1e-3, 0.0), (1e-2, 1e-14), (1e-1, 1e-5), (1.0, 0.0)];
        assert!(fit_scaling_exponent(&one_left).unwrap().zero_response());
        assert!(fit_scaling_exponent(&zeros[..3]).is_err());
    }

    #[test]
    fn toy_scaling_is_linear() {
        let pts = perturbation_sweep(
            &toy_base(),
            &forecast(),
            PerturbationShape::Linear,
            &[GeneralizedParameterSpec::identity()],
            &ValuationConfig::default(),
            &[1e-4, 1e-3, 1e-2, 1e-1],
        )
        .unwrap();
        let pairs: Vec<_> = pts.iter().map(|p| (p.epsilon, p.delta_v)).collect();
        assert!((fit_scaling_exponent(&pairs).unwrap().slope - 1.0).abs() < 0.02);
    }

    #[test]
    fn classify_toy_pair() {
        let specs = [GeneralizedParameterSpec::identity()];
        let cfg = ValuationConfig::default();
        let shapes = PerturbationShape::defaults(T);
        let base = classify(&toy_base(), &forecast(), &specs, &cfg, &shapes).unwrap();
        assert_eq!(base.verdict, Verdict::NonRobust);
        assert!((base.el_residual_sup - 4.0).abs() < 1e-6);
        let robust = classify(&toy_robust(), &forecast(), &specs, &cfg, &shapes).unwrap();
        assert_eq!(robust.verdict, Verdict::SuperRobustEmpirical, "{robust:#?}");
        assert!(robust.zero_response);
    }

    #[test]
    fn classify_needs_two_families() {
        let err = classify(
            &toy_base(),
            &forecast(),
            &[GeneralizedParameterSpec::identity()],
            &ValuationConfig::default(),
            &[PerturbationShape::Linear],
        )
        .unwrap_err();
        assert!(matches!(err, ForgeError::Precondition(_)));
    }
}
