//! Cashflow policies and their valuation.
//!
//! A policy is the adjusted net cashflow `Q(q, q̇, t′)`, i.e. `(c_in − c_out)`
//! already carried forward to the termination date by `e^{r(T − t′)}`. The
//! terminal value is then `V(T) = ∫₀ᵀ Q dt′`, and intermediate values are
//! `V(t) = e^{r(t − T)} ∫₀ᵗ Q dt′`.

use std::fmt;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{ForgeError, Result};
use crate::numerics::{integrate_samples, TimeGrid};
use crate::path::ParameterPath;

pub type Evaluator = Arc<dyn Fn(&[f64], &[f64], f64) -> f64 + Send + Sync>;

/// Seed for the derivative-independence probe, fixed so reports are reproducible.
const PROBE_SEED: u64 = 0x005e_ed0f_9a11;

#[derive(Clone)]
pub struct CashflowPolicy {
    evaluator: Evaluator,
    n_params: usize,
    uses_derivatives: bool,
    name: String,
}

impl CashflowPolicy {
    pub fn new(
        n_params: usize,
        uses_derivatives: bool,
        f: impl Fn(&[f64], &[f64], f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::from_evaluator(n_params, uses_derivatives, Arc::new(f))
    }

    pub fn from_evaluator(n_params: usize, uses_derivatives: bool, evaluator: Evaluator) -> Self {
        assert!(n_params > 0, "a policy needs at least one parameter");
        Self {
            evaluator,
            n_params,
            uses_derivatives,
            name: String::from("policy"),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn uses_derivatives(&self) -> bool {
        self.uses_derivatives
    }

    pub fn evaluator(&self) -> &Evaluator {
        &self.evaluator
    }

    #[inline]
    pub fn evaluate(&self, q: &[f64], q_dot: &[f64], t: f64) -> f64 {
        (self.evaluator)(q, q_dot, t)
    }

    /// `α·Q`.
    pub fn scaled(&self, alpha: f64) -> Self {
        let inner = self.evaluator.clone();
        Self {
            evaluator: Arc::new(move |q, qd, t| alpha * inner(q, qd, t)),
            n_params: self.n_params,
            uses_derivatives: self.uses_derivatives,
            name: format!("{}*{alpha}", self.name),
        }
    }

    /// `α·Q₁ + β·Q₂` over the same parameters.
    pub fn combine(alpha: f64, a: &Self, beta: f64, b: &Self) -> Result<Self> {
        if a.n_params != b.n_params {
            return Err(ForgeError::Precondition(format!(
                "cannot combine policies over {} and {} parameters",
                a.n_params, b.n_params
            )));
        }
        let (fa, fb) = (a.evaluator.clone(), b.evaluator.clone());
        Ok(Self {
            evaluator: Arc::new(move |q, qd, t| alpha * fa(q, qd, t) + beta * fb(q, qd, t)),
            n_params: a.n_params,
            uses_derivatives: a.uses_derivatives || b.uses_derivatives,
            name: format!("{}+{}", a.name, b.name),
        })
    }
}

impl fmt::Debug for CashflowPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CashflowPolicy")
            .field("name", &self.name)
            .field("n_params", &self.n_params)
            .field("uses_derivatives", &self.uses_derivatives)
            .finish()
    }
}

/// Valuation settings. Cashflows are always expressed as future value at `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValuationConfig {
    growth_rate: f64,
}

impl ValuationConfig {
    pub fn new(growth_rate: f64) -> Result<Self> {
        if !(growth_rate.is_finite() && growth_rate >= 0.0) {
            return Err(ForgeError::InvalidParameter(format!(
                "growth rate must be finite and ≥ 0, got {growth_rate}"
            )));
        }
        Ok(Self { growth_rate })
    }

    pub fn growth_rate(&self) -> f64 {
        self.growth_rate
    }
}

impl Default for ValuationConfig {
    fn default() -> Self {
        Self { growth_rate: 0.0 }
    }
}

pub(crate) fn check_paths(policy: &CashflowPolicy, q_paths: &[ParameterPath]) -> Result<TimeGrid> {
    if q_paths.len() != policy.n_params() {
        return Err(ForgeError::Precondition(format!(
            "policy expects {} parameter paths, got {}",
            policy.n_params(),
            q_paths.len()
        )));
    }
    let grid = *q_paths[0].grid();
    if q_paths.iter().any(|p| *p.grid() != grid) {
        return Err(ForgeError::Precondition(
            "parameter paths live on different grids".to_string(),
        ));
    }
    Ok(grid)
}

/// Node-wise `q` and `q̇` vectors, laid out so node `i` occupies
/// `[i·n .. (i+1)·n]`.
pub(crate) struct NodeState {
    pub n: usize,
    pub q: Vec<f64>,
    pub q_dot: Vec<f64>,
}

impl NodeState {
    pub fn gather(q_paths: &[ParameterPath]) -> Self {
        let n = q_paths.len();
        let len = q_paths[0].values().len();
        let mut q = Vec::with_capacity(n * len);
        let mut q_dot = Vec::with_capacity(n * len);
        for i in 0..len {
            for p in q_paths {
                q.push(p.values()[i]);
                q_dot.push(p.derivs()[i]);
            }
        }
        Self { n, q, q_dot }
    }

    pub fn q(&self, i: usize) -> &[f64] {
        &self.q[i * self.n..(i + 1) * self.n]
    }

    pub fn q_dot(&self, i: usize) -> &[f64] {
        &self.q_dot[i * self.n..(i + 1) * self.n]
    }
}

/// `Q(q(t_i), q̇(t_i), t_i)` at every main node.
pub fn cashflow_series(policy: &CashflowPolicy, q_paths: &[ParameterPath]) -> Result<Vec<f64>> {
    let grid = check_paths(policy, q_paths)?;
    let state = NodeState::gather(q_paths);
    grid.nodes()
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let v = policy.evaluate(state.q(i), state.q_dot(i), t);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ForgeError::PolicyNonFinite { t })
            }
        })
        .collect()
}

/// `V(at)` for a grid node `at ∈ [0, T]`. `V(0) = 0` always.
pub fn policy_value(
    policy: &CashflowPolicy,
    q_paths: &[ParameterPath],
    config: &ValuationConfig,
    at: f64,
) -> Result<f64> {
    let grid = check_paths(policy, q_paths)?;
    let idx = grid.node_index(at)?;
    let cash = cashflow_series(policy, q_paths)?;
    let discount = (config.growth_rate() * (grid.node(idx) - grid.t_end())).exp();
    Ok(discount * integrate_samples(&cash[..=idx], grid.step()))
}

/// `V(T)`.
pub fn terminal_value(policy: &CashflowPolicy, q_paths: &[ParameterPath]) -> Result<f64> {
    let grid = check_paths(policy, q_paths)?;
    let cash = cashflow_series(policy, q_paths)?;
    Ok(integrate_samples(&cash, grid.step()))
}

/// `V(t_i)` at every main node.
pub fn running_value(
    policy: &CashflowPolicy,
    q_paths: &[ParameterPath],
    config: &ValuationConfig,
) -> Result<Vec<f64>> {
    let grid = check_paths(policy, q_paths)?;
    let cash = cashflow_series(policy, q_paths)?;
    Ok(running_from_cashflows(&cash, &grid, config))
}

pub(crate) fn running_from_cashflows(
    cash: &[f64],
    grid: &TimeGrid,
    config: &ValuationConfig,
) -> Vec<f64> {
    let h = grid.step();
    let r = config.growth_rate();
    (0..cash.len())
        .map(|i| (r * (grid.node(i) - grid.t_end())).exp() * integrate_samples(&cash[..=i], h))
        .collect()
}

/// Probes whether the evaluator actually ignores `q̇`: at `probes` random nodes
/// (at least 3) the `q̇` entries are replaced with random values and the output
/// must not move by more than 1e−12 relative.
pub fn check_derivative_independence(
    policy: &CashflowPolicy,
    q_paths: &[ParameterPath],
    probes: usize,
) -> Result<bool> {
    let grid = check_paths(policy, q_paths)?;
    let state = NodeState::gather(q_paths);
    let mut rng = StdRng::seed_from_u64(PROBE_SEED);
    let nodes = grid.len();
    let mut fake = vec![0.0; policy.n_params()];
    for _ in 0..probes.max(3) {
        let i = rng.random_range(0..nodes);
        let t = grid.node(i);
        let q = state.q(i);
        let reference = policy.evaluate(q, state.q_dot(i), t);
        for (slot, real) in fake.iter_mut().zip(state.q_dot(i)) {
            let magnitude = 1.0 + real.abs();
            *slot = real + magnitude * rng.random_range(-10.0..10.0);
        }
        let probed = policy.evaluate(q, &fake, t);
        let tol = 1e-12 * reference.abs().max(probed.abs());
        if (probed - reference).abs() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(10.0, 1000, 0).unwrap()
    }

    fn toy(c_in: f64, c_out: f64, r: f64, t_end: f64) -> CashflowPolicy {
        CashflowPolicy::new(1, false, move |q, _, t| {
            (c_in * (1.0 - q[0]) - c_out * q[0]) * (r * (t_end - t)).exp()
        })
    }

    #[test]
    fn pay_as_you_go_is_worthless() {
        let g = grid();
        let zero = CashflowPolicy::new(1, false, |_, _, _| 0.0);
        let p = [ParameterPath::linear(g, 0.3, 0.02)];
        for at in [0.0, 2.5, 10.0] {
            assert_eq!(
                policy_value(&zero, &p, &ValuationConfig::default(), at).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn balanced_forecast_has_zero_terminal_value() {
        let g = grid();
        let p = [ParameterPath::constant(g, 0.25)];
        let v = policy_value(
            &toy(1.0, 3.0, 0.0, 10.0),
            &p,
            &ValuationConfig::default(),
            10.0,
        )
        .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn drifting_share_produces_closed_form_deficit() {
        let g = grid();
        let p = [ParameterPath::linear(g, 0.25, 0.01)];
        let v = policy_value(
            &toy(1.0, 3.0, 0.0, 10.0),
            &p,
            &ValuationConfig::default(),
            10.0,
        )
        .unwrap();
        assert!((v + 2.0).abs() < 1e-8, "{v}");
    }

    #[test]
    fn intermediate_value_matches_accumulated_form() {
        // V(t) = ∫₀ᵗ (c_in − c_out) e^{r(t−t′)} dt′, with c_in − c_out = −4·0.01·t′
        let g = grid();
        let r = 0.05;
        let p = [ParameterPath::linear(g, 0.25, 0.01)];
        let cfg = ValuationConfig::new(r).unwrap();
        let v = policy_value(&toy(1.0, 3.0, r, 10.0), &p, &cfg, 4.0).unwrap();
        let t: f64 = 4.0;
        let exact = -0.04 / (r * r) * ((r * t).exp() - 1.0 - r * t);
        assert!(((v - exact) / exact).abs() < 1e-10);
    }

    #[test]
    fn value_at_zero_is_zero_and_bounds_are_checked() {
        let g = grid();
        let p = [ParameterPath::linear(g, 0.25, 0.01)];
        let pol = toy(1.0, 3.0, 0.0, 10.0);
        assert_eq!(
            policy_value(&pol, &p, &ValuationConfig::default(), 0.0).unwrap(),
            0.0
        );
        assert!(policy_value(&pol, &p, &ValuationConfig::default(), 0.005).is_err());
        assert!(policy_value(&pol, &p, &ValuationConfig::default(), 11.0).is_err());
    }

    #[test]
    fn non_finite_evaluation_is_reported() {
        let g = grid();
        let pol = CashflowPolicy::new(1, false, |_, _, t| if t > 5.0 { f64::NAN } else { 0.0 });
        let err = policy_value(
            &pol,
            &[ParameterPath::constant(g, 0.0)],
            &ValuationConfig::default(),
            10.0,
        )
        .unwrap_err();
        assert!(err
            .to_string()
            .contains("policy evaluation non-finite at t′"));
    }

    #[test]
    fn wrong_path_count() {
        let g = grid();
        let pol = CashflowPolicy::new(2, false, |q, _, _| q[0] + q[1]);
        assert!(terminal_value(&pol, &[ParameterPath::constant(g, 0.0)]).is_err());
    }

    #[test]
    fn derivative_independence_probe() {
        let g = grid();
        let p = [ParameterPath::linear(g, 0.25, 0.01)];
        assert!(check_derivative_independence(&toy(1.0, 3.0, 0.0, 10.0), &p, 10).unwrap());
        let robust = CashflowPolicy::new(1, true, |q, qd, t| {
            1.0 - 4.0 * q[0] + 4.0 * (10.0 - t) * qd[0]
        });
        assert!(!check_derivative_independence(&robust, &p, 10).unwrap());
        let time_only = CashflowPolicy::new(1, false, |_, _, t| t.sin());
        assert!(check_derivative_independence(&time_only, &p, 3).unwrap());
    }

    #[test]
    fn growth_rate_must_be_non_negative() {
        assert!(ValuationConfig::new(-0.01).is_err());
        assert!(ValuationConfig::new(f64::NAN).is_err());
        assert_eq!(ValuationConfig::new(0.0).unwrap().growth_rate(), 0.0);
    }
}
