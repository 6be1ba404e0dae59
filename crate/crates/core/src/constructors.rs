//! Builders for robust policies.
//!
//! * [`from_generating_function`]: `Q = dL/dt′` for a generating function
//!   `L(q, t′)` with `∂L/∂q_k = 0` at `T`; then `V(T) = L|₀ᵀ`.
//! * [`from_super_robust_spec`]: `Q = (1/T)·d/dt′[(T − t′)M(q, t′)] + C(t′)`,
//!   whose terminal value `−M(q(0), 0) + ∫C` only sees the known inception state.
//! * [`robust_extension`]: `Q = Q̃(q, t′) + A(t′)·q̇ + C` with
//!   `dA/dt′ = ∂Q̃/∂q` along the forecast and `A(T) = 0`.

use std::fmt;
use std::sync::Arc;

use crate::error::{ForgeError, Result};
use crate::numerics::{integrate_samples, partial_derivative, TimeGrid};
use crate::path::ParameterPath;
use crate::policy::{check_paths, CashflowPolicy, NodeState};

/// Scalar function of `(q, t′)`.
pub type StateFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
/// Partial derivative `∂/∂q_k` of a [`StateFn`], indexed by `k`.
pub type StatePartialFn = Arc<dyn Fn(&[f64], f64, usize) -> f64 + Send + Sync>;
pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Tolerance on `∂L/∂q_k(q(T), T)`, relative to the generating function's scale.
pub const GENERATOR_BOUNDARY_TOL: f64 = 1e-6;

fn state_partial(f: &dyn Fn(&[f64], f64) -> f64, q: &[f64], t: f64, k: usize) -> Result<f64> {
    let mut buf = q.to_vec();
    partial_derivative(
        |x| {
            buf[k] = x;
            f(&buf, t)
        },
        q[k],
        None,
    )
}

fn time_partial(f: &dyn Fn(&[f64], f64) -> f64, q: &[f64], t: f64) -> Result<f64> {
    partial_derivative(|s| f(q, s), t, None)
}

/// `L(q, t′)` with optional analytic partials (numeric otherwise).
#[derive(Clone)]
pub struct GeneratingFunction {
    l_eval: StateFn,
    dl_dq: Option<StatePartialFn>,
    dl_dt: Option<StateFn>,
}

impl GeneratingFunction {
    pub fn new(l: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            l_eval: Arc::new(l),
            dl_dq: None,
            dl_dt: None,
        }
    }

    pub fn with_dl_dq(
        mut self,
        f: impl Fn(&[f64], f64, usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.dl_dq = Some(Arc::new(f));
        self
    }

    pub fn with_dl_dt(mut self, f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        self.dl_dt = Some(Arc::new(f));
        self
    }

    pub fn value(&self, q: &[f64], t: f64) -> f64 {
        (self.l_eval)(q, t)
    }

    pub fn partial_q(&self, q: &[f64], t: f64, k: usize) -> Result<f64> {
        match &self.dl_dq {
            Some(f) => Ok(f(q, t, k)),
            None => state_partial(self.l_eval.as_ref(), q, t, k),
        }
    }

    pub fn partial_t(&self, q: &[f64], t: f64) -> Result<f64> {
        match &self.dl_dt {
            Some(f) => Ok(f(q, t)),
            None => time_partial(self.l_eval.as_ref(), q, t),
        }
    }

    /// `dL/dt′ = ∂L/∂t′ + Σ_k ∂L/∂q_k · q̇_k`.
    pub fn total_derivative(&self, q: &[f64], q_dot: &[f64], t: f64) -> Result<f64> {
        let mut acc = self.partial_t(q, t)?;
        for (k, qd) in q_dot.iter().enumerate() {
            acc += self.partial_q(q, t, k)? * qd;
        }
        Ok(acc)
    }
}

impl fmt::Debug for GeneratingFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratingFunction")
            .field("analytic_dl_dq", &self.dl_dq.is_some())
            .field("analytic_dl_dt", &self.dl_dt.is_some())
            .finish()
    }
}

/// Policy `Q = dL/dt′` over the parameters of `forecast_q`.
///
/// The boundary condition `∂L/∂q_k(q(T), T) = 0` is checked on the forecast
/// before anything is built.
pub fn from_generating_function(
    gen: &GeneratingFunction,
    forecast_q: &[ParameterPath],
) -> Result<CashflowPolicy> {
    if forecast_q.is_empty() {
        return Err(ForgeError::Precondition(
            "need at least one parameter path".to_string(),
        ));
    }
    let n_params = forecast_q.len();
    let probe = CashflowPolicy::new(n_params, true, |_, _, _| 0.0);
    let grid = check_paths(&probe, forecast_q)?;
    let state = NodeState::gather(forecast_q);

    let mut scale = 0.0f64;
    for (i, t) in grid.nodes().into_iter().enumerate() {
        let q = state.q(i);
        scale = scale
            .max(gen.value(q, t).abs())
            .max(gen.partial_t(q, t)?.abs() * grid.t_end());
        for (k, qk) in q.iter().enumerate() {
            scale = scale.max(gen.partial_q(q, t, k)?.abs() * qk.abs());
        }
    }
    let tol = GENERATOR_BOUNDARY_TOL * scale + 1e-12;
    let q_end = state.q(grid.n_steps());
    for k in 0..n_params {
        let value = gen.partial_q(q_end, grid.t_end(), k)?;
        if value.abs() > tol {
            return Err(ForgeError::BoundaryViolation { param: k, value });
        }
    }

    let gen = gen.clone();
    Ok(CashflowPolicy::new(n_params, true, move |q, qd, t| {
        gen.total_derivative(q, qd, t).unwrap_or(f64::NAN)
    })
    .named("generated"))
}

/// `∂ⁿL/∂q_kⁿ` at `(q(T), T)` for `n = 1, 2, 3`, by central differences.
/// All three vanish for a generating function that is super-robust up to third order.
pub fn terminal_q_derivatives(
    gen: &GeneratingFunction,
    forecast_q: &[ParameterPath],
    k: usize,
) -> Result<[f64; 3]> {
    let probe = CashflowPolicy::new(forecast_q.len().max(1), true, |_, _, _| 0.0);
    let grid = check_paths(&probe, forecast_q)?;
    if k >= forecast_q.len() {
        return Err(ForgeError::Precondition(format!(
            "parameter index {k} out of range"
        )));
    }
    let t = grid.t_end();
    let mut q: Vec<f64> = forecast_q
        .iter()
        .map(|p| p.values()[grid.n_steps()])
        .collect();
    let center = q[k];
    let s = 1e-3 * center.abs().max(1.0);
    let mut at = |x: f64| {
        q[k] = x;
        gen.value(&q, t)
    };
    let (m2, m1, f0, p1, p2) = (
        at(center - 2.0 * s),
        at(center - s),
        at(center),
        at(center + s),
        at(center + 2.0 * s),
    );
    let out = [
        (p1 - m1) / (2.0 * s),
        (p1 - 2.0 * f0 + m1) / (s * s),
        (p2 - 2.0 * p1 + 2.0 * m1 - m2) / (2.0 * s * s * s),
    ];
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ForgeError::NonFinite { at: center });
    }
    Ok(out)
}

/// Ingredients of the super-robust ansatz.
#[derive(Clone)]
pub struct SuperRobustSpec {
    pub m_eval: StateFn,
    pub c_profile: TimeFn,
}

impl SuperRobustSpec {
    pub fn new(
        m: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        c: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            m_eval: Arc::new(m),
            c_profile: Arc::new(c),
        }
    }

    /// Spec with the constant `C` from [`balance_c_profile`], so `V(T) = 0`.
    pub fn balanced(
        m: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        forecast_q: &[ParameterPath],
    ) -> Result<Self> {
        let m: StateFn = Arc::new(m);
        let c = balance_c_profile(&m, forecast_q)?;
        Ok(Self {
            m_eval: m,
            c_profile: Arc::new(move |_| c),
        })
    }
}

/// `Q = (1/T)[−M + (T − t′)(∂M/∂t′ + Σ_k ∂M/∂q_k·q̇_k)] + C(t′)`.
pub fn from_super_robust_spec(
    spec: &SuperRobustSpec,
    n_params: usize,
    grid: &TimeGrid,
) -> Result<CashflowPolicy> {
    let t_end = grid.t_end();
    if t_end.is_nan() || t_end <= 0.0 {
        return Err(ForgeError::Precondition(
            "termination time must be positive".to_string(),
        ));
    }
    if n_params == 0 {
        return Err(ForgeError::Precondition(
            "need at least one parameter".to_string(),
        ));
    }
    let spec = spec.clone();
    Ok(CashflowPolicy::new(n_params, true, move |q, qd, t| {
        let m = spec.m_eval.as_ref();
        let mut slope = match time_partial(m, q, t) {
            Ok(v) => v,
            Err(_) => return f64::NAN,
        };
        for (k, qdk) in qd.iter().enumerate() {
            match state_partial(m, q, t, k) {
                Ok(v) => slope += v * qdk,
                Err(_) => return f64::NAN,
            }
        }
        (-m(q, t) + (t_end - t) * slope) / t_end + (spec.c_profile)(t)
    })
    .named("super_robust"))
}

/// Constant `C = M(q(0), 0)/T`, which zeroes `V(T)` for every path sharing `q(0)`.
pub fn balance_c_profile(m_eval: &StateFn, forecast_q: &[ParameterPath]) -> Result<f64> {
    if forecast_q.is_empty() {
        return Err(ForgeError::Precondition(
            "need at least one parameter path".to_string(),
        ));
    }
    let t_end = forecast_q[0].grid().t_end();
    if t_end == 0.0 {
        return Err(ForgeError::Precondition(
            "termination time must be positive".to_string(),
        ));
    }
    let q0: Vec<f64> = forecast_q.iter().map(|p| p.values()[0]).collect();
    let c = m_eval(&q0, 0.0) / t_end;
    if !c.is_finite() {
        return Err(ForgeError::NonFinite { at: 0.0 });
    }
    Ok(c)
}

/// Design-time data of a robust extension.
#[derive(Clone)]
pub struct RobustExtension {
    pub base: CashflowPolicy,
    /// `A(t_i)` at the main nodes; the last entry is exactly 0.
    pub a_profile: Vec<f64>,
    pub c_constant: f64,
    pub grid: TimeGrid,
}

impl RobustExtension {
    /// `A(t′)`, linear between nodes and clamped to `[0, T]`.
    pub fn a_at(&self, t: f64) -> f64 {
        interpolate(&self.a_profile, self.grid.step(), t)
    }
}

impl fmt::Debug for RobustExtension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RobustExtension")
            .field("base", &self.base)
            .field("a0", &self.a_profile.first())
            .field("c_constant", &self.c_constant)
            .finish()
    }
}

fn interpolate(samples: &[f64], h: f64, t: f64) -> f64 {
    let last = samples.len() - 1;
    let x = (t / h).clamp(0.0, last as f64);
    let i = x.floor() as usize;
    if i >= last {
        return samples[last];
    }
    let w = x - i as f64;
    if w == 0.0 {
        samples[i]
    } else {
        samples[i] + w * (samples[i + 1] - samples[i])
    }
}

/// Extends a single-parameter, derivative-free policy `Q̃` into the robust
/// policy `Q̃ + A(t′)·q̇ + C`.
///
/// `A` is frozen from the forecast: `A(t_i) = −∫_{t_i}^T ∂Q̃/∂q dt′`, evaluated
/// with Simpson on node suffixes. `C` balances the forecast, `V(T) = 0`.
pub fn robust_extension(
    base: &CashflowPolicy,
    forecast_q: &ParameterPath,
) -> Result<(CashflowPolicy, RobustExtension)> {
    if base.n_params() != 1 {
        return Err(ForgeError::MultiParameter(base.n_params()));
    }
    if base.uses_derivatives() {
        return Err(ForgeError::Precondition(
            "robust extension needs a base policy that ignores q̇".to_string(),
        ));
    }
    let grid = *forecast_q.grid();
    let h = grid.step();
    let t_end = grid.t_end();
    let nodes = grid.nodes();
    let q = forecast_q.values();
    let qd = forecast_q.derivs();

    let mut slope = Vec::with_capacity(nodes.len());
    for (i, &t) in nodes.iter().enumerate() {
        let d =
            partial_derivative(|x| base.evaluate(&[x], &[qd[i]], t), q[i], None).map_err(|_| {
                ForgeError::ResidualNonFinite {
                    param: 0,
                    node: i,
                    t,
                }
            })?;
        slope.push(d);
    }
    let a_profile: Vec<f64> = (0..nodes.len())
        .map(|i| 0.0 - integrate_samples(&slope[i..], h))
        .collect();

    let mut balance = Vec::with_capacity(nodes.len());
    for (i, &t) in nodes.iter().enumerate() {
        let v = base.evaluate(&[q[i]], &[qd[i]], t) + a_profile[i] * qd[i];
        if !v.is_finite() {
            return Err(ForgeError::PolicyNonFinite { t });
        }
        balance.push(v);
    }
    let c_constant = -integrate_samples(&balance, h) / t_end;

    let a_shared = Arc::new(a_profile.clone());
    let inner = base.evaluator().clone();
    let policy = CashflowPolicy::new(1, true, move |q, qd, t| {
        inner(q, qd, t) + interpolate(&a_shared, h, t) * qd[0] + c_constant
    })
    .named(format!("{}+extension", base.name()));

    Ok((
        policy,
        RobustExtension {
            base: base.clone(),
            a_profile,
            c_constant,
            grid,
        },
    ))
}
