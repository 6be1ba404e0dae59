//! Toy Social Security model.
//!
//! Retirees (share `p`) receive `c_out`, everyone else pays `c_in`, population
//! is normalized to one. The forecast share `p* = c_in/(c_in + c_out)` balances
//! the books at every instant; an observed drift `δp = ε·t′` does not.

use crate::error::{ForgeError, Result};
use crate::numerics::TimeGrid;
use crate::path::ParameterPath;
use crate::policy::CashflowPolicy;

/// Below this `r·t` the closed forms switch to their Taylor series.
const SERIES_CUTOFF: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySsParams {
    pub c_in: f64,
    pub c_out: f64,
    pub t_end: f64,
    pub rate: f64,
    /// Drift of the observed retiree share, `δp = ε·t′`.
    pub epsilon: f64,
}

impl Default for ToySsParams {
    fn default() -> Self {
        Self {
            c_in: 1.0,
            c_out: 3.0,
            t_end: 10.0,
            rate: 0.0,
            epsilon: 0.01,
        }
    }
}

/// Pay-As-You-Go pay-in: leading order in `δp` and exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayIn {
    pub leading: f64,
    pub exact: f64,
}

/// `(e^{x} − 1)/x`, stable near 0.
fn expm1_ratio(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        1.0 + x / 2.0 + x * x / 6.0 + x * x * x / 24.0
    } else {
        x.exp_m1() / x
    }
}

/// `(e^{x} − 1 − x)/x²`, stable near 0.
fn expm1_excess_ratio(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        0.5 * (1.0 + x / 3.0 + x * x / 12.0 + x * x * x / 60.0 + x.powi(4) / 360.0)
    } else {
        (x.exp_m1() - x) / (x * x)
    }
}

impl ToySsParams {
    pub fn new(c_in: f64, c_out: f64, t_end: f64, rate: f64, epsilon: f64) -> Result<Self> {
        let p = Self {
            c_in,
            c_out,
            t_end,
            rate,
            epsilon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.c_in, self.c_out, self.t_end, self.rate, self.epsilon]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(ForgeError::InvalidParameter(
                "toy parameters must be finite".to_string(),
            ));
        }
        if self.c_in <= 0.0 || self.c_out <= 0.0 {
            return Err(ForgeError::InvalidParameter(format!(
                "contributions must be positive (c_in = {}, c_out = {})",
                self.c_in, self.c_out
            )));
        }
        if self.t_end <= 0.0 {
            return Err(ForgeError::InvalidParameter(format!(
                "termination time must be positive, got {}",
                self.t_end
            )));
        }
        if self.rate < 0.0 {
            return Err(ForgeError::InvalidParameter(format!(
                "growth rate must be ≥ 0, got {}",
                self.rate
            )));
        }
        Ok(())
    }

    fn total(&self) -> f64 {
        self.c_in + self.c_out
    }

    /// `p* = c_in/(c_in + c_out)`.
    pub fn forecast_share(&self) -> f64 {
        self.c_in / self.total()
    }

    /// `V(t) = −ε(c_in + c_out)/r²·[e^{rt} − 1 − rt]`, `→ −ε(c_in + c_out)t²/2` as `r → 0`.
    pub fn deficit_closed_form(&self, t: f64) -> f64 {
        -self.epsilon * self.total() * t * t * expm1_excess_ratio(self.rate * t)
    }

    /// `A(t′) = (c_in + c_out)(e^{r(T−t′)} − 1)/r`, `→ (c_in + c_out)(T − t′)` as `r → 0`.
    pub fn extension_coefficient(&self, t: f64) -> f64 {
        let tau = self.t_end - t;
        self.total() * tau * expm1_ratio(self.rate * tau)
    }

    /// `Q̃ = (c_in(1 − p) − c_out·p)·e^{r(T − t′)}`.
    pub fn base_policy(&self) -> CashflowPolicy {
        let Self {
            c_in,
            c_out,
            t_end,
            rate,
            ..
        } = *self;
        CashflowPolicy::new(1, false, move |q, _, t| {
            (c_in * (1.0 - q[0]) - c_out * q[0]) * (rate * (t_end - t)).exp()
        })
        .named("toy_ss")
    }

    /// Closed-form robust extension
    /// `Q = [c_in(1 − p) − c_out·p + (c_in + c_out)(1 − e^{−r(T−t′)})/r · ṗ]·e^{r(T−t′)}`.
    pub fn robust_policy_closed_form(&self) -> CashflowPolicy {
        let me = *self;
        CashflowPolicy::new(1, true, move |q, qd, t| {
            let grow = (me.rate * (me.t_end - t)).exp();
            (me.c_in * (1.0 - q[0]) - me.c_out * q[0]) * grow + me.extension_coefficient(t) * qd[0]
        })
        .named("toy_ss_robust")
    }

    pub fn forecast_path(&self, grid: TimeGrid) -> ParameterPath {
        ParameterPath::constant(grid, self.forecast_share())
    }

    /// `p̂ = p* + ε·t′` for `t′ > 0`.
    pub fn observed_path(&self, grid: TimeGrid) -> ParameterPath {
        let eps = self.epsilon;
        self.forecast_path(grid).observe(move |t| (eps * t, eps))
    }

    /// Pay-in that keeps Pay-As-You-Go balance when the share is off by `δp`.
    pub fn pay_in_pg(&self, delta_p: f64) -> Result<PayIn> {
        let p_hat = self.forecast_share() + delta_p;
        if p_hat >= 1.0 {
            return Err(ForgeError::RetireeShareSaturated(p_hat));
        }
        Ok(PayIn {
            leading: self.c_in + self.total().powi(2) / self.c_out * delta_p,
            exact: self.c_out * p_hat / (1.0 - p_hat),
        })
    }

    /// Leading-order pay-in of the robust extension at time `t`.
    pub fn pay_in_robust(&self, delta_p_dot: f64, t: f64) -> f64 {
        self.c_in + self.total().powi(2) / self.c_out * (self.t_end - t) * delta_p_dot
    }

    /// `2(c_in + c_out)³/c_out²·δp²`, a bound on `|exact − leading|` for small `δp`.
    pub fn pay_in_remainder_bound(&self, delta_p: f64) -> f64 {
        2.0 * self.total().powi(3) / (self.c_out * self.c_out) * delta_p * delta_p
    }
}
