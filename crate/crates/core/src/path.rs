//! Parameter paths and the causal kernels that turn a raw parameter `p` into
//! the generalized parameter `q(t′) = ∫_{−∞}^{t′} F(p(t″)) g(t′, t″) dt″`.

use std::fmt;
use std::sync::Arc;

use crate::error::{ForgeError, Result};
use crate::numerics::{integrate_samples, partial_derivative, SampledFunction, Segment, TimeGrid};

/// Exponential kernels are truncated at the history start; the discarded
/// weight `e^{−λH}` must stay below this.
pub const EXP_TRUNCATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    Forecast,
    Observed,
}

/// A sampled parameter function on `[t_start, T]`, split into the history
/// window and the main segment. Both segments share the node at `t′ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPath {
    samples: SampledFunction,
    history: SampledFunction,
    kind: PathKind,
}

impl ParameterPath {
    pub fn new(samples: SampledFunction, history: SampledFunction, kind: PathKind) -> Result<Self> {
        if samples.segment() != Segment::Main || history.segment() != Segment::History {
            return Err(ForgeError::InvalidParameter(
                "path segments are swapped".to_string(),
            ));
        }
        if samples.grid() != history.grid() {
            return Err(ForgeError::InvalidParameter(
                "history and main samples live on different grids".to_string(),
            ));
        }
        let h0 = *history.values().last().expect("history has the t′=0 node");
        if h0 != samples.values()[0] {
            return Err(ForgeError::InvalidParameter(format!(
                "history ends at {h0} but the main segment starts at {}",
                samples.values()[0]
            )));
        }
        Ok(Self {
            samples,
            history,
            kind,
        })
    }

    /// Forecast from an analytic family, evaluated on history and main nodes.
    pub fn forecast_analytic(
        grid: TimeGrid,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
    ) -> Self {
        Self {
            samples: SampledFunction::from_analytic(grid, Segment::Main, &f, &df),
            history: SampledFunction::from_analytic(grid, Segment::History, &f, &df),
            kind: PathKind::Forecast,
        }
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Self {
        Self::forecast_analytic(grid, |_| value, |_| 0.0)
    }

    /// `p(t′) = intercept + slope·t′`, extended linearly into the history window.
    pub fn linear(grid: TimeGrid, intercept: f64, slope: f64) -> Self {
        Self::forecast_analytic(grid, |t| intercept + slope * t, |_| slope)
    }

    /// Tabulated forecast. `history` runs from `t_start` to 0 inclusive;
    /// when omitted the first main value is held constant over the window.
    pub fn from_table(grid: TimeGrid, main: Vec<f64>, history: Option<Vec<f64>>) -> Result<Self> {
        let samples = SampledFunction::from_values(grid, Segment::Main, main)?;
        let history = match history {
            Some(values) => SampledFunction::from_values(grid, Segment::History, values)?,
            None => {
                let n = grid.history_steps() + 1;
                SampledFunction::from_parts(
                    grid,
                    Segment::History,
                    vec![samples.values()[0]; n],
                    vec![0.0; n],
                )?
            }
        };
        Self::new(samples, history, PathKind::Forecast)
    }

    /// Observed path `p̂ = p + δp`. `delta` maps `t′` to `(δp, δṗ)` and is only
    /// applied for `t′ > 0`; the history window and the value at inception are
    /// left untouched. The derivative at `t′ = 0` picks up the right-sided `δṗ(0)`.
    pub fn observe(&self, delta: impl Fn(f64) -> (f64, f64)) -> Self {
        let grid = *self.grid();
        let mut values = self.samples.values().to_vec();
        let mut derivs = self.samples.derivs().to_vec();
        for (i, t) in grid.nodes().into_iter().enumerate() {
            let (dv, dd) = delta(t);
            if i > 0 {
                values[i] += dv;
            }
            derivs[i] += dd;
        }
        Self {
            samples: SampledFunction::from_parts(grid, Segment::Main, values, derivs)
                .expect("lengths preserved"),
            history: self.history.clone(),
            kind: PathKind::Observed,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        self.samples.grid()
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn samples(&self) -> &SampledFunction {
        &self.samples
    }

    pub fn history(&self) -> &SampledFunction {
        &self.history
    }

    pub fn values(&self) -> &[f64] {
        self.samples.values()
    }

    pub fn derivs(&self) -> &[f64] {
        self.samples.derivs()
    }

    /// History and main values as one ascending series starting at `t_start`.
    fn combined_values(&self) -> Vec<f64> {
        let mut all = self.history.values().to_vec();
        all.extend_from_slice(&self.samples.values()[1..]);
        all
    }

    fn rebuilt(&self, values: Vec<f64>, derivs: Vec<f64>) -> Result<Self> {
        let grid = *self.grid();
        let split = grid.history_steps();
        let history = SampledFunction::from_parts(
            grid,
            Segment::History,
            values[..=split].to_vec(),
            derivs[..=split].to_vec(),
        )?;
        let samples = SampledFunction::from_parts(
            grid,
            Segment::Main,
            values[split..].to_vec(),
            derivs[split..].to_vec(),
        )?;
        Ok(Self {
            samples,
            history,
            kind: self.kind,
        })
    }
}

/// Pointwise map `F` applied to `p` before the kernel. `None` is the identity.
#[derive(Clone, Default)]
pub struct PointMap(Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>);

impl PointMap {
    pub fn identity() -> Self {
        Self(None)
    }

    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self(Some(Arc::new(f)))
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_none()
    }

    pub fn apply(&self, p: f64) -> f64 {
        match &self.0 {
            None => p,
            Some(f) => f(p),
        }
    }

    pub fn derivative(&self, p: f64) -> Result<f64> {
        match &self.0 {
            None => Ok(1.0),
            Some(f) => partial_derivative(|x| f(x), p, None),
        }
    }
}

impl fmt::Debug for PointMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            f.write_str("PointMap::Identity")
        } else {
            f.write_str("PointMap::Custom")
        }
    }
}

/// Weight function `g(t′, t″)` of a generalized parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// Dirac weight at `t″ = t′`.
    Identity,
    /// Flat `1/W` on `[t′ − W, t′]`.
    MovingAverage { window: f64 },
    /// `λ·e^{−λ(t′ − t″)}`, truncated at the history start.
    Exponential { rate: f64 },
}

impl Kernel {
    /// History length the kernel needs to reach back.
    pub fn memory(&self) -> f64 {
        match *self {
            Kernel::Identity => 0.0,
            Kernel::MovingAverage { window } => window,
            Kernel::Exponential { rate } => (1.0 / EXP_TRUNCATION_TOL).ln() / rate,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Kernel::MovingAverage { window } if !(window.is_finite() && window > 0.0) => {
                Err(ForgeError::InvalidParameter(format!(
                    "moving-average window must be > 0, got {window}"
                )))
            }
            Kernel::Exponential { rate } if !(rate.is_finite() && rate > 0.0) => Err(
                ForgeError::InvalidParameter(format!("exponential rate must be > 0, got {rate}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneralizedParameterSpec {
    pub kernel: Kernel,
    pub f_map: PointMap,
}

impl GeneralizedParameterSpec {
    pub fn new(kernel: Kernel) -> Self {
        Self {
            kernel,
            f_map: PointMap::identity(),
        }
    }

    pub fn identity() -> Self {
        Self::new(Kernel::Identity)
    }

    pub fn with_map(mut self, f_map: PointMap) -> Self {
        self.f_map = f_map;
        self
    }
}

impl Default for GeneralizedParameterSpec {
    fn default() -> Self {
        Self::identity()
    }
}

/// Applies the kernel to a raw path. Derivative samples come from exact
/// kernel identities rather than re-differencing:
/// identity `q̇ = F′(p)·ṗ`, moving average `q̇ = (F(p(t′)) − F(p(t′−W)))/W`,
/// exponential `q̇ = λ(F(p(t′)) − q(t′))`.
pub fn build_generalized_path(
    p: &ParameterPath,
    spec: &GeneralizedParameterSpec,
) -> Result<ParameterPath> {
    spec.kernel.validate()?;
    let grid = *p.grid();
    let h = grid.step();
    let have = grid.history_span();
    let need = spec.kernel.memory();
    if have + 1e-9 * h < need {
        return Err(ForgeError::HistoryTooShort { have, need });
    }

    let raw = p.combined_values();
    let mapped: Vec<f64> = raw.iter().map(|&x| spec.f_map.apply(x)).collect();

    match spec.kernel {
        Kernel::Identity => {
            if spec.f_map.is_identity() {
                return Ok(p.clone());
            }
            let map_segment = |seg: &SampledFunction| -> Result<SampledFunction> {
                let mut values = Vec::with_capacity(seg.len());
                let mut derivs = Vec::with_capacity(seg.len());
                for (x, d) in seg.values().iter().zip(seg.derivs()) {
                    values.push(spec.f_map.apply(*x));
                    derivs.push(spec.f_map.derivative(*x)? * d);
                }
                SampledFunction::from_parts(grid, seg.segment(), values, derivs)
            };
            Ok(ParameterPath {
                samples: map_segment(&p.samples)?,
                history: map_segment(&p.history)?,
                kind: p.kind,
            })
        }
        Kernel::MovingAverage { window } => {
            let m = (window / h).round();
            if m < 1.0 || (m * h - window).abs() > 1e-9 * window.max(h) {
                return Err(ForgeError::InvalidParameter(format!(
                    "moving-average window {window} must be a whole number of grid steps (h = {h})"
                )));
            }
            let m = m as usize;
            let n = mapped.len();
            let mut values = Vec::with_capacity(n);
            let mut derivs = Vec::with_capacity(n);
            for j in 0..n {
                if j >= m {
                    values.push(integrate_samples(&mapped[j - m..=j], h) / window);
                    derivs.push((mapped[j] - mapped[j - m]) / window);
                } else if j == 0 {
                    values.push(mapped[0]);
                    derivs.push(0.0);
                } else {
                    // partial window at the very start of the history
                    let span = j as f64 * h;
                    values.push(integrate_samples(&mapped[..=j], h) / span);
                    derivs.push((mapped[j] - values[j]) / span);
                }
            }
            p.rebuilt(values, derivs)
        }
        Kernel::Exponential { rate } => {
            let n = mapped.len();
            let weights: Vec<f64> = (0..n)
                .map(|d| rate * (-rate * d as f64 * h).exp())
                .collect();
            let mut values = Vec::with_capacity(n);
            let mut derivs = Vec::with_capacity(n);
            let mut integrand = Vec::with_capacity(n);
            for j in 0..n {
                integrand.clear();
                integrand.extend((0..=j).map(|i| weights[j - i] * mapped[i]));
                let q = integrate_samples(&integrand, h);
                values.push(q);
                derivs.push(rate * (mapped[j] - q));
            }
            p.rebuilt(values, derivs)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_is_bitwise_identity() {
        let g = TimeGrid::new(10.0, 100, 10).unwrap();
        let p = ParameterPath::forecast_analytic(g, |t| 0.25 + 0.1 * t.sin(), |t| 0.1 * t.cos());
        let q = build_generalized_path(&p, &GeneralizedParameterSpec::identity()).unwrap();
        assert_eq!(q, p);
    }

    #[test]
    fn identity_kernel_with_map() {
        let g = TimeGrid::new(1.0, 10, 0).unwrap();
        let p = ParameterPath::linear(g, 1.0, 2.0);
        let spec = GeneralizedParameterSpec::identity().with_map(PointMap::new(|x| x * x));
        let q = build_generalized_path(&p, &spec).unwrap();
        for (i, t) in g.nodes().iter().enumerate() {
            let x = 1.0 + 2.0 * t;
            assert!((q.values()[i] - x * x).abs() < 1e-14);
            assert!((q.derivs()[i] - 4.0 * x).abs() < 1e-7);
        }
    }

    #[test]
    fn moving_average_of_constant() {
        let g = TimeGrid::with_history_span(10.0, 1000, 2.0).unwrap();
        let p = ParameterPath::constant(g, 0.25);
        let q = build_generalized_path(
            &p,
            &GeneralizedParameterSpec::new(Kernel::MovingAverage { window: 2.0 }),
        )
        .unwrap();
        assert!(q.values().iter().all(|v| (v - 0.25).abs() < 1e-14));
        assert!(q.derivs().iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn moving_average_of_linear_lags_by_half_window() {
        let g = TimeGrid::with_history_span(10.0, 1000, 2.0).unwrap();
        let p = ParameterPath::linear(g, 0.0, 1.0);
        let q = build_generalized_path(
            &p,
            &GeneralizedParameterSpec::new(Kernel::MovingAverage { window: 2.0 }),
        )
        .unwrap();
        for (i, t) in g.nodes().iter().enumerate() {
            assert!((q.values()[i] - (t - 1.0)).abs() < 1e-10);
            assert!((q.derivs()[i] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn short_history_is_rejected() {
        let g = TimeGrid::with_history_span(10.0, 1000, 1.0).unwrap();
        let p = ParameterPath::constant(g, 0.25);
        let err = build_generalized_path(
            &p,
            &GeneralizedParameterSpec::new(Kernel::MovingAverage { window: 2.0 }),
        )
        .unwrap_err();
        assert!(err
            .to_string()
            .contains("history shorter than kernel memory"));
        let err = build_generalized_path(
            &p,
            &GeneralizedParameterSpec::new(Kernel::Exponential { rate: 1.0 }),
        )
        .unwrap_err();
        assert!(matches!(err, ForgeError::HistoryTooShort { .. }));
    }

    #[test]
    fn bad_kernel_arguments() {
        let g = TimeGrid::with_history_span(10.0, 100, 5.0).unwrap();
        let p = ParameterPath::constant(g, 1.0);
        assert!(build_generalized_path(
            &p,
            &GeneralizedParameterSpec::new(Kernel::MovingAverage { window: 0.0 })
        )
        .is_err());
        assert!(build_generalized_path(
            &p,
            &GeneralizedParameterSpec::new(Kernel::Exponential { rate: -1.0 })
        )
        .is_err());
        // not a multiple of h = 0.1
        assert!(build_generalized_path(
            &p,
            &GeneralizedParameterSpec::new(Kernel::MovingAverage { window: 0.15 })
        )
        .is_err());
    }

    #[test]
    fn exponential_kernel_on_constant_and_linear() {
        let g = TimeGrid::with_history_span(10.0, 1000, Kernel::Exponential { rate: 2.0 }.memory())
            .unwrap();
        let spec = GeneralizedParameterSpec::new(Kernel::Exponential { rate: 2.0 });
        let q = build_generalized_path(&ParameterPath::constant(g, 0.5), &spec).unwrap();
        for v in q.values() {
            assert!((v - 0.5).abs() < 1e-6);
        }
        // for p = t the untruncated average is t − 1/λ
        let q = build_generalized_path(&ParameterPath::linear(g, 0.0, 1.0), &spec).unwrap();
        for (i, t) in g.nodes().iter().enumerate() {
            assert!(
                (q.values()[i] - (t - 0.5)).abs() < 1e-4,
                "{} vs {}",
                q.values()[i],
                t - 0.5
            );
            assert!((q.derivs()[i] - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn observation_leaves_history_alone() {
        let g = TimeGrid::new(10.0, 100, 20).unwrap();
        let p = ParameterPath::constant(g, 0.25);
        let o = p.observe(|t| (0.01 * t, 0.01));
        assert_eq!(o.kind(), PathKind::Observed);
        assert_eq!(o.history(), p.history());
        assert_eq!(o.values()[0], 0.25);
        assert!((o.values()[100] - 0.35).abs() < 1e-12);
        assert_eq!(o.derivs()[0], 0.01);
    }

    #[test]
    fn table_forecast() {
        let g = TimeGrid::new(1.0, 4, 2).unwrap();
        let p = ParameterPath::from_table(g, vec![1.0, 1.25, 1.5, 1.75, 2.0], None).unwrap();
        assert_eq!(p.history().values(), &[1.0, 1.0, 1.0]);
        assert!(p.derivs().iter().all(|d| (d - 1.0).abs() < 1e-12));
        assert!(ParameterPath::from_table(g, vec![1.0; 4], None).is_err());
        assert!(ParameterPath::from_table(g, vec![1.0; 5], Some(vec![0.0, 0.5, 2.0])).is_err());
    }
}
