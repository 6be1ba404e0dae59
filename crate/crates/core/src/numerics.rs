//! Shared numerical kernels: the uniform time lattice, sampled functions,
//! composite Simpson quadrature, finite-difference path derivatives and
//! scalar partial derivatives.
//!
//! Everything here is a pure function of its inputs.

use crate::error::{ForgeError, Result};

/// Default number of uniform intervals on `[0, T]`.
pub const DEFAULT_STEPS: usize = 1000;

/// Uniform discretization of `[0, T]` plus a pre-inception history window
/// `[t_start, 0]` that uses the same step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
    history_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize, history_steps: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(ForgeError::InvalidGrid(format!(
                "t_end must be positive and finite, got {t_end}"
            )));
        }
        if n_steps < 2 || !n_steps.is_multiple_of(2) {
            return Err(ForgeError::InvalidGrid(format!(
                "n_steps must be even and at least 2, got {n_steps}"
            )));
        }
        let h = t_end / n_steps as f64;
        Ok(Self {
            t_start: -(history_steps as f64) * h,
            t_end,
            n_steps,
            history_steps,
        })
    }

    /// Grid whose history window covers at least `span` time units.
    pub fn with_history_span(t_end: f64, n_steps: usize, span: f64) -> Result<Self> {
        if !(span.is_finite() && span >= 0.0) {
            return Err(ForgeError::InvalidGrid(format!(
                "history span must be non-negative, got {span}"
            )));
        }
        let h = t_end / n_steps as f64;
        let steps = (span / h - 1e-9).ceil().max(0.0) as usize;
        Self::new(t_end, n_steps, steps)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn history_steps(&self) -> usize {
        self.history_steps
    }

    /// Step size `h_t`.
    pub fn step(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    /// Number of nodes on `[0, T]`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Length of the history window in time units.
    pub fn history_span(&self) -> f64 {
        self.history_steps as f64 * self.step()
    }

    /// Time of main node `i`, `t_i = i·h_t`.
    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_end
        } else {
            i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// History node times in ascending order, from `t_start` up to and including 0.
    pub fn history_nodes(&self) -> Vec<f64> {
        let h = self.step();
        (0..=self.history_steps)
            .map(|j| -((self.history_steps - j) as f64) * h)
            .collect()
    }

    /// Index of the main node at time `t`, if `t` is one.
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let h = self.step();
        let x = t / h;
        let i = x.round();
        if !t.is_finite() || (x - i).abs() > 1e-7 || i < 0.0 || i as usize > self.n_steps {
            return Err(ForgeError::BoundsNotNodes(t));
        }
        Ok(i as usize)
    }
}

/// Which part of the lattice a [`SampledFunction`] lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    /// Nodes `0, h, …, T`.
    Main,
    /// Nodes `t_start, …, −h, 0`.
    History,
}

/// Values and time-derivative samples on one segment of a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    grid: TimeGrid,
    segment: Segment,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl SampledFunction {
    fn segment_len(grid: &TimeGrid, segment: Segment) -> usize {
        match segment {
            Segment::Main => grid.len(),
            Segment::History => grid.history_steps() + 1,
        }
    }

    pub fn segment_times(grid: &TimeGrid, segment: Segment) -> Vec<f64> {
        match segment {
            Segment::Main => grid.nodes(),
            Segment::History => grid.history_nodes(),
        }
    }

    /// Samples with explicit derivative channel. Lengths must match the segment.
    pub fn from_parts(
        grid: TimeGrid,
        segment: Segment,
        values: Vec<f64>,
        derivs: Vec<f64>,
    ) -> Result<Self> {
        let n = Self::segment_len(&grid, segment);
        if values.len() != n || derivs.len() != n {
            return Err(ForgeError::InvalidParameter(format!(
                "expected {n} samples, got {} values and {} derivatives",
                values.len(),
                derivs.len()
            )));
        }
        Ok(Self {
            grid,
            segment,
            values,
            derivs,
        })
    }

    /// Samples an analytic family and its analytic derivative.
    pub fn from_analytic(
        grid: TimeGrid,
        segment: Segment,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
    ) -> Self {
        let times = Self::segment_times(&grid, segment);
        Self {
            grid,
            segment,
            values: times.iter().map(|&t| f(t)).collect(),
            derivs: times.iter().map(|&t| df(t)).collect(),
        }
    }

    /// Tabulated samples; derivatives come from [`differentiate_path`] stencils.
    pub fn from_values(grid: TimeGrid, segment: Segment, values: Vec<f64>) -> Result<Self> {
        let n = Self::segment_len(&grid, segment);
        if values.len() != n {
            return Err(ForgeError::InvalidParameter(format!(
                "expected {n} samples, got {}",
                values.len()
            )));
        }
        let derivs = if n >= 3 {
            differentiate_uniform(&values, grid.step())?
        } else {
            vec![0.0; n]
        };
        Ok(Self {
            grid,
            segment,
            values,
            derivs,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn segment(&self) -> Segment {
        self.segment
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn derivs(&self) -> &[f64] {
        &self.derivs
    }

    pub fn times(&self) -> Vec<f64> {
        Self::segment_times(&self.grid, self.segment)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn index_of(&self, t: f64) -> Result<usize> {
        match self.segment {
            Segment::Main => self.grid.node_index(t),
            Segment::History => {
                let h = self.grid.step();
                let x = (t - self.grid.t_start()) / h;
                let i = x.round();
                if !t.is_finite()
                    || (x - i).abs() > 1e-7
                    || i < 0.0
                    || i as usize > self.grid.history_steps()
                {
                    return Err(ForgeError::BoundsNotNodes(t));
                }
                Ok(i as usize)
            }
        }
    }
}

/// Composite Simpson approximation of `∫ f dt` between two grid nodes.
///
/// Odd node spans use the 3/8 rule on the leftmost three panels so the
/// result stays exact for cubics; a single panel falls back to the trapezoid.
pub fn integrate(f: &SampledFunction, from: f64, to: f64) -> Result<f64> {
    if from > to {
        return Err(ForgeError::ReversedBounds { from, to });
    }
    let a = f.index_of(from)?;
    let b = f.index_of(to)?;
    Ok(integrate_samples(&f.values[a..=b], f.grid.step()))
}

/// Composite Simpson over equally spaced samples `values` with spacing `h`.
pub fn integrate_samples(values: &[f64], h: f64) -> f64 {
    let panels = values.len().saturating_sub(1);
    match panels {
        0 => 0.0,
        1 => 0.5 * h * (values[0] + values[1]),
        n if n % 2 == 0 => simpson_even(values, h),
        _ => {
            let head = 3.0 * h / 8.0 * (values[0] + 3.0 * values[1] + 3.0 * values[2] + values[3]);
            head + simpson_even(&values[3..], h)
        }
    }
}

fn simpson_even(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    if n == 0 {
        return 0.0;
    }
    debug_assert!(n.is_multiple_of(2));
    let mut odd = 0.0;
    let mut even = 0.0;
    for (i, v) in values.iter().enumerate().take(n).skip(1) {
        if i % 2 == 1 {
            odd += v;
        } else {
            even += v;
        }
    }
    h / 3.0 * (values[0] + values[n] + 4.0 * odd + 2.0 * even)
}

/// Node-wise time derivative of a path sampled on the main grid.
pub fn differentiate_path(values: &[f64], grid: &TimeGrid) -> Result<Vec<f64>> {
    differentiate_uniform(values, grid.step())
}

/// Central differences in the interior, second-order one-sided stencils at
/// both ends. Exact for quadratics up to rounding.
pub fn differentiate_uniform(values: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 3 {
        return Err(ForgeError::GridTooCoarse(n));
    }
    let inv = 1.0 / (2.0 * h);
    let mut out = Vec::with_capacity(n);
    out.push((-3.0 * values[0] + 4.0 * values[1] - values[2]) * inv);
    for i in 1..n - 1 {
        out.push((values[i + 1] - values[i - 1]) * inv);
    }
    out.push((3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) * inv);
    Ok(out)
}

/// Central-difference step used by [`partial_derivative`].
pub fn probe_step(scale: f64) -> f64 {
    f64::max(1e-6, 1e-6 * scale.abs())
}

/// Central difference `(f(at+h) − f(at−h)) / 2h`, `h = max(1e−6, 1e−6·|scale|)`.
/// `scale` defaults to `|at|`.
pub fn partial_derivative(
    mut f: impl FnMut(f64) -> f64,
    at: f64,
    scale: Option<f64>,
) -> Result<f64> {
    let h = probe_step(scale.unwrap_or(at));
    let hi = f(at + h);
    let lo = f(at - h);
    if !hi.is_finite() || !lo.is_finite() {
        return Err(ForgeError::NonFinite { at });
    }
    Ok((hi - lo) / (2.0 * h))
}
