//! Python bindings for `policy-forge`.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use ::policy_forge as forge;
use ::policy_forge::{
    CashflowPolicy, ForgeError, GeneralizedParameterSpec, PerturbationFamily, PerturbationShape,
    ValuationConfig,
};

create_exception!(policy_forge, PolicyForgeError, PyException);

fn err(e: ForgeError) -> PyErr {
    PolicyForgeError::new_err(e.to_string())
}

fn shape_from(name: &str, omega: Option<f64>, t_end: f64) -> PyResult<PerturbationShape> {
    match (name, omega) {
        ("linear", None) => Ok(PerturbationShape::Linear),
        ("bump", None) => Ok(PerturbationShape::Bump),
        ("sinusoid", omega) => Ok(PerturbationShape::Sinusoid {
            omega: omega.unwrap_or_else(|| PerturbationShape::default_omega(t_end)),
        }),
        ("linear" | "bump", Some(_)) => Err(PyValueError::new_err(format!(
            "omega only applies to sinusoid, not {name}"
        ))),
        _ => Err(PyValueError::new_err(format!(
            "unknown perturbation shape: {name}"
        ))),
    }
}

fn to_py_json<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Uniform time grid on `[0, T]` with optional history nodes before 0.
#[pyclass(
    name = "TimeGrid",
    module = "policy_forge",
    frozen,
    skip_from_py_object
)]
#[derive(Clone, Copy)]
struct PyTimeGrid(forge::TimeGrid);

#[pymethods]
impl PyTimeGrid {
    #[new]
    #[pyo3(signature = (t_end, n_steps = 1000, history_steps = 0))]
    fn new(t_end: f64, n_steps: usize, history_steps: usize) -> PyResult<Self> {
        forge::TimeGrid::new(t_end, n_steps, history_steps)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn t_end(&self) -> f64 {
        self.0.t_end()
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.0.n_steps()
    }

    #[getter]
    fn history_steps(&self) -> usize {
        self.0.history_steps()
    }

    #[getter]
    fn step(&self) -> f64 {
        self.0.step()
    }

    fn nodes(&self) -> Vec<f64> {
        self.0.nodes()
    }

    fn __repr__(&self) -> String {
        format!(
            "TimeGrid(t_end={}, n_steps={}, history_steps={})",
            self.0.t_end(),
            self.0.n_steps(),
            self.0.history_steps()
        )
    }
}

/// Sampled parameter path with derivatives and history.
#[pyclass(
    name = "ParameterPath",
    module = "policy_forge",
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
struct PyParameterPath(forge::ParameterPath);

#[pymethods]
impl PyParameterPath {
    #[staticmethod]
    fn constant(grid: &PyTimeGrid, value: f64) -> Self {
        Self(forge::ParameterPath::constant(grid.0, value))
    }

    #[staticmethod]
    fn linear(grid: &PyTimeGrid, intercept: f64, slope: f64) -> Self {
        Self(forge::ParameterPath::linear(grid.0, intercept, slope))
    }

    /// Tabulated main-node values; derivatives come from finite differences.
    #[staticmethod]
    #[pyo3(signature = (grid, values, history = None))]
    fn from_table(
        grid: &PyTimeGrid,
        values: Vec<f64>,
        history: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        forge::ParameterPath::from_table(grid.0, values, history)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn grid(&self) -> PyTimeGrid {
        PyTimeGrid(*self.0.grid())
    }

    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn derivs(&self) -> Vec<f64> {
        self.0.derivs().to_vec()
    }

    /// The path plus `ε·shape(t′)`.
    #[pyo3(signature = (shape, epsilon, omega = None))]
    fn perturbed(&self, shape: &str, epsilon: f64, omega: Option<f64>) -> PyResult<Self> {
        let shape = shape_from(shape, omega, self.0.grid().t_end())?;
        Ok(Self(PerturbationFamily::new(shape, epsilon).apply(&self.0)))
    }

    fn __len__(&self) -> usize {
        self.0.values().len()
    }
}

/// Adjusted net cashflow `Q(q, q̇, t′)`.
#[pyclass(name = "Policy", module = "policy_forge", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPolicy(CashflowPolicy);

fn paths(forecasts: &[PyRef<'_, PyParameterPath>]) -> Vec<forge::ParameterPath> {
    forecasts.iter().map(|p| p.0.clone()).collect()
}

#[pymethods]
impl PyPolicy {
    /// Wraps `f(q, q_dot, t) -> float`. Exceptions and non-numbers evaluate to NaN.
    #[staticmethod]
    #[pyo3(signature = (f, n_params = 1, uses_derivatives = true))]
    fn from_callable(f: Py<PyAny>, n_params: usize, uses_derivatives: bool) -> PyResult<Self> {
        if n_params == 0 {
            return Err(PyValueError::new_err(
                "a policy needs at least one parameter",
            ));
        }
        let policy = CashflowPolicy::new(n_params, uses_derivatives, move |q, q_dot, t| {
            Python::attach(|py| {
                f.call1(py, (q.to_vec(), q_dot.to_vec(), t))
                    .and_then(|v| v.extract::<f64>(py))
                    .unwrap_or(f64::NAN)
            })
        });
        Ok(Self(policy.named("callable")))
    }

    /// `c + Σ a_k q_k + Σ b_k q̇_k + Σ_j d_j t′^{j+1}`.
    #[staticmethod]
    #[pyo3(signature = (coeff_q, coeff_const = 0.0, coeff_qdot = None, coeff_time = None))]
    fn linear_form(
        coeff_q: Vec<f64>,
        coeff_const: f64,
        coeff_qdot: Option<Vec<f64>>,
        coeff_time: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let n = coeff_q.len();
        if n == 0 {
            return Err(PyValueError::new_err("coeff_q must not be empty"));
        }
        let coeff_qdot = coeff_qdot.unwrap_or_else(|| vec![0.0; n]);
        if coeff_qdot.len() != n {
            return Err(PyValueError::new_err(
                "coeff_qdot must match coeff_q in length",
            ));
        }
        let coeff_time = coeff_time.unwrap_or_default();
        let uses_derivatives = coeff_qdot.iter().any(|&b| b != 0.0);
        let policy = CashflowPolicy::new(n, uses_derivatives, move |q, q_dot, t| {
            let mut v = coeff_const;
            for k in 0..n {
                v += coeff_q[k] * q[k] + coeff_qdot[k] * q_dot[k];
            }
            let mut power = t;
            for d in &coeff_time {
                v += d * power;
                power *= t;
            }
            v
        });
        Ok(Self(policy.named("linear_form")))
    }

    #[staticmethod]
    fn toy_ss(toy: &PyToySs) -> Self {
        Self(toy.0.base_policy())
    }

    #[staticmethod]
    fn toy_ss_robust(toy: &PyToySs) -> Self {
        Self(toy.0.robust_policy_closed_form())
    }

    #[getter]
    fn name(&self) -> &str {
        self.0.name()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.0.n_params()
    }

    #[getter]
    fn uses_derivatives(&self) -> bool {
        self.0.uses_derivatives()
    }

    fn evaluate(&self, q: Vec<f64>, q_dot: Vec<f64>, t: f64) -> PyResult<f64> {
        if q.len() != self.0.n_params() || q_dot.len() != self.0.n_params() {
            return Err(PyValueError::new_err(format!(
                "expected {} parameters",
                self.0.n_params()
            )));
        }
        Ok(self.0.evaluate(&q, &q_dot, t))
    }

    fn scaled(&self, alpha: f64) -> Self {
        Self(self.0.scaled(alpha))
    }

    fn cashflows(
        &self,
        py: Python<'_>,
        paths_q: Vec<PyRef<'_, PyParameterPath>>,
    ) -> PyResult<Vec<f64>> {
        let q = paths(&paths_q);
        py.detach(|| forge::policy::cashflow_series(&self.0, &q))
            .map_err(err)
    }

    fn terminal_value(
        &self,
        py: Python<'_>,
        paths_q: Vec<PyRef<'_, PyParameterPath>>,
    ) -> PyResult<f64> {
        let q = paths(&paths_q);
        py.detach(|| forge::terminal_value(&self.0, &q))
            .map_err(err)
    }

    /// `V(t)` under growth rate `rate`.
    #[pyo3(signature = (paths_q, t, rate = 0.0))]
    fn value(
        &self,
        py: Python<'_>,
        paths_q: Vec<PyRef<'_, PyParameterPath>>,
        t: f64,
        rate: f64,
    ) -> PyResult<f64> {
        let q = paths(&paths_q);
        let config = ValuationConfig::new(rate).map_err(err)?;
        py.detach(|| forge::policy_value(&self.0, &q, &config, t))
            .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Policy({:?}, n_params={})",
            self.0.name(),
            self.0.n_params()
        )
    }
}

/// Classifies `policy` against perturbations of identity-kernel forecasts.
///
/// `shapes` lists "linear", "sinusoid" and "bump" (default: all three).
/// Returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (policy, forecasts, rate = 0.0, shapes = None, omega = None))]
fn classify<'py>(
    py: Python<'py>,
    policy: &PyPolicy,
    forecasts: Vec<PyRef<'py, PyParameterPath>>,
    rate: f64,
    shapes: Option<Vec<String>>,
    omega: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let forecasts = paths(&forecasts);
    let Some(first) = forecasts.first() else {
        return Err(PyValueError::new_err("at least one forecast is required"));
    };
    let t_end = first.grid().t_end();
    let shapes = match shapes {
        None => PerturbationShape::defaults(t_end)
            .into_iter()
            .map(|s| match (s, omega) {
                (PerturbationShape::Sinusoid { .. }, Some(omega)) => {
                    PerturbationShape::Sinusoid { omega }
                }
                (s, _) => s,
            })
            .collect(),
        Some(names) => names
            .iter()
            .map(|n| shape_from(n, if n == "sinusoid" { omega } else { None }, t_end))
            .collect::<PyResult<Vec<_>>>()?,
    };
    let specs = vec![GeneralizedParameterSpec::identity(); forecasts.len()];
    let config = ValuationConfig::new(rate).map_err(err)?;
    let report = py
        .detach(|| forge::classify(&policy.0, &forecasts, &specs, &config, &shapes))
        .map_err(err)?;
    to_py_json(py, &report)
}

/// Returns `(extended_policy, a_profile, c_constant)`.
#[pyfunction]
fn robust_extension(
    py: Python<'_>,
    policy: &PyPolicy,
    forecast: &PyParameterPath,
) -> PyResult<(PyPolicy, Vec<f64>, f64)> {
    let (extended, data) = py
        .detach(|| forge::robust_extension(&policy.0, &forecast.0))
        .map_err(err)?;
    Ok((PyPolicy(extended), data.a_profile, data.c_constant))
}

/// Least-squares slope of `log|ΔV|` against `log ε`: `(slope, r2)`, or
/// `(inf, None)` when every response is numerically zero.
#[pyfunction]
fn fit_scaling_exponent(pairs: Vec<(f64, f64)>) -> PyResult<(f64, Option<f64>)> {
    let fit = forge::fit_scaling_exponent(&pairs).map_err(err)?;
    if fit.zero_response() {
        Ok((f64::INFINITY, None))
    } else {
        Ok((fit.slope, Some(fit.r2)))
    }
}

/// Toy Social Security model.
#[pyclass(name = "ToySs", module = "policy_forge", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyToySs(forge::ToySsParams);

#[pymethods]
impl PyToySs {
    #[new]
    #[pyo3(signature = (c_in = 1.0, c_out = 3.0, t_end = 10.0, rate = 0.0, epsilon = 0.01))]
    fn new(c_in: f64, c_out: f64, t_end: f64, rate: f64, epsilon: f64) -> PyResult<Self> {
        forge::ToySsParams::new(c_in, c_out, t_end, rate, epsilon)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn forecast_share(&self) -> f64 {
        self.0.forecast_share()
    }

    fn deficit(&self, t: f64) -> f64 {
        self.0.deficit_closed_form(t)
    }

    fn extension_coefficient(&self, t: f64) -> f64 {
        self.0.extension_coefficient(t)
    }

    fn forecast_path(&self, grid: &PyTimeGrid) -> PyParameterPath {
        PyParameterPath(self.0.forecast_path(grid.0))
    }

    fn observed_path(&self, grid: &PyTimeGrid) -> PyParameterPath {
        PyParameterPath(self.0.observed_path(grid.0))
    }

    /// `(leading, exact)` Pay-As-You-Go pay-in for a share error `δp`.
    fn pay_in_pg(&self, delta_p: f64) -> PyResult<(f64, f64)> {
        let pay = self.0.pay_in_pg(delta_p).map_err(err)?;
        Ok((pay.leading, pay.exact))
    }

    fn pay_in_robust(&self, delta_p_dot: f64, t: f64) -> f64 {
        self.0.pay_in_robust(delta_p_dot, t)
    }

    fn pay_in_remainder_bound(&self, delta_p: f64) -> f64 {
        self.0.pay_in_remainder_bound(delta_p)
    }
}

#[pymodule]
#[pyo3(name = "policy_forge")]
fn init_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PolicyForgeError", m.py().get_type::<PolicyForgeError>())?;
    m.add_class::<PyTimeGrid>()?;
    m.add_class::<PyParameterPath>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyToySs>()?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(robust_extension, m)?)?;
    m.add_function(wrap_pyfunction!(fit_scaling_exponent, m)?)?;
    Ok(())
}
