//! JSON scenario files.
//!
//! The schema is strict: unknown keys are rejected, so a misspelled rate
//! never silently falls back to a default.
//!
//! ```json
//! {
//!   "grid": { "t_end": 10, "n_steps": 1000 },
//!   "valuation": { "growth_rate": 0.0 },
//!   "parameters": [
//!     { "name": "p", "forecast": { "family": "constant", "args": [0.25] } }
//!   ],
//!   "policy": { "toy_ss": { "c_in": 1, "c_out": 3 } },
//!   "perturbations": [ { "shape": "linear", "epsilon": 0.01 } ]
//! }
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::constructors::{
    from_generating_function, from_super_robust_spec, GeneratingFunction, SuperRobustSpec,
};
use crate::error::ForgeError;
use crate::numerics::{TimeGrid, DEFAULT_STEPS};
use crate::path::{build_generalized_path, GeneralizedParameterSpec, Kernel, ParameterPath};
use crate::policy::{CashflowPolicy, ValuationConfig};
use crate::robustness::{PerturbationFamily, PerturbationShape, Target};
use crate::toy_ss::ToySsParams;

/// A scenario file that failed to read, parse or resolve.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError(pub String);

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ScenarioError {}

impl From<ForgeError> for ScenarioError {
    fn from(e: ForgeError) -> Self {
        ScenarioError(e.to_string())
    }
}

type Parsed<T> = std::result::Result<T, ScenarioError>;

fn invalid<T>(msg: impl Into<String>) -> Parsed<T> {
    Err(ScenarioError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub grid: GridSection,
    #[serde(default)]
    pub valuation: ValuationSection,
    /// May be omitted for the toy policies, which then get `p = p*`.
    #[serde(default)]
    pub parameters: Vec<ParameterSection>,
    pub policy: PolicySection,
    #[serde(default)]
    pub perturbations: Vec<PerturbationSection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub t_end: f64,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub history_steps: usize,
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuationSection {
    #[serde(default)]
    pub growth_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelName {
    #[default]
    Identity,
    MovingAverage,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSection {
    pub name: String,
    #[serde(default)]
    pub kernel: KernelName,
    /// Window for `moving_average`, rate for `exponential`.
    pub kernel_arg: Option<f64>,
    pub forecast: ForecastSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForecastSection {
    /// `args = [value]`
    Constant { args: Vec<f64> },
    /// `args = [intercept, slope]`
    Linear { args: Vec<f64> },
    /// One value per main node; `history` runs from the history start to 0.
    Table {
        values: Vec<f64>,
        #[serde(default)]
        history: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySection {
    pub c_in: f64,
    pub c_out: f64,
}

/// `Q = a₀(t′) + Σ a_k q_k + Σ b_k q̇_k` with `a₀(t′) = coeff_const + Σ_j coeff_time[j]·t′^{j+1}`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearFormSection {
    #[serde(default)]
    pub coeff_const: f64,
    /// Keyed by parameter name; missing parameters get 0.
    #[serde(default)]
    pub coeff_q: BTreeMap<String, f64>,
    #[serde(default)]
    pub coeff_qdot: BTreeMap<String, f64>,
    #[serde(default)]
    pub coeff_time: Vec<f64>,
}

/// Built-in generating functions, summed over parameters. `a_k` is the
/// forecast `q_k(T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorForm {
    /// `L = q·(T − t′)`
    TaperedLinear,
    /// `L = (q − a)²·(1 + t′/T)`
    AnchoredSquare,
    /// `L = (q − a)³·e^{−t′/T}`
    DecayingCubic,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratingSection {
    pub form: GeneratorForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnsatzM {
    /// `M = Σ q_k`
    Linear,
    /// `M = Σ q_k²`
    Square,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperRobustSection {
    pub m: AnsatzM,
    /// Use the constant `C` that zeroes `V(T)`; otherwise `C = 0`.
    #[serde(default = "yes")]
    pub balanced: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySection {
    ToySs(ToySection),
    ToySsRobust(ToySection),
    LinearForm(LinearFormSection),
    Generating(GeneratingSection),
    SuperRobust(SuperRobustSection),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeName {
    Linear,
    Sinusoid,
    Bump,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSection {
    pub shape: ShapeName,
    pub epsilon: f64,
    pub omega: Option<f64>,
    /// Perturb only this parameter; all of them when omitted.
    pub parameter: Option<String>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Parsed<Self> {
        serde_json::from_str(text).map_err(|e| ScenarioError(format!("scenario parse error: {e}")))
    }

    pub fn load(path: &Path) -> Parsed<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// A perturbation with its target resolved to a parameter index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedPerturbation {
    pub family: PerturbationFamily,
    pub target: Target,
}

impl ResolvedPerturbation {
    /// Run label such as `linear@0.01` or `bump@0.1[p]`.
    pub fn label(&self, names: &[String]) -> String {
        let base = format!(
            "{}@{}",
            self.family.shape.label(),
            crate::cli::fmt_float(self.family.epsilon)
        );
        match self.target {
            Target::All => base,
            Target::Parameter(k) => format!("{base}[{}]", names[k]),
        }
    }
}

/// A scenario with every section turned into library objects.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub grid: TimeGrid,
    pub config: ValuationConfig,
    pub names: Vec<String>,
    pub forecasts: Vec<ParameterPath>,
    pub specs: Vec<GeneralizedParameterSpec>,
    /// Generalized forecast paths `q_k`.
    pub q_forecast: Vec<ParameterPath>,
    pub policy: CashflowPolicy,
    pub perturbations: Vec<ResolvedPerturbation>,
}

impl Scenario {
    pub fn load(path: &Path) -> Parsed<Self> {
        Self::resolve(ScenarioFile::load(path)?)
    }

    pub fn from_json(text: &str) -> Parsed<Self> {
        Self::resolve(ScenarioFile::from_json(text)?)
    }

    pub fn resolve(file: ScenarioFile) -> Parsed<Self> {
        let g = &file.grid;
        let grid = TimeGrid::new(g.t_end, g.n_steps, g.history_steps)?;
        let config = ValuationConfig::new(file.valuation.growth_rate)?;

        let mut params = file.parameters.clone();
        if params.is_empty() {
            match &file.policy {
                PolicySection::ToySs(t) | PolicySection::ToySsRobust(t) => {
                    params.push(ParameterSection {
                        name: "p".to_string(),
                        kernel: KernelName::Identity,
                        kernel_arg: None,
                        forecast: ForecastSection::Constant {
                            args: vec![t.c_in / (t.c_in + t.c_out)],
                        },
                    })
                }
                _ => return invalid("scenario needs at least one entry in \"parameters\""),
            }
        }

        let mut names: Vec<String> = Vec::new();
        let mut forecasts = Vec::new();
        let mut specs = Vec::new();
        for p in &params {
            if names.contains(&p.name) {
                return invalid(format!("duplicate parameter name \"{}\"", p.name));
            }
            names.push(p.name.clone());
            forecasts.push(forecast_path(&grid, p)?);
            specs.push(GeneralizedParameterSpec::new(kernel(p)?));
        }
        let q_forecast = forecasts
            .iter()
            .zip(&specs)
            .map(|(p, s)| build_generalized_path(p, s))
            .collect::<Result<Vec<_>, _>>()?;

        let policy = build_policy(&file.policy, &names, &grid, &config, &q_forecast)?;

        let mut perturbations = Vec::new();
        for p in &file.perturbations {
            if !p.epsilon.is_finite() {
                return invalid("perturbation epsilon must be finite");
            }
            let shape = match (p.shape, p.omega) {
                (ShapeName::Sinusoid, omega) => PerturbationShape::Sinusoid {
                    omega: omega.unwrap_or_else(|| PerturbationShape::default_omega(grid.t_end())),
                },
                (_, Some(_)) => return invalid("\"omega\" only applies to the sinusoid shape"),
                (ShapeName::Linear, None) => PerturbationShape::Linear,
                (ShapeName::Bump, None) => PerturbationShape::Bump,
            };
            let target = match &p.parameter {
                None => Target::All,
                Some(name) => Target::Parameter(resolve_name(&names, name)?),
            };
            perturbations.push(ResolvedPerturbation {
                family: PerturbationFamily::new(shape, p.epsilon),
                target,
            });
        }

        Ok(Self {
            file,
            grid,
            config,
            names,
            forecasts,
            specs,
            q_forecast,
            policy,
            perturbations,
        })
    }

    /// Toy parameters when the policy is one of the toy builtins.
    pub fn toy_params(&self) -> Option<ToySsParams> {
        match &self.file.policy {
            PolicySection::ToySs(t) | PolicySection::ToySsRobust(t) => Some(ToySsParams {
                c_in: t.c_in,
                c_out: t.c_out,
                t_end: self.grid.t_end(),
                rate: self.config.growth_rate(),
                epsilon: 0.0,
            }),
            _ => None,
        }
    }

    /// Sinusoid frequency from the first sinusoid perturbation, if any.
    pub fn sinusoid_omega(&self) -> Option<f64> {
        self.perturbations
            .iter()
            .find_map(|p| match p.family.shape {
                PerturbationShape::Sinusoid { omega } => Some(omega),
                _ => None,
            })
    }
}

fn resolve_name(names: &[String], name: &str) -> Parsed<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| ScenarioError(format!("unknown parameter name \"{name}\"")))
}

fn kernel(p: &ParameterSection) -> Parsed<Kernel> {
    match (p.kernel, p.kernel_arg) {
        (KernelName::Identity, None) => Ok(Kernel::Identity),
        (KernelName::Identity, Some(_)) => invalid(format!(
            "parameter \"{}\": identity kernel takes no kernel_arg",
            p.name
        )),
        (KernelName::MovingAverage, Some(window)) => Ok(Kernel::MovingAverage { window }),
        (KernelName::Exponential, Some(rate)) => Ok(Kernel::Exponential { rate }),
        (_, None) => invalid(format!("parameter \"{}\": kernel needs kernel_arg", p.name)),
    }
}

fn forecast_path(grid: &TimeGrid, p: &ParameterSection) -> Parsed<ParameterPath> {
    let arity = |args: &[f64], n: usize| -> Parsed<()> {
        if args.len() != n || args.iter().any(|a| !a.is_finite()) {
            return invalid(format!(
                "parameter \"{}\": forecast needs {n} finite args, got {:?}",
                p.name, args
            ));
        }
        Ok(())
    };
    match &p.forecast {
        ForecastSection::Constant { args } => {
            arity(args, 1)?;
            Ok(ParameterPath::constant(*grid, args[0]))
        }
        ForecastSection::Linear { args } => {
            arity(args, 2)?;
            Ok(ParameterPath::linear(*grid, args[0], args[1]))
        }
        ForecastSection::Table { values, history } => {
            if values.len() != grid.len() {
                return invalid(format!(
                    "parameter \"{}\": table needs {} values, got {}",
                    p.name,
                    grid.len(),
                    values.len()
                ));
            }
            Ok(ParameterPath::from_table(
                *grid,
                values.clone(),
                history.clone(),
            )?)
        }
    }
}

fn build_policy(
    section: &PolicySection,
    names: &[String],
    grid: &TimeGrid,
    config: &ValuationConfig,
    q_forecast: &[ParameterPath],
) -> Parsed<CashflowPolicy> {
    let n = names.len();
    let toy = |t: &ToySection| -> Parsed<ToySsParams> {
        if n != 1 {
            return invalid(format!("toy policies take exactly one parameter, got {n}"));
        }
        Ok(ToySsParams::new(
            t.c_in,
            t.c_out,
            grid.t_end(),
            config.growth_rate(),
            0.0,
        )?)
    };
    match section {
        PolicySection::ToySs(t) => Ok(toy(t)?.base_policy()),
        PolicySection::ToySsRobust(t) => Ok(toy(t)?.robust_policy_closed_form()),
        PolicySection::LinearForm(lf) => linear_form(lf, names),
        PolicySection::Generating(g) => {
            let anchor: Vec<f64> = q_forecast
                .iter()
                .map(|q| q.values()[q.values().len() - 1])
                .collect();
            let gen = generator(g.form, anchor, grid.t_end());
            Ok(from_generating_function(&gen, q_forecast)?
                .named(format!("generating:{:?}", g.form)))
        }
        PolicySection::SuperRobust(s) => {
            let kind = s.m;
            let m = move |q: &[f64], _t: f64| -> f64 {
                match kind {
                    AnsatzM::Linear => q.iter().sum(),
                    AnsatzM::Square => q.iter().map(|x| x * x).sum(),
                }
            };
            let spec = if s.balanced {
                SuperRobustSpec::balanced(m, q_forecast)?
            } else {
                SuperRobustSpec::new(m, |_| 0.0)
            };
            Ok(from_super_robust_spec(&spec, n, grid)?)
        }
    }
}

fn linear_form(lf: &LinearFormSection, names: &[String]) -> Parsed<CashflowPolicy> {
    let n = names.len();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for (name, v) in &lf.coeff_q {
        a[resolve_name(names, name)?] = *v;
    }
    for (name, v) in &lf.coeff_qdot {
        b[resolve_name(names, name)?] = *v;
    }
    let c0 = lf.coeff_const;
    let poly = lf.coeff_time.clone();
    let all = std::iter::once(c0)
        .chain(a.iter().copied())
        .chain(b.iter().copied())
        .chain(poly.iter().copied());
    if all.into_iter().any(|x| !x.is_finite()) {
        return invalid("linear_form coefficients must be finite");
    }
    let uses_derivatives = b.iter().any(|&x| x != 0.0);
    Ok(CashflowPolicy::new(n, uses_derivatives, move |q, qd, t| {
        let mut time = 0.0;
        for c in poly.iter().rev() {
            time = (time + c) * t;
        }
        let state: f64 = a.iter().zip(q).map(|(a, q)| a * q).sum();
        let rate: f64 = b.iter().zip(qd).map(|(b, qd)| b * qd).sum();
        c0 + time + state + rate
    })
    .named("linear_form"))
}

/// The built-in generating function `form` with analytic partials.
pub fn generator(form: GeneratorForm, anchor: Vec<f64>, t_end: f64) -> GeneratingFunction {
    let (a1, a2, a3) = (anchor.clone(), anchor.clone(), anchor);
    match form {
        GeneratorForm::TaperedLinear => {
            GeneratingFunction::new(move |q, t| q.iter().sum::<f64>() * (t_end - t))
                .with_dl_dq(move |_, t, _| t_end - t)
                .with_dl_dt(|q, _| -q.iter().sum::<f64>())
        }
        GeneratorForm::AnchoredSquare => GeneratingFunction::new(move |q, t| {
            let s: f64 = q.iter().zip(&a1).map(|(q, a)| (q - a).powi(2)).sum();
            s * (1.0 + t / t_end)
        })
        .with_dl_dq(move |q, t, k| 2.0 * (q[k] - a2[k]) * (1.0 + t / t_end))
        .with_dl_dt(move |q, _| {
            q.iter().zip(&a3).map(|(q, a)| (q - a).powi(2)).sum::<f64>() / t_end
        }),
        GeneratorForm::DecayingCubic => GeneratingFunction::new(move |q, t| {
            let s: f64 = q.iter().zip(&a1).map(|(q, a)| (q - a).powi(3)).sum();
            s * (-t / t_end).exp()
        })
        .with_dl_dq(move |q, t, k| 3.0 * (q[k] - a2[k]).powi(2) * (-t / t_end).exp())
        .with_dl_dt(move |q, t| {
            -q.iter().zip(&a3).map(|(q, a)| (q - a).powi(3)).sum::<f64>() * (-t / t_end).exp()
                / t_end
        }),
    }
}
