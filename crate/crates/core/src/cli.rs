//! The `policy-forge` command line.
//!
//! ```text
//! policy-forge simulate --scenario s.json --out dir   # simulate.csv
//! policy-forge check    --scenario s.json --out dir   # check.json
//! policy-forge extend   --scenario s.json --out dir   # extend_a.csv, extend.json
//! policy-forge toy-ss   --out dir [--c-in 1 --c-out 3 --t-end 10 --rate 0 --epsilon 0.01]
//! ```
//!
//! Exit codes: 0 success, 2 parse error, 3 numerical error, 4 precondition
//! violation. Floats are written with 12 significant digits.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{Map, Value};

use crate::constructors::robust_extension;
use crate::error::ForgeError;
use crate::numerics::{TimeGrid, DEFAULT_STEPS};
use crate::path::{build_generalized_path, ParameterPath};
use crate::policy::{cashflow_series, running_from_cashflows, running_value};
use crate::robustness::{classify, PerturbationShape, RobustnessReport, Target, Verdict};
use crate::scenario::{ResolvedPerturbation, Scenario, ScenarioError};
use crate::toy_ss::ToySsParams;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_PRECONDITION: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Parse(String),
    Forge(ForgeError),
    Io(String),
    /// The extended policy did not pass its own robustness check.
    ExtensionNotRobust(Verdict),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => EXIT_PARSE,
            CliError::Forge(e) => match e {
                ForgeError::NonFinite { .. }
                | ForgeError::PolicyNonFinite { .. }
                | ForgeError::ResidualNonFinite { .. } => EXIT_NUMERICAL,
                _ => EXIT_PRECONDITION,
            },
            CliError::Io(_) => EXIT_PRECONDITION,
            CliError::ExtensionNotRobust(_) => EXIT_NUMERICAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Parse(m) | CliError::Io(m) => f.write_str(m),
            CliError::Forge(e) => write!(f, "{e}"),
            CliError::ExtensionNotRobust(v) => {
                write!(f, "extended policy failed its robustness check: {v}")
            }
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Parse(e.0)
    }
}

impl From<ForgeError> for CliError {
    fn from(e: ForgeError) -> Self {
        CliError::Forge(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "policy-forge",
    version,
    about = "Value policy cashflows and test them for forecast-error robustness"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Value the policy on the forecast and on every listed perturbation.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify the policy as non-robust, robust or super-robust.
    Check {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the robust extension of a one-parameter policy and re-check it.
    Extend {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Toy Social Security comparison. Flags override the scenario.
    ToySs {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        c_in: Option<f64>,
        #[arg(long)]
        c_out: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        n_steps: Option<usize>,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("policy-forge: error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> CliResult<Vec<PathBuf>> {
    match command {
        Command::Simulate { scenario, out } => cmd_simulate(scenario, out),
        Command::Check { scenario, out } => cmd_check(scenario, out),
        Command::Extend { scenario, out } => cmd_extend(scenario, out),
        Command::ToySs {
            scenario,
            out,
            c_in,
            c_out,
            t_end,
            rate,
            epsilon,
            n_steps,
        } => {
            let (params, steps) = toy_arguments(
                scenario.as_deref(),
                *c_in,
                *c_out,
                *t_end,
                *rate,
                *epsilon,
                *n_steps,
            )?;
            cmd_toy_ss(&params, steps, out)
        }
    }
}

/// `x` with 12 significant digits, `%g` style: fixed notation for exponents
/// in `[−4, 12)`, scientific otherwise, trailing zeros dropped.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..12).contains(&exp) {
        trim_zeros(format!("{:.*}", (11 - exp) as usize, x))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!(
            "{}e{sign}{:02}",
            trim_zeros(mantissa.to_string()),
            exp.abs()
        )
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// `x` rounded to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if x.is_finite() {
        fmt_float(x).parse().expect("formatted float parses")
    } else {
        x
    }
}

fn round_value(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round12(n.as_f64().expect("f64 number"));
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(round_value).collect()),
        Value::Object(map) => {
            Value::Object(map.into_iter().map(|(k, v)| (k, round_value(v))).collect())
        }
        other => other,
    }
}

/// Pretty JSON with sorted keys and every float rounded to 12 significant digits.
pub fn to_json(value: Value) -> String {
    let mut s = serde_json::to_string_pretty(&round_value(value)).expect("JSON values serialize");
    s.push('\n');
    s
}

fn report_json(report: &RobustnessReport, policy: &str) -> Value {
    let mut v = serde_json::to_value(report).expect("report serializes");
    if let Value::Object(map) = &mut v {
        map.insert("policy".to_string(), Value::String(policy.to_string()));
    }
    v
}

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn csv_line(out: &mut String, fields: impl IntoIterator<Item = String>) {
    let line: Vec<String> = fields.into_iter().collect();
    out.push_str(&line.join(","));
    out.push('\n');
}

fn observed(scenario: &Scenario, pert: &ResolvedPerturbation) -> CliResult<Vec<ParameterPath>> {
    let raw: Vec<ParameterPath> = scenario
        .forecasts
        .iter()
        .enumerate()
        .map(|(k, p)| match pert.target {
            Target::Parameter(j) if j != k => p.clone(),
            _ => pert.family.apply(p),
        })
        .collect();
    Ok(raw
        .iter()
        .zip(&scenario.specs)
        .map(|(p, s)| build_generalized_path(p, s))
        .collect::<Result<Vec<_>, _>>()?)
}

pub fn cmd_simulate(scenario_path: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    let scenario = Scenario::load(scenario_path)?;
    let mut runs = vec![("forecast".to_string(), scenario.q_forecast.clone())];
    for p in &scenario.perturbations {
        runs.push((p.label(&scenario.names), observed(&scenario, p)?));
    }

    let mut csv = String::new();
    let header = ["run".to_string(), "t".to_string()]
        .into_iter()
        .chain(scenario.names.iter().map(|n| format!("q_{n}")))
        .chain(scenario.names.iter().map(|n| format!("qdot_{n}")))
        .chain(["Q".to_string(), "V_running".to_string()]);
    csv_line(&mut csv, header);
    for (label, q) in &runs {
        let cash = cashflow_series(&scenario.policy, q)?;
        let running = running_from_cashflows(&cash, &scenario.grid, &scenario.config);
        for (i, t) in scenario.grid.nodes().into_iter().enumerate() {
            let row = [label.clone(), fmt_float(t)]
                .into_iter()
                .chain(q.iter().map(|p| fmt_float(p.values()[i])))
                .chain(q.iter().map(|p| fmt_float(p.derivs()[i])))
                .chain([fmt_float(cash[i]), fmt_float(running[i])]);
            csv_line(&mut csv, row);
        }
    }
    Ok(vec![write_file(out, "simulate.csv", &csv)?])
}

fn check_shapes(scenario: &Scenario) -> Vec<PerturbationShape> {
    let mut shapes = PerturbationShape::defaults(scenario.grid.t_end());
    if let Some(omega) = scenario.sinusoid_omega() {
        shapes[1] = PerturbationShape::Sinusoid { omega };
    }
    shapes
}

pub fn cmd_check(scenario_path: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    let scenario = Scenario::load(scenario_path)?;
    let report = classify(
        &scenario.policy,
        &scenario.forecasts,
        &scenario.specs,
        &scenario.config,
        &check_shapes(&scenario),
    )?;
    let json = to_json(report_json(&report, scenario.policy.name()));
    Ok(vec![write_file(out, "check.json", &json)?])
}

pub fn cmd_extend(scenario_path: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    let scenario = Scenario::load(scenario_path)?;
    let (extended, ext) = robust_extension(&scenario.policy, &scenario.q_forecast[0])?;
    let extended = extended.named(format!("{}+extension", scenario.policy.name()));
    let report = classify(
        &extended,
        &scenario.forecasts,
        &scenario.specs,
        &scenario.config,
        &check_shapes(&scenario),
    )?;

    let mut csv = String::new();
    csv_line(&mut csv, ["t", "A", "C"].map(String::from));
    for (t, a) in scenario.grid.nodes().into_iter().zip(&ext.a_profile) {
        csv_line(
            &mut csv,
            [fmt_float(t), fmt_float(*a), fmt_float(ext.c_constant)],
        );
    }
    let mut block = Map::new();
    block.insert(
        "base_policy".to_string(),
        Value::String(scenario.policy.name().to_string()),
    );
    block.insert("c_constant".to_string(), ext.c_constant.into());
    block.insert("a_start".to_string(), ext.a_profile[0].into());
    block.insert(
        "a_end".to_string(),
        ext.a_profile[ext.a_profile.len() - 1].into(),
    );
    block.insert(
        "verification".to_string(),
        report_json(&report, extended.name()),
    );

    let files = vec![
        write_file(out, "extend_a.csv", &csv)?,
        write_file(out, "extend.json", &to_json(Value::Object(block)))?,
    ];
    if !report.verdict.is_robust() {
        return Err(CliError::ExtensionNotRobust(report.verdict));
    }
    Ok(files)
}

/// Toy parameters from flags, then the scenario, then defaults.
pub fn toy_arguments(
    scenario: Option<&Path>,
    c_in: Option<f64>,
    c_out: Option<f64>,
    t_end: Option<f64>,
    rate: Option<f64>,
    epsilon: Option<f64>,
    n_steps: Option<usize>,
) -> CliResult<(ToySsParams, usize)> {
    let mut params = ToySsParams::default();
    let mut steps = DEFAULT_STEPS;
    if let Some(path) = scenario {
        let s = Scenario::load(path)?;
        params = s.toy_params().ok_or_else(|| {
            CliError::Parse("toy-ss scenario must use a toy_ss or toy_ss_robust policy".to_string())
        })?;
        params.epsilon = s
            .perturbations
            .iter()
            .find(|p| p.family.shape == PerturbationShape::Linear)
            .map_or(ToySsParams::default().epsilon, |p| p.family.epsilon);
        steps = s.grid.n_steps();
    }
    params.c_in = c_in.unwrap_or(params.c_in);
    params.c_out = c_out.unwrap_or(params.c_out);
    params.t_end = t_end.unwrap_or(params.t_end);
    params.rate = rate.unwrap_or(params.rate);
    params.epsilon = epsilon.unwrap_or(params.epsilon);
    steps = n_steps.unwrap_or(steps);
    params.validate()?;
    Ok((params, steps))
}

pub fn cmd_toy_ss(params: &ToySsParams, n_steps: usize, out: &Path) -> CliResult<Vec<PathBuf>> {
    params.validate()?;
    let grid = TimeGrid::new(params.t_end, n_steps, 0)?;
    let config = crate::policy::ValuationConfig::new(params.rate)?;
    let forecast = params.forecast_path(grid);
    let observed = params.observed_path(grid);
    let v_base = running_value(
        &params.base_policy(),
        std::slice::from_ref(&observed),
        &config,
    )?;
    let v_robust = running_value(
        &params.robust_policy_closed_form(),
        std::slice::from_ref(&observed),
        &config,
    )?;

    let mut csv = String::new();
    csv_line(
        &mut csv,
        [
            "t",
            "p_forecast",
            "p_observed",
            "D_PG_leading",
            "D_PG_exact",
            "D_R",
            "V_base_running",
            "V_robust_running",
        ]
        .map(String::from),
    );
    for (i, t) in grid.nodes().into_iter().enumerate() {
        let delta = observed.values()[i] - forecast.values()[i];
        let pg = params.pay_in_pg(delta)?;
        let d_r = params.pay_in_robust(observed.derivs()[i] - forecast.derivs()[i], t);
        let row = [
            t,
            forecast.values()[i],
            observed.values()[i],
            pg.leading,
            pg.exact,
            d_r,
            v_base[i],
            v_robust[i],
        ];
        csv_line(&mut csv, row.map(fmt_float));
    }
    Ok(vec![write_file(out, "toy_ss.csv", &csv)?])
}
