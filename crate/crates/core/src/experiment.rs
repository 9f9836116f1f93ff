//! Experiment runner: sweeps one variable across replicate seeds and methods,
//! producing one results row per (sweep value, seed, method).

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LoggedDataset;
use crate::dataset_io::{
    build_semi_synth_env, format_float, load_real, RealDataPaths, RealDatasetSpec, RealLoadOptions, SemiSynthConfig,
};
use crate::env::{build_env, generate_log, Environment, SynthConfig};
use crate::error::{Error, Result};
use crate::estimators::Objective;
use crate::features::IndicatorMode;
use crate::math::{mean, std_error};
use crate::metrics::{EvalSet, MetricsReport, DEFAULT_EVAL_CONTEXTS};
use crate::policy::{ActionDistribution, LoggingPolicy, PolicyParams};
use crate::qmodel::{default_lambda, QModel, QModelKind};
use crate::rng::replicate_seed;
use crate::trainer::{
    kappa_candidates_with_oracle, select_kappa, train_with_oracle, write_trace_csv, KappaProblem, TraceRow,
    TrainConfig, ValueOracle,
};

/// Contexts used for the true-value column of exported training traces.
const TRACE_ORACLE_CONTEXTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Logging,
    RegA,
    RegF,
    Ips,
    Dr,
    Pi,
    Lcpi,
    Pona,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Logging,
        Method::RegA,
        Method::RegF,
        Method::Ips,
        Method::Dr,
        Method::Pi,
        Method::Lcpi,
        Method::Pona,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Logging => "logging",
            Method::RegA => "reg_a",
            Method::RegF => "reg_f",
            Method::Ips => "ips",
            Method::Dr => "dr",
            Method::Pi => "pi",
            Method::Lcpi => "lcpi",
            Method::Pona => "pona",
        }
    }

    fn needs_qhat(self) -> bool {
        matches!(self, Method::RegF | Method::Dr | Method::Pona)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    N,
    NewActionFraction,
    Gamma,
    RhoLower,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::N => "n",
            SweepVariable::NewActionFraction => "new_action_fraction",
            SweepVariable::Gamma => "gamma",
            SweepVariable::RhoLower => "rho_lower",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiSynthSpec {
    /// Directory holding users.csv, items.csv and rewards.csv; relative paths
    /// resolve against the config file.
    pub data_dir: PathBuf,
    #[serde(default)]
    pub load: RealLoadOptions,
    #[serde(default)]
    pub env: SemiSynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Synthetic(SynthConfig),
    SemiSynthetic(SemiSynthSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub path: PathBuf,
    /// Record per-method wallclock time. Off by default so reruns are byte-identical.
    pub timing: bool,
    /// When set, one training-trace CSV per gradient-trained policy is written here.
    pub trace_dir: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("results.csv"),
            timing: false,
            trace_dir: None,
        }
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_seeds() -> usize {
    20
}

fn default_n() -> usize {
    2000
}

fn default_eval() -> usize {
    DEFAULT_EVAL_CONTEXTS
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Log size when the sweep is not over `n`.
    #[serde(default = "default_n")]
    pub n_samples: usize,
    #[serde(default = "default_eval")]
    pub n_eval_contexts: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Softmax temperature of the regression baselines.
    #[serde(default = "default_temperature")]
    pub regression_temperature: f64,
    /// Ridge penalty of the reward models; `1e-3 * n_train` when absent.
    #[serde(default)]
    pub ridge: Option<f64>,
    pub env: EnvSpec,
    pub sweep: Sweep,
    #[serde(default)]
    pub trainer: TrainConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    /// Parses and validates a config file; relative paths inside it resolve
    /// against the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::parse(path, line, e.message().to_string())
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let EnvSpec::SemiSynthetic(s) = &mut cfg.env {
            if s.data_dir.is_relative() {
                s.data_dir = base.join(&s.data_dir);
            }
        }
        if let Some(dir) = &mut cfg.output.trace_dir {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        if cfg.output.path.is_relative() {
            cfg.output.path = base.join(&cfg.output.path);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::config("seeds must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods must not be empty"));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::config("methods contain duplicates"));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::config("sweep values must not be empty"));
        }
        if self.sweep.values.iter().any(|v| v.is_nan()) {
            return Err(Error::config("sweep values must not be NaN"));
        }
        if self.n_eval_contexts == 0 {
            return Err(Error::config("n_eval_contexts must be at least 1"));
        }
        if !(self.regression_temperature > 0.0 && self.regression_temperature.is_finite()) {
            return Err(Error::config("regression_temperature must be positive and finite"));
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::config("ridge must be finite and >= 0"));
            }
        }
        self.trainer.validate()?;
        match self.sweep.variable {
            SweepVariable::N => {
                if self
                    .sweep
                    .values
                    .iter()
                    .any(|&v| !(v >= 2.0 && v.fract() == 0.0 && v.is_finite()))
                {
                    return Err(Error::config("n sweep values must be whole numbers >= 2"));
                }
            }
            SweepVariable::Gamma => {
                if matches!(self.env, EnvSpec::SemiSynthetic(_)) {
                    return Err(Error::config("a gamma sweep needs the synthetic environment"));
                }
            }
            SweepVariable::RhoLower => {
                if self.sweep.values.iter().any(|&v| v > self.trainer.rho_upper) {
                    return Err(Error::config("every rho_lower value must be <= trainer.rho_upper"));
                }
            }
            SweepVariable::NewActionFraction => {}
        }
        if self.n_samples < 2 && self.sweep.variable != SweepVariable::N {
            return Err(Error::config("n_samples must be at least 2"));
        }
        Ok(())
    }

    fn methods_in_order(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.sort();
        m
    }
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_name: &'static str,
    pub sweep_value: f64,
    pub seed: u64,
    pub method: Method,
    pub kappa: Option<f64>,
    pub report: Option<MetricsReport>,
    pub feasible: Option<bool>,
    pub wallclock_ms: Option<f64>,
    pub error: Option<String>,
}

pub const RESULT_COLUMNS: [&str; 16] = [
    "sweep_name",
    "sweep_value",
    "seed",
    "method",
    "kappa",
    "overall_value",
    "norm_overall",
    "value_per_existing",
    "norm_existing",
    "value_per_new",
    "norm_new",
    "new_action_mass",
    "existing_action_mass",
    "feasible",
    "wallclock_ms",
    "error",
];

pub const NULL: &str = "null";

fn opt_float(v: Option<f64>) -> String {
    v.map_or_else(|| NULL.to_string(), format_float)
}

impl ResultRow {
    fn cells(&self) -> Vec<String> {
        let r = self.report.as_ref();
        vec![
            self.sweep_name.to_string(),
            self.sweep_value.to_string(),
            self.seed.to_string(),
            self.method.to_string(),
            opt_float(self.kappa),
            opt_float(r.map(|r| r.overall_value)),
            opt_float(r.and_then(|r| r.norm_overall)),
            opt_float(r.and_then(|r| r.value_per_existing)),
            opt_float(r.and_then(|r| r.norm_existing)),
            opt_float(r.and_then(|r| r.value_per_new)),
            opt_float(r.and_then(|r| r.norm_new)),
            opt_float(r.map(|r| r.new_action_mass)),
            opt_float(r.map(|r| r.existing_action_mass)),
            self.feasible.map_or_else(|| NULL.to_string(), |b| b.to_string()),
            opt_float(self.wallclock_ms),
            self.error.clone().unwrap_or_else(|| NULL.to_string()),
        ]
    }
}

/// Sorts rows into the canonical order used for the CSV.
pub fn canonical_sort(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        a.sweep_value
            .total_cmp(&b.sweep_value)
            .then(a.seed.cmp(&b.seed))
            .then(a.method.cmp(&b.method))
    });
}

pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let label = Path::new("results");
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)
        .map_err(|e| crate::dataset_io::csv_error(label, e))?;
    for row in rows {
        w.write_record(row.cells())
            .map_err(|e| crate::dataset_io::csv_error(label, e))?;
    }
    w.flush().map_err(|e| Error::io(label, e))
}

pub fn write_results_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_results(rows, std::io::BufWriter::new(file))
}

/// Across-seed mean and standard error of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl Stat {
    fn of(xs: &[f64]) -> Option<Self> {
        (!xs.is_empty()).then(|| Self {
            mean: mean(xs),
            std_error: std_error(xs),
            count: xs.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub norm_overall: Option<Stat>,
    pub new_action_mass: Option<Stat>,
    pub norm_new: Option<Stat>,
    pub errors: usize,
}

/// Per (sweep value, method) statistics over seeds; error rows are counted, not averaged.
pub fn summarize(rows: &[ResultRow]) -> BTreeMap<(u64, Method), Summary> {
    let mut groups: BTreeMap<(u64, Method), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((sweep_key(r.sweep_value), r.method)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(k, rs)| {
            let col = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Vec<f64> {
                rs.iter().filter_map(|r| r.report.as_ref().and_then(f)).collect()
            };
            let summary = Summary {
                norm_overall: Stat::of(&col(&|r| r.norm_overall)),
                new_action_mass: Stat::of(&col(&|r| Some(r.new_action_mass))),
                norm_new: Stat::of(&col(&|r| r.norm_new)),
                errors: rs.iter().filter(|r| r.error.is_some()).count(),
            };
            (k, summary)
        })
        .collect()
}

/// Order-preserving key for a sweep value, usable in ordered maps.
pub fn sweep_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

/// Inverse of `sweep_key`.
pub fn sweep_value(key: u64) -> f64 {
    if key >> 63 == 1 {
        f64::from_bits(key & !(1 << 63))
    } else {
        f64::from_bits(!key)
    }
}

/// Loaded once and shared by every job.
enum Source {
    Synthetic(SynthConfig),
    Semi(Arc<RealDatasetSpec>, SemiSynthConfig),
}

struct Job {
    /// Sweep values this job reports; several only for a rho sweep.
    values: Vec<f64>,
    seed: u64,
}

pub struct Runner {
    config: ExperimentConfig,
    source: Source,
}

impl Runner {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let source = match &config.env {
            EnvSpec::Synthetic(c) => Source::Synthetic(c.clone()),
            EnvSpec::SemiSynthetic(s) => {
                let spec = load_real(&RealDataPaths::in_dir(&s.data_dir), &s.load)?;
                Source::Semi(Arc::new(spec), s.env.clone())
            }
        };
        Ok(Self { config, source })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    fn jobs(&self) -> Vec<Job> {
        let seeds = (0..self.config.seeds as u64).map(|i| replicate_seed(self.config.base_seed, i));
        match self.config.sweep.variable {
            SweepVariable::RhoLower => seeds
                .map(|seed| Job {
                    values: self.config.sweep.values.clone(),
                    seed,
                })
                .collect(),
            _ => self
                .config
                .sweep
                .values
                .iter()
                .flat_map(|&v| seeds.clone().map(move |seed| Job { values: vec![v], seed }))
                .collect(),
        }
    }

    /// Runs every job on the current rayon pool and returns canonically sorted rows.
    pub fn run(&self) -> Vec<ResultRow> {
        let jobs = self.jobs();
        log::info!(
            "{}: {} jobs over {} seeds",
            if self.config.name.is_empty() {
                "experiment"
            } else {
                &self.config.name
            },
            jobs.len(),
            self.config.seeds
        );
        let mut rows: Vec<ResultRow> = jobs.par_iter().flat_map_iter(|job| self.run_job(job)).collect();
        canonical_sort(&mut rows);
        rows
    }

    /// Runs and writes the configured results file.
    pub fn run_to_file(&self) -> Result<Vec<ResultRow>> {
        let rows = self.run();
        write_results_csv(&rows, &self.config.output.path)?;
        Ok(rows)
    }

    fn build_env(&self, value: f64, seed: u64) -> Result<Box<dyn Environment>> {
        let var = self.config.sweep.variable;
        match &self.source {
            Source::Synthetic(base) => {
                let mut c = base.clone();
                c.seed = seed;
                match var {
                    SweepVariable::NewActionFraction => c.new_action_fraction = value,
                    SweepVariable::Gamma => c.gamma = value,
                    SweepVariable::N | SweepVariable::RhoLower => {}
                }
                Ok(Box::new(build_env(&c)?))
            }
            Source::Semi(spec, base) => {
                let mut c = base.clone();
                c.seed = seed;
                if var == SweepVariable::NewActionFraction {
                    c.new_action_fraction = value;
                }
                Ok(Box::new(build_semi_synth_env(spec, &c)?))
            }
        }
    }

    fn run_job(&self, job: &Job) -> Vec<ResultRow> {
        let cfg = &self.config;
        let methods = cfg.methods_in_order();
        let row = |value: f64, method: Method| ResultRow {
            sweep_name: cfg.sweep.variable.name(),
            sweep_value: value,
            seed: job.seed,
            method,
            kappa: None,
            report: None,
            feasible: None,
            wallclock_ms: None,
            error: None,
        };
        let setup = match Setup::new(self, job) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("seed {} at {:?}: {e}", job.seed, job.values);
                let message = e.to_string();
                return job
                    .values
                    .iter()
                    .flat_map(|&v| methods.iter().map(move |&m| (v, m)))
                    .map(|(v, m)| ResultRow {
                        error: Some(message.clone()),
                        ..row(v, m)
                    })
                    .collect();
            }
        };
        let mut out = Vec::new();
        for &method in &methods {
            let start = Instant::now();
            let result = setup.method(method, &job.values);
            let ms = cfg.output.timing.then(|| start.elapsed().as_secs_f64() * 1e3);
            match result {
                Ok(outcomes) => {
                    for (&v, o) in job.values.iter().zip(outcomes) {
                        out.push(ResultRow {
                            kappa: o.kappa,
                            report: Some(o.report),
                            feasible: o.feasible,
                            wallclock_ms: ms,
                            ..row(v, method)
                        });
                    }
                }
                Err(e) => {
                    log::warn!("seed {} method {method}: {e}", job.seed);
                    out.extend(job.values.iter().map(|&v| ResultRow {
                        error: Some(e.to_string()),
                        ..row(v, method)
                    }));
                }
            }
        }
        out
    }
}

struct Outcome {
    kappa: Option<f64>,
    feasible: Option<bool>,
    report: MetricsReport,
}

/// Everything one job shares across methods.
struct Setup<'r> {
    runner: &'r Runner,
    seed: u64,
    env: Box<dyn Environment>,
    train: LoggedDataset,
    validation: LoggedDataset,
    eval: EvalSet,
    oracle: Option<EvalSet>,
    qhat: Option<QModel>,
    lambda: f64,
    trainer: TrainConfig,
    label: String,
}

impl<'r> Setup<'r> {
    fn new(runner: &'r Runner, job: &Job) -> Result<Self> {
        let cfg = &runner.config;
        let value = job.values[0];
        let env = runner.build_env(value, job.seed)?;
        let n = match cfg.sweep.variable {
            SweepVariable::N => value as usize,
            _ => cfg.n_samples,
        };
        let data = generate_log(env.as_ref(), n, job.seed)?;
        let (train, validation) = data.split(cfg.trainer.validation_fraction, job.seed)?;
        let eval = EvalSet::new(env.as_ref(), cfg.n_eval_contexts, job.seed)?;
        let oracle = match cfg.output.trace_dir {
            Some(_) => {
                let k = TRACE_ORACLE_CONTEXTS.min(eval.len());
                Some(EvalSet::from_contexts(env.as_ref(), eval.contexts()[..k].to_vec())?)
            }
            None => None,
        };
        let lambda = cfg.ridge.unwrap_or_else(|| default_lambda(train.len()));
        let space = Arc::new(env.space().clone());
        let qhat = if cfg.methods.iter().any(|m| m.needs_qhat()) {
            Some(QModel::fit(
                &train,
                space,
                env.partition(),
                QModelKind::ActionFeature,
                lambda,
            )?)
        } else {
            None
        };
        let trainer = TrainConfig {
            seed: job.seed,
            ..cfg.trainer.clone()
        };
        let label = match cfg.sweep.variable {
            SweepVariable::RhoLower => format!("seed{}", job.seed),
            v => format!("{}{}_seed{}", v.name(), value, job.seed),
        };
        Ok(Self {
            runner,
            seed: job.seed,
            env,
            train,
            validation,
            eval,
            oracle,
            qhat,
            lambda,
            trainer,
            label,
        })
    }

    fn qhat(&self) -> Result<&QModel> {
        self.qhat
            .as_ref()
            .ok_or_else(|| Error::invalid("reward model was not fitted"))
    }

    fn init(&self, existing_only: bool) -> Result<PolicyParams> {
        let p = PolicyParams::zeros(Arc::new(self.env.space().clone()), self.env.context_len());
        if existing_only {
            p.with_support(self.env.partition().existing_mask())
        } else {
            Ok(p)
        }
    }

    fn oracle_fn(&self) -> Option<impl Fn(&PolicyParams) -> Result<f64> + '_> {
        self.oracle.as_ref().map(|o| move |p: &PolicyParams| o.value(p))
    }

    fn save_trace(&self, name: &str, trace: &[TraceRow]) -> Result<()> {
        if let Some(dir) = &self.runner.config.output.trace_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_trace_csv(trace, dir.join(format!("{}_{name}.csv", self.label)))?;
        }
        Ok(())
    }

    fn trained(&self, name: &str, objective: &Objective, existing_only: bool) -> Result<PolicyParams> {
        let oracle = self.oracle_fn();
        let oracle_ref: Option<ValueOracle<'_>> = oracle.as_ref().map(|f| f as ValueOracle<'_>);
        let outcome = train_with_oracle(objective, self.init(existing_only)?, &self.trainer, oracle_ref)?;
        self.save_trace(name, &outcome.trace)?;
        Ok(outcome.policy)
    }

    fn report(&self, policy: &dyn ActionDistribution) -> Result<MetricsReport> {
        self.eval.evaluate(policy)
    }

    /// Evaluates `method`, one outcome per sweep value of the job.
    fn method(&self, method: Method, values: &[f64]) -> Result<Vec<Outcome>> {
        let part = self.env.partition();
        let space = Arc::new(self.env.space().clone());
        let logging = LoggingPolicy(self.env.as_ref());
        let temperature = self.runner.config.regression_temperature;
        let single = |report: MetricsReport| {
            Ok(values
                .iter()
                .map(|_| Outcome {
                    kappa: None,
                    feasible: None,
                    report,
                })
                .collect())
        };
        match method {
            Method::Logging => single(self.report(&logging)?),
            Method::RegA => {
                let m = QModel::fit(&self.train, space, part, QModelKind::ActionId, self.lambda)?;
                single(self.report(&m.to_policy(temperature)?)?)
            }
            Method::RegF => single(self.report(&self.qhat()?.to_policy(temperature)?)?),
            Method::Ips => {
                let p = self.trained("ips", &Objective::ips(&self.train)?, true)?;
                single(self.report(&p)?)
            }
            Method::Dr => {
                let p = self.trained("dr", &Objective::dr(&self.train, self.qhat()?, part)?, true)?;
                single(self.report(&p)?)
            }
            Method::Pi | Method::Lcpi => {
                let mode = if method == Method::Pi {
                    IndicatorMode::Pi
                } else {
                    IndicatorMode::Lcpi
                };
                let objective = Objective::pseudoinverse(&self.train, &space, mode, &logging)?;
                let p = self.trained(method.name(), &objective, false)?;
                single(self.report(&p)?)
            }
            Method::Pona => {
                let problem = KappaProblem {
                    train: &self.train,
                    validation: &self.validation,
                    partition: part,
                    logging: &logging,
                    qhat: self.qhat()?,
                    init: self.init(false)?,
                };
                let oracle = self.oracle_fn();
                let oracle_ref: Option<ValueOracle<'_>> = oracle.as_ref().map(|f| f as ValueOracle<'_>);
                let candidates = kappa_candidates_with_oracle(&problem, &self.trainer, oracle_ref)?;
                for c in &candidates {
                    self.save_trace(&format!("pona_kappa{}", c.kappa), &c.trace)?;
                }
                let rho_sweep = self.runner.config.sweep.variable == SweepVariable::RhoLower;
                let mut reports: BTreeMap<usize, MetricsReport> = BTreeMap::new();
                values
                    .iter()
                    .map(|&v| {
                        let lower = if rho_sweep { v } else { self.trainer.rho_lower };
                        let sel = select_kappa(&candidates, lower, self.trainer.rho_upper)?;
                        if !sel.feasible {
                            log::warn!(
                                "seed {}: no kappa meets rho_lower {lower}; using closest kappa {}",
                                self.seed,
                                sel.kappa
                            );
                        }
                        let report = match reports.get(&sel.index) {
                            Some(r) => *r,
                            None => {
                                let r = self.report(&candidates[sel.index].policy)?;
                                reports.insert(sel.index, r);
                                r
                            }
                        };
                        Ok(Outcome {
                            kappa: Some(sel.kappa),
                            feasible: Some(sel.feasible),
                            report,
                        })
                    })
                    .collect()
            }
        }
    }
}
