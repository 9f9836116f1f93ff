//! Gradient-ascent training, off-policy value estimates on held-out data and
//! constrained selection of the PONA mixing weight.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{ActionPartition, LoggedDataset};
use crate::dataset_io::format_float;
use crate::error::{Error, Result};
use crate::estimators::Objective;
use crate::policy::{ActionDistribution, PolicyParams};
use crate::qmodel::QModel;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Plain,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rows per step; `None` uses the full training split.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub kappa_grid: Vec<f64>,
    pub rho_lower: f64,
    pub rho_upper: f64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            iterations: 200,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: None,
            seed: 0,
            kappa_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            rho_lower: f64::NEG_INFINITY,
            rho_upper: f64::INFINITY,
            validation_fraction: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("adam decay rates must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("adam epsilon must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.kappa_grid.is_empty() {
            return Err(Error::config("kappa_grid must not be empty"));
        }
        if self.kappa_grid.iter().any(|k| !(0.0..=1.0).contains(k)) {
            return Err(Error::config("kappa_grid values must lie in [0, 1]"));
        }
        if self.kappa_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("kappa_grid must be strictly increasing"));
        }
        if self.rho_lower.is_nan() || self.rho_upper.is_nan() || self.rho_lower > self.rho_upper {
            return Err(Error::config(format!(
                "need rho_lower <= rho_upper, got {} and {}",
                self.rho_lower, self.rho_upper
            )));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("validation_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    /// Estimated objective at the parameters before this step.
    pub objective: f64,
    pub true_value: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyParams,
    pub trace: Vec<TraceRow>,
}

/// Ground-truth value callback used to annotate traces.
pub type ValueOracle<'a> = &'a dyn Fn(&PolicyParams) -> Result<f64>;

pub fn train(objective: &Objective, init: PolicyParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_oracle(objective, init, cfg, None)
}

/// Runs `cfg.iterations` ascent steps from `init`, recording the estimated
/// objective (and the true value when an oracle is given) before each step.
pub fn train_with_oracle(
    objective: &Objective,
    init: PolicyParams,
    cfg: &TrainConfig,
    oracle: Option<ValueOracle<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut policy = init;
    let shape = policy.theta().shape();
    let mut m = DMatrix::<f64>::zeros(shape.0, shape.1);
    let mut v = DMatrix::<f64>::zeros(shape.0, shape.1);
    let mut rng = stream_rng(cfg.seed, Stream::Training);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let n = objective.len();
    for t in 0..cfg.iterations {
        let batch = match cfg.batch_size {
            Some(b) if b < n => {
                let mut idx = sample(&mut rng, n, b).into_vec();
                idx.sort_unstable();
                Some(idx)
            }
            _ => None,
        };
        let (value, grad) = objective.value_and_gradient_on(&policy, batch.as_deref())?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                estimator: objective.kind().to_string(),
                iteration: t,
            });
        }
        let true_value = oracle.map(|f| f(&policy)).transpose()?;
        trace.push(TraceRow {
            iteration: t,
            objective: value,
            true_value,
        });
        let theta = policy.theta_mut();
        match cfg.optimizer {
            Optimizer::Plain => *theta += &grad * cfg.learning_rate,
            Optimizer::Adam => {
                let step = (t + 1) as i32;
                let c1 = 1.0 - cfg.beta1.powi(step);
                let c2 = 1.0 - cfg.beta2.powi(step);
                for ((th, g), (mi, vi)) in theta.iter_mut().zip(grad.iter()).zip(m.iter_mut().zip(v.iter_mut())) {
                    *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
                    *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
                    *th += cfg.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + cfg.epsilon);
                }
            }
        }
    }
    Ok(TrainOutcome { policy, trace })
}

/// Writes `iteration, objective, true_value` rows; a missing true value is `null`.
pub fn write_trace_csv(trace: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("iteration,objective,true_value\n");
    for row in trace {
        let truth = row.true_value.map_or_else(|| "null".to_string(), format_float);
        let _ = writeln!(text, "{},{},{truth}", row.iteration, format_float(row.objective));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpeMethod {
    Ips,
    Dr,
}

/// Off-policy value estimate of `policy` on `validation`.
pub fn ope_value(
    policy: &PolicyParams,
    validation: &LoggedDataset,
    method: OpeMethod,
    qhat: Option<&QModel>,
    partition: &ActionPartition,
) -> Result<f64> {
    let objective = match method {
        OpeMethod::Ips => Objective::ips(validation)?,
        OpeMethod::Dr => {
            let q = qhat.ok_or_else(|| Error::invalid("DR value estimate needs a reward model"))?;
            Objective::dr(validation, q, partition)?
        }
    };
    objective.value(policy)
}

/// One trained grid point of the kappa search.
#[derive(Debug, Clone)]
pub struct KappaCandidate {
    pub kappa: f64,
    pub policy: PolicyParams,
    /// Mean new-action mass on validation contexts.
    pub new_mass: f64,
    /// DR estimate of the policy value on the validation split.
    pub value: f64,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaSelection {
    /// Index into the candidate list.
    pub index: usize,
    pub kappa: f64,
    /// False when no candidate met the mass constraint; `index` is then the
    /// candidate whose mass is closest to the allowed range.
    pub feasible: bool,
}

/// Everything needed to train PONA policies on one train/validation split.
pub struct KappaProblem<'a> {
    pub train: &'a LoggedDataset,
    pub validation: &'a LoggedDataset,
    pub partition: &'a ActionPartition,
    pub logging: &'a dyn ActionDistribution,
    /// Reward model fit on the training split.
    pub qhat: &'a QModel,
    pub init: PolicyParams,
}

/// Trains one PONA policy per grid point and scores it on the validation split.
pub fn kappa_candidates(problem: &KappaProblem<'_>, cfg: &TrainConfig) -> Result<Vec<KappaCandidate>> {
    kappa_candidates_with_oracle(problem, cfg, None)
}

pub fn kappa_candidates_with_oracle(
    problem: &KappaProblem<'_>,
    cfg: &TrainConfig,
    oracle: Option<ValueOracle<'_>>,
) -> Result<Vec<KappaCandidate>> {
    cfg.validate()?;
    let space = problem.init.space().clone();
    let dr_validation = Objective::dr(problem.validation, problem.qhat, problem.partition)?;
    cfg.kappa_grid
        .iter()
        .map(|&kappa| {
            let objective = Objective::pona(
                problem.train,
                &space,
                problem.qhat,
                problem.partition,
                problem.logging,
                kappa,
            )?;
            let TrainOutcome { policy, trace } = train_with_oracle(&objective, problem.init.clone(), cfg, oracle)?;
            let new_mass = policy.new_action_mass(problem.partition, problem.validation.contexts())?;
            let value = dr_validation.value(&policy)?;
            log::debug!("kappa {kappa}: new-action mass {new_mass:.4}, value {value:.4}");
            Ok(KappaCandidate {
                kappa,
                policy,
                new_mass,
                value,
                trace,
            })
        })
        .collect()
}

/// Picks the highest-value candidate whose new-action mass lies in
/// `[rho_lower, rho_upper]`; ties go to the earlier grid point.
pub fn select_kappa(candidates: &[KappaCandidate], rho_lower: f64, rho_upper: f64) -> Result<KappaSelection> {
    if candidates.is_empty() {
        return Err(Error::invalid("no kappa candidates to select from"));
    }
    if rho_lower.is_nan() || rho_upper.is_nan() || rho_lower > rho_upper {
        return Err(Error::invalid("need rho_lower <= rho_upper"));
    }
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if rho_lower <= c.new_mass && c.new_mass <= rho_upper && best.is_none_or(|b| c.value > candidates[b].value) {
            best = Some(i);
        }
    }
    if let Some(index) = best {
        return Ok(KappaSelection {
            index,
            kappa: candidates[index].kappa,
            feasible: true,
        });
    }
    let gap = |m: f64| (rho_lower - m).max(m - rho_upper).max(0.0);
    let mut index = 0;
    for (i, c) in candidates.iter().enumerate() {
        if gap(c.new_mass) < gap(candidates[index].new_mass) {
            index = i;
        }
    }
    Ok(KappaSelection {
        index,
        kappa: candidates[index].kappa,
        feasible: false,
    })
}

#[derive(Debug, Clone)]
pub struct TunedPona {
    pub selection: KappaSelection,
    pub candidates: Vec<KappaCandidate>,
}

impl TunedPona {
    pub fn policy(&self) -> &PolicyParams {
        &self.candidates[self.selection.index].policy
    }
}

pub fn tune_kappa(problem: &KappaProblem<'_>, cfg: &TrainConfig) -> Result<TunedPona> {
    let candidates = kappa_candidates(problem, cfg)?;
    let selection = select_kappa(&candidates, cfg.rho_lower, cfg.rho_upper)?;
    if !selection.feasible {
        log::warn!(
            "no kappa meets the new-action mass range [{}, {}]; closest is kappa {}",
            cfg.rho_lower,
            cfg.rho_upper,
            selection.kappa
        );
    }
    Ok(TunedPona { selection, candidates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LoggedRow;
    use crate::features::{ActionSpace, FeatureScheme};
    use std::sync::Arc;

    fn toy() -> (Arc<ActionSpace>, LoggedDataset) {
        let sp = Arc::new(ActionSpace::full(FeatureScheme::new(vec![2, 2], 2).unwrap()).unwrap());
        let rows = (0..40)
            .map(|i| LoggedRow {
                context: vec![1.0, (i as f64 * 0.37).sin()],
                action: i % 4,
                reward: if i % 4 == 2 { 1.0 } else { 0.1 },
                propensity: 0.25,
                marginals: None,
            })
            .collect();
        (sp, LoggedDataset::new(2, rows).unwrap())
    }

    fn candidate(kappa: f64, new_mass: f64, value: f64) -> KappaCandidate {
        let sp = Arc::new(ActionSpace::full(FeatureScheme::new(vec![2], 1).unwrap()).unwrap());
        KappaCandidate {
            kappa,
            policy: PolicyParams::zeros(sp, 1),
            new_mass,
            value,
            trace: Vec::new(),
        }
    }

    #[test]
    fn zero_iterations_returns_the_initial_policy() {
        let (sp, data) = toy();
        let obj = Objective::ips(&data).unwrap();
        let cfg = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        let out = train(&obj, PolicyParams::zeros(sp, 2), &cfg).unwrap();
        assert!(out.policy.theta().iter().all(|&t| t == 0.0));
        assert!(out.trace.is_empty());
    }

    #[test]
    fn zero_learning_rate_keeps_theta() {
        let (sp, data) = toy();
        let obj = Objective::ips(&data).unwrap();
        for optimizer in [Optimizer::Plain, Optimizer::Adam] {
            let cfg = TrainConfig {
                iterations: 5,
                learning_rate: 0.0,
                optimizer,
                ..TrainConfig::default()
            };
            let out = train(&obj, PolicyParams::zeros(sp.clone(), 2), &cfg).unwrap();
            assert!(out.policy.theta().iter().all(|&t| t == 0.0));
            assert_eq!(out.trace.len(), 5);
        }
    }

    #[test]
    fn ascent_increases_the_estimated_objective() {
        let (sp, data) = toy();
        let obj = Objective::ips(&data).unwrap();
        let cfg = TrainConfig {
            iterations: 100,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let out = train(&obj, PolicyParams::zeros(sp, 2), &cfg).unwrap();
        assert!(out.trace.last().unwrap().objective > out.trace[0].objective);
    }

    #[test]
    fn training_is_deterministic_with_minibatches() {
        let (sp, data) = toy();
        let obj = Objective::ips(&data).unwrap();
        let cfg = TrainConfig {
            iterations: 20,
            batch_size: Some(7),
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&obj, PolicyParams::zeros(sp.clone(), 2), &cfg).unwrap();
        let b = train(&obj, PolicyParams::zeros(sp, 2), &cfg).unwrap();
        assert_eq!(a.policy.theta(), b.policy.theta());
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn non_finite_gradient_names_the_estimator() {
        let (sp, mut data) = toy();
        data.rows[0].reward = f64::INFINITY;
        let obj = Objective::ips(&data).unwrap();
        let err = train(&obj, PolicyParams::zeros(sp, 2), &TrainConfig::default()).unwrap_err();
        match err {
            Error::NonFiniteGradient { estimator, iteration } => {
                assert_eq!(estimator, "ips");
                assert_eq!(iteration, 0);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn ips_value_of_logging_policy_is_mean_reward() {
        let (sp, data) = toy();
        let part = ActionPartition::all_existing(4).unwrap();
        let v = ope_value(&PolicyParams::zeros(sp, 2), &data, OpeMethod::Ips, None, &part).unwrap();
        let mean = data.rows.iter().map(|r| r.reward).sum::<f64>() / data.len() as f64;
        assert!((v - mean).abs() < 1e-12);
    }

    #[test]
    fn selection_rules() {
        let c = vec![
            candidate(0.0, 0.0, 1.0),
            candidate(0.5, 0.1, 0.9),
            candidate(1.0, 0.4, 0.5),
        ];
        let s = select_kappa(&c, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert_eq!((s.kappa, s.feasible), (0.0, true));
        let s = select_kappa(&c, 0.05, f64::INFINITY).unwrap();
        assert_eq!((s.kappa, s.feasible), (0.5, true));
        let s = select_kappa(&c, 0.3, f64::INFINITY).unwrap();
        assert_eq!((s.kappa, s.feasible), (1.0, true));
        let s = select_kappa(&c, 0.6, f64::INFINITY).unwrap();
        assert_eq!((s.kappa, s.feasible), (1.0, false));
        let s = select_kappa(&c[..1], f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert_eq!(s.index, 0);
        assert!(select_kappa(&c, 0.5, 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                kappa_grid: vec![],
                ..TrainConfig::default()
            },
            TrainConfig {
                kappa_grid: vec![0.5, 0.25],
                ..TrainConfig::default()
            },
            TrainConfig {
                kappa_grid: vec![1.5],
                ..TrainConfig::default()
            },
            TrainConfig {
                rho_lower: 0.5,
                rho_upper: 0.1,
                ..TrainConfig::default()
            },
            TrainConfig {
                validation_fraction: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: Some(0),
                ..TrainConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }
}
