//! Synthetic environment with a three-term linear reward.
//!
//! The expected reward is a sum of one term per feature dimension, one term for
//! the joint value of the first `s` dimensions, and `gamma` times a term for the
//! full action. Each term is `x^T M[:, column]` for a parameter matrix `M` drawn
//! entrywise from a uniform distribution. With `gamma = 0` the reward is exactly
//! linear in the LCPI indicator.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::data::ActionPartition;
use crate::error::{Error, Result};
use crate::features::{ActionFeatures, ActionSpace, FeatureScheme};
use crate::math::masked_softmax;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of standard-normal context coordinates.
    pub context_dim: usize,
    /// Prepend a constant 1 to every context.
    pub context_intercept: bool,
    pub cards: Vec<usize>,
    pub interaction_width: usize,
    pub gamma: f64,
    pub beta: f64,
    pub noise_sigma: f64,
    pub new_action_fraction: f64,
    /// Support of the uniform distribution of reward-matrix entries.
    pub reward_low: f64,
    pub reward_high: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            context_dim: 5,
            context_intercept: true,
            cards: vec![3; 5],
            interaction_width: 2,
            gamma: 1.0,
            beta: 0.05,
            noise_sigma: 1.0,
            new_action_fraction: 0.3,
            reward_low: 0.0,
            reward_high: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn context_len(&self) -> usize {
        self.context_dim + usize::from(self.context_intercept)
    }

    pub fn scheme(&self) -> Result<FeatureScheme> {
        FeatureScheme::new(self.cards.clone(), self.interaction_width)
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme()?;
        if self.context_len() == 0 {
            return Err(Error::config("context must have at least one coordinate"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!("gamma {} must be finite and >= 0", self.gamma)));
        }
        if !self.beta.is_finite() {
            return Err(Error::config("beta must be finite"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.new_action_fraction) {
            return Err(Error::config(format!(
                "new_action_fraction {} must lie in [0, 1)",
                self.new_action_fraction
            )));
        }
        if !(self.reward_low < self.reward_high && self.reward_low.is_finite() && self.reward_high.is_finite()) {
            return Err(Error::config("reward range must be a finite, non-empty interval"));
        }
        Ok(())
    }
}

/// Reward parameters. Matrices have one row per context coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub marginal: Vec<DMatrix<f64>>,
    pub local: DMatrix<f64>,
    pub full: DMatrix<f64>,
}

impl RewardModel {
    fn sample(scheme: &FeatureScheme, context_len: usize, low: f64, high: f64, rng: &mut impl Rng) -> Result<Self> {
        let dist = Uniform::new(low, high).map_err(|e| Error::config(e.to_string()))?;
        let mut draw = |cols: usize| DMatrix::from_fn(context_len, cols, |_, _| dist.sample(rng));
        let marginal = scheme.cards().iter().map(|&m| draw(m)).collect();
        let local = draw(scheme.interaction_len());
        let full_cols = scheme
            .action_count()
            .ok_or_else(|| Error::config("action space too large"))? as usize;
        let full = draw(full_cols);
        Ok(Self { marginal, local, full })
    }

    fn check_shapes(&self, scheme: &FeatureScheme, context_len: usize, n_actions: usize) -> Result<()> {
        let ok = self.marginal.len() == scheme.dims()
            && self
                .marginal
                .iter()
                .zip(scheme.cards())
                .all(|(m, &c)| m.shape() == (context_len, c))
            && self.local.shape() == (context_len, scheme.interaction_len())
            && self.full.shape() == (context_len, n_actions);
        if !ok {
            return Err(Error::invalid("reward model shapes do not match the scheme"));
        }
        if self
            .marginal
            .iter()
            .chain([&self.local, &self.full])
            .any(|m| m.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid("reward model has non-finite entries"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EnvOracle {
    config: SynthConfig,
    space: ActionSpace,
    partition: ActionPartition,
    reward_model: RewardModel,
    existing_mask: Vec<bool>,
    // [marginal blocks | local block], transposed: one row per indicator coordinate
    indicator_weights_t: DMatrix<f64>,
    full_weights_t: DMatrix<f64>,
}

/// Actions covering every value of every dimension, walking the diagonal and
/// wrapping shorter dimensions around.
pub(crate) fn independent_support_base(scheme: &FeatureScheme) -> Vec<ActionFeatures> {
    let max_m = *scheme.cards().iter().max().expect("non-empty scheme");
    (0..max_m)
        .map(|i| ActionFeatures::new(scheme.cards().iter().map(|&m| i % m).collect()))
        .collect()
}

/// Every joint value of the first `s` dimensions, remaining dimensions at value 0.
pub(crate) fn local_support_base(scheme: &FeatureScheme) -> Vec<ActionFeatures> {
    let s = scheme.interaction_width();
    let d = scheme.dims();
    let prefix = FeatureScheme::new(scheme.cards()[..s].to_vec(), s).expect("prefix of a valid scheme");
    crate::features::enumerate_actions(&prefix)
        .expect("prefix no larger than the scheme")
        .into_iter()
        .map(|p| {
            let mut v = p.values;
            v.resize(d, 0);
            ActionFeatures::new(v)
        })
        .collect()
}

pub fn build_env(config: &SynthConfig) -> Result<EnvOracle> {
    config.validate()?;
    let scheme = config.scheme()?;
    let space = ActionSpace::full(scheme.clone())?;
    let n_actions = space.len();

    let mut base = BTreeSet::new();
    for a in independent_support_base(&scheme)
        .iter()
        .chain(local_support_base(&scheme).iter())
    {
        base.insert(scheme.full_index(a));
    }
    let n_new = (config.new_action_fraction * n_actions as f64).round() as usize;
    if config.new_action_fraction > 0.0 && n_new == 0 {
        return Err(Error::config(format!(
            "new_action_fraction {} yields no new action among {n_actions}",
            config.new_action_fraction
        )));
    }
    let target = n_actions - n_new;
    if base.len() > target {
        return Err(Error::config(format!(
            "support base needs {} existing actions but only {target} of {n_actions} remain \
             at new_action_fraction {}",
            base.len(),
            config.new_action_fraction
        )));
    }
    let mut rest: Vec<usize> = (0..n_actions).filter(|a| !base.contains(a)).collect();
    rest.shuffle(&mut stream_rng(config.seed, Stream::Partition));
    let existing = base.iter().copied().chain(rest.into_iter().take(target - base.len()));
    let partition = ActionPartition::from_existing(n_actions, existing)?;

    let reward_model = RewardModel::sample(
        &scheme,
        config.context_len(),
        config.reward_low,
        config.reward_high,
        &mut stream_rng(config.seed, Stream::RewardModel),
    )?;
    EnvOracle::from_parts(config.clone(), reward_model, partition)
}

impl EnvOracle {
    pub fn from_parts(config: SynthConfig, reward_model: RewardModel, partition: ActionPartition) -> Result<Self> {
        config.validate()?;
        let scheme = config.scheme()?;
        let space = ActionSpace::full(scheme.clone())?;
        let ctx = config.context_len();
        reward_model.check_shapes(&scheme, ctx, space.len())?;
        if partition.n_actions() != space.len() {
            return Err(Error::invalid("partition size does not match the action space"));
        }
        let mut blocks = reward_model.marginal.clone();
        blocks.push(reward_model.local.clone());
        let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
        let mut w = DMatrix::zeros(ctx, cols);
        let mut off = 0;
        for b in &blocks {
            w.columns_mut(off, b.ncols()).copy_from(b);
            off += b.ncols();
        }
        Ok(Self {
            existing_mask: partition.existing_mask(),
            indicator_weights_t: w.transpose(),
            full_weights_t: reward_model.full.transpose(),
            config,
            space,
            partition,
            reward_model,
        })
    }

    /// Replaces the reward parameters, keeping config and partition.
    pub fn with_reward_model(self, reward_model: RewardModel) -> Result<Self> {
        Self::from_parts(self.config, reward_model, self.partition)
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn reward_model(&self) -> &RewardModel {
        &self.reward_model
    }

    fn check_context(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.context_len() {
            return Err(Error::invalid(format!(
                "context has length {}, expected {}",
                x.len(),
                self.config.context_len()
            )));
        }
        Ok(())
    }

    /// Per-coordinate reward of the LCPI indicator: with `gamma = 0`,
    /// `q(x, a) = indicator(a) . intrinsic_reward(x)`.
    pub fn intrinsic_reward(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_context(x)?;
        Ok(&self.indicator_weights_t * DVector::from_column_slice(x))
    }

    pub fn q_true(&self, x: &[f64], action: usize) -> Result<f64> {
        if action >= self.space.len() {
            return Err(Error::invalid(format!("action {action} out of range")));
        }
        Ok(self.q_values(x)?[action])
    }
}

impl Environment for EnvOracle {
    fn space(&self) -> &ActionSpace {
        &self.space
    }

    fn partition(&self) -> &ActionPartition {
        &self.partition
    }

    fn context_len(&self) -> usize {
        self.config.context_len()
    }

    fn sample_context(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.context_len());
        if self.config.context_intercept {
            x.push(1.0);
        }
        for _ in 0..self.config.context_dim {
            x.push(StandardNormal.sample(rng));
        }
        x
    }

    fn q_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        let u = self.intrinsic_reward(x)?;
        let gamma = self.config.gamma;
        let full = if gamma != 0.0 {
            Some(&self.full_weights_t * DVector::from_column_slice(x))
        } else {
            None
        };
        Ok((0..self.space.len())
            .map(|a| {
                let lin: f64 = self
                    .space
                    .active(a, crate::features::IndicatorMode::Lcpi)
                    .iter()
                    .map(|&j| u[j])
                    .sum();
                match &full {
                    Some(f) => lin + gamma * f[a],
                    None => lin,
                }
            })
            .collect())
    }

    fn logging_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let q = self.q_values(x)?;
        Ok(masked_softmax(&q, self.config.beta, Some(&self.existing_mask)))
    }

    fn noise_sigma(&self) -> f64 {
        self.config.noise_sigma
    }
}
