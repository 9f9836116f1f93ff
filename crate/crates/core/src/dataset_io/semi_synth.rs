use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::RealDatasetSpec;
use crate::data::ActionPartition;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::features::{ActionSpace, IndicatorMode};
use crate::linalg::{pinv, DEFAULT_PINV_TOL};
use crate::math::masked_softmax;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiSynthConfig {
    pub beta: f64,
    pub new_action_fraction: f64,
    pub context_intercept: bool,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SemiSynthConfig {
    fn default() -> Self {
        Self {
            beta: 0.05,
            new_action_fraction: 0.3,
            context_intercept: true,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Environment whose rewards are read from a dense user-item matrix.
///
/// Actions are the distinct item feature tuples; an action's reward for a user
/// is the mean over items sharing that tuple. Users with identical feature
/// vectors are indistinguishable contexts and share their mean reward row.
#[derive(Debug, Clone)]
pub struct SemiSynthEnv {
    config: SemiSynthConfig,
    space: ActionSpace,
    partition: ActionPartition,
    existing_mask: Vec<bool>,
    contexts: Vec<Vec<f64>>,
    group_of: HashMap<Vec<u64>, usize>,
    q: Vec<Vec<f64>>,
    cover_size: usize,
    coverage_ratio: f64,
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Greedy set cover of every indicator coordinate some action activates.
/// Picks the action covering the most uncovered coordinates, lowest index on ties.
fn indicator_cover(space: &ActionSpace) -> Vec<usize> {
    let mut uncovered: BTreeSet<usize> = (0..space.len())
        .flat_map(|a| space.active(a, IndicatorMode::Lcpi).iter().copied())
        .collect();
    let mut chosen = Vec::new();
    while !uncovered.is_empty() {
        let gain = |a: usize| {
            space
                .active(a, IndicatorMode::Lcpi)
                .iter()
                .filter(|j| uncovered.contains(j))
                .count()
        };
        let best = (0..space.len()).fold(0, |best, a| if gain(a) > gain(best) { a } else { best });
        for j in space.active(best, IndicatorMode::Lcpi) {
            uncovered.remove(j);
        }
        chosen.push(best);
    }
    chosen.sort_unstable();
    chosen
}

/// Fraction of new actions whose indicator is a linear combination of
/// existing indicators; 1 when there are no new actions.
fn local_support_ratio(space: &ActionSpace, partition: &ActionPartition) -> Result<f64> {
    if partition.new_actions().is_empty() {
        return Ok(1.0);
    }
    let w = space.indicator_len(IndicatorMode::Lcpi);
    let existing = partition.existing();
    let e = DMatrix::from_fn(existing.len(), w, |r, c| {
        if space.active(existing[r], IndicatorMode::Lcpi).contains(&c) {
            1.0
        } else {
            0.0
        }
    });
    let proj = pinv(&e, DEFAULT_PINV_TOL)? * &e;
    let supported = partition
        .new_actions()
        .iter()
        .filter(|&&a| {
            let v = nalgebra::DVector::from_iterator(
                w,
                (0..w).map(|c| f64::from(u8::from(space.active(a, IndicatorMode::Lcpi).contains(&c)))),
            );
            (&proj * &v - &v).amax() < 1e-8
        })
        .count();
    Ok(supported as f64 / partition.new_actions().len() as f64)
}

pub fn build_semi_synth_env(spec: &RealDatasetSpec, config: &SemiSynthConfig) -> Result<SemiSynthEnv> {
    if !(0.0..1.0).contains(&config.new_action_fraction) {
        return Err(Error::config(format!(
            "new_action_fraction {} must lie in [0, 1)",
            config.new_action_fraction
        )));
    }
    if !config.beta.is_finite() || !(config.noise_sigma >= 0.0 && config.noise_sigma.is_finite()) {
        return Err(Error::config("beta and noise_sigma must be finite, noise_sigma >= 0"));
    }
    let scheme = spec.scheme.clone();
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, f) in spec.item_features.iter().enumerate() {
        scheme.validate(f)?;
        groups.entry(scheme.full_index(f)).or_default().push(i);
    }
    let actions = groups
        .values()
        .map(|items| spec.item_features[items[0]].clone())
        .collect();
    let space = ActionSpace::from_actions(scheme, actions)?;

    let n_actions = space.len();
    let cover = indicator_cover(&space);
    let n_new = (config.new_action_fraction * n_actions as f64).round() as usize;
    let target = n_actions - n_new;
    if cover.len() > target {
        let max_fraction = (n_actions - cover.len()) as f64 / n_actions as f64;
        return Err(Error::config(format!(
            "covering every feature value and prefix combination needs at least {} existing actions \
             (of {n_actions}); new_action_fraction {} leaves {target}; the largest workable fraction is {:.4}",
            cover.len(),
            config.new_action_fraction,
            max_fraction
        )));
    }
    let chosen: BTreeSet<usize> = cover.iter().copied().collect();
    let mut rest: Vec<usize> = (0..n_actions).filter(|a| !chosen.contains(a)).collect();
    rest.shuffle(&mut stream_rng(config.seed, Stream::Partition));
    let existing = cover.iter().copied().chain(rest.into_iter().take(target - cover.len()));
    let partition = ActionPartition::from_existing(n_actions, existing)?;
    let coverage_ratio = local_support_ratio(&space, &partition)?;
    if coverage_ratio < 1.0 {
        log::warn!(
            "only {:.1}% of new actions are linear combinations of existing ones",
            100.0 * coverage_ratio
        );
    }

    let contexts: Vec<Vec<f64>> = spec
        .user_features
        .iter()
        .map(|x| {
            let mut c = Vec::with_capacity(x.len() + 1);
            if config.context_intercept {
                c.push(1.0);
            }
            c.extend_from_slice(x);
            c
        })
        .collect();
    let mut group_of = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (u, x) in contexts.iter().enumerate() {
        let g = *group_of.entry(key(x)).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[g].push(u);
    }
    let q = members
        .iter()
        .map(|users| {
            groups
                .values()
                .map(|items| {
                    let total: f64 = users
                        .iter()
                        .flat_map(|&u| items.iter().map(move |&i| spec.rewards[(u, i)]))
                        .sum();
                    total / (users.len() * items.len()) as f64
                })
                .collect()
        })
        .collect();
    Ok(SemiSynthEnv {
        config: config.clone(),
        existing_mask: partition.existing_mask(),
        space,
        partition,
        contexts,
        group_of,
        q,
        cover_size: cover.len(),
        coverage_ratio,
    })
}

impl SemiSynthEnv {
    pub fn config(&self) -> &SemiSynthConfig {
        &self.config
    }

    /// Existing actions needed to cover every feature value and prefix combination.
    pub fn cover_size(&self) -> usize {
        self.cover_size
    }

    /// Fraction of new actions that are linear combinations of existing ones.
    pub fn coverage_ratio(&self) -> f64 {
        self.coverage_ratio
    }

    pub fn user_contexts(&self) -> &[Vec<f64>] {
        &self.contexts
    }

    pub fn into_shared(self) -> Arc<dyn Environment> {
        Arc::new(self)
    }
}

impl Environment for SemiSynthEnv {
    fn space(&self) -> &ActionSpace {
        &self.space
    }

    fn partition(&self) -> &ActionPartition {
        &self.partition
    }

    fn context_len(&self) -> usize {
        self.contexts[0].len()
    }

    fn sample_context(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.contexts[rng.random_range(0..self.contexts.len())].clone()
    }

    fn q_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.group_of
            .get(&key(x))
            .map(|&g| self.q[g].clone())
            .ok_or_else(|| Error::invalid("context does not match any user"))
    }

    fn logging_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(masked_softmax(
            &self.q_values(x)?,
            self.config.beta,
            Some(&self.existing_mask),
        ))
    }

    fn noise_sigma(&self) -> f64 {
        self.config.noise_sigma
    }

    /// Every user once, in file order.
    fn evaluation_contexts(&self, _n: usize, _seed: u64) -> Vec<Vec<f64>> {
        self.contexts.clone()
    }
}
