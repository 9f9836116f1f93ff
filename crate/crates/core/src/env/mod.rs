//! Ground-truth environments: a reward oracle, an action partition and a
//! logging policy that is zero on new actions.

mod synth;

pub use synth::{build_env, EnvOracle, RewardModel, SynthConfig};

use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::data::{ActionPartition, LoggedDataset, LoggedRow};
use crate::error::{Error, Result};
use crate::features::{ActionSpace, IndicatorMode};
use crate::rng::{stream_rng, Stream};

/// Largest log `generate_log` will produce.
pub const DEFAULT_LOG_CAP: usize = 10_000_000;

pub trait Environment: Send + Sync {
    fn space(&self) -> &ActionSpace;

    fn partition(&self) -> &ActionPartition;

    /// Length of the context vectors this environment produces.
    fn context_len(&self) -> usize;

    fn sample_context(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Expected reward of every action under context `x`.
    fn q_values(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Logging distribution over all actions; zero on new actions.
    fn logging_probs(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Standard deviation of the additive Gaussian reward noise.
    fn noise_sigma(&self) -> f64;

    /// Contexts used for ground-truth evaluation.
    fn evaluation_contexts(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(seed, Stream::Evaluation);
        (0..n).map(|_| self.sample_context(&mut rng)).collect()
    }
}

/// Marginal logging mass of every LCPI indicator coordinate.
pub fn indicator_marginals(space: &ActionSpace, probs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; space.indicator_len(IndicatorMode::Lcpi)];
    for (a, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            for &j in space.active(a, IndicatorMode::Lcpi) {
                out[j] += p;
            }
        }
    }
    out
}

/// One noisy reward draw for `(x, action)`.
pub fn sample_reward(env: &dyn Environment, x: &[f64], action: usize, rng: &mut dyn RngCore) -> Result<f64> {
    let q = env.q_values(x)?[action];
    let sigma = env.noise_sigma();
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(q + noise.sample(rng))
    } else {
        Ok(q)
    }
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (a, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = a;
            if u < acc {
                return a;
            }
        }
    }
    last
}

pub fn generate_log(env: &dyn Environment, n: usize, seed: u64) -> Result<LoggedDataset> {
    generate_log_capped(env, n, seed, DEFAULT_LOG_CAP)
}

/// Draws `n` rounds of (context, logged action, noisy reward), recording the
/// logging propensity and indicator marginals of each round.
pub fn generate_log_capped(env: &dyn Environment, n: usize, seed: u64, cap: usize) -> Result<LoggedDataset> {
    if n == 0 {
        return Err(Error::invalid("log size must be at least 1"));
    }
    if n > cap {
        return Err(Error::Capacity {
            what: "log size",
            requested: n as u128,
            limit: cap as u128,
        });
    }
    let mut rng = stream_rng(seed, Stream::Log);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let x = env.sample_context(&mut rng);
        let probs = env.logging_probs(&x)?;
        let u = rand::Rng::random::<f64>(&mut rng);
        let a = sample_index(&probs, u);
        let reward = sample_reward(env, &x, a, &mut rng)?;
        rows.push(LoggedRow {
            marginals: Some(indicator_marginals(env.space(), &probs)),
            context: x,
            action: a,
            reward,
            propensity: probs[a],
        });
    }
    LoggedDataset::new(env.context_len(), rows)
}
