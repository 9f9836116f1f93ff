//! Logged bandit feedback and the existing/new action partition.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Split of the action space into actions the logging policy can choose and
/// actions it never chooses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionPartition {
    existing: Vec<usize>,
    new: Vec<usize>,
    is_new: Vec<bool>,
}

impl ActionPartition {
    /// Builds a partition from the existing set; every other action is new.
    pub fn from_existing(n_actions: usize, existing: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut is_new = vec![true; n_actions];
        for a in existing {
            if a >= n_actions {
                return Err(Error::invalid(format!(
                    "existing action {a} out of range for {n_actions} actions"
                )));
            }
            is_new[a] = false;
        }
        let existing: Vec<usize> = (0..n_actions).filter(|&a| !is_new[a]).collect();
        if existing.is_empty() {
            return Err(Error::invalid("partition has no existing actions"));
        }
        let new = (0..n_actions).filter(|&a| is_new[a]).collect();
        Ok(Self { existing, new, is_new })
    }

    pub fn all_existing(n_actions: usize) -> Result<Self> {
        Self::from_existing(n_actions, 0..n_actions)
    }

    pub fn n_actions(&self) -> usize {
        self.is_new.len()
    }

    pub fn existing(&self) -> &[usize] {
        &self.existing
    }

    pub fn new_actions(&self) -> &[usize] {
        &self.new
    }

    #[inline]
    pub fn is_new(&self, action: usize) -> bool {
        self.is_new[action]
    }

    #[inline]
    pub fn is_existing(&self, action: usize) -> bool {
        !self.is_new[action]
    }

    /// Mask with `true` on existing actions.
    pub fn existing_mask(&self) -> Vec<bool> {
        self.is_new.iter().map(|&n| !n).collect()
    }

    pub fn new_fraction(&self) -> f64 {
        self.new.len() as f64 / self.n_actions() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedRow {
    pub context: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    /// Logging probability of `action` given `context`, recorded at collection time.
    pub propensity: f64,
    /// Marginal logging probabilities of every indicator coordinate (LCPI layout).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marginals: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoggedDataset {
    pub context_dim: usize,
    pub rows: Vec<LoggedRow>,
}

impl LoggedDataset {
    pub fn new(context_dim: usize, rows: Vec<LoggedRow>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.context.len() != context_dim {
                return Err(Error::invalid(format!(
                    "row {i} has context length {}, expected {context_dim}",
                    r.context.len()
                )));
            }
        }
        Ok(Self { context_dim, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contexts(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(|r| r.context.as_slice())
    }

    /// Checks that every row is a valid logged observation under `partition`.
    pub fn validate(&self, partition: &ActionPartition) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.action >= partition.n_actions() {
                return Err(Error::invalid(format!("row {i}: action {} out of range", r.action)));
            }
            if partition.is_new(r.action) {
                return Err(Error::invalid(format!(
                    "row {i}: action {} is a new action and cannot appear in logged data",
                    r.action
                )));
            }
            if !(r.propensity > 0.0 && r.propensity <= 1.0) {
                return Err(Error::Precondition(format!(
                    "row {i}: propensity {} must lie in (0, 1]",
                    r.propensity
                )));
            }
            if !r.reward.is_finite() || r.context.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("row {i}: non-finite value")));
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            context_dim: self.context_dim,
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Random train/validation split; validation gets `round(n * fraction)` rows,
    /// and both halves are non-empty whenever `n >= 2`.
    pub fn split(&self, validation_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
            return Err(Error::config(format!(
                "validation fraction {validation_fraction} must lie in (0, 1)"
            )));
        }
        let n = self.len();
        if n < 2 {
            return Err(Error::invalid("need at least two rows to split"));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut stream_rng(seed, crate::rng::Stream::Split));
        let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n - 1);
        let (val, train) = idx.split_at(n_val);
        let mut train = train.to_vec();
        let mut val = val.to_vec();
        train.sort_unstable();
        val.sort_unstable();
        Ok((self.subset(&train), self.subset(&val)))
    }
}
