//! Ground-truth policy evaluation against an environment's reward oracle.

use serde::{Deserialize, Serialize};

use crate::data::ActionPartition;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::policy::{ActionDistribution, UniformPolicy};

/// Default number of Monte-Carlo evaluation contexts.
pub const DEFAULT_EVAL_CONTEXTS: usize = 10_000;

/// Conditional values are undefined when their mass falls below this.
pub const MIN_CONDITIONAL_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall_value: f64,
    pub value_per_existing: Option<f64>,
    pub value_per_new: Option<f64>,
    pub new_action_mass: f64,
    pub existing_action_mass: f64,
    pub norm_overall: Option<f64>,
    pub norm_existing: Option<f64>,
    pub norm_new: Option<f64>,
}

/// Raw sums before normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Sums {
    overall: f64,
    existing_value: f64,
    existing_mass: f64,
    new_value: f64,
    new_mass: f64,
}

impl Sums {
    fn per_existing(&self) -> Option<f64> {
        (self.existing_mass >= MIN_CONDITIONAL_MASS).then(|| self.existing_value / self.existing_mass)
    }

    fn per_new(&self) -> Option<f64> {
        (self.new_mass >= MIN_CONDITIONAL_MASS).then(|| self.new_value / self.new_mass)
    }
}

fn ratio(v: Option<f64>, base: Option<f64>) -> Option<f64> {
    match (v, base) {
        (Some(v), Some(b)) if b != 0.0 => Some(v / b),
        _ => None,
    }
}

/// Fixed evaluation contexts with their q tables, reused across policies.
#[derive(Debug, Clone)]
pub struct EvalSet {
    contexts: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    partition: ActionPartition,
    uniform: Sums,
}

impl EvalSet {
    /// Draws `n` contexts from the environment's evaluation stream.
    pub fn new(env: &dyn Environment, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("evaluation needs at least one context"));
        }
        Self::from_contexts(env, env.evaluation_contexts(n, seed))
    }

    pub fn from_contexts(env: &dyn Environment, contexts: Vec<Vec<f64>>) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::invalid("evaluation needs at least one context"));
        }
        let q = contexts.iter().map(|x| env.q_values(x)).collect::<Result<Vec<_>>>()?;
        let partition = env.partition().clone();
        let mut set = Self {
            contexts,
            q,
            partition,
            uniform: Sums {
                overall: 0.0,
                existing_value: 0.0,
                existing_mass: 0.0,
                new_value: 0.0,
                new_mass: 0.0,
            },
        };
        set.uniform = set.sums(&UniformPolicy {
            n_actions: env.space().len(),
        })?;
        Ok(set)
    }

    pub fn contexts(&self) -> &[Vec<f64>] {
        &self.contexts
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    fn sums(&self, policy: &dyn ActionDistribution) -> Result<Sums> {
        let mut s = Sums {
            overall: 0.0,
            existing_value: 0.0,
            existing_mass: 0.0,
            new_value: 0.0,
            new_mass: 0.0,
        };
        let inv = 1.0 / self.contexts.len() as f64;
        for (x, q) in self.contexts.iter().zip(&self.q) {
            let p = policy.action_probs(x)?;
            if p.len() != q.len() {
                return Err(Error::invalid(
                    "policy and environment disagree on the number of actions",
                ));
            }
            for (a, (&pa, &qa)) in p.iter().zip(q).enumerate() {
                if self.partition.is_new(a) {
                    s.new_value += inv * pa * qa;
                    s.new_mass += inv * pa;
                } else {
                    s.existing_value += inv * pa * qa;
                    s.existing_mass += inv * pa;
                }
            }
        }
        s.overall = s.existing_value + s.new_value;
        Ok(s)
    }

    pub fn evaluate(&self, policy: &dyn ActionDistribution) -> Result<MetricsReport> {
        let s = self.sums(policy)?;
        let u = &self.uniform;
        Ok(MetricsReport {
            overall_value: s.overall,
            value_per_existing: s.per_existing(),
            value_per_new: s.per_new(),
            new_action_mass: s.new_mass,
            existing_action_mass: s.existing_mass,
            norm_overall: ratio(Some(s.overall), Some(u.overall)),
            norm_existing: ratio(s.per_existing(), u.per_existing()),
            norm_new: ratio(s.per_new(), u.per_new()),
        })
    }

    /// Mean `sum_a pi(a|x) q(x,a)` over the evaluation contexts.
    pub fn value(&self, policy: &dyn ActionDistribution) -> Result<f64> {
        Ok(self.sums(policy)?.overall)
    }
}

pub fn evaluate(
    policy: &dyn ActionDistribution,
    env: &dyn Environment,
    n_eval_contexts: usize,
    seed: u64,
) -> Result<MetricsReport> {
    EvalSet::new(env, n_eval_contexts, seed)?.evaluate(policy)
}
