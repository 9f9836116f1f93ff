//! Softmax policies whose logits are linear in the context–indicator product.
//!
//! `logit(a | x) = x^T theta indicator(a)` with the LCPI indicator, so every
//! action, including never-logged ones, shares weights through its features.
//! There is no per-action bias term.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::data::ActionPartition;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::features::{ActionSpace, IndicatorMode};
use crate::math::masked_softmax_into;

/// Anything that maps a context to a distribution over the action space.
pub trait ActionDistribution: Send + Sync {
    fn action_probs(&self, x: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub n_actions: usize,
}

impl ActionDistribution for UniformPolicy {
    fn action_probs(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![1.0 / self.n_actions as f64; self.n_actions])
    }
}

/// The environment's logging policy viewed as an action distribution.
pub struct LoggingPolicy<'a>(pub &'a dyn Environment);

impl ActionDistribution for LoggingPolicy<'_> {
    fn action_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.logging_probs(x)
    }
}

/// Deterministic deployment of another policy: all mass on its most probable
/// action (lowest index on ties).
pub struct Argmax<P>(pub P);

impl<P: ActionDistribution> ActionDistribution for Argmax<P> {
    fn action_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.0.action_probs(x)?;
        let best = p
            .iter()
            .enumerate()
            .fold(0, |best, (a, &v)| if v > p[best] { a } else { best });
        let mut out = vec![0.0; p.len()];
        out[best] = 1.0;
        Ok(out)
    }
}

impl<T: ActionDistribution + ?Sized> ActionDistribution for &T {
    fn action_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).action_probs(x)
    }
}

impl<T: ActionDistribution + ?Sized> ActionDistribution for Box<T> {
    fn action_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).action_probs(x)
    }
}

#[derive(Debug, Clone)]
pub struct PolicyParams {
    theta: DMatrix<f64>,
    space: Arc<ActionSpace>,
    support: Option<Arc<Vec<bool>>>,
    /// Boundaries of the indicator blocks: one per dimension, then the interaction block.
    block_starts: Vec<usize>,
}

impl PolicyParams {
    /// The uniform policy (`theta = 0`) over the whole space.
    pub fn zeros(space: Arc<ActionSpace>, context_len: usize) -> Self {
        let width = space.indicator_len(IndicatorMode::Lcpi);
        let scheme = space.scheme();
        let mut block_starts: Vec<usize> = (0..scheme.dims()).map(|l| scheme.marginal_offset(l)).collect();
        block_starts.push(scheme.marginal_len());
        block_starts.push(width);
        Self {
            theta: DMatrix::zeros(context_len, width),
            space,
            support: None,
            block_starts,
        }
    }

    /// Restricts the softmax to actions where `mask` is true.
    pub fn with_support(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.space.len() || !mask.iter().any(|&m| m) {
            return Err(Error::invalid(
                "support mask must cover the action space and be non-empty",
            ));
        }
        self.support = Some(Arc::new(mask));
        Ok(self)
    }

    pub fn with_theta(mut self, theta: DMatrix<f64>) -> Result<Self> {
        self.set_theta(theta)?;
        Ok(self)
    }

    pub fn set_theta(&mut self, theta: DMatrix<f64>) -> Result<()> {
        if theta.shape() != self.theta.shape() {
            return Err(Error::invalid(format!(
                "theta shape {:?} does not match {:?}",
                theta.shape(),
                self.theta.shape()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("theta has non-finite entries".into()));
        }
        self.theta = theta;
        Ok(())
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub(crate) fn theta_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.theta
    }

    pub fn space(&self) -> &Arc<ActionSpace> {
        &self.space
    }

    pub fn support(&self) -> Option<&[bool]> {
        self.support.as_deref().map(|v| v.as_slice())
    }

    pub fn context_len(&self) -> usize {
        self.theta.nrows()
    }

    fn check_context(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.context_len() {
            return Err(Error::invalid(format!(
                "context has length {}, policy expects {}",
                x.len(),
                self.context_len()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_context(x)?;
        let mut out = vec![0.0; self.space.len()];
        self.logits_into(x, &mut out);
        Ok(out)
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let u = self.theta.tr_mul(&DVector::from_column_slice(x));
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.space.active(a, IndicatorMode::Lcpi).iter().map(|&j| u[j]).sum();
        }
    }

    /// Probabilities written into `out`; `out` must have one slot per action.
    ///
    /// Each action activates exactly one coordinate per indicator block, so
    /// `exp(logit(a))` factors into per-coordinate exponentials. Subtracting
    /// each block's maximum keeps every factor in (0, 1].
    pub(crate) fn probs_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let rows = self.theta.nrows();
        let mut e: Vec<f64> = self
            .theta
            .as_slice()
            .chunks_exact(rows)
            .map(|col| col.iter().zip(x).map(|(t, v)| t * v).sum())
            .collect();
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        for b in self.block_starts.windows(2) {
            let block = &mut e[b[0]..b[1]];
            let m = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in block.iter_mut() {
                *v = (*v - m).exp();
            }
        }
        let support = self.support();
        if self.space.is_full_product() {
            self.product_expand(&e, out);
            if let Some(mask) = support {
                for (o, &keep) in out.iter_mut().zip(mask) {
                    if !keep {
                        *o = 0.0;
                    }
                }
            }
        } else {
            let (table, stride) = self.space.active_table(IndicatorMode::Lcpi);
            for (a, (o, act)) in out.iter_mut().zip(table.chunks_exact(stride)).enumerate() {
                *o = if support.is_none_or(|m| m[a]) {
                    act.iter().fold(1.0, |acc, &j| acc * e[j])
                } else {
                    0.0
                };
            }
        }
        let z: f64 = out.iter().sum();
        if z > 0.0 && z.is_finite() {
            let inv = 1.0 / z;
            for o in out.iter_mut() {
                *o *= inv;
            }
        } else {
            // every supported product underflowed; fall back to plain max-subtraction
            self.logits_into(x, out);
            let logits = out.to_vec();
            masked_softmax_into(&logits, 1.0, support, out);
        }
        Ok(())
    }

    /// Fills `out` with the product of per-block factors for every tuple of a
    /// full product space, one dimension at a time and in place.
    fn product_expand(&self, e: &[f64], out: &mut [f64]) {
        let scheme = self.space.scheme();
        let s = scheme.interaction_width();
        let inter = &e[self.block_starts[scheme.dims()]..];
        out[0] = 1.0;
        let mut size = 1;
        for (l, &m) in scheme.cards().iter().enumerate() {
            let f = &e[self.block_starts[l]..self.block_starts[l] + m];
            for i in (0..size).rev() {
                let base = out[i];
                for (o, &fv) in out[i * m..(i + 1) * m].iter_mut().zip(f) {
                    *o = base * fv;
                }
            }
            size *= m;
            if l + 1 == s {
                for (o, &fv) in out[..size].iter_mut().zip(inter) {
                    *o *= fv;
                }
            }
        }
    }

    /// Adjoint of `product_expand`: adds to `g[j]` the sum of `c` over every
    /// tuple whose indicator has coordinate `j` set. Consumes `c`.
    fn product_reduce(&self, c: &mut [f64], g: &mut [f64]) {
        let scheme = self.space.scheme();
        let cards = scheme.cards();
        let s = scheme.interaction_width();
        let mut size = c.len();
        for (l, &m) in cards.iter().enumerate().rev() {
            if l + 1 == s {
                for (gv, &t) in g[self.block_starts[cards.len()]..].iter_mut().zip(&c[..size]) {
                    *gv += t;
                }
            }
            let block = &mut g[self.block_starts[l]..self.block_starts[l] + m];
            size /= m;
            for p in 0..size {
                let mut sum = 0.0;
                for (gv, &t) in block.iter_mut().zip(&c[p * m..(p + 1) * m]) {
                    *gv += t;
                    sum += t;
                }
                c[p] = sum;
            }
        }
    }

    pub fn action_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_context(x)?;
        let mut out = vec![0.0; self.space.len()];
        self.probs_into(x, &mut out)?;
        Ok(out)
    }

    /// Adds `scale * sum_a probs[a] * weights[a] * grad log pi(a | x)` to `out`
    /// and returns `sum_a probs[a] * weights[a]`.
    ///
    /// The score of a softmax-linear policy is `x (indicator(a) - E_pi[indicator])^T`,
    /// so the weighted sum is the rank-one update `x g^T` with
    /// `g = sum_a probs[a] (weights[a] - S) indicator(a)`.
    pub(crate) fn accumulate_weighted_score(
        &self,
        x: &[f64],
        probs: &[f64],
        weights: &[f64],
        scale: f64,
        out: &mut DMatrix<f64>,
        scratch: &mut ScoreScratch,
    ) -> f64 {
        let width = self.theta.ncols();
        scratch.reset(width);
        let total: f64 = probs.iter().zip(weights).map(|(p, w)| p * w).sum();
        if self.space.is_full_product() {
            scratch.c.clear();
            scratch.c.extend(
                probs
                    .iter()
                    .zip(weights)
                    .map(|(&p, &w)| if p == 0.0 { 0.0 } else { p * (w - total) }),
            );
            self.product_reduce(&mut scratch.c, &mut scratch.g);
        } else {
            let (table, stride) = self.space.active_table(IndicatorMode::Lcpi);
            let g = &mut scratch.g;
            for ((&p, &w), act) in probs.iter().zip(weights).zip(table.chunks_exact(stride)) {
                if p == 0.0 {
                    continue;
                }
                let c = p * (w - total);
                for &j in act {
                    g[j] += c;
                }
            }
        }
        for j in 0..width {
            let g = scale * scratch.g[j];
            if g != 0.0 {
                let mut col = out.column_mut(j);
                for (k, &xk) in x.iter().enumerate() {
                    col[k] += g * xk;
                }
            }
        }
        total
    }

    /// `grad_theta log pi(a | x)`, shaped like theta.
    pub fn grad_log_prob(&self, x: &[f64], action: usize) -> Result<DMatrix<f64>> {
        if action >= self.space.len() {
            return Err(Error::invalid(format!("action {action} out of range")));
        }
        let probs = self.action_probs(x)?;
        if probs[action] == 0.0 {
            return Err(Error::UnsupportedAction { action });
        }
        let mut out = DMatrix::zeros(self.theta.nrows(), self.theta.ncols());
        let mut indicator = vec![0.0; self.theta.ncols()];
        for &j in self.space.active(action, IndicatorMode::Lcpi) {
            indicator[j] = 1.0;
        }
        let mut mean = vec![0.0; self.theta.ncols()];
        for (a, &p) in probs.iter().enumerate() {
            for &j in self.space.active(a, IndicatorMode::Lcpi) {
                mean[j] += p;
            }
        }
        for j in 0..self.theta.ncols() {
            let g = indicator[j] - mean[j];
            for (k, &xk) in x.iter().enumerate() {
                out[(k, j)] = xk * g;
            }
        }
        Ok(out)
    }

    /// Mean probability mass on new actions over `contexts`.
    pub fn new_action_mass<'a>(
        &self,
        partition: &ActionPartition,
        contexts: impl IntoIterator<Item = &'a [f64]>,
    ) -> Result<f64> {
        new_action_mass(self, partition, contexts)
    }

    /// Plain-text checkpoint: a `rows cols` header followed by theta in row-major order.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.theta.nrows(), self.theta.ncols());
        for k in 0..self.theta.nrows() {
            for j in 0..self.theta.ncols() {
                let _ = writeln!(s, "{:.16e}", self.theta[(k, j)]);
            }
        }
        s
    }

    /// Inverse of [`to_text`](Self::to_text), restoring theta into a policy over `space`.
    pub fn from_text(text: &str, space: Arc<ActionSpace>) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::invalid("empty checkpoint"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::invalid(format!("bad checkpoint header {header:?}")))
            })
            .collect::<Result<_>>()?;
        let [rows, cols] = dims[..] else {
            return Err(Error::invalid(format!("bad checkpoint header {header:?}")));
        };
        let values: Vec<f64> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad checkpoint value {l:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != rows * cols {
            return Err(Error::invalid(format!(
                "checkpoint has {} values, header says {rows}x{cols}",
                values.len()
            )));
        }
        let theta = DMatrix::from_row_slice(rows, cols, &values);
        Self::zeros(space, rows).with_theta(theta)
    }
}

impl ActionDistribution for PolicyParams {
    fn action_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        PolicyParams::action_probs(self, x)
    }
}

/// Reusable buffers for [`PolicyParams::accumulate_weighted_score`].
#[derive(Debug, Default)]
pub(crate) struct ScoreScratch {
    g: Vec<f64>,
    c: Vec<f64>,
}

impl ScoreScratch {
    fn reset(&mut self, width: usize) {
        self.g.clear();
        self.g.resize(width, 0.0);
    }
}

pub fn new_action_mass<'a>(
    policy: &dyn ActionDistribution,
    partition: &ActionPartition,
    contexts: impl IntoIterator<Item = &'a [f64]>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for x in contexts {
        let p = policy.action_probs(x)?;
        total += partition.new_actions().iter().map(|&a| p[a]).sum::<f64>();
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("new-action mass needs at least one context"));
    }
    Ok(total / count as f64)
}
