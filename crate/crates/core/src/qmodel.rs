//! Ridge-regression reward models on the bilinear context × action design.
//!
//! The design for row `(x, a)` is `(1, x) ⊗ phi(a)` where `phi(a)` is a one-hot
//! over existing actions (`ActionId`) or the LCPI indicator (`ActionFeature`).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ActionPartition, LoggedDataset};
use crate::error::{Error, Result};
use crate::features::{ActionSpace, IndicatorMode};
use crate::linalg::{pinv_symmetric, DEFAULT_PINV_TOL};
use crate::math::masked_softmax_into;
use crate::policy::ActionDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QModelKind {
    ActionId,
    ActionFeature,
}

/// Default ridge strength for `n` training rows.
pub fn default_lambda(n: usize) -> f64 {
    1e-3 * n as f64
}

#[derive(Debug, Clone)]
pub struct QModel {
    kind: QModelKind,
    space: Arc<ActionSpace>,
    /// `column[a]` is the design column of action `a`; `None` when unsupported.
    column: Vec<Option<usize>>,
    /// context_len × design width
    weights: DMatrix<f64>,
    intercept: DVector<f64>,
    lambda: f64,
    used_pinv: bool,
}

impl QModel {
    pub fn fit(
        data: &LoggedDataset,
        space: Arc<ActionSpace>,
        partition: &ActionPartition,
        kind: QModelKind,
        lambda: f64,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("cannot fit a reward model on an empty dataset"));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!(
                "ridge strength must be finite and >= 0, got {lambda}"
            )));
        }
        if partition.n_actions() != space.len() {
            return Err(Error::invalid(
                "partition and action space disagree on the number of actions",
            ));
        }
        let column: Vec<Option<usize>> = match kind {
            QModelKind::ActionId => {
                let mut col = vec![None; space.len()];
                for (i, &a) in partition.existing().iter().enumerate() {
                    col[a] = Some(i);
                }
                col
            }
            QModelKind::ActionFeature => (0..space.len()).map(Some).collect(),
        };
        let mut model = Self {
            kind,
            space,
            column,
            weights: DMatrix::zeros(0, 0),
            intercept: DVector::zeros(0),
            lambda,
            used_pinv: false,
        };
        match kind {
            QModelKind::ActionId => model.fit_blocks(data, partition)?,
            QModelKind::ActionFeature => model.fit_joint(data)?,
        }
        if model.used_pinv {
            log::warn!("ridge normal equations were singular; used the pseudoinverse solution");
        }
        Ok(model)
    }

    /// One-hot designs make the normal equations block diagonal, one
    /// `(1 + context_len)`-sized block per existing action.
    fn fit_blocks(&mut self, data: &LoggedDataset, partition: &ActionPartition) -> Result<()> {
        let p = data.context_dim + 1;
        let width = partition.existing().len();
        let mut grams = vec![DMatrix::<f64>::zeros(p, p); width];
        let mut rhs = vec![DVector::<f64>::zeros(p); width];
        let mut z = DVector::zeros(p);
        for row in &data.rows {
            let c = self.column[row.action].ok_or(Error::UnsupportedAction { action: row.action })?;
            z[0] = 1.0;
            z.rows_mut(1, p - 1).copy_from_slice(&row.context);
            grams[c].ger(1.0, &z, &z, 1.0);
            rhs[c].axpy(row.reward, &z, 1.0);
        }
        self.weights = DMatrix::zeros(p - 1, width);
        self.intercept = DVector::zeros(width);
        for c in 0..width {
            let w = self.solve(std::mem::take(&mut grams[c]), &rhs[c])?;
            self.intercept[c] = w[0];
            self.weights.column_mut(c).copy_from(&w.rows(1, p - 1));
        }
        Ok(())
    }

    fn fit_joint(&mut self, data: &LoggedDataset) -> Result<()> {
        let p = data.context_dim + 1;
        let width = self.space.indicator_len(IndicatorMode::Lcpi);
        let dim = p * width;
        let mut gram = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for row in &data.rows {
            sparse_design(&self.space, &row.context, row.action, &mut idx, &mut val);
            for (&i, &vi) in idx.iter().zip(&val) {
                rhs[i] += row.reward * vi;
                for (&j, &vj) in idx.iter().zip(&val) {
                    gram[(i, j)] += vi * vj;
                }
            }
        }
        let w = self.solve(gram, &rhs)?;
        // flat layout is k * width + j, k = 0 being the intercept
        self.intercept = DVector::from_iterator(width, (0..width).map(|j| w[j]));
        self.weights = DMatrix::from_fn(p - 1, width, |k, j| w[(k + 1) * width + j]);
        Ok(())
    }

    fn solve(&mut self, mut gram: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        for i in 0..gram.nrows() {
            gram[(i, i)] += self.lambda;
        }
        let singular = self.lambda == 0.0 && {
            let eig = gram.clone().symmetric_eigenvalues();
            eig.min() <= DEFAULT_PINV_TOL * eig.amax()
        };
        if !singular {
            if let Some(chol) = gram.clone().cholesky() {
                return Ok(chol.solve(rhs));
            }
        }
        self.used_pinv = true;
        Ok(pinv_symmetric(&gram, DEFAULT_PINV_TOL)? * rhs)
    }

    pub fn kind(&self) -> QModelKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// True when the normal equations had to be solved through the pseudoinverse.
    pub fn used_pinv(&self) -> bool {
        self.used_pinv
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn intercept(&self) -> &DVector<f64> {
        &self.intercept
    }

    /// All coefficients in the flat layout `k * width + j`, `k = 0` being the intercept row.
    pub fn flat_weights(&self) -> Vec<f64> {
        let width = self.intercept.len();
        let mut out = Vec::with_capacity(width * (self.weights.nrows() + 1));
        out.extend(self.intercept.iter());
        for k in 0..self.weights.nrows() {
            out.extend((0..width).map(|j| self.weights[(k, j)]));
        }
        out
    }

    pub fn supports(&self, action: usize) -> bool {
        self.column.get(action).is_some_and(|c| c.is_some())
    }

    /// Support mask over the action space.
    pub fn support_mask(&self) -> Vec<bool> {
        self.column.iter().map(|c| c.is_some()).collect()
    }

    pub fn predict(&self, x: &[f64], action: usize) -> Result<f64> {
        if action >= self.column.len() {
            return Err(Error::invalid(format!("action {action} out of range")));
        }
        self.check_context(x)?;
        let c = self.column[action].ok_or(Error::UnsupportedAction { action })?;
        Ok(match self.kind {
            QModelKind::ActionId => self.column_score(x, c),
            QModelKind::ActionFeature => self
                .space
                .active(action, IndicatorMode::Lcpi)
                .iter()
                .map(|&j| self.column_score(x, j))
                .sum(),
        })
    }

    /// Predictions for every action; unsupported actions get 0.
    pub fn predict_all(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_context(x)?;
        let scores: Vec<f64> = (0..self.intercept.len()).map(|j| self.column_score(x, j)).collect();
        Ok(self
            .column
            .iter()
            .enumerate()
            .map(|(a, c)| match (self.kind, c) {
                (_, None) => 0.0,
                (QModelKind::ActionId, Some(c)) => scores[*c],
                (QModelKind::ActionFeature, Some(_)) => self
                    .space
                    .active(a, IndicatorMode::Lcpi)
                    .iter()
                    .map(|&j| scores[j])
                    .sum(),
            })
            .collect())
    }

    fn column_score(&self, x: &[f64], j: usize) -> f64 {
        self.intercept[j] + self.weights.column(j).iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    fn check_context(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.weights.nrows() {
            return Err(Error::invalid(format!(
                "context has length {}, model expects {}",
                x.len(),
                self.weights.nrows()
            )));
        }
        Ok(())
    }

    /// Softmax over predicted rewards on the model's supported actions.
    pub fn to_policy(&self, temperature: f64) -> Result<QPolicy> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(QPolicy {
            model: self.clone(),
            temperature,
            support: self.support_mask(),
        })
    }
}

/// Nonzero entries of `(1, x) ⊗ indicator(a)` in the flat layout `k * width + j`.
fn sparse_design(space: &ActionSpace, x: &[f64], a: usize, idx: &mut Vec<usize>, val: &mut Vec<f64>) {
    let width = space.indicator_len(IndicatorMode::Lcpi);
    idx.clear();
    val.clear();
    let active = space.active(a, IndicatorMode::Lcpi);
    for &j in active {
        idx.push(j);
        val.push(1.0);
    }
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            for &j in active {
                idx.push((k + 1) * width + j);
                val.push(xk);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct QPolicy {
    model: QModel,
    temperature: f64,
    support: Vec<bool>,
}

impl QPolicy {
    pub fn model(&self) -> &QModel {
        &self.model
    }
}

impl ActionDistribution for QPolicy {
    fn action_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let q = self.model.predict_all(x)?;
        let mut out = vec![0.0; q.len()];
        masked_softmax_into(&q, 1.0 / self.temperature, Some(&self.support), &mut out);
        Ok(out)
    }
}
