//! Policy-gradient estimators from logged data: IPS, DR, the pseudoinverse
//! family (PI and LCPI) and their PONA interpolation.
//!
//! Every estimator has the form `(1/n) sum_i sum_a pi(a|x_i) w_i(a) grad log pi(a|x_i)`
//! with per-row action weights `w_i` that do not depend on the policy, and its
//! value counterpart `(1/n) sum_i sum_a pi(a|x_i) w_i(a)`. [`Objective`]
//! precomputes the weights once per dataset.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ActionPartition, LoggedDataset};
use crate::error::{Error, Result};
use crate::features::{ActionSpace, IndicatorMode};
use crate::linalg::{pinv_symmetric, DEFAULT_PINV_TOL};
use crate::policy::{ActionDistribution, PolicyParams, ScoreScratch};
use crate::qmodel::QModel;

/// Tolerance on the total mass of a logging distribution.
pub const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum EstimatorKind {
    Ips,
    Dr,
    Pi,
    Lcpi,
    Pona { kappa: f64 },
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Ips => write!(f, "ips"),
            EstimatorKind::Dr => write!(f, "dr"),
            EstimatorKind::Pi => write!(f, "pi"),
            EstimatorKind::Lcpi => write!(f, "lcpi"),
            EstimatorKind::Pona { kappa } => write!(f, "pona(kappa={kappa})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub grad: DMatrix<f64>,
    pub estimator: EstimatorKind,
    /// `max_i pi(a_i|x_i) / pi_0(a_i|x_i)`.
    pub max_importance_weight: f64,
    /// `(sum_i w_i)^2 / sum_i w_i^2` over the same importance weights.
    pub effective_sample_size: f64,
}

/// `Gamma_x = sum_a pi_0(a|x) I_a I_a^T` over the actions with positive logging mass.
pub fn gamma_matrix(space: &ActionSpace, logging_probs: &[f64], mode: IndicatorMode) -> Result<DMatrix<f64>> {
    check_distribution(space, logging_probs)?;
    let width = space.indicator_len(mode);
    let mut gamma = DMatrix::zeros(width, width);
    for (a, &p) in logging_probs.iter().enumerate() {
        if p > 0.0 {
            let active = space.active(a, mode);
            for &i in active {
                for &j in active {
                    gamma[(i, j)] += p;
                }
            }
        }
    }
    Ok(gamma)
}

/// `theta_{pi_0,x} = sum_a pi_0(a|x) I_a q(x,a)`.
pub fn value_vector(
    space: &ActionSpace,
    logging_probs: &[f64],
    q: &[f64],
    mode: IndicatorMode,
) -> Result<DVector<f64>> {
    check_distribution(space, logging_probs)?;
    if q.len() != space.len() {
        return Err(Error::invalid("q table must cover the action space"));
    }
    let mut out = DVector::zeros(space.indicator_len(mode));
    for (a, &p) in logging_probs.iter().enumerate() {
        if p > 0.0 {
            for &j in space.active(a, mode) {
                out[j] += p * q[a];
            }
        }
    }
    Ok(out)
}

fn check_distribution(space: &ActionSpace, probs: &[f64]) -> Result<()> {
    if probs.len() != space.len() {
        return Err(Error::invalid(format!(
            "distribution has {} entries for {} actions",
            probs.len(),
            space.len()
        )));
    }
    if probs.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::invalid("distribution has negative or non-finite entries"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::invalid(format!("logging probabilities sum to {total}, not 1")));
    }
    Ok(())
}

/// Per-row weights: `w(a) = dense[a] + [a == point.0] * point.1`.
#[derive(Debug, Clone)]
struct RowTerm {
    dense: Option<Vec<f64>>,
    point: Option<(usize, f64)>,
}

/// An estimator bound to a dataset, with all policy-independent work done.
#[derive(Debug, Clone)]
pub struct Objective {
    kind: EstimatorKind,
    contexts: Vec<Vec<f64>>,
    actions: Vec<usize>,
    propensities: Vec<f64>,
    terms: Vec<RowTerm>,
}

fn check_propensities(data: &LoggedDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("estimator needs at least one logged row"));
    }
    for (i, r) in data.rows.iter().enumerate() {
        if !(r.propensity > 0.0) {
            return Err(Error::Precondition(format!(
                "row {i} has logging propensity {}; importance weights need positive propensities",
                r.propensity
            )));
        }
    }
    Ok(())
}

/// `c_i[a] = I_a^T Gamma_{x_i}^+ I_{a_i} r_i` for every action.
fn pseudoinverse_weights(
    data: &LoggedDataset,
    space: &ActionSpace,
    mode: IndicatorMode,
    logging: &dyn ActionDistribution,
) -> Result<Vec<Vec<f64>>> {
    data.rows
        .iter()
        .map(|row| {
            if row.action >= space.len() {
                return Err(Error::invalid(format!("logged action {} out of range", row.action)));
            }
            let probs = logging.action_probs(&row.context)?;
            let gamma = gamma_matrix(space, &probs, mode)?;
            let pinv = pinv_symmetric(&gamma, DEFAULT_PINV_TOL)?;
            let mut g = DVector::<f64>::zeros(pinv.nrows());
            for &j in space.active(row.action, mode) {
                g += pinv.column(j);
            }
            Ok((0..space.len())
                .map(|a| space.active(a, mode).iter().map(|&j| g[j]).sum::<f64>() * row.reward)
                .collect())
        })
        .collect()
}

/// Model-term weights and logged-action residuals for DR.
fn dr_parts(data: &LoggedDataset, qhat: &QModel, partition: &ActionPartition) -> Result<Vec<(Vec<f64>, f64)>> {
    data.rows
        .iter()
        .map(|row| {
            let mut q = qhat.predict_all(&row.context)?;
            for a in partition.new_actions() {
                q[*a] = 0.0;
            }
            let resid = (row.reward - qhat.predict(&row.context, row.action)?) / row.propensity;
            Ok((q, resid))
        })
        .collect()
}

impl Objective {
    fn from_terms(kind: EstimatorKind, data: &LoggedDataset, terms: Vec<RowTerm>) -> Self {
        Self {
            kind,
            contexts: data.rows.iter().map(|r| r.context.clone()).collect(),
            actions: data.rows.iter().map(|r| r.action).collect(),
            propensities: data.rows.iter().map(|r| r.propensity).collect(),
            terms,
        }
    }

    pub fn ips(data: &LoggedDataset) -> Result<Self> {
        check_propensities(data)?;
        let terms = data
            .rows
            .iter()
            .map(|r| RowTerm {
                dense: None,
                point: Some((r.action, r.reward / r.propensity)),
            })
            .collect();
        Ok(Self::from_terms(EstimatorKind::Ips, data, terms))
    }

    /// DR with the model term summed over existing actions only.
    pub fn dr(data: &LoggedDataset, qhat: &QModel, partition: &ActionPartition) -> Result<Self> {
        check_propensities(data)?;
        let terms = dr_parts(data, qhat, partition)?
            .into_iter()
            .zip(&data.rows)
            .map(|((q, resid), r)| RowTerm {
                dense: Some(q),
                point: Some((r.action, resid)),
            })
            .collect();
        Ok(Self::from_terms(EstimatorKind::Dr, data, terms))
    }

    /// PI (`mode = Pi`) or LCPI (`mode = Lcpi`); `logging` supplies the exact Gamma per context.
    pub fn pseudoinverse(
        data: &LoggedDataset,
        space: &ActionSpace,
        mode: IndicatorMode,
        logging: &dyn ActionDistribution,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("estimator needs at least one logged row"));
        }
        let kind = match mode {
            IndicatorMode::Pi => EstimatorKind::Pi,
            IndicatorMode::Lcpi => EstimatorKind::Lcpi,
        };
        let terms = pseudoinverse_weights(data, space, mode, logging)?
            .into_iter()
            .map(|c| RowTerm {
                dense: Some(c),
                point: None,
            })
            .collect();
        Ok(Self::from_terms(kind, data, terms))
    }

    /// `kappa * LCPI + (1 - kappa) * DR`, folded into one set of weights.
    pub fn pona(
        data: &LoggedDataset,
        space: &ActionSpace,
        qhat: &QModel,
        partition: &ActionPartition,
        logging: &dyn ActionDistribution,
        kappa: f64,
    ) -> Result<Self> {
        check_kappa(kappa)?;
        check_propensities(data)?;
        let lcpi = pseudoinverse_weights(data, space, IndicatorMode::Lcpi, logging)?;
        let dr = dr_parts(data, qhat, partition)?;
        let terms = lcpi
            .into_iter()
            .zip(dr)
            .zip(&data.rows)
            .map(|((c, (q, resid)), r)| RowTerm {
                dense: Some(c.iter().zip(&q).map(|(c, q)| kappa * c + (1.0 - kappa) * q).collect()),
                point: Some((r.action, (1.0 - kappa) * resid)),
            })
            .collect();
        Ok(Self::from_terms(EstimatorKind::Pona { kappa }, data, terms))
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Estimated policy value.
    pub fn value(&self, policy: &PolicyParams) -> Result<f64> {
        Ok(self.run(policy, None, false)?.0)
    }

    pub fn gradient(&self, policy: &PolicyParams) -> Result<GradientEstimate> {
        let (_, grad, weights) = self.run(policy, None, true)?;
        Ok(self.estimate(grad.expect("gradient requested"), &weights))
    }

    /// Value and gradient from a single pass over the rows.
    pub fn value_and_gradient(&self, policy: &PolicyParams) -> Result<(f64, DMatrix<f64>)> {
        self.value_and_gradient_on(policy, None)
    }

    /// As [`value_and_gradient`](Self::value_and_gradient), averaged over the rows in `subset` only.
    pub fn value_and_gradient_on(
        &self,
        policy: &PolicyParams,
        subset: Option<&[usize]>,
    ) -> Result<(f64, DMatrix<f64>)> {
        let (v, g, _) = self.run(policy, subset, true)?;
        Ok((v, g.expect("gradient requested")))
    }

    fn estimate(&self, grad: DMatrix<f64>, weights: &[f64]) -> GradientEstimate {
        let max = weights.iter().cloned().fold(0.0, f64::max);
        let sum: f64 = weights.iter().sum();
        let sq: f64 = weights.iter().map(|w| w * w).sum();
        GradientEstimate {
            grad,
            estimator: self.kind,
            max_importance_weight: max,
            effective_sample_size: if sq > 0.0 { sum * sum / sq } else { 0.0 },
        }
    }

    fn run(
        &self,
        policy: &PolicyParams,
        subset: Option<&[usize]>,
        want_grad: bool,
    ) -> Result<(f64, Option<DMatrix<f64>>, Vec<f64>)> {
        let n_actions = policy.space().len();
        let all: Vec<usize>;
        let rows = match subset {
            Some(s) => {
                if s.is_empty() || s.iter().any(|&i| i >= self.terms.len()) {
                    return Err(Error::invalid("row subset is empty or out of range"));
                }
                s
            }
            None => {
                all = (0..self.terms.len()).collect();
                &all
            }
        };
        let scale = 1.0 / rows.len() as f64;
        let mut grad = want_grad.then(|| DMatrix::zeros(policy.theta().nrows(), policy.theta().ncols()));
        let mut probs = vec![0.0; n_actions];
        let mut weights = vec![0.0; n_actions];
        let mut scratch = ScoreScratch::default();
        let mut value = 0.0;
        let mut iw = Vec::with_capacity(rows.len());
        for &i in rows {
            let term = &self.terms[i];
            let x = &self.contexts[i];
            if x.len() != policy.context_len() {
                return Err(Error::invalid("policy and dataset disagree on the context length"));
            }
            match &term.dense {
                Some(d) if d.len() == n_actions => weights.copy_from_slice(d),
                Some(_) => {
                    return Err(Error::invalid(
                        "estimator weights do not match the policy's action space",
                    ))
                }
                None => weights.fill(0.0),
            }
            if let Some((a, w)) = term.point {
                if a >= n_actions {
                    return Err(Error::invalid(format!("logged action {a} out of range")));
                }
                weights[a] += w;
            }
            policy.probs_into(x, &mut probs)?;
            iw.push(probs[self.actions[i]] / self.propensities[i]);
            let row_value = match grad.as_mut() {
                Some(g) => policy.accumulate_weighted_score(x, &probs, &weights, scale, g, &mut scratch),
                None => probs.iter().zip(&weights).map(|(p, w)| p * w).sum(),
            };
            value += scale * row_value;
        }
        Ok((value, grad, iw))
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::invalid(format!("kappa must lie in [0, 1], got {kappa}")));
    }
    Ok(())
}

pub fn grad_ips(policy: &PolicyParams, data: &LoggedDataset) -> Result<GradientEstimate> {
    Objective::ips(data)?.gradient(policy)
}

pub fn grad_dr(
    policy: &PolicyParams,
    data: &LoggedDataset,
    qhat: &QModel,
    partition: &ActionPartition,
) -> Result<GradientEstimate> {
    Objective::dr(data, qhat, partition)?.gradient(policy)
}

pub fn grad_pseudoinverse(
    policy: &PolicyParams,
    data: &LoggedDataset,
    mode: IndicatorMode,
    logging: &dyn ActionDistribution,
) -> Result<GradientEstimate> {
    Objective::pseudoinverse(data, policy.space(), mode, logging)?.gradient(policy)
}

/// `kappa * LCPI + (1 - kappa) * DR`, combined entrywise from the two estimates.
pub fn grad_pona(
    policy: &PolicyParams,
    data: &LoggedDataset,
    qhat: &QModel,
    partition: &ActionPartition,
    kappa: f64,
    logging: &dyn ActionDistribution,
) -> Result<GradientEstimate> {
    check_kappa(kappa)?;
    let dr = grad_dr(policy, data, qhat, partition)?;
    let lcpi = grad_pseudoinverse(policy, data, IndicatorMode::Lcpi, logging)?;
    let mut out = if kappa == 0.0 {
        dr
    } else if kappa == 1.0 {
        lcpi
    } else {
        let grad = lcpi.grad.zip_map(&dr.grad, |l, d| kappa * l + (1.0 - kappa) * d);
        GradientEstimate { grad, ..dr }
    };
    out.estimator = EstimatorKind::Pona { kappa };
    Ok(out)
}
