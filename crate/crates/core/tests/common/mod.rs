//! Independent reference computations shared by the integration tests and the
//! acceptance suite. Nothing here calls the policy or estimator internals: the
//! softmax and its score are rebuilt from `encode` alone.

#![allow(dead_code)]

pub mod checks;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pona_core::env::{build_env, EnvOracle, Environment, RewardModel, SynthConfig};
use pona_core::features::{encode, ActionSpace, FeatureScheme, IndicatorMode};
use pona_core::{LoggedDataset, LoggedRow, PolicyParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The small instance: three binary dimensions, interaction over the first two,
/// `gamma = 0`, eight fixed contexts with equal probability.
pub struct Instance {
    pub env: EnvOracle,
    pub contexts: Vec<Vec<f64>>,
    pub space: Arc<ActionSpace>,
}

pub fn instance(new_action_fraction: f64, zero_local: bool, seed: u64) -> Instance {
    let env = build_env(&SynthConfig {
        context_dim: 2,
        cards: vec![2, 2, 2],
        interaction_width: 2,
        gamma: 0.0,
        new_action_fraction,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let env = if zero_local {
        let m = env.reward_model().clone();
        let local = DMatrix::zeros(m.local.nrows(), m.local.ncols());
        env.with_reward_model(RewardModel { local, ..m }).unwrap()
    } else {
        env
    };
    let mut r = rng(seed ^ 0x5eed);
    let contexts = (0..8).map(|_| env.sample_context(&mut r)).collect();
    let space = Arc::new(env.space().clone());
    Instance { env, contexts, space }
}

/// Dense indicator of every action, built with `encode`.
pub fn indicators(space: &ActionSpace, mode: IndicatorMode) -> Vec<DVector<f64>> {
    space
        .actions()
        .iter()
        .map(|f| {
            let bits = encode(f, space.scheme(), mode).unwrap().bits;
            DVector::from_iterator(bits.len(), bits.iter().map(|&b| f64::from(b)))
        })
        .collect()
}

/// Softmax of `x^T theta I_a` over all actions, computed directly.
pub fn oracle_probs(theta: &DMatrix<f64>, x: &[f64], ind: &[DVector<f64>]) -> Vec<f64> {
    let u = theta.transpose() * DVector::from_column_slice(x);
    let logits: Vec<f64> = ind.iter().map(|i| i.dot(&u)).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// `grad_theta log pi(a|x) = x (I_a - E_pi[I])^T`.
pub fn oracle_score(theta: &DMatrix<f64>, x: &[f64], a: usize, ind: &[DVector<f64>]) -> DMatrix<f64> {
    let p = oracle_probs(theta, x, ind);
    let mut mean = DVector::zeros(ind[0].len());
    for (pa, i) in p.iter().zip(ind) {
        mean += i * *pa;
    }
    DVector::from_column_slice(x) * (&ind[a] - mean).transpose()
}

/// True policy gradient over the instance's contexts.
pub fn true_pg(theta: &DMatrix<f64>, inst: &Instance) -> DMatrix<f64> {
    let ind = indicators(&inst.space, IndicatorMode::Lcpi);
    let mut g = DMatrix::zeros(theta.nrows(), theta.ncols());
    for x in &inst.contexts {
        let p = oracle_probs(theta, x, &ind);
        let q = inst.env.q_values(x).unwrap();
        for a in 0..p.len() {
            g += oracle_score(theta, x, a, &ind) * (p[a] * q[a]);
        }
    }
    g / inst.contexts.len() as f64
}

/// Exact expectation of a per-row estimator: every (context, logged action)
/// pair weighted by `p(x) pi_0(a|x)`, with the noiseless reward.
pub fn exact_expectation(inst: &Instance, estimate: impl Fn(&LoggedDataset) -> DMatrix<f64>) -> DMatrix<f64> {
    let mut total: Option<DMatrix<f64>> = None;
    let px = 1.0 / inst.contexts.len() as f64;
    for x in &inst.contexts {
        let p0 = inst.env.logging_probs(x).unwrap();
        let q = inst.env.q_values(x).unwrap();
        for (a, &p) in p0.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let row = LoggedRow {
                context: x.clone(),
                action: a,
                reward: q[a],
                propensity: p,
                marginals: None,
            };
            let data = LoggedDataset::new(x.len(), vec![row]).unwrap();
            let g = estimate(&data) * (px * p);
            total = Some(match total {
                Some(t) => t + g,
                None => g,
            });
        }
    }
    total.unwrap()
}

pub fn random_theta(rows: usize, cols: usize, scale: f64, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let n = Normal::new(0.0, scale).unwrap();
    DMatrix::from_fn(rows, cols, |_, _| n.sample(&mut r))
}

pub fn policy(space: &Arc<ActionSpace>, theta: DMatrix<f64>) -> PolicyParams {
    PolicyParams::zeros(space.clone(), theta.nrows())
        .with_theta(theta)
        .unwrap()
}

pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Random PSD matrices for the pseudoinverse checks: half with a controlled
/// spectrum (including exact zeros), half exact logging Gram matrices of
/// factored indicators.
pub fn psd_matrices(count: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut r = rng(seed);
    let schemes = [
        (vec![3, 3, 3], 2),
        (vec![4, 4, 4], 2),
        (vec![2, 2, 2, 2, 2], 3),
        (vec![4, 4, 4, 4], 2),
        (vec![5, 5, 5], 2),
        (vec![7, 7], 2),
    ];
    (0..count)
        .map(|k| {
            if k % 2 == 0 {
                let n = r.random_range(1..=64);
                let rank = r.random_range(0..=n);
                let a = DMatrix::from_fn(n, n, |_, _| r.random::<f64>() - 0.5);
                let q = a.qr().q();
                let lambda = DVector::from_fn(n, |i, _| if i < rank { r.random_range(0.05..2.0) } else { 0.0 });
                let m = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
                (&m + m.transpose()) * 0.5
            } else {
                let (cards, s) = &schemes[r.random_range(0..schemes.len())];
                let space = ActionSpace::full(FeatureScheme::new(cards.clone(), *s).unwrap()).unwrap();
                let keep = r.random_range(0.3..1.0);
                let mut w: Vec<f64> = (0..space.len())
                    .map(|_| {
                        if r.random::<f64>() < keep {
                            r.random::<f64>() + 0.05
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if w.iter().all(|&v| v == 0.0) {
                    w[0] = 1.0;
                }
                let z: f64 = w.iter().sum();
                let probs: Vec<f64> = w.iter().map(|v| v / z).collect();
                pona_core::estimators::gamma_matrix(&space, &probs, IndicatorMode::Lcpi).unwrap()
            }
        })
        .collect()
}

/// Largest violation of the four Penrose conditions.
pub fn penrose_residual(a: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let ap = a * p;
    let pa = p * a;
    [
        inf_norm(&(&ap * a - a)),
        inf_norm(&(&pa * p - p)),
        inf_norm(&(&ap - ap.transpose())),
        inf_norm(&(&pa - pa.transpose())),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}
