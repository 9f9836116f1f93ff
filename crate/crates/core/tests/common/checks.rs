//! Measurements behind the estimator-level criteria. Each returns the observed
//! quantity so callers can assert on it or report it.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pona_core::env::{build_env, generate_log, Environment, SynthConfig};
use pona_core::estimators::{gamma_matrix, grad_dr, grad_ips, grad_pona, grad_pseudoinverse, value_vector};
use pona_core::features::IndicatorMode;
use pona_core::linalg::{pinv, pinv_symmetric, DEFAULT_PINV_TOL};
use pona_core::policy::LoggingPolicy;
use pona_core::qmodel::{QModel, QModelKind};
use rand::Rng;

use super::*;

pub const SEEDS: [u64; 3] = [0, 1, 2];

fn gap(a: DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    inf_norm(&(a - b))
}

fn width(inst: &Instance) -> usize {
    inst.space.indicator_len(IndicatorMode::Lcpi)
}

pub fn qhat_for(inst: &Instance, seed: u64) -> QModel {
    let log = generate_log(&inst.env, 300, seed).unwrap();
    QModel::fit(
        &log,
        inst.space.clone(),
        inst.env.partition(),
        QModelKind::ActionFeature,
        1.0,
    )
    .unwrap()
}

fn pseudoinverse_gap(inst: &Instance, mode: IndicatorMode, theta_seed: u64) -> f64 {
    let theta = random_theta(inst.env.context_len(), width(inst), 0.5, theta_seed);
    let pi = policy(&inst.space, theta.clone());
    let logging = LoggingPolicy(&inst.env);
    let est = exact_expectation(inst, |d| grad_pseudoinverse(&pi, d, mode, &logging).unwrap().grad);
    gap(est, &true_pg(&theta, inst))
}

/// Largest LCPI gap to the true gradient with 25% of actions never logged.
pub fn lcpi_gap() -> f64 {
    SEEDS
        .iter()
        .map(|&s| {
            let inst = instance(0.25, false, s);
            assert!(!inst.env.partition().new_actions().is_empty());
            pseudoinverse_gap(&inst, IndicatorMode::Lcpi, 100 + s)
        })
        .fold(0.0, f64::max)
}

/// PI gap without the interaction term (largest) and with it (smallest).
pub fn pi_gaps() -> (f64, f64) {
    let additive = SEEDS
        .iter()
        .map(|&s| pseudoinverse_gap(&instance(0.25, true, s), IndicatorMode::Pi, 200 + s))
        .fold(0.0, f64::max);
    let interacting = SEEDS
        .iter()
        .map(|&s| pseudoinverse_gap(&instance(0.25, false, s), IndicatorMode::Pi, 200 + s))
        .fold(f64::INFINITY, f64::min);
    (additive, interacting)
}

/// Largest IPS and DR gaps with every action logged.
pub fn full_support_gaps() -> (f64, f64) {
    let mut out = (0.0f64, 0.0f64);
    for &s in &SEEDS {
        let inst = instance(0.0, false, s);
        let theta = random_theta(inst.env.context_len(), width(&inst), 0.5, 300 + s);
        let pi = policy(&inst.space, theta.clone());
        let truth = true_pg(&theta, &inst);
        let qhat = qhat_for(&inst, s);
        let ips = exact_expectation(&inst, |d| grad_ips(&pi, d).unwrap().grad);
        let dr = exact_expectation(&inst, |d| grad_dr(&pi, d, &qhat, inst.env.partition()).unwrap().grad);
        out.0 = out.0.max(gap(ips, &truth));
        out.1 = out.1.max(gap(dr, &truth));
    }
    out
}

/// Indicator of `a` lies in the span of the indicators logged with positive mass.
fn in_logged_span(ind: &[DVector<f64>], probs: &[f64], a: usize) -> bool {
    let cols: Vec<DVector<f64>> = ind
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, _)| i.clone())
        .collect();
    let basis = DMatrix::from_columns(&cols);
    let proj = &basis * pinv(&basis, DEFAULT_PINV_TOL).unwrap();
    (&proj * &ind[a] - &ind[a]).amax() < 1e-9
}

/// Largest reconstruction error of q on locally supported actions, and how many
/// of those actions were never logged.
pub fn reward_recovery() -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut unlogged = 0;
    for &s in &SEEDS {
        let inst = instance(0.25, false, s);
        let ind = indicators(&inst.space, IndicatorMode::Lcpi);
        for x in &inst.contexts {
            let p0 = inst.env.logging_probs(x).unwrap();
            let q = inst.env.q_values(x).unwrap();
            let gamma = gamma_matrix(&inst.space, &p0, IndicatorMode::Lcpi).unwrap();
            let theta = value_vector(&inst.space, &p0, &q, IndicatorMode::Lcpi).unwrap();
            let w = pinv_symmetric(&gamma, DEFAULT_PINV_TOL).unwrap() * DVector::from_column_slice(theta.as_slice());
            for a in (0..ind.len()).filter(|&a| in_logged_span(&ind, &p0, a)) {
                unlogged += usize::from(p0[a] == 0.0);
                worst = worst.max((ind[a].dot(&w) - q[a]).abs());
            }
        }
    }
    (worst, unlogged)
}

/// Largest deviation of PONA from the convex combination over the kappa grid,
/// and whether the endpoints reproduce DR and LCPI bit for bit.
pub fn pona_interpolation(kappas: &[f64]) -> (f64, bool) {
    let env = build_env(&SynthConfig {
        seed: 9,
        ..SynthConfig::default()
    })
    .unwrap();
    let space = Arc::new(env.space().clone());
    let data = generate_log(&env, 400, 9).unwrap();
    let qhat = QModel::fit(&data, space.clone(), env.partition(), QModelKind::ActionFeature, 1.0).unwrap();
    let logging = LoggingPolicy(&env);
    let pi = policy(
        &space,
        random_theta(env.context_len(), space.indicator_len(IndicatorMode::Lcpi), 0.3, 9),
    );
    let dr = grad_dr(&pi, &data, &qhat, env.partition()).unwrap().grad;
    let lcpi = grad_pseudoinverse(&pi, &data, IndicatorMode::Lcpi, &logging)
        .unwrap()
        .grad;
    let pona = |k| grad_pona(&pi, &data, &qhat, env.partition(), k, &logging).unwrap().grad;
    let worst = kappas
        .iter()
        .map(|&k| gap(pona(k), &lcpi.zip_map(&dr, |l, d| k * l + (1.0 - k) * d)))
        .fold(0.0, f64::max);
    let bitwise = |a: &DMatrix<f64>, b: &DMatrix<f64>| a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    (worst, bitwise(&pona(0.0), &dr) && bitwise(&pona(1.0), &lcpi))
}

/// Worst relative error of the analytic score against central differences, and
/// worst disagreement of the policy's probabilities and score with the reference.
pub fn score_errors(triples: usize) -> (f64, f64) {
    let env = build_env(&SynthConfig {
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap();
    let space = Arc::new(env.space().clone());
    let ind = indicators(&space, IndicatorMode::Lcpi);
    let mut r = rng(11);
    let h = 1e-5;
    let (mut fd_err, mut ref_err) = (0.0f64, 0.0f64);
    for t in 0..triples as u64 {
        let theta = random_theta(env.context_len(), ind[0].len(), 0.5, 1000 + t);
        let x = env.sample_context(&mut r);
        let a = r.random_range(0..space.len());
        let pi = policy(&space, theta.clone());

        let probs = pi.action_probs(&x).unwrap();
        for (p, q) in probs.iter().zip(oracle_probs(&theta, &x, &ind)) {
            ref_err = ref_err.max((p - q).abs());
        }
        let g = pi.grad_log_prob(&x, a).unwrap();
        ref_err = ref_err.max(gap(g.clone(), &oracle_score(&theta, &x, a, &ind)));

        let log_prob = |th: DMatrix<f64>| policy(&space, th).action_probs(&x).unwrap()[a].ln();
        let fd = DMatrix::from_fn(theta.nrows(), theta.ncols(), |i, j| {
            let mut up = theta.clone();
            up[(i, j)] += h;
            let mut down = theta.clone();
            down[(i, j)] -= h;
            (log_prob(up) - log_prob(down)) / (2.0 * h)
        });
        fd_err = fd_err.max(gap(g, &fd) / inf_norm(&fd).max(1e-8));
    }
    (fd_err, ref_err)
}

/// Largest Penrose residual of both pseudoinverse routines, and the largest size seen.
pub fn penrose(count: usize) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut largest = 0;
    for m in psd_matrices(count, 21) {
        largest = largest.max(m.nrows());
        worst = worst.max(penrose_residual(&m, &pinv_symmetric(&m, DEFAULT_PINV_TOL).unwrap()));
        worst = worst.max(penrose_residual(&m, &pinv(&m, DEFAULT_PINV_TOL).unwrap()));
    }
    (worst, largest)
}
