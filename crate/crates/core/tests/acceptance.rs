//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test --release --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use common::checks;
use pona_core::experiment::{summarize, sweep_key, write_results, Stat, Summary};
use pona_core::{ExperimentConfig, Method, ResultRow, Runner};

const ORACLE_TOL: f64 = 1e-8;

#[derive(Default)]
struct Gate {
    passed: usize,
    failed: Vec<String>,
}

impl Gate {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if pass {
            self.passed += 1;
        } else {
            self.failed.push(name.to_string());
        }
    }
}

fn config(name: &str, out_dir: &Path) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    let mut cfg = ExperimentConfig::from_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    cfg.output.path = out_dir.join(name.replace(".toml", ".csv"));
    cfg
}

fn csv_bytes(rows: &[ResultRow]) -> Vec<u8> {
    let mut out = Vec::new();
    write_results(rows, &mut out).unwrap();
    out
}

type Table = BTreeMap<(u64, Method), Summary>;

fn stat(table: &Table, value: f64, method: Method, f: fn(&Summary) -> Option<Stat>) -> Stat {
    table
        .get(&(sweep_key(value), method))
        .and_then(f)
        .unwrap_or_else(|| panic!("no {method} results at {value}"))
}

fn overall(s: &Summary) -> Option<Stat> {
    s.norm_overall
}

fn mass(s: &Summary) -> Option<Stat> {
    s.new_action_mass
}

fn fmt(s: Stat) -> String {
    format!("{:.4}±{:.4}", s.mean, s.std_error)
}

fn error_count(rows: &[ResultRow]) -> usize {
    rows.iter().filter(|r| r.error.is_some()).count()
}

fn estimator_criteria(gate: &mut Gate) {
    let start = Instant::now();
    let lcpi = checks::lcpi_gap();
    let (pi_additive, pi_interacting) = checks::pi_gaps();
    let (ips, dr) = checks::full_support_gaps();
    let secs = start.elapsed().as_secs_f64();
    gate.check(
        "exact-expectation unbiasedness",
        lcpi < ORACLE_TOL
            && pi_additive < ORACLE_TOL
            && pi_interacting > 1e-3
            && ips < ORACLE_TOL
            && dr < ORACLE_TOL
            && secs < 5.0,
        format!(
            "lcpi {lcpi:.1e}, pi additive {pi_additive:.1e}, pi with interaction {pi_interacting:.1e} (> 1e-3), \
             ips {ips:.1e}, dr {dr:.1e}, {secs:.2}s"
        ),
    );

    let (err, unlogged) = checks::reward_recovery();
    gate.check(
        "reward recovery on locally supported actions",
        err < ORACLE_TOL && unlogged > 0,
        format!("max error {err:.1e} over supported actions, {unlogged} of them never logged"),
    );

    let (worst, bitwise) = checks::pona_interpolation(&[0.0, 0.25, 0.5, 0.75, 1.0]);
    gate.check(
        "pona interpolation",
        worst <= 1e-15 && bitwise,
        format!("max deviation {worst:.1e}, endpoints bitwise {bitwise}"),
    );

    let (fd, _) = checks::score_errors(100);
    gate.check(
        "score finite differences",
        fd < 1e-4,
        format!("max relative error {fd:.1e} over 100 triples"),
    );

    let (res, largest) = checks::penrose(50);
    gate.check(
        "penrose conditions",
        res < ORACLE_TOL && largest <= 64,
        format!("max residual {res:.1e} over 50 matrices up to {largest}x{largest}"),
    );
}

fn method_comparison(gate: &mut Gate, rows: &[ResultRow], secs: f64) {
    let table = summarize(rows);
    let n = 2000.0;
    let m = |method| stat(&table, n, method, mass);
    let v = |method| stat(&table, n, method, overall);

    let (pona_m, lcpi_m) = (m(Method::Pona), m(Method::Lcpi));
    gate.check(
        "methods (a) new-action mass of pona and lcpi",
        pona_m.mean > 0.02 && lcpi_m.mean > 0.02,
        format!("pona {}, lcpi {} (> 0.02)", fmt(pona_m), fmt(lcpi_m)),
    );

    let baselines = [Method::RegA, Method::Ips, Method::Dr];
    gate.check(
        "methods (b) baselines avoid new actions",
        baselines.iter().all(|&b| m(b).mean < 1e-3),
        baselines
            .iter()
            .map(|&b| format!("{b} {:.1e}", m(b).mean))
            .collect::<Vec<_>>()
            .join(", ")
            + " (< 1e-3)",
    );

    let (pona, dr, logging) = (v(Method::Pona), v(Method::Dr), v(Method::Logging));
    let rel = (pona.mean - dr.mean).abs() / dr.mean;
    gate.check(
        "methods (c) pona competitive with dr",
        rel <= 0.05 && pona.mean >= logging.mean && dr.mean >= logging.mean,
        format!(
            "pona {}, dr {}, relative gap {:.1}% (<= 5%), logging {}",
            fmt(pona),
            fmt(dr),
            100.0 * rel,
            fmt(logging)
        ),
    );

    let learned = [
        Method::RegA,
        Method::RegF,
        Method::Ips,
        Method::Dr,
        Method::Pi,
        Method::Lcpi,
        Method::Pona,
    ];
    gate.check(
        "methods (d) learned methods beat uniform",
        learned.iter().all(|&l| v(l).mean >= 1.0),
        learned
            .iter()
            .map(|&l| format!("{l} {:.3}", v(l).mean))
            .collect::<Vec<_>>()
            .join(", "),
    );

    let errors = error_count(rows);
    gate.check(
        "methods runtime and completeness",
        secs <= 600.0 && errors == 0,
        format!("{secs:.0}s (<= 600s), {errors} error rows"),
    );
}

fn gamma_robustness(gate: &mut Gate, rows: &[ResultRow], gammas: &[f64]) {
    let table = summarize(rows);
    let v = |g, method| stat(&table, g, method, overall);
    let series = |method| {
        gammas
            .iter()
            .map(|&g| fmt(v(g, method)))
            .collect::<Vec<_>>()
            .join(" → ")
    };

    let lcpi_ok = gammas.windows(2).all(|w| {
        let (a, b) = (v(w[0], Method::Lcpi), v(w[1], Method::Lcpi));
        b.mean <= a.mean + a.std_error.max(b.std_error)
    });
    gate.check(
        "gamma lcpi non-increasing",
        lcpi_ok,
        format!("lcpi {}", series(Method::Lcpi)),
    );

    let (first, last) = (v(gammas[0], Method::Dr), v(gammas[gammas.len() - 1], Method::Dr));
    let change = (last.mean - first.mean).abs() / first.mean;
    gate.check(
        "gamma dr stable",
        change < 0.05,
        format!("dr {}, change {:.1}% (< 5%)", series(Method::Dr), 100.0 * change),
    );

    let pona_ok = gammas.iter().all(|&g| {
        let p = v(g, Method::Pona);
        p.mean >= v(g, Method::Lcpi).mean.min(v(g, Method::Dr).mean) - p.std_error
    });
    gate.check(
        "gamma pona above min(lcpi, dr)",
        pona_ok,
        format!("pona {}", series(Method::Pona)),
    );

    let errors = error_count(rows);
    gate.check("gamma completeness", errors == 0, format!("{errors} error rows"));
}

fn rho_monotonicity(gate: &mut Gate, rows: &[ResultRow], rhos: &[f64]) {
    let table = summarize(rows);
    let s = |r, f| stat(&table, r, Method::Pona, f);
    let series = |f| rhos.iter().map(|&r| fmt(s(r, f))).collect::<Vec<_>>().join(" → ");
    let mass_ok = rhos.windows(2).all(|w| {
        let (a, b) = (s(w[0], mass), s(w[1], mass));
        b.mean >= a.mean - a.std_error.max(b.std_error)
    });
    let value_ok = rhos.windows(2).all(|w| {
        let (a, b) = (s(w[0], overall), s(w[1], overall));
        b.mean <= a.mean + a.std_error.max(b.std_error)
    });
    let infeasible = rows.iter().filter(|r| r.feasible == Some(false)).count();
    gate.check(
        "rho new-action mass non-decreasing",
        mass_ok,
        format!("mass {} ({infeasible} infeasible selections)", series(mass)),
    );
    gate.check(
        "rho value non-increasing",
        value_ok,
        format!("value {}", series(overall)),
    );
}

/// Rerun on a different thread count; the full CSV for `full_rerun`, the first
/// two seeds otherwise.
fn determinism(gate: &mut Gate, runs: &[(&str, ExperimentConfig, Vec<ResultRow>, bool)]) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
    let mut details = Vec::new();
    let mut ok = true;
    for (name, cfg, rows, full_rerun) in runs {
        let on_disk = std::fs::read(&cfg.output.path).unwrap();
        let same_file = on_disk == csv_bytes(rows);
        let (expected, rerun_cfg) = if *full_rerun {
            (rows.clone(), cfg.clone())
        } else {
            let seeds = 2;
            let kept: Vec<ResultRow> = rows
                .iter()
                .filter(|r| r.seed < cfg.base_seed + seeds as u64)
                .cloned()
                .collect();
            (kept, ExperimentConfig { seeds, ..cfg.clone() })
        };
        let rerun = pool.install(|| Runner::new(rerun_cfg).unwrap().run());
        let same = same_file && csv_bytes(&rerun) == csv_bytes(&expected);
        ok &= same;
        details.push(format!("{name} {}", if same { "identical" } else { "differs" }));
    }
    gate.check("determinism", ok, details.join(", "));
}

fn timed_run(cfg: &ExperimentConfig) -> (Vec<ResultRow>, f64) {
    let start = Instant::now();
    let rows = Runner::new(cfg.clone()).unwrap().run_to_file().unwrap();
    (rows, start.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    let out = tempfile::tempdir().unwrap();
    let mut gate = Gate::default();

    estimator_criteria(&mut gate);

    let methods = config("acceptance_methods.toml", out.path());
    let (methods_rows, secs) = timed_run(&methods);
    method_comparison(&mut gate, &methods_rows, secs);

    let gamma = config("acceptance_gamma.toml", out.path());
    let (gamma_rows, _) = timed_run(&gamma);
    gamma_robustness(&mut gate, &gamma_rows, &gamma.sweep.values);

    let rho = config("acceptance_rho.toml", out.path());
    let (rho_rows, _) = timed_run(&rho);
    let mut rhos = rho.sweep.values.clone();
    rhos.sort_by(f64::total_cmp);
    rho_monotonicity(&mut gate, &rho_rows, &rhos);

    determinism(
        &mut gate,
        &[
            ("methods", methods, methods_rows, false),
            ("gamma", gamma, gamma_rows, false),
            ("rho", rho, rho_rows, true),
        ],
    );

    println!("{} passed, {} failed", gate.passed, gate.failed.len());
    if gate.failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", gate.failed.join("; "));
        ExitCode::FAILURE
    }
}
