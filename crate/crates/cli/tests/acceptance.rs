//! Acceptance checks, run without the libtest harness so the report is
//! always printed. Each criterion prints one PASS/FAIL line and the target
//! exits nonzero if any required criterion fails. Tolerances are pinned below.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlform::report::to_json;
use nlform::run::{LyapunovOutcome, Model, TaskResult};
use nlform::{builtin, run, RunOptions, RunReport, Scenario, Task, TaskStatus};
use nlform_core::criteria::TriState;
use nlform_core::discretization::{self, Grid, LocalConstant, PairKernel};
use nlform_core::lyapunov::{weighted_pair_energy_probe, GeneratorVariant, TruncatedContext};
use nlform_core::model::{Kernel, KernelFamily, Potential};
use nlform_core::quadrature::{self, Verdict};
use nlform_core::sharpness::FailureVerdict;
use nlform_core::spectral::{self, GapMethod, StabilityVerdict};

const SYMMETRY_TOL: f64 = 1e-12;
const CONSTANT_TOL: f64 = 1e-12;
const PROBE_FLOOR: f64 = -1e-10;
const FORM_PROBES: usize = 100;
const SCENARIO_BUDGET: Duration = Duration::from_secs(60);
const ORACLE_NODES: usize = 512;
const ORACLE_TOL: f64 = 1e-8;
const LOCAL_SLACK: f64 = 1.05;
const ENERGY_PROBES: usize = 50;
const ENERGY_TOL: f64 = 1e-8;
const ENERGY_FLOOR: f64 = -1e-10;
const CERT_BUDGET: Duration = Duration::from_secs(300);
const DICHOTOMY_SLOPE: f64 = 0.3;
const DICHOTOMY_REL: f64 = 0.25;
const THRESHOLD_FAILS: f64 = 0.1;
const THRESHOLD_FLAT: f64 = 0.1;
const THRESHOLD_HOLDS: f64 = -0.05;
const THRESHOLD_BUDGET: Duration = Duration::from_secs(600);
const BETA_REL: f64 = 0.2;
const LAMBDA_STAR: f64 = 2.0;
const LAMBDA_STEP: f64 = 0.25;
const QUAD_TOL: f64 = 1e-9;

struct Ledger {
    lines: Vec<(String, bool, bool)>,
}

impl Ledger {
    fn record(&mut self, id: &str, pass: bool, required: bool, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        let note = if required { "" } else { " (not required)" };
        println!("{tag} [{id}] {detail}{note}");
        self.lines.push((id.to_string(), pass, required));
    }
}

struct Run {
    scenario: Scenario,
    report: RunReport,
    json: String,
    elapsed: Duration,
}

fn run_builtins() -> BTreeMap<String, Run> {
    builtin::names()
        .map(|name| {
            let scenario = builtin::builtin(name).unwrap().unwrap();
            let start = Instant::now();
            let report = run(&scenario, &RunOptions::default());
            let elapsed = start.elapsed();
            let json = to_json(&report);
            (name.to_string(), Run { scenario, report, json, elapsed })
        })
        .collect()
}

fn result<'a>(runs: &'a BTreeMap<String, Run>, name: &str, task: Task) -> Option<&'a TaskResult> {
    let rec = runs[name].report.task(task)?;
    (rec.status == TaskStatus::Ok).then_some(())?;
    rec.result.as_ref()
}

fn probes(seed: u64, count: usize, len: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..len).map(|_| rng.gen_range(lo..hi)).collect()).collect()
}

fn quad(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    let v = nalgebra::DVector::from_column_slice(x);
    v.dot(&(a * &v))
}

fn form_sanity(runs: &BTreeMap<String, Run>, ledger: &mut Ledger) {
    let mut bad = Vec::new();
    for (name, r) in runs {
        let model = Model::build(&r.scenario).unwrap();
        let form = model.assemble(&r.scenario).unwrap();
        let a = form.matrix();
        let norm = a.norm();
        let asym = (a - a.transpose()).amax();
        let ones = DMatrix::from_element(a.ncols(), 1, 1.0);
        let row = (a * ones).amax();
        let worst = probes(11, FORM_PROBES, a.nrows(), -1.0, 1.0)
            .iter()
            .map(|x| quad(a, x) / norm)
            .fold(f64::INFINITY, f64::min);
        if asym > SYMMETRY_TOL * norm || row > CONSTANT_TOL * norm || worst < PROBE_FLOOR || r.elapsed > SCENARIO_BUDGET {
            bad.push(format!("{name}: asym {asym:.1e} row {row:.1e} probe {worst:.1e} time {:?}", r.elapsed));
        }
    }
    let slowest = runs.values().map(|r| r.elapsed).max().unwrap();
    ledger.record(
        "1",
        bad.is_empty(),
        true,
        format!("{} grids pass symmetry, constant and probe checks; slowest run {slowest:.1?} {bad:?}", runs.len()),
    );
}

fn oracle_agreement(runs: &BTreeMap<String, Run>, ledger: &mut Ledger) {
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for r in runs.values() {
        let model = Model::build(&r.scenario).unwrap();
        if model.grid.len() > ORACLE_NODES {
            continue;
        }
        let form = model.assemble(&r.scenario).unwrap();
        let dense = spectral::best_constant_with(&form, GapMethod::DenseOracle).unwrap().best_constant;
        let iter = spectral::best_constant_with(&form, GapMethod::InverseIteration).unwrap().best_constant;
        worst = worst.max((dense - iter).abs() / dense);
        compared += 1;
    }
    ledger.record(
        "2",
        compared > 0 && worst <= ORACLE_TOL,
        true,
        format!("dense and iterative constants agree on {compared} grids, worst relative gap {worst:.1e}"),
    );
}

fn local_inequality(runs: &BTreeMap<String, Run>, ledger: &mut Ledger) {
    let mut worst: f64 = 0.0;
    for r in runs.values() {
        let model = Model::build(&r.scenario).unwrap();
        let form = model.assemble(&r.scenario).unwrap();
        let radius = 0.5 * model.grid.radius();
        for f in probes(23, FORM_PROBES, form.len(), -1.0, 1.0) {
            let (lhs, rhs) = discretization::local_poincare_check(&form, radius, &f).unwrap();
            worst = worst.max(lhs / rhs);
        }
    }
    let potential = Potential::linear(2.0, 1).unwrap();
    let kernel = Kernel::fractional(1.0, 1).unwrap();
    let grid = Grid::new(1, 4.0, 33).unwrap();
    let truncated =
        discretization::local_poincare_constant(&potential, &PairKernel::Truncated(kernel), 0.5, &grid, QUAD_TOL).unwrap();
    ledger.record(
        "3",
        worst <= LOCAL_SLACK && truncated == LocalConstant::Infinite,
        true,
        format!("local inequality worst lhs/rhs {worst:.3}; truncated kernel on a unit ball gives {truncated:?}"),
    );
}

fn pair_energy(ledger: &mut Ledger) {
    let cases = [
        (Potential::linear(2.0, 1).unwrap(), Kernel::tempered(1.0, 1.0, 1).unwrap(), Grid::new(1, 8.0, 65).unwrap()),
        (Potential::log_polynomial(0.7, 1).unwrap(), Kernel::fractional(1.0, 1).unwrap(), Grid::new(1, 16.0, 65).unwrap()),
        (Potential::quadratic(2).unwrap(), Kernel::tempered(1.0, 1.0, 2).unwrap(), Grid::new(2, 4.0, 17).unwrap()),
    ];
    let mut worst_gap: f64 = 0.0;
    let mut lowest = f64::INFINITY;
    for (k, (potential, kernel, grid)) in cases.iter().enumerate() {
        for variant in [GeneratorVariant::RhoTruncated, GeneratorVariant::PsiTruncated] {
            let ctx = TruncatedContext::new(potential, kernel, grid, variant, QUAD_TOL).unwrap();
            let fs = probes(31 + k as u64, ENERGY_PROBES, grid.len(), -1.0, 1.0);
            let phis = probes(37 + k as u64, ENERGY_PROBES, grid.len(), 1.0, 2.0);
            for (f, phi) in fs.iter().zip(&phis) {
                let (pairs, generator) = weighted_pair_energy_probe(&ctx, f, phi).unwrap();
                worst_gap = worst_gap.max((pairs - generator).abs() / pairs.abs().max(generator.abs()));
                lowest = lowest.min(pairs.min(generator));
            }
        }
    }
    ledger.record(
        "4",
        worst_gap <= ENERGY_TOL && lowest >= ENERGY_FLOOR,
        true,
        format!("weighted pair energy: paths agree to {worst_gap:.1e}, smallest value {lowest:.2e}"),
    );
}

fn certificate(runs: &BTreeMap<String, Run>, ledger: &mut Ledger) {
    let cert_tol = runs["tempered_linear"].scenario.tolerances.cert;
    let detail = match result(runs, "tempered_linear", Task::Lyapunov) {
        Some(TaskResult::Lyapunov(l)) => match &l.outcome {
            LyapunovOutcome::Certificate { certificate, refined_margin, .. } => {
                let ok = certificate.c1 > 0.0
                    && certificate.margin >= -2.0 * cert_tol
                    && *refined_margin >= -2.0 * cert_tol
                    && runs["tempered_linear"].elapsed < CERT_BUDGET;
                (ok, format!("c1 {:.3}, margins {:.2e} / {:.2e}", certificate.c1, certificate.margin, refined_margin))
            }
            LyapunovOutcome::Failure { reason } => (false, format!("no certificate: {reason}")),
        },
        other => (false, format!("lyapunov task missing: {other:?}")),
    };
    ledger.record("5a", detail.0, true, format!("drift certificate for the tempered linear model: {}", detail.1));

    // With the weaker potential the criterion does not apply; the expected
    // outcome is that no certificate is produced.
    let weak = match result(runs, "tempered_linear_weak", Task::Lyapunov) {
        Some(TaskResult::Lyapunov(l)) => match &l.outcome {
            LyapunovOutcome::Failure { reason } => (true, format!("failure reported: {reason}")),
            LyapunovOutcome::Certificate { certificate, phi_over_h, .. } => (
                false,
                format!("certificate found anyway (margin {:.2e}, φ/h {:?})", certificate.margin, phi_over_h.verdict),
            ),
        },
        other => (false, format!("lyapunov task missing: {other:?}")),
    };
    ledger.record("5b", weak.0, false, format!("weak tempered linear model: {}", weak.1));
}

fn sweep_verdict(runs: &BTreeMap<String, Run>, name: &str) -> Option<StabilityVerdict> {
    match result(runs, name, Task::Gap) {
        Some(TaskResult::Gap(g)) => g.sweep.as_ref().map(|s| s.verdict),
        _ => None,
    }
}

fn slope(runs: &BTreeMap<String, Run>, name: &str) -> Option<(f64, FailureVerdict)> {
    match result(runs, name, Task::Sharpness) {
        Some(TaskResult::Sharpness(s)) => Some((s.fit.slope, s.verdict)),
        _ => None,
    }
}

fn dichotomy(runs: &BTreeMap<String, Run>, ledger: &mut Ledger) {
    let s = slope(runs, "heavy_tail_dichotomy");
    let slope_ok = s.is_some_and(|(v, _)| (v - DICHOTOMY_SLOPE).abs() <= DICHOTOMY_REL * DICHOTOMY_SLOPE);
    let verdicts: Vec<_> = [
        "heavy_tail_dichotomy",
        "heavy_tail_dichotomy_weighted",
        "heavy_tail_stable",
        "heavy_tail_stable_weighted",
    ]
    .iter()
    .map(|n| sweep_verdict(runs, n))
    .collect();
    use StabilityVerdict::*;
    let sweeps_ok = verdicts == [Some(Diverging), Some(Stable), Some(Stable), Some(Stable)];
    ledger.record(
        "6",
        slope_ok && sweeps_ok,
        true,
        format!("heavy tail: failure slope {s:?}, sweeps (unweighted, weighted, stable, stable weighted) {verdicts:?}"),
    );
}

fn threshold(runs: &BTreeMap<String, Run>, ledger: &mut Ledger) {
    let get = |n: &str| slope(runs, n).map(|s| s.0).unwrap_or(f64::NAN);
    let (below, at, above) = (get("threshold_e07"), get("threshold_e10"), get("threshold_e13"));
    let time = ["threshold_e07", "threshold_e10", "threshold_e13"].iter().map(|n| runs[*n].elapsed).sum::<Duration>();
    ledger.record(
        "7",
        below > THRESHOLD_FAILS && at.abs() <= THRESHOLD_FLAT && above < THRESHOLD_HOLDS && time < THRESHOLD_BUDGET,
        true,
        format!("threshold slopes {below:.3} / {at:.3} / {above:.3} in {time:.1?}"),
    );
}

fn beta(runs: &BTreeMap<String, Run>, ledger: &mut Ledger) {
    let detail = match result(runs, "super_poincare_rate", Task::Beta) {
        Some(TaskResult::Beta(b)) => {
            let reference = b.reference_slope.unwrap_or(f64::NAN);
            let slope = b.profile.slope;
            ((slope - reference).abs() <= BETA_REL * reference, format!("slope {slope:.3} against {reference}"))
        }
        other => (false, format!("beta task missing: {other:?}")),
    };
    ledger.record("8", detail.0, true, format!("super Poincaré rate: {}", detail.1));
}

fn concentration(runs: &BTreeMap<String, Run>, ledger: &mut Ledger) {
    let get = |n: &str| match result(runs, n, Task::Concentration) {
        Some(TaskResult::Concentration(c)) => Some(c.clone()),
        _ => None,
    };
    let (linear, logpoly, stretched) =
        (get("concentration_linear"), get("concentration_log_polynomial"), get("concentration_stretched"));
    let lin = linear.as_ref().map(|c| c.lambda_star);
    let lin_ok = lin.is_some_and(|l| (l - LAMBDA_STAR).abs() <= LAMBDA_STEP);
    let log_ok = logpoly
        .as_ref()
        .is_some_and(|c| c.lambda_star == 0.0 && c.moment_curve.iter().all(|p| p.verdict == Verdict::Divergent));
    let str_ok = stretched.as_ref().is_some_and(|c| c.stretched_check.verdict == Verdict::Divergent);
    ledger.record(
        "9",
        lin_ok && log_ok && str_ok,
        true,
        format!("λ* linear {lin:?}; log-polynomial all divergent {log_ok}; stretched check divergent {str_ok}"),
    );
}

fn power_kernel(p: f64, dim: usize) -> Kernel {
    let rho: nlform_core::model::RadialFn = Arc::new(move |r: f64| r.powf(-p));
    Kernel::new(KernelFamily::custom(&format!("r^-{p}"), rho, p >= 0.0), dim).unwrap()
}

fn custom_kernels(ledger: &mut Ledger) {
    use Verdict::{Convergent as C, Divergent as D};
    // (integral, dimension, p, expected) with the closed-form rules
    // d < p < d+2, d+p > 0 and p > d+α₀.
    let cases: [(&str, usize, f64, Verdict); 12] = [
        ("levy", 1, 2.0, C),
        ("levy", 1, 3.5, D),
        ("levy", 1, 0.5, D),
        ("levy", 2, 3.5, C),
        ("inverse_ball", 1, 2.0, C),
        ("inverse_ball", 1, -1.5, D),
        ("inverse_ball", 2, -2.5, D),
        ("inverse_ball", 2, -1.5, C),
        ("tail_moment", 1, 2.0, C),
        ("tail_moment", 1, 1.0, D),
        ("tail_moment", 2, 3.0, C),
        ("tail_moment", 2, 2.0, D),
    ];
    let mut wrong = Vec::new();
    for (which, dim, p, expected) in cases {
        let k = power_kernel(p, dim);
        let v = match which {
            "levy" => quadrature::levy_integral(&k, QUAD_TOL),
            "inverse_ball" => quadrature::inverse_kernel_ball_integral(&k, QUAD_TOL),
            _ => quadrature::tail_moment_integral(&k, 0.5, QUAD_TOL),
        };
        if v.verdict != expected {
            wrong.push(format!("{which} d={dim} p={p}: {:?}", v.verdict));
        }
    }
    ledger.record("10", wrong.is_empty(), true, format!("12 power-law kernel integrals classified; mismatches {wrong:?}"));
}

fn determinism(runs: &BTreeMap<String, Run>, ledger: &mut Ledger) {
    let differing: Vec<&String> = runs
        .iter()
        .filter(|(_, r)| to_json(&run(&r.scenario, &RunOptions::default())) != r.json)
        .map(|(n, _)| n)
        .collect();
    ledger.record("11", differing.is_empty(), true, format!("repeat runs byte-identical; differing {differing:?}"));
}

fn main() {
    let runs = run_builtins();
    for (name, r) in &runs {
        for t in &r.report.tasks {
            assert_eq!(t.status, TaskStatus::Ok, "{name} {}: {:?}", t.task, t.reason);
        }
    }
    if let Some(TaskResult::Check(c)) = result(&runs, "tempered_linear", Task::Check) {
        assert_eq!(c.satisfied, TriState::Satisfied);
    }

    let mut ledger = Ledger { lines: Vec::new() };
    form_sanity(&runs, &mut ledger);
    oracle_agreement(&runs, &mut ledger);
    local_inequality(&runs, &mut ledger);
    pair_energy(&mut ledger);
    certificate(&runs, &mut ledger);
    dichotomy(&runs, &mut ledger);
    threshold(&runs, &mut ledger);
    beta(&runs, &mut ledger);
    concentration(&runs, &mut ledger);
    custom_kernels(&mut ledger);
    determinism(&runs, &mut ledger);

    let failed: Vec<&str> = ledger.lines.iter().filter(|(_, pass, req)| *req && !pass).map(|l| l.0.as_str()).collect();
    if !failed.is_empty() {
        eprintln!("required criteria failed: {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all required criteria pass");
}
