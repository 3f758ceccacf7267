//! Task runner. Tasks run in dependency order and a failing task never
//! stops its siblings; only `beta` reads another task's output (the gap
//! constant, when no `c0` is configured).

use std::collections::BTreeMap;
use std::time::Instant;

use nlform_core::criteria::{self, CriterionReport, Theorem};
use nlform_core::discretization::{self, DiscreteForm, FormKind, Grid, LocalConstant};
use nlform_core::lyapunov::{self, GeneratorVariant, LyapunovCertificate, LyapunovError};
use nlform_core::model::{Kernel, Measure, Potential, Weight};
use nlform_core::quadrature::{self, IntegralVerdict};
use nlform_core::sharpness::{
    self, ConcentrationReport, FailureProbe, FailureVerdict, GridPolicy, RampKind, SlopeFit, SuperPoincareProfile,
};
use nlform_core::spectral::{self, GapMethod, GapResult, StabilitySweep};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scenario::{KernelSpec, PotentialSpec, Scenario, Task};

/// Grids at or below this size also run the iterative solver and report
/// its agreement with the dense one.
pub const ORACLE_COMPARE_LIMIT: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[derive(Default)]
pub struct RunOptions {
    pub seed: u64,
    pub timings: bool,
}


#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: Task,
    pub status: TaskStatus,
    pub reason: Option<String>,
    pub result: Option<TaskResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskResult {
    Check(CriterionReport),
    Gap(GapReport),
    Lyapunov(LyapunovReport),
    Sharpness(SharpnessReport),
    Beta(BetaReport),
    Concentration(ConcentrationReport),
}

/// Sanity checks of the assembled matrix, relative to its Frobenius norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormChecks {
    #[serde(with = "nlform_core::floats")]
    pub norm: f64,
    /// `max |A - Aᵀ| / ‖A‖`.
    #[serde(with = "nlform_core::floats")]
    pub symmetry_defect: f64,
    /// `max |A·1| / ‖A‖`.
    #[serde(with = "nlform_core::floats")]
    pub constant_defect: f64,
    /// `min xᵀAx / (‖A‖ ‖x‖²)` over the random probes.
    #[serde(with = "nlform_core::floats")]
    pub min_probe_quotient: f64,
    pub probes: usize,
}

/// Local inequality on the ball of half the box radius, tested on the same
/// random probes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalCheck {
    pub radius: f64,
    pub constant: LocalConstant,
    /// `max lhs / rhs` over the probes.
    #[serde(with = "nlform_core::floats")]
    pub worst_ratio: f64,
    pub probes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    #[serde(with = "nlform_core::floats")]
    pub iterative_constant: f64,
    #[serde(with = "nlform_core::floats")]
    pub relative_difference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub form: FormKind,
    pub gap: GapResult,
    pub checks: FormChecks,
    pub local: LocalCheck,
    pub oracle: Option<OracleComparison>,
    pub sweep: Option<StabilitySweep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum LyapunovOutcome {
    Certificate {
        certificate: LyapunovCertificate,
        refined_points_per_axis: usize,
        #[serde(with = "nlform_core::floats")]
        refined_margin: f64,
        /// Margins of at least `-2 cert_tol` on both grids.
        holds: bool,
        phi_over_h: IntegralVerdict,
    },
    /// No certificate of the drift form exists on this grid.
    Failure { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub alpha0: f64,
    pub variant: GeneratorVariant,
    #[serde(flatten)]
    pub outcome: LyapunovOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessReport {
    pub ramp: RampKind,
    pub form: FormKind,
    pub policy: GridPolicy,
    pub fit: SlopeFit,
    pub slope_tol: f64,
    pub verdict: FailureVerdict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantSource {
    Scenario,
    Gap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaReport {
    pub c0_source: ConstantSource,
    /// Exponent the slope should approach, when known in closed form.
    #[serde(with = "nlform_core::floats::option")]
    pub reference_slope: Option<f64>,
    pub profile: SuperPoincareProfile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub dimension: usize,
    pub radius: f64,
    pub points_per_axis: usize,
    pub spacing: f64,
    pub nodes: usize,
}

/// Numerical settings baked into the run, enough to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub seed: u64,
    pub quad_tol: f64,
    pub cert_tol: f64,
    pub grid: GridInfo,
    pub limit_levels: i32,
    pub limit_slope_tol: f64,
    pub settled_ratio: f64,
    pub max_doublings: usize,
    pub max_dyadic_levels: usize,
    pub dense_limit: usize,
    pub oracle_compare_limit: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub scenario: Scenario,
    pub settings: RunSettings,
    pub tasks: Vec<TaskRecord>,
    /// Wall-clock seconds per task; only with `--timings`, since it breaks
    /// byte-for-byte reproducibility.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

impl RunReport {
    pub fn any_failed(&self) -> bool {
        self.tasks.iter().any(|t| t.status == TaskStatus::Failed)
    }

    pub fn task(&self, task: Task) -> Option<&TaskRecord> {
        self.tasks.iter().find(|t| t.task == task)
    }
}

/// Model objects built once per run.
pub struct Model {
    pub potential: Potential,
    pub kernel: Kernel,
    pub weight: Weight,
    pub grid: Grid,
}

impl Model {
    pub fn build(s: &Scenario) -> Result<Model, String> {
        let potential = s.potential.build(s.dimension).map_err(|e| format!("potential: {e}"))?;
        let kernel = s.kernel.build(s.dimension).map_err(|e| format!("kernel: {e}"))?;
        let weight = Weight::from_spec(&s.weight, &potential, &kernel).map_err(|e| format!("weight: {e}"))?;
        let grid = Grid::new(s.dimension, s.grid.radius, s.grid.points_per_axis).map_err(|e| format!("grid: {e}"))?;
        Ok(Model { potential, kernel, weight, grid })
    }

    pub fn assemble(&self, s: &Scenario) -> Result<DiscreteForm, String> {
        discretization::assemble(&self.potential, &self.kernel, &self.weight, &self.grid, s.form, s.tolerances.quad)
            .map_err(|e| e.to_string())
    }
}

/// Criterion matching the kernel family and form unless the scenario names one.
pub fn theorem_for(s: &Scenario) -> Theorem {
    if let Some(t) = s.theorem {
        return t;
    }
    match (&s.kernel, s.form) {
        (KernelSpec::FractionalTempered { .. }, FormKind::Rho) => Theorem::TemperedFractional,
        (KernelSpec::Fractional { .. }, FormKind::Rho) => Theorem::Fractional,
        (KernelSpec::FractionalTempered { .. }, FormKind::Psi) => Theorem::TemperedFractionalDoublePotential,
        (KernelSpec::Fractional { .. }, FormKind::Psi) => Theorem::FractionalDoublePotential,
    }
}

/// Open upper end of the admissible `α₀` range, `None` when the criterion
/// takes no exponent.
fn alpha0_bound(theorem: Theorem, kernel: &KernelSpec) -> Option<f64> {
    let alpha = kernel.alpha();
    match theorem {
        Theorem::Fractional => Some(alpha / 2.0),
        Theorem::FractionalDoublePotential => Some(alpha.min(1.0)),
        Theorem::WeightInsideForm => None,
        _ => Some(1.0),
    }
}

fn run_check(s: &Scenario, m: &Model) -> Result<CriterionReport, String> {
    let theorem = theorem_for(s);
    let (p, k, tol) = (&m.potential, &m.kernel, s.tolerances.quad);
    let check = |alpha0: f64| match theorem {
        Theorem::TemperedFractional => criteria::check_tempered_fractional(p, k, alpha0),
        Theorem::Fractional => criteria::check_fractional(p, k, alpha0),
        Theorem::GeneralKernel => criteria::check_general_kernel(p, k, alpha0, tol),
        Theorem::GeneralKernelDoublePotential => criteria::check_general_kernel_double_potential(p, k, alpha0, tol),
        Theorem::TemperedFractionalDoublePotential => criteria::check_tempered_fractional_double_potential(p, k, alpha0),
        Theorem::FractionalDoublePotential => criteria::check_fractional_double_potential(p, k, alpha0),
        Theorem::WeightInsideForm => criteria::check_weight_inside_form(p, k),
    };
    let report = match (s.alpha0, alpha0_bound(theorem, &s.kernel)) {
        (Some(a), _) => check(a),
        (None, Some(bound)) => criteria::sweep_alpha0(bound, check),
        (None, None) => check(f64::NAN),
    };
    report.map_err(|e| e.to_string())
}

fn random_probes(seed: u64, count: usize, len: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn form_checks(form: &DiscreteForm, probes: &[Vec<f64>]) -> FormChecks {
    let a = form.matrix();
    let norm = a.norm();
    let n = a.nrows();
    let mut asym: f64 = 0.0;
    let mut row_sum: f64 = 0.0;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
            s += a[(i, j)];
        }
        row_sum = row_sum.max(s.abs());
    }
    let min_probe_quotient = probes
        .iter()
        .map(|x| {
            let v = quadratic_form(a, x);
            v / (norm * x.iter().map(|t| t * t).sum::<f64>())
        })
        .fold(f64::INFINITY, f64::min);
    FormChecks {
        norm,
        symmetry_defect: asym / norm,
        constant_defect: row_sum / norm,
        min_probe_quotient,
        probes: probes.len(),
    }
}

/// `xᵀAx` summed row by row in index order.
fn quadratic_form(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += a[(i, j)] * x[j];
        }
        total += x[i] * row;
    }
    total
}

fn local_check(form: &DiscreteForm, grid: &Grid, probes: &[Vec<f64>]) -> Result<LocalCheck, String> {
    let radius = 0.5 * grid.radius();
    let constant = discretization::local_poincare_constant_of_form(form, radius);
    let mut worst: f64 = 0.0;
    for f in probes {
        let (lhs, rhs) = discretization::local_poincare_check(form, radius, f).map_err(|e| e.to_string())?;
        worst = worst.max(lhs / rhs);
    }
    Ok(LocalCheck { radius, constant, worst_ratio: worst, probes: probes.len() })
}

fn run_gap(s: &Scenario, m: &Model, seed: u64) -> Result<GapReport, String> {
    let form = m.assemble(s)?;
    let gap = spectral::best_constant(&form).map_err(|e| e.to_string())?;
    let probes = random_probes(seed, s.gap.probes, form.len());
    let checks = form_checks(&form, &probes);
    let local = local_check(&form, &m.grid, &probes)?;
    let oracle = if form.len() <= ORACLE_COMPARE_LIMIT {
        let iterative = spectral::best_constant_with(&form, GapMethod::InverseIteration).map_err(|e| e.to_string())?;
        Some(OracleComparison {
            iterative_constant: iterative.best_constant,
            relative_difference: (iterative.best_constant - gap.best_constant).abs() / gap.best_constant,
        })
    } else {
        None
    };
    let sweep = if s.gap.sweep_radii.is_empty() {
        None
    } else {
        Some(
            spectral::constant_stability_sweep(
                &m.potential,
                &m.kernel,
                &m.weight,
                &s.gap.sweep_radii,
                s.gap.sweep_spacing,
                s.form,
                s.tolerances.quad,
            )
            .map_err(|e| format!("stability sweep: {e}"))?,
        )
    };
    Ok(GapReport { form: s.form, gap, checks, local, oracle, sweep })
}

fn lyapunov_alpha0(s: &Scenario, check: Option<&CriterionReport>) -> f64 {
    s.alpha0
        .or_else(|| check.and_then(|c| c.alpha0))
        .or_else(|| alpha0_bound(theorem_for(s), &s.kernel).map(|b| 0.5 * b))
        .unwrap_or(0.5)
}

fn run_lyapunov(s: &Scenario, m: &Model, alpha0: f64) -> Result<LyapunovReport, String> {
    let variant = match s.form {
        FormKind::Rho => GeneratorVariant::RhoTruncated,
        FormKind::Psi => GeneratorVariant::PsiTruncated,
    };
    let (p, k, quad, cert_tol) = (&m.potential, &m.kernel, s.tolerances.quad, s.tolerances.cert);
    let outcome = match lyapunov::fit_drift_certificate(p, k, alpha0, &m.grid, variant, cert_tol, quad) {
        Ok(certificate) => {
            let fine = lyapunov::refined(&m.grid).map_err(|e| e.to_string())?;
            let refined_margin =
                lyapunov::validate_certificate(&certificate, p, k, &fine, quad).map_err(|e| e.to_string())?;
            let phi_over_h = lyapunov::phi_over_h_integral(&certificate, p, k, quad).map_err(|e| e.to_string())?;
            let holds = certificate.margin >= -2.0 * cert_tol && refined_margin >= -2.0 * cert_tol;
            LyapunovOutcome::Certificate {
                certificate,
                refined_points_per_axis: fine.points_per_axis(),
                refined_margin,
                holds,
                phi_over_h,
            }
        }
        Err(e @ (LyapunovError::NoNegativeDriftRegion(_) | LyapunovError::TailDivergence(_))) => {
            LyapunovOutcome::Failure { reason: e.to_string() }
        }
        Err(e) => return Err(e.to_string()),
    };
    Ok(LyapunovReport { alpha0, variant, outcome })
}

fn run_sharpness(s: &Scenario, m: &Model) -> Result<SharpnessReport, String> {
    let cfg = &s.sharpness;
    let policy = GridPolicy {
        spacing: cfg.spacing,
        margin: cfg.margin,
        fixed_radius: (!cfg.enlarge_grid).then_some(s.grid.radius),
        ..GridPolicy::default()
    };
    let probe = FailureProbe {
        potential: &m.potential,
        kernel: &m.kernel,
        weight: &m.weight,
        ramp: cfg.ramp,
        form: s.form,
        policy,
        quad_tol: s.tolerances.quad,
    };
    let fit = sharpness::failure_slope(&probe, &cfg.n).map_err(|e| e.to_string())?;
    let verdict = fit.verdict(cfg.slope_tol);
    Ok(SharpnessReport { ramp: cfg.ramp, form: s.form, policy, fit, slope_tol: cfg.slope_tol, verdict })
}

fn run_beta(s: &Scenario, m: &Model, gap_constant: Option<f64>) -> Result<BetaReport, String> {
    let (c0, c0_source) = match (s.beta.c0, gap_constant) {
        (Some(c0), _) => (c0, ConstantSource::Scenario),
        (None, Some(c0)) => (c0, ConstantSource::Gap),
        (None, None) => return Err("no weighted Poincaré constant: set beta.c0 or run the gap task".into()),
    };
    let profile = sharpness::beta_rate(&m.potential, &m.kernel, &m.weight, c0, &s.beta.r).map_err(|e| e.to_string())?;
    let reference_slope = match (&s.potential, s.weight.clone()) {
        (PotentialSpec::LogPolynomial { epsilon }, nlform_core::model::WeightSpec::Power { exponent })
            if *epsilon > s.kernel.alpha() && (exponent - (epsilon - s.kernel.alpha())).abs() < 1e-12 =>
        {
            Some(sharpness::log_polynomial_rate_exponent(s.dimension, s.kernel.alpha(), *epsilon))
        }
        _ => None,
    };
    Ok(BetaReport { c0_source, reference_slope, profile })
}

fn run_concentration(s: &Scenario, m: &Model) -> Result<ConcentrationReport, String> {
    let measure =
        Measure::new(m.potential.clone(), s.form.reference_scale(), s.tolerances.quad).map_err(|e| e.to_string())?;
    let c = &s.concentration;
    sharpness::concentration_scan(&measure, &c.lambda, (c.c2, c.c3)).map_err(|e| e.to_string())
}

fn record<T>(task: Task, result: Result<T, String>, wrap: impl FnOnce(T) -> TaskResult) -> TaskRecord {
    match result {
        Ok(v) => TaskRecord { task, status: TaskStatus::Ok, reason: None, result: Some(wrap(v)) },
        Err(reason) => TaskRecord { task, status: TaskStatus::Failed, reason: Some(reason), result: None },
    }
}

fn grid_info(s: &Scenario) -> GridInfo {
    let n = s.grid.points_per_axis;
    GridInfo {
        dimension: s.dimension,
        radius: s.grid.radius,
        points_per_axis: n,
        spacing: 2.0 * s.grid.radius / (n - 1) as f64,
        nodes: n.pow(s.dimension as u32),
    }
}

/// Runs every task of `scenario`.
pub fn run(scenario: &Scenario, options: &RunOptions) -> RunReport {
    run_tasks(scenario, &scenario.tasks, options)
}

/// Runs `tasks` (in dependency order, whatever the order given).
pub fn run_tasks(scenario: &Scenario, tasks: &[Task], options: &RunOptions) -> RunReport {
    let mut tasks = tasks.to_vec();
    tasks.sort();
    tasks.dedup();
    let mut records = Vec::with_capacity(tasks.len());
    let mut timings = BTreeMap::new();
    let model = Model::build(scenario);
    let mut check: Option<CriterionReport> = None;
    let mut gap_constant: Option<f64> = None;
    for task in tasks {
        let start = Instant::now();
        let rec = match &model {
            Err(reason) => TaskRecord { task, status: TaskStatus::Failed, reason: Some(reason.clone()), result: None },
            Ok(m) => match task {
                Task::Check => {
                    let r = run_check(scenario, m);
                    check = r.as_ref().ok().cloned();
                    record(task, r, TaskResult::Check)
                }
                Task::Gap => {
                    let r = run_gap(scenario, m, options.seed);
                    gap_constant = r.as_ref().ok().map(|g| g.gap.best_constant);
                    record(task, r, TaskResult::Gap)
                }
                Task::Lyapunov => {
                    let alpha0 = lyapunov_alpha0(scenario, check.as_ref());
                    record(task, run_lyapunov(scenario, m, alpha0), TaskResult::Lyapunov)
                }
                Task::Sharpness => record(task, run_sharpness(scenario, m), TaskResult::Sharpness),
                Task::Beta => record(task, run_beta(scenario, m, gap_constant), TaskResult::Beta),
                Task::Concentration => record(task, run_concentration(scenario, m), TaskResult::Concentration),
            },
        };
        timings.insert(task.name().to_string(), start.elapsed().as_secs_f64());
        records.push(rec);
    }
    RunReport {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: scenario.clone(),
        settings: RunSettings {
            seed: options.seed,
            quad_tol: scenario.tolerances.quad,
            cert_tol: scenario.tolerances.cert,
            grid: grid_info(scenario),
            limit_levels: criteria::LIMIT_LEVELS,
            limit_slope_tol: criteria::LIMIT_SLOPE_TOL,
            settled_ratio: quadrature::SETTLED_RATIO,
            max_doublings: quadrature::MAX_DOUBLINGS,
            max_dyadic_levels: quadrature::MAX_DYADIC_LEVELS,
            dense_limit: spectral::DENSE_LIMIT,
            oracle_compare_limit: ORACLE_COMPARE_LIMIT,
        },
        tasks: records,
        timings: options.timings.then_some(timings),
    }
}
