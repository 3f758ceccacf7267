//! Hypothesis checks for the weighted Poincaré criteria.
//!
//! Each check evaluates the integrability and tail-decay conditions of one
//! criterion and, when all of them hold numerically, reports the weight that
//! the criterion attaches to the variance. A report only ever says that the
//! hypotheses were verified numerically.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Kernel, KernelFamily, Measure, Potential, Scale, WeightSpec};
use crate::quadrature::{self, IntegralVerdict, Verdict, CIRCLE_NODES};

/// Sample radii `2^k` for `k = 0..=LIMIT_LEVELS`.
pub const LIMIT_LEVELS: i32 = 20;

/// Log-log slope magnitude below which a sampled product counts as flat.
pub const LIMIT_SLOPE_TOL: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriteriaError {
    #[error("bad parameter: {0}")]
    BadParameter(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    TemperedFractional,
    Fractional,
    GeneralKernel,
    GeneralKernelDoublePotential,
    TemperedFractionalDoublePotential,
    FractionalDoublePotential,
    WeightInsideForm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    LimitZero,
    BoundedAwayFromZero,
    Unbounded,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitSample {
    pub radius: f64,
    #[serde(with = "crate::floats")]
    pub value: f64,
    #[serde(with = "crate::floats")]
    pub log_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitVerdict {
    pub kind: LimitKind,
    /// Least-squares slope of `log value` against `log radius` over the last
    /// eight samples.
    #[serde(with = "crate::floats")]
    pub log_slope: f64,
    pub samples: Vec<LimitSample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriState {
    Satisfied,
    NotSatisfied,
    Undetermined,
}

impl TriState {
    fn from_integral(v: &IntegralVerdict) -> TriState {
        match v.verdict {
            Verdict::Convergent => TriState::Satisfied,
            Verdict::Divergent => TriState::NotSatisfied,
            Verdict::Inconclusive => TriState::Undetermined,
        }
    }

    fn from_limit(v: &LimitVerdict) -> TriState {
        match v.kind {
            LimitKind::LimitZero => TriState::Satisfied,
            LimitKind::BoundedAwayFromZero | LimitKind::Unbounded => TriState::NotSatisfied,
            LimitKind::Inconclusive => TriState::Undetermined,
        }
    }

    /// Conjunction: any failure fails, otherwise any unknown stays unknown.
    pub fn all(items: impl IntoIterator<Item = TriState>) -> TriState {
        let mut out = TriState::Satisfied;
        for t in items {
            match t {
                TriState::NotSatisfied => return TriState::NotSatisfied,
                TriState::Undetermined => out = TriState::Undetermined,
                TriState::Satisfied => {}
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConditionOutcome {
    Integral(IntegralVerdict),
    Limit(LimitVerdict),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub holds: TriState,
    pub outcome: ConditionOutcome,
}

impl Condition {
    fn integral(name: &str, v: IntegralVerdict) -> Condition {
        Condition {
            name: name.to_string(),
            holds: TriState::from_integral(&v),
            outcome: ConditionOutcome::Integral(v),
        }
    }

    fn limit(name: &str, v: LimitVerdict) -> Condition {
        Condition {
            name: name.to_string(),
            holds: TriState::from_limit(&v),
            outcome: ConditionOutcome::Limit(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub theorem: Theorem,
    pub alpha0: Option<f64>,
    /// Reference measure of the concluded inequality.
    pub measure: Scale,
    pub conditions: Vec<Condition>,
    pub satisfied: TriState,
    /// Weight in front of the variance; present iff `satisfied`.
    pub implied_weight: Option<WeightSpec>,
}

impl CriterionReport {
    fn new(
        theorem: Theorem,
        alpha0: Option<f64>,
        measure: Scale,
        conditions: Vec<Condition>,
        weight: WeightSpec,
    ) -> CriterionReport {
        let satisfied = TriState::all(conditions.iter().map(|c| c.holds));
        CriterionReport {
            theorem,
            alpha0,
            measure,
            conditions,
            implied_weight: (satisfied == TriState::Satisfied).then_some(weight),
            satisfied,
        }
    }

    /// First condition that is not satisfied, if any.
    pub fn failing_condition(&self) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.holds != TriState::Satisfied)
    }
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Classifies the asymptotics of `exp(log_product(r))` on `r = 2^k`.
///
/// A limit of zero needs the last four samples strictly decreasing and
/// either a drop below `1e-8` times the first sample or a sustained power
/// decay (log-log slope at most `-LIMIT_SLOPE_TOL`).
pub fn classify_limit(log_product: impl Fn(f64) -> f64) -> LimitVerdict {
    let samples: Vec<LimitSample> = (0..=LIMIT_LEVELS)
        .map(|k| {
            let radius = 2f64.powi(k);
            let log_value = log_product(radius);
            LimitSample { radius, value: log_value.exp(), log_value }
        })
        .collect();
    let n = samples.len();
    let lv: Vec<f64> = samples.iter().map(|s| s.log_value).collect();
    let tail = 8;
    let xs: Vec<f64> = samples[n - tail..].iter().map(|s| s.radius.ln()).collect();
    let log_slope = if lv[n - tail..].iter().all(|v| v.is_finite()) {
        fit_slope(&xs, &lv[n - tail..])
    } else {
        f64::NAN
    };
    let decreasing = (n - 4..n - 1).all(|i| lv[i + 1] < lv[i]);
    let increasing = (n - 4..n - 1).all(|i| lv[i + 1] > lv[i]);
    let first = lv[0];
    let last = lv[n - 1];
    let drop = 1e-8f64.ln();
    let kind = if last == f64::NEG_INFINITY || (decreasing && (last < first + drop || log_slope <= -LIMIT_SLOPE_TOL)) {
        LimitKind::LimitZero
    } else if last == f64::INFINITY || (increasing && (last > first - drop || log_slope >= LIMIT_SLOPE_TOL)) {
        LimitKind::Unbounded
    } else if log_slope.abs() < LIMIT_SLOPE_TOL && !decreasing {
        LimitKind::BoundedAwayFromZero
    } else {
        LimitKind::Inconclusive
    };
    LimitVerdict { kind, log_slope, samples }
}

fn check_alpha0(alpha0: f64, upper: f64, label: &str) -> Result<(), CriteriaError> {
    if alpha0 > 0.0 && alpha0 < upper {
        Ok(())
    } else {
        Err(CriteriaError::BadParameter(format!(
            "alpha0 = {alpha0} must lie in (0, {upper}) ({label})"
        )))
    }
}

fn tempered_params(kernel: &Kernel) -> Result<(f64, f64), CriteriaError> {
    match *kernel.family() {
        KernelFamily::FractionalTempered { alpha, delta } if delta > 0.0 => Ok((alpha, delta)),
        _ => Err(CriteriaError::BadParameter(
            "this criterion needs a tempered fractional kernel with delta > 0".to_string(),
        )),
    }
}

fn fractional_alpha(kernel: &Kernel) -> Result<f64, CriteriaError> {
    match *kernel.family() {
        KernelFamily::Fractional { alpha } => Ok(alpha),
        _ => Err(CriteriaError::BadParameter(
            "this criterion needs a fractional kernel".to_string(),
        )),
    }
}

/// `limsup sup_{|z|≥|x|} e^{-V(z)} e^{δ|x|} |x|^{d+α-α₀}`.
fn tempered_tail_product(potential: &Potential, alpha: f64, delta: f64, alpha0: f64) -> LimitVerdict {
    let d = potential.dim() as f64;
    classify_limit(|r| potential.log_tail_sup_exp_neg_v(r) + delta * r + (d + alpha - alpha0) * r.ln())
}

/// Tempered fractional kernel `e^{-δr} r^{-(d+α)}` against `μ_V`.
pub fn check_tempered_fractional(potential: &Potential, kernel: &Kernel, alpha0: f64) -> Result<CriterionReport, CriteriaError> {
    let (alpha, delta) = tempered_params(kernel)?;
    check_alpha0(alpha0, 1.0, "tempered kernel")?;
    let v = tempered_tail_product(potential, alpha, delta, alpha0);
    Ok(CriterionReport::new(
        Theorem::TemperedFractional,
        Some(alpha0),
        Scale::V,
        vec![Condition::limit("tempered_tail_product_vanishes", v)],
        WeightSpec::TemperedEnvelope { delta, alpha },
    ))
}

/// Fractional kernel `r^{-(d+α)}` against `μ_V`, with `α₀ ∈ (0, α/2)`.
pub fn check_fractional(potential: &Potential, kernel: &Kernel, alpha0: f64) -> Result<CriterionReport, CriteriaError> {
    let alpha = fractional_alpha(kernel)?;
    check_alpha0(alpha0, alpha / 2.0, "fractional kernel")?;
    let v = tempered_tail_product(potential, alpha, 0.0, alpha0);
    Ok(CriterionReport::new(
        Theorem::Fractional,
        Some(alpha0),
        Scale::V,
        vec![Condition::limit("tail_product_vanishes", v)],
        WeightSpec::TemperedEnvelope { delta: 0.0, alpha },
    ))
}

fn general_kernel_conditions(
    potential: &Potential,
    kernel: &Kernel,
    alpha0: f64,
    multiplier: f64,
    tol: f64,
) -> Vec<Condition> {
    let density_name = if multiplier == 2.0 {
        "double_potential_over_envelope_integrable"
    } else {
        "triple_potential_over_envelope_integrable"
    };
    let decay = classify_limit(|r| potential.log_tail_sup_exp_neg_v(r) - kernel.log_gamma(r) - alpha0 * r.ln());
    vec![
        Condition::integral(
            "inverse_kernel_integrable_near_zero",
            quadrature::inverse_kernel_ball_integral(kernel, tol),
        ),
        Condition::integral(
            density_name,
            quadrature::weighted_density_integral(potential, kernel, multiplier, tol),
        ),
        Condition::integral(
            "kernel_tail_moment_finite",
            quadrature::tail_moment_integral(kernel, alpha0, tol),
        ),
        Condition::limit("tail_over_envelope_vanishes", decay),
    ]
}

/// General radial kernel against `μ_V`; the weight is `e^{V}γ(|x|)`.
pub fn check_general_kernel(
    potential: &Potential,
    kernel: &Kernel,
    alpha0: f64,
    tol: f64,
) -> Result<CriterionReport, CriteriaError> {
    check_alpha0(alpha0, 1.0, "general kernel")?;
    Ok(CriterionReport::new(
        Theorem::GeneralKernel,
        Some(alpha0),
        Scale::V,
        general_kernel_conditions(potential, kernel, alpha0, 2.0, tol),
        WeightSpec::Gamma,
    ))
}

/// General radial kernel for the form with both factors `e^{-V}`, against
/// `μ_{2V}`.
pub fn check_general_kernel_double_potential(
    potential: &Potential,
    kernel: &Kernel,
    alpha0: f64,
    tol: f64,
) -> Result<CriterionReport, CriteriaError> {
    check_alpha0(alpha0, 1.0, "general kernel")?;
    Ok(CriterionReport::new(
        Theorem::GeneralKernelDoublePotential,
        Some(alpha0),
        Scale::TwoV,
        general_kernel_conditions(potential, kernel, alpha0, 3.0, tol),
        WeightSpec::Gamma,
    ))
}

/// Tempered kernel instance of the `μ_{2V}` criterion.
pub fn check_tempered_fractional_double_potential(potential: &Potential, kernel: &Kernel, alpha0: f64) -> Result<CriterionReport, CriteriaError> {
    let (alpha, delta) = tempered_params(kernel)?;
    check_alpha0(alpha0, 1.0, "tempered kernel")?;
    let v = tempered_tail_product(potential, alpha, delta, alpha0);
    Ok(CriterionReport::new(
        Theorem::TemperedFractionalDoublePotential,
        Some(alpha0),
        Scale::TwoV,
        vec![Condition::limit("tempered_tail_product_vanishes", v)],
        WeightSpec::TemperedEnvelope { delta, alpha },
    ))
}

/// Fractional kernel instance of the `μ_{2V}` criterion, `α₀ ∈ (0, α∧1)`.
pub fn check_fractional_double_potential(potential: &Potential, kernel: &Kernel, alpha0: f64) -> Result<CriterionReport, CriteriaError> {
    let alpha = fractional_alpha(kernel)?;
    check_alpha0(alpha0, alpha.min(1.0), "fractional kernel, double potential")?;
    let v = tempered_tail_product(potential, alpha, 0.0, alpha0);
    Ok(CriterionReport::new(
        Theorem::FractionalDoublePotential,
        Some(alpha0),
        Scale::TwoV,
        vec![Condition::limit("tail_product_vanishes", v)],
        WeightSpec::TemperedEnvelope { delta: 0.0, alpha },
    ))
}

/// Growth condition `liminf e^{V(x)}/|x|^{d+α} > 0` under which any positive
/// continuous weight may sit inside the fractional form.
///
/// The condition holds when `sup_{|x|=r} e^{-V(x)} r^{d+α}` stays bounded.
/// The constant in front of the form is not quantified.
pub fn check_weight_inside_form(potential: &Potential, kernel: &Kernel) -> Result<CriterionReport, CriteriaError> {
    let alpha = fractional_alpha(kernel)?;
    let d = potential.dim() as f64;
    let v = classify_limit(|r| -potential.sphere_min(r) + (d + alpha) * r.ln());
    let holds = match v.kind {
        LimitKind::LimitZero | LimitKind::BoundedAwayFromZero => TriState::Satisfied,
        LimitKind::Unbounded => TriState::NotSatisfied,
        LimitKind::Inconclusive => TriState::Undetermined,
    };
    let conditions = vec![Condition {
        name: "potential_grows_at_least_like_kernel_tail".to_string(),
        holds,
        outcome: ConditionOutcome::Limit(v),
    }];
    Ok(CriterionReport::new(
        Theorem::WeightInsideForm,
        None,
        Scale::V,
        conditions,
        WeightSpec::TemperedEnvelope { delta: 0.0, alpha },
    ))
}

/// Tries `α₀ = k/10 · bound` for `k = 1..=9` and returns the first satisfied
/// report, or the last one when none succeeds.
pub fn sweep_alpha0(
    bound: f64,
    check: impl Fn(f64) -> Result<CriterionReport, CriteriaError>,
) -> Result<CriterionReport, CriteriaError> {
    let mut last = None;
    for k in 1..=9 {
        let report = check(bound * k as f64 / 10.0)?;
        if report.satisfied == TriState::Satisfied {
            return Ok(report);
        }
        last = Some(report);
    }
    Ok(last.expect("nine attempts"))
}

/// Pointwise local-boundedness functionals for the kernel
/// `j(x,y) = ρ(|x-y|)(e^{V(x)} + e^{V(y)})/(2C_V)`:
///
/// `I₁(x) = ∫ (1∧|x-y|²) j(x,y) μ_V(dy)` and
/// `I₂(x) = (1/(2C_V)) ∫_{|z|≤1} |z| ρ(|z|) |e^{V(x)-V(x+z)} - e^{V(x)-V(x-z)}| dz`.
pub fn jump_condition_functions(
    measure: &Measure,
    kernel: &Kernel,
    x: &[f64],
    tol: f64,
) -> (IntegralVerdict, IntegralVerdict) {
    let potential = measure.potential();
    let d = potential.dim();
    let vx = potential.value(x);
    let shifted = |z: &[f64], sign: f64| -> f64 {
        let y: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + sign * b).collect();
        potential.value(&y)
    };
    let nodes = CIRCLE_NODES * 2;
    let first = |r: f64| {
        let angular = quadrature::sphere_integral(
            d,
            r,
            &|z| 0.5 * ((vx - shifted(z, 1.0)).exp() + 1.0),
            false,
            nodes,
        );
        r.powi(d as i32 - 1) * kernel.rho(r) * angular
    };
    let near = quadrature::integrate_near_zero(&|r| first(r) * r * r, 1.0, tol);
    let far = quadrature::integrate_tail(&first, 1.0, &[], tol);
    let i1 = near.combine(&far);

    let second = |r: f64| {
        let angular = quadrature::sphere_integral(
            d,
            r,
            &|z| ((vx - shifted(z, 1.0)).exp() - (vx - shifted(z, -1.0)).exp()).abs(),
            false,
            nodes,
        );
        r.powi(d as i32) * kernel.rho(r) * angular
    };
    let i2 = quadrature::integrate_near_zero(&second, 1.0, tol).scaled(0.5 / measure.normalizer());
    (i1, i2)
}
