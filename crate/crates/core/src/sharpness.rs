//! Negative results and rates: ramp test functions, failure slopes, the
//! super Poincaré rate and exponential moment scans.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria::{classify_limit, LimitKind};
use crate::discretization::{self, DiscreteForm, DiscretizationError, FormKind, Grid};
use crate::model::{Kernel, Measure, ModelError, Potential, Scale, Weight};
use crate::quadrature::{self, IntegralVerdict, Verdict};

/// Slopes above this count as a failing inequality.
pub const DEFAULT_SLOPE_TOL: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SharpnessError {
    #[error("ramp with outer radius {outer} does not fit in a grid of radius {radius}")]
    FamilyExceedsGrid { outer: f64, radius: f64 },
    #[error("weight does not diverge at infinity")]
    WeightNotDiverging,
    #[error("need at least {needed} values of n, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    BadArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
}

// ---------------------------------------------------------------------------
// Ramp families.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampKind {
    /// 0 on `|x| ≤ n`, 1 on `|x| ≥ 2n`.
    Inner,
    /// 0 on `|x| ≤ 3n`, 1 on `|x| ≥ 4n`.
    Outer,
}

impl RampKind {
    /// Inner and outer radius of the transition annulus.
    pub fn annulus(self, n: usize) -> (f64, f64) {
        let n = n as f64;
        match self {
            RampKind::Inner => (n, 2.0 * n),
            RampKind::Outer => (3.0 * n, 4.0 * n),
        }
    }

    pub fn value(self, n: usize, r: f64) -> f64 {
        let (lo, hi) = self.annulus(n);
        smoothstep((r - lo) / (hi - lo))
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionFamily {
    pub kind: RampKind,
    pub n: usize,
    /// `2/n`; the cubic ramp itself has slope at most `1.5/n`.
    pub gradient_bound: f64,
    pub values: Vec<f64>,
}

/// Samples the ramp `f_n` on the grid nodes.
pub fn build_family(kind: RampKind, n: usize, grid: &Grid) -> Result<TestFunctionFamily, SharpnessError> {
    if n == 0 {
        return Err(SharpnessError::BadArgument("n must be positive".into()));
    }
    let (_, outer) = kind.annulus(n);
    if outer >= grid.radius() {
        return Err(SharpnessError::FamilyExceedsGrid { outer, radius: grid.radius() });
    }
    let values = (0..grid.len()).map(|i| kind.value(n, grid.norm(i))).collect();
    Ok(TestFunctionFamily { kind, n, gradient_bound: 2.0 / n as f64, values })
}

// ---------------------------------------------------------------------------
// Failure slopes.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// `(n, variance / form)`.
    #[serde(with = "crate::floats::pairs")]
    pub pairs: Vec<(f64, f64)>,
    #[serde(with = "crate::floats")]
    pub slope: f64,
    #[serde(with = "crate::floats")]
    pub intercept: f64,
    #[serde(with = "crate::floats")]
    pub r_squared: f64,
}

impl SlopeFit {
    /// Least squares of `log ratio` against `log n`.
    pub fn fit(pairs: Vec<(f64, f64)>) -> Result<SlopeFit, SharpnessError> {
        if pairs.len() < 2 {
            return Err(SharpnessError::TooFewPoints { needed: 2, got: pairs.len() });
        }
        let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
        let (slope, intercept, r_squared) = least_squares(&xs, &ys);
        Ok(SlopeFit { pairs, slope, intercept, r_squared })
    }

    pub fn verdict(&self, slope_tol: f64) -> FailureVerdict {
        if self.slope > slope_tol {
            FailureVerdict::Fails
        } else {
            FailureVerdict::DoesNotFail
        }
    }
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r_squared)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureVerdict {
    Fails,
    DoesNotFail,
}

/// How the grid grows with `n`: fixed spacing, radius `margin × outer ramp
/// radius` but never below `min_radius`. With `fixed_radius` set the box
/// stays put and ramps that do not fit are rejected.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPolicy {
    pub spacing: f64,
    pub margin: f64,
    pub min_radius: f64,
    pub fixed_radius: Option<f64>,
}

impl Default for GridPolicy {
    fn default() -> Self {
        GridPolicy { spacing: 0.5, margin: 1.5, min_radius: 4.0, fixed_radius: None }
    }
}

impl GridPolicy {
    pub fn grid_for(&self, dim: usize, kind: RampKind, n: usize) -> Result<Grid, SharpnessError> {
        let (_, outer) = kind.annulus(n);
        if let Some(radius) = self.fixed_radius {
            // The ramp must reach 1 strictly inside the box.
            if outer + self.spacing > radius {
                return Err(SharpnessError::FamilyExceedsGrid { outer, radius });
            }
            return Ok(Grid::with_spacing(dim, radius, self.spacing)?);
        }
        let radius = (self.margin * outer).max(self.min_radius).max(outer + self.spacing);
        let radius = (radius / self.spacing).ceil() * self.spacing;
        Ok(Grid::with_spacing(dim, radius, self.spacing)?)
    }
}

#[derive(Clone, Debug)]
pub struct FailureProbe<'a> {
    pub potential: &'a Potential,
    pub kernel: &'a Kernel,
    pub weight: &'a Weight,
    pub ramp: RampKind,
    pub form: FormKind,
    pub policy: GridPolicy,
    pub quad_tol: f64,
}

/// `∫_{outside the box} ω dμ`, where the box is the union of the grid cells.
fn exterior_weighted_mass(
    measure: &Measure,
    weight: &Weight,
    grid: &Grid,
    tol: f64,
) -> f64 {
    let s = measure.scale().multiplier();
    let log_c = measure.normalizer().ln();
    let potential = measure.potential();
    let integrand = |x: &[f64]| (weight.log_value(x) - s * potential.value(x) + log_c).exp();
    let edge = grid.radius() + 0.5 * grid.spacing();
    match grid.dim() {
        1 => quadrature::integrate_tail(&|r| integrand(&[r]) + integrand(&[-r]), edge, &[], tol).value,
        _ => {
            // Outside the inscribed disc, with the square's corners removed by
            // an angular indicator up to the circumscribed radius.
            let outside = |x: &[f64]| {
                if x[0].abs() > edge || x[1].abs() > edge {
                    integrand(x)
                } else {
                    0.0
                }
            };
            let ring = |r: f64| r * quadrature::sphere_integral(2, r, &outside, false, quadrature::CIRCLE_NODES);
            let corner = edge * std::f64::consts::SQRT_2;
            let (near, _) = quadrature::adaptive(&ring, edge, corner, (tol * 1e-2).max(1e-14));
            let far = |r: f64| r * quadrature::sphere_integral(2, r, &integrand, weight.is_radial() && potential.is_radial(), quadrature::CIRCLE_NODES);
            near + quadrature::integrate_tail(&far, corner, &[], tol).value
        }
    }
}

/// Variance of `f` against `ω dμ` with `f` extended outside the box by its
/// value at the nearest boundary node, matching the form's exterior rule.
/// Every ramp equals 1 at the boundary, so the exterior carries value 1.
fn variance_with_exterior(form: &DiscreteForm, f: &[f64], exterior_value: f64, exterior_mass: f64, exterior_weighted: f64) -> f64 {
    let mass = form.mass();
    let total: f64 = mass.iter().sum::<f64>() + exterior_mass;
    let m = (mass.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() + exterior_mass * exterior_value) / total;
    form.weighted_mass().iter().zip(f).map(|(w, x)| w * (x - m).powi(2)).sum::<f64>()
        + exterior_weighted * (exterior_value - m).powi(2)
}

/// `(variance, form value)` of the ramp `f_n` on its own grid.
pub fn ramp_ratio(probe: &FailureProbe, n: usize) -> Result<(f64, f64), SharpnessError> {
    let d = probe.potential.dim();
    let grid = probe.policy.grid_for(d, probe.ramp, n)?;
    let family = build_family(probe.ramp, n, &grid)?;
    let form = discretization::assemble(probe.potential, probe.kernel, probe.weight, &grid, probe.form, probe.quad_tol)?;
    let measure = Measure::new(probe.potential.clone(), probe.form.reference_scale(), probe.quad_tol)?;
    let exterior_mass = exterior_weighted_mass(&measure, &Weight::constant(d), &grid, probe.quad_tol);
    let exterior_weighted = exterior_weighted_mass(&measure, probe.weight, &grid, probe.quad_tol);
    let variance = variance_with_exterior(&form, &family.values, 1.0, exterior_mass, exterior_weighted);
    let energy = discretization::form_value(&form, &family.values)?;
    Ok((variance, energy))
}

/// Fits `log(variance(f_n)/form(f_n))` against `log n`. A positive slope
/// means the ratios grow, so no finite constant works.
pub fn failure_slope(probe: &FailureProbe, n_sequence: &[usize]) -> Result<SlopeFit, SharpnessError> {
    if n_sequence.len() < 4 {
        return Err(SharpnessError::TooFewPoints { needed: 4, got: n_sequence.len() });
    }
    let pairs = n_sequence
        .par_iter()
        .map(|&n| ramp_ratio(probe, n).map(|(var, energy)| (n as f64, var / energy)))
        .collect::<Result<Vec<_>, _>>()?;
    SlopeFit::fit(pairs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub fit: SlopeFit,
    pub slope_tol: f64,
    pub verdict: FailureVerdict,
}

/// Failure slope of the inner-ramp family with the candidate weight `ω*` on
/// the `Rho` form. A weight that dominates the optimal one at infinity
/// should make the ratios grow.
pub fn weight_optimality_probe(
    potential: &Potential,
    kernel: &Kernel,
    omega_star: &Weight,
    n_sequence: &[usize],
    policy: GridPolicy,
    slope_tol: f64,
    quad_tol: f64,
) -> Result<OptimalityReport, SharpnessError> {
    let probe = FailureProbe {
        potential,
        kernel,
        weight: omega_star,
        ramp: RampKind::Inner,
        form: FormKind::Rho,
        policy,
        quad_tol,
    };
    let fit = failure_slope(&probe, n_sequence)?;
    let verdict = fit.verdict(slope_tol);
    Ok(OptimalityReport { fit, slope_tol, verdict })
}

// ---------------------------------------------------------------------------
// Super Poincaré rate.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSample {
    pub r: f64,
    /// `log β(r)` from the search over `(t, s)`.
    #[serde(with = "crate::floats")]
    pub log_beta: f64,
    /// `log β(r)` at `t = κ(4C0/r)`, `s = r/2`; `None` when that `t` is not
    /// admissible.
    #[serde(with = "crate::floats::option")]
    pub log_beta_closed_form: Option<f64>,
    #[serde(with = "crate::floats")]
    pub t: f64,
    #[serde(with = "crate::floats")]
    pub s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperPoincareProfile {
    /// `(t, log h(t))` with `h(t) = inf_{|x| ≤ t} e^{V}`.
    #[serde(with = "crate::floats::pairs")]
    pub log_h_lower: Vec<(f64, f64)>,
    /// `(t, log H(t))` with `H(t) = sup_{|x| ≤ t} e^{V}`.
    #[serde(with = "crate::floats::pairs")]
    pub log_h_upper: Vec<(f64, f64)>,
    /// `(r, κ(r))`.
    #[serde(with = "crate::floats::pairs")]
    pub kappa: Vec<(f64, f64)>,
    pub samples: Vec<RateSample>,
    /// Slope of `log β` against `log(1/r)`.
    #[serde(with = "crate::floats")]
    pub slope: f64,
    pub c0: f64,
}

/// `κ(level) = inf{s > 0 : inf_{|x| ≥ s} ω ≥ level}` by bisection; zero when
/// `ω` already exceeds `level` everywhere.
pub fn kappa(weight: &Weight, level: f64) -> f64 {
    let log_level = level.ln();
    if weight.log_tail_inf(0.0) >= log_level {
        return 0.0;
    }
    let mut hi = 1.0;
    while weight.log_tail_inf(hi) < log_level {
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    let mut lo = hi / 2.0;
    if weight.log_tail_inf(lo) >= log_level {
        lo = 0.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if weight.log_tail_inf(mid) >= log_level {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    hi
}

struct RateContext<'a> {
    potential: &'a Potential,
    weight: &'a Weight,
    c0: f64,
    d_over_alpha: f64,
}

impl RateContext<'_> {
    /// `log [H(t)^{2+d/α} h(t)^{-1-d/α} (1 + s^{-d/α})]`.
    fn log_objective(&self, t: f64, s: f64) -> f64 {
        let q = self.d_over_alpha;
        let log_upper = self.potential.sup_inside(t);
        let log_lower = self.potential.inf_inside(t);
        (2.0 + q) * log_upper - (1.0 + q) * log_lower + ln_1p_exp(-q * s.ln())
    }

    /// Largest admissible `s` for this `t`, if any.
    fn s_max(&self, r: f64, t: f64) -> Option<f64> {
        let s = r - 2.0 * self.c0 * (-self.weight.log_tail_inf(t)).exp();
        (s > 0.0).then_some(s)
    }
}

/// `log(1 + e^x)` without overflow.
fn ln_1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Super Poincaré rate from a weighted Poincaré constant `c0`, with the
/// unknown multiplicative constant set to one.
///
/// The search runs over a geometric grid of `t ∈ (1, t_max]` (plus the
/// closed-form choice of `t`); for each `t` the largest admissible `s` is
/// used, since the objective decreases in `s`.
pub fn beta_rate(
    potential: &Potential,
    kernel: &Kernel,
    weight: &Weight,
    c0: f64,
    r_grid: &[f64],
) -> Result<SuperPoincareProfile, SharpnessError> {
    if c0 <= 0.0 || r_grid.is_empty() || r_grid.iter().any(|&r| r <= 0.0) {
        return Err(SharpnessError::BadArgument("c0 and every r must be positive".into()));
    }
    let alpha = kernel
        .alpha()
        .ok_or_else(|| SharpnessError::BadArgument("kernel has no stability index".into()))?;
    let growth = classify_limit(|r| weight.log_tail_inf(r));
    if growth.kind != LimitKind::Unbounded {
        return Err(SharpnessError::WeightNotDiverging);
    }
    let ctx = RateContext { potential, weight, c0, d_over_alpha: potential.dim() as f64 / alpha };
    let r_min = r_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let t_max = (2.0 * kappa(weight, 8.0 * c0 / r_min)).max(16.0);
    let t_steps = 400;
    let t_grid: Vec<f64> = (1..=t_steps)
        .map(|k| t_max.powf(k as f64 / t_steps as f64))
        .collect();
    let samples: Vec<RateSample> = r_grid
        .par_iter()
        .map(|&r| {
            let closed_t = kappa(weight, 4.0 * c0 / r).max(1.0 + 1e-9);
            let closed = ctx.s_max(r, closed_t).filter(|&s| s >= 0.5 * r * (1.0 - 1e-12)).map(|_| ctx.log_objective(closed_t, 0.5 * r));
            let mut best = (f64::INFINITY, f64::NAN, f64::NAN);
            for &t in t_grid.iter().chain(std::iter::once(&closed_t)) {
                if t <= 1.0 {
                    continue;
                }
                if let Some(s) = ctx.s_max(r, t) {
                    let v = ctx.log_objective(t, s);
                    if v < best.0 {
                        best = (v, t, s);
                    }
                }
            }
            RateSample { r, log_beta: best.0, log_beta_closed_form: closed, t: best.1, s: best.2 }
        })
        .collect();
    let finite: Vec<&RateSample> = samples.iter().filter(|s| s.log_beta.is_finite()).collect();
    let slope = if finite.len() >= 2 {
        let xs: Vec<f64> = finite.iter().map(|s| -s.r.ln()).collect();
        let ys: Vec<f64> = finite.iter().map(|s| s.log_beta).collect();
        least_squares(&xs, &ys).0
    } else {
        f64::NAN
    };
    let t_table: Vec<f64> = (0..=16).map(|k| 2f64.powi(k)).collect();
    Ok(SuperPoincareProfile {
        log_h_lower: t_table.iter().map(|&t| (t, potential.inf_inside(t))).collect(),
        log_h_upper: t_table.iter().map(|&t| (t, potential.sup_inside(t))).collect(),
        kappa: r_grid.iter().map(|&r| (r, kappa(weight, r))).collect(),
        samples,
        slope,
        c0,
    })
}

/// `d/α + (d+ε)(2α+d)/(α(ε−α))`.
pub fn log_polynomial_rate_exponent(dim: usize, alpha: f64, epsilon: f64) -> f64 {
    let d = dim as f64;
    d / alpha + (d + epsilon) * (2.0 * alpha + d) / (alpha * (epsilon - alpha))
}

// ---------------------------------------------------------------------------
// Concentration.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentPoint {
    pub lambda: f64,
    /// `None` when the moment is not finite.
    #[serde(with = "crate::floats::option")]
    pub value: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    /// Largest tested `λ` before the first non-finite moment; zero if none.
    pub lambda_star: f64,
    pub moment_curve: Vec<MomentPoint>,
    /// `(r, log q(r))` with `q(r) = sup_{|x|>r} e^{-V}`.
    #[serde(with = "crate::floats::pairs")]
    pub log_q: Vec<(f64, f64)>,
    /// `(u, q^{-1}(u))` with `q^{-1}(u) = inf{r : q(r) ≤ u}`.
    #[serde(with = "crate::floats::pairs")]
    pub q_inverse: Vec<(f64, f64)>,
    pub stretched_constants: (f64, f64),
    /// `∫ q(C2|x|)^{-C3|x|} dμ`.
    pub stretched_check: IntegralVerdict,
}

/// `inf{r ≥ 0 : log q(r) ≤ log_u}` by bisection on the nonincreasing `log q`.
fn q_inverse(potential: &Potential, log_u: f64) -> f64 {
    if potential.log_tail_sup_exp_neg_v(0.0) <= log_u {
        return 0.0;
    }
    let mut hi = 1.0;
    while potential.log_tail_sup_exp_neg_v(hi) > log_u {
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if potential.log_tail_sup_exp_neg_v(mid) <= log_u {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    hi
}

/// Exponential moments over `lambda_grid` and the stretched integral with
/// constants `(c2, c3)`.
pub fn concentration_scan(
    measure: &Measure,
    lambda_grid: &[f64],
    stretched_constants: (f64, f64),
) -> Result<ConcentrationReport, SharpnessError> {
    if lambda_grid.windows(2).any(|w| w[1] <= w[0]) || lambda_grid.iter().any(|&l| l <= 0.0) {
        return Err(SharpnessError::BadArgument("lambda grid must be positive and increasing".into()));
    }
    let moment_curve: Vec<MomentPoint> = lambda_grid
        .par_iter()
        .map(|&lambda| {
            let v = measure.exp_moment(lambda);
            let finite = v.is_convergent() && v.value.is_finite();
            MomentPoint { lambda, value: finite.then_some(v.value), verdict: v.verdict }
        })
        .collect();
    let lambda_star = moment_curve
        .iter()
        .take_while(|p| p.value.is_some())
        .last()
        .map_or(0.0, |p| p.lambda);
    let potential = measure.potential();
    let log_q: Vec<(f64, f64)> = (0..=12).map(|k| {
        let r = 2f64.powi(k) - 1.0;
        (r, potential.log_tail_sup_exp_neg_v(r))
    }).collect();
    let q_inverse_table: Vec<(f64, f64)> = (1..=12)
        .map(|k| {
            let log_u = -(k as f64);
            (log_u.exp(), q_inverse(potential, log_u))
        })
        .collect();
    let (c2, c3) = stretched_constants;
    let s = measure.scale().multiplier();
    let log_c = measure.normalizer().ln();
    let integrand = |x: &[f64]| {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        (-c3 * r * potential.log_tail_sup_exp_neg_v(c2 * r) - s * potential.value(x) + log_c).exp()
    };
    let stretched_check = space_integral(potential, &integrand, measure.quad_tol());
    Ok(ConcentrationReport {
        lambda_star,
        moment_curve,
        log_q,
        q_inverse: q_inverse_table,
        stretched_constants,
        stretched_check,
    })
}

/// `∫_{R^d} f dx` split into the unit ball and the doubling tail.
fn space_integral(potential: &Potential, f: &(dyn Fn(&[f64]) -> f64 + Sync), tol: f64) -> IntegralVerdict {
    let d = potential.dim();
    let radial = potential.is_radial();
    let g = |r: f64| r.powi(d as i32 - 1) * quadrature::sphere_integral(d, r, f, radial, quadrature::CIRCLE_NODES);
    quadrature::integrate_half_line(&g, tol)
}

/// Reference scale matching a measure's potential multiplier.
pub fn scale_of(kind: FormKind) -> Scale {
    kind.reference_scale()
}
