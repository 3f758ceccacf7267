//! Potentials, jump kernels, reference measures and weight functions.
//!
//! Everything here is immutable after construction. Custom callables are held
//! behind `Arc` so that models can be cloned cheaply and shared across rayon
//! workers.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{self, IntegralVerdict, Verdict, CIRCLE_NODES};

pub type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter {name} = {value} is outside {range}")]
    BadParameter {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("dimension {dim} is not supported here: {reason}")]
    Dimension { dim: usize, reason: &'static str },
    #[error("measure is not integrable ({0})")]
    NonIntegrable(String),
    #[error("function is not finite at a sample point with |x| = {0}")]
    NotFinite(f64),
}

fn check_range(name: &'static str, value: f64, ok: bool, range: &'static str) -> Result<(), ModelError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::BadParameter { name, value, range })
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Sampled extrema of radial profiles.

const UNIFORM_SAMPLES: usize = 4096;
const GEOMETRIC_RATIO: f64 = 1.01;
const GEOMETRIC_SPAN: f64 = 1.0e9;

fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if (b - a).abs() <= 1e-13 * (1.0 + a.abs()) {
            break;
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn refine_sampled_min(f: &dyn Fn(f64) -> f64, samples: &[f64]) -> f64 {
    let values: Vec<f64> = samples.iter().map(|&r| f(r)).collect();
    let (idx, &best) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty sample set");
    let lo = samples[idx.saturating_sub(1)];
    let hi = samples[(idx + 1).min(samples.len() - 1)];
    if hi > lo {
        let (_, refined) = golden_min(f, lo, hi);
        best.min(refined)
    } else {
        best
    }
}

/// `inf_{r ≥ s} f(r)` for a profile that is sampled densely near `s` and
/// geometrically far out, then refined around the best sample.
pub(crate) fn sampled_tail_min(f: &dyn Fn(f64) -> f64, s: f64) -> f64 {
    let near_end = 2.0 * s + 8.0;
    let step = (near_end - s) / UNIFORM_SAMPLES as f64;
    let mut samples: Vec<f64> = (0..=UNIFORM_SAMPLES).map(|i| s + step * i as f64).collect();
    let mut r = near_end;
    while r < near_end * GEOMETRIC_SPAN {
        r *= GEOMETRIC_RATIO;
        samples.push(r);
    }
    refine_sampled_min(f, &samples)
}

/// `inf_{0 ≤ r ≤ t} f(r)`.
pub(crate) fn sampled_ball_min(f: &dyn Fn(f64) -> f64, t: f64) -> f64 {
    if t <= 0.0 {
        return f(0.0);
    }
    let step = t / UNIFORM_SAMPLES as f64;
    let samples: Vec<f64> = (0..=UNIFORM_SAMPLES).map(|i| step * i as f64).collect();
    refine_sampled_min(f, &samples)
}

fn circle_angles() -> impl Iterator<Item = (f64, f64)> {
    const N: usize = 360;
    (0..N).map(|i| {
        let t = 2.0 * std::f64::consts::PI * i as f64 / N as f64;
        (t.cos(), t.sin())
    })
}

// ---------------------------------------------------------------------------
// Potentials.

/// User-supplied potential.
#[derive(Clone)]
pub struct CustomPotential {
    pub name: String,
    pub value: PointFn,
    /// `V(x)` depends on `|x|` only.
    pub radial: bool,
    /// `V` is radial and nondecreasing in `|x|`.
    pub nondecreasing: bool,
}

#[derive(Clone)]
pub enum PotentialFamily {
    /// `ε (1+|x|²)^{1/2}`
    Linear { epsilon: f64 },
    /// `1 + |x|²`
    Quadratic,
    /// `((d+ε)/2) log(1+|x|²)`
    LogPolynomial { epsilon: f64 },
    /// `1 + |x|^β`
    StretchedExp { beta: f64 },
    Custom(CustomPotential),
}

impl PotentialFamily {
    pub fn custom(
        name: &str,
        value: PointFn,
        radial: bool,
        nondecreasing: bool,
    ) -> PotentialFamily {
        PotentialFamily::Custom(CustomPotential {
            name: name.to_string(),
            value,
            radial,
            nondecreasing: radial && nondecreasing,
        })
    }
}

impl fmt::Debug for PotentialFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialFamily::Linear { epsilon } => write!(f, "Linear(ε={epsilon})"),
            PotentialFamily::Quadratic => write!(f, "Quadratic"),
            PotentialFamily::LogPolynomial { epsilon } => write!(f, "LogPolynomial(ε={epsilon})"),
            PotentialFamily::StretchedExp { beta } => write!(f, "StretchedExp(β={beta})"),
            PotentialFamily::Custom(c) => write!(f, "Custom({})", c.name),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Potential {
    family: PotentialFamily,
    dim: usize,
    min_value: f64,
}

impl Potential {
    pub fn new(family: PotentialFamily, dim: usize) -> Result<Potential, ModelError> {
        if dim == 0 {
            return Err(ModelError::Dimension { dim, reason: "dimension must be positive" });
        }
        match &family {
            PotentialFamily::Linear { epsilon } => {
                check_range("epsilon", *epsilon, *epsilon > 0.0, "(0, ∞)")?
            }
            PotentialFamily::LogPolynomial { epsilon } => {
                check_range("epsilon", *epsilon, *epsilon > 0.0, "(0, ∞)")?
            }
            PotentialFamily::StretchedExp { beta } => {
                check_range("beta", *beta, *beta > 0.0, "(0, ∞)")?
            }
            PotentialFamily::Quadratic => {}
            PotentialFamily::Custom(c) => {
                if dim > 2 && !c.radial {
                    return Err(ModelError::Dimension {
                        dim,
                        reason: "non-radial potentials need d ≤ 2",
                    });
                }
            }
        }
        let mut p = Potential { family, dim, min_value: 0.0 };
        // Local boundedness is only certified at sample points.
        for k in -4..=10 {
            let r = 2f64.powi(k);
            for x in p.sample_sphere(r) {
                if !p.value(&x).is_finite() {
                    return Err(ModelError::NotFinite(r));
                }
            }
        }
        p.min_value = match &p.family {
            PotentialFamily::Linear { epsilon } => *epsilon,
            PotentialFamily::Quadratic => 1.0,
            PotentialFamily::LogPolynomial { .. } => 0.0,
            PotentialFamily::StretchedExp { .. } => 1.0,
            PotentialFamily::Custom(_) => p.inf_outside(0.0),
        };
        if !p.min_value.is_finite() {
            return Err(ModelError::NotFinite(0.0));
        }
        Ok(p)
    }

    pub fn linear(epsilon: f64, dim: usize) -> Result<Potential, ModelError> {
        Potential::new(PotentialFamily::Linear { epsilon }, dim)
    }

    pub fn quadratic(dim: usize) -> Result<Potential, ModelError> {
        Potential::new(PotentialFamily::Quadratic, dim)
    }

    pub fn log_polynomial(epsilon: f64, dim: usize) -> Result<Potential, ModelError> {
        Potential::new(PotentialFamily::LogPolynomial { epsilon }, dim)
    }

    pub fn stretched_exp(beta: f64, dim: usize) -> Result<Potential, ModelError> {
        Potential::new(PotentialFamily::StretchedExp { beta }, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> &PotentialFamily {
        &self.family
    }

    pub fn is_radial(&self) -> bool {
        match &self.family {
            PotentialFamily::Custom(c) => c.radial,
            _ => true,
        }
    }

    pub fn is_radially_nondecreasing(&self) -> bool {
        match &self.family {
            PotentialFamily::Custom(c) => c.nondecreasing,
            _ => true,
        }
    }

    /// `V(x)`.
    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.family {
            PotentialFamily::Custom(c) => (c.value)(x),
            _ => self.radial_profile(norm(x)),
        }
    }

    /// `V` along the first axis, i.e. `V(r e₁)`.
    pub fn radial_profile(&self, r: f64) -> f64 {
        let d = self.dim as f64;
        match &self.family {
            PotentialFamily::Linear { epsilon } => epsilon * (1.0 + r * r).sqrt(),
            PotentialFamily::Quadratic => 1.0 + r * r,
            PotentialFamily::LogPolynomial { epsilon } => 0.5 * (d + epsilon) * (r * r).ln_1p(),
            PotentialFamily::StretchedExp { beta } => 1.0 + r.powf(*beta),
            PotentialFamily::Custom(c) => {
                let mut x = vec![0.0; self.dim];
                x[0] = r;
                (c.value)(&x)
            }
        }
    }

    fn sample_sphere(&self, r: f64) -> Vec<Vec<f64>> {
        match self.dim {
            1 => vec![vec![r], vec![-r]],
            2 if !self.is_radial() => circle_angles().map(|(c, s)| vec![r * c, r * s]).collect(),
            d => {
                let mut x = vec![0.0; d];
                x[0] = r;
                vec![x]
            }
        }
    }

    /// `min_{|x| = r} V(x)`.
    pub fn sphere_min(&self, r: f64) -> f64 {
        if self.is_radial() {
            return self.radial_profile(r);
        }
        self.sample_sphere(r)
            .iter()
            .map(|x| self.value(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// `max_{|x| = r} V(x)`.
    pub fn sphere_max(&self, r: f64) -> f64 {
        if self.is_radial() {
            return self.radial_profile(r);
        }
        self.sample_sphere(r)
            .iter()
            .map(|x| self.value(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `inf_{|z| ≥ r} V(z)`.
    pub fn inf_outside(&self, r: f64) -> f64 {
        if self.is_radially_nondecreasing() {
            return self.radial_profile(r);
        }
        sampled_tail_min(&|s| self.sphere_min(s), r)
    }

    /// `inf_{|x| ≤ t} V(x)`.
    pub fn inf_inside(&self, t: f64) -> f64 {
        if self.is_radially_nondecreasing() {
            return self.radial_profile(0.0);
        }
        sampled_ball_min(&|s| self.sphere_min(s), t)
    }

    /// `sup_{|x| ≤ t} V(x)`.
    pub fn sup_inside(&self, t: f64) -> f64 {
        if self.is_radially_nondecreasing() {
            return self.radial_profile(t);
        }
        -sampled_ball_min(&|s| -self.sphere_max(s), t)
    }

    /// `sup e^{-V}`, fixed at construction.
    pub fn exp_neg_bound(&self) -> f64 {
        (-self.min_value).exp()
    }

    /// `log sup_{|z| ≥ r} e^{-V(z)}`.
    pub fn log_tail_sup_exp_neg_v(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return -self.min_value;
        }
        -self.inf_outside(r)
    }

    /// `sup_{|z| ≥ r} e^{-V(z)}`.
    pub fn tail_sup_exp_neg_v(&self, r: f64) -> f64 {
        self.log_tail_sup_exp_neg_v(r).exp()
    }
}

/// `sup_{|z| ≥ r} e^{-V(z)}`.
pub fn tail_sup_exp_neg_v(potential: &Potential, r: f64) -> f64 {
    potential.tail_sup_exp_neg_v(r)
}

// ---------------------------------------------------------------------------
// Kernels.

#[derive(Clone)]
pub struct CustomKernel {
    pub name: String,
    pub rho: RadialFn,
    /// `ρ` is nonincreasing, so the envelope is `ρ(r+1)`.
    pub nonincreasing: bool,
}

#[derive(Clone)]
pub enum KernelFamily {
    /// `e^{-δr} r^{-(d+α)}`
    FractionalTempered { alpha: f64, delta: f64 },
    /// `r^{-(d+α)}`
    Fractional { alpha: f64 },
    Custom(CustomKernel),
}

impl KernelFamily {
    pub fn custom(name: &str, rho: RadialFn, nonincreasing: bool) -> KernelFamily {
        KernelFamily::Custom(CustomKernel { name: name.to_string(), rho, nonincreasing })
    }
}

impl fmt::Debug for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFamily::FractionalTempered { alpha, delta } => {
                write!(f, "FractionalTempered(α={alpha}, δ={delta})")
            }
            KernelFamily::Fractional { alpha } => write!(f, "Fractional(α={alpha})"),
            KernelFamily::Custom(c) => write!(f, "Custom({})", c.name),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Kernel {
    family: KernelFamily,
    dim: usize,
}

impl Kernel {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Kernel, ModelError> {
        if dim == 0 {
            return Err(ModelError::Dimension { dim, reason: "dimension must be positive" });
        }
        match &family {
            KernelFamily::FractionalTempered { alpha, delta } => {
                check_range("alpha", *alpha, *alpha > 0.0 && *alpha < 2.0, "(0, 2)")?;
                check_range("delta", *delta, *delta >= 0.0, "[0, ∞)")?;
            }
            KernelFamily::Fractional { alpha } => {
                check_range("alpha", *alpha, *alpha > 0.0 && *alpha < 2.0, "(0, 2)")?;
            }
            KernelFamily::Custom(c) => {
                for k in -4..=10 {
                    let r = 2f64.powi(k);
                    let v = (c.rho)(r);
                    if !(v > 0.0) || v.is_nan() {
                        return Err(ModelError::BadParameter {
                            name: "rho",
                            value: v,
                            range: "(0, ∞] at every r > 0",
                        });
                    }
                }
            }
        }
        Ok(Kernel { family, dim })
    }

    pub fn fractional(alpha: f64, dim: usize) -> Result<Kernel, ModelError> {
        Kernel::new(KernelFamily::Fractional { alpha }, dim)
    }

    pub fn tempered(alpha: f64, delta: f64, dim: usize) -> Result<Kernel, ModelError> {
        Kernel::new(KernelFamily::FractionalTempered { alpha, delta }, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.family {
            KernelFamily::FractionalTempered { alpha, .. } | KernelFamily::Fractional { alpha } => {
                Some(alpha)
            }
            KernelFamily::Custom(_) => None,
        }
    }

    pub fn delta(&self) -> Option<f64> {
        match self.family {
            KernelFamily::FractionalTempered { delta, .. } => Some(delta),
            KernelFamily::Fractional { .. } => Some(0.0),
            KernelFamily::Custom(_) => None,
        }
    }

    pub fn is_nonincreasing(&self) -> bool {
        match &self.family {
            KernelFamily::Custom(c) => c.nonincreasing,
            _ => true,
        }
    }

    /// `ρ(r)`.
    pub fn rho(&self, r: f64) -> f64 {
        match &self.family {
            KernelFamily::Custom(c) => (c.rho)(r),
            _ => self.log_rho(r).exp(),
        }
    }

    pub fn log_rho(&self, r: f64) -> f64 {
        let d = self.dim as f64;
        match &self.family {
            KernelFamily::FractionalTempered { alpha, delta } => -delta * r - (d + alpha) * r.ln(),
            KernelFamily::Fractional { alpha } => -(d + alpha) * r.ln(),
            KernelFamily::Custom(c) => (c.rho)(r).ln(),
        }
    }

    /// `γ(r) = inf_{0 < s ≤ r+1} ρ(s)`.
    pub fn gamma(&self, r: f64) -> f64 {
        self.log_gamma(r).exp()
    }

    pub fn log_gamma(&self, r: f64) -> f64 {
        if self.is_nonincreasing() {
            return self.log_rho(r + 1.0);
        }
        let top = r + 1.0;
        let lo = top * 1e-9;
        let n = UNIFORM_SAMPLES;
        let ratio = (top / lo).powf(1.0 / n as f64);
        let mut samples: Vec<f64> = (0..n).map(|i| lo * ratio.powi(i as i32)).collect();
        samples.push(top);
        let f = |s: f64| self.log_rho(s.min(top));
        refine_sampled_min(&f, &samples)
    }
}

/// `γ(r)` as a free function.
pub fn gamma_envelope(kernel: &Kernel, r: f64) -> f64 {
    kernel.gamma(r)
}

// ---------------------------------------------------------------------------
// Measures.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    /// `μ_V`
    #[serde(rename = "V")]
    V,
    /// `μ_{2V}`
    #[serde(rename = "2V")]
    TwoV,
}

impl Scale {
    pub fn multiplier(self) -> f64 {
        match self {
            Scale::V => 1.0,
            Scale::TwoV => 2.0,
        }
    }
}

/// `∫ g(|x|, x) dx` over `R^d` via radial quadrature with doubling truncation.
fn space_integral(potential: &Potential, f: &dyn Fn(&[f64]) -> f64, tol: f64) -> IntegralVerdict {
    let d = potential.dim();
    let radial = potential.is_radial();
    let g = |r: f64| r.powi(d as i32 - 1) * quadrature::sphere_integral(d, r, f, radial, CIRCLE_NODES);
    quadrature::integrate_half_line(&g, tol)
}

/// `1/∫ e^{-sV} dx`.
pub fn normalizer(potential: &Potential, scale: Scale, quad_tol: f64) -> Result<f64, ModelError> {
    Ok(normalizer_with_levels(potential, scale, quad_tol)?.0)
}

fn normalizer_with_levels(
    potential: &Potential,
    scale: Scale,
    quad_tol: f64,
) -> Result<(f64, usize), ModelError> {
    let s = scale.multiplier();
    let v = space_integral(potential, &|x| (-s * potential.value(x)).exp(), quad_tol);
    if v.verdict != Verdict::Convergent || !(v.value > 0.0) {
        return Err(ModelError::NonIntegrable(format!(
            "{:?} with scale {:?}: {:?} after {} levels",
            potential.family(),
            scale,
            v.verdict,
            v.refinement_levels
        )));
    }
    Ok((1.0 / v.value, v.refinement_levels))
}

/// Probability measure `C e^{-sV(x)} dx`.
#[derive(Clone, Debug)]
pub struct Measure {
    potential: Potential,
    scale: Scale,
    normalizer: f64,
    truncation_radius: f64,
    quad_tol: f64,
}

impl Measure {
    pub fn new(potential: Potential, scale: Scale, quad_tol: f64) -> Result<Measure, ModelError> {
        let (c, levels) = normalizer_with_levels(&potential, scale, quad_tol)?;
        Ok(Measure {
            potential,
            scale,
            normalizer: c,
            truncation_radius: 2f64.powi(levels.saturating_sub(1) as i32 + 1),
            quad_tol,
        })
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn truncation_radius(&self) -> f64 {
        self.truncation_radius
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.normalizer.ln() - self.scale.multiplier() * self.potential.value(x)
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    /// `∫ e^{λ|x|} dμ`.
    pub fn exp_moment(&self, lambda: f64) -> IntegralVerdict {
        let ln_c = self.normalizer.ln();
        let s = self.scale.multiplier();
        let f = |x: &[f64]| (lambda * norm(x) + ln_c - s * self.potential.value(x)).exp();
        space_integral(&self.potential, &f, self.quad_tol)
    }

    /// `μ(B(0, r))`.
    pub fn ball_mass(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let d = self.potential.dim();
        let radial = self.potential.is_radial();
        let g = |t: f64| {
            t.powi(d as i32 - 1)
                * quadrature::sphere_integral(d, t, &|x| self.density(x), radial, CIRCLE_NODES)
        };
        let breaks: Vec<f64> = (0..40).map(|k| 2f64.powi(k)).take_while(|&b| b < r).collect();
        let tol = (self.quad_tol * 1e-2).max(1e-14);
        quadrature::adaptive_with_breaks(&g, 0.0, r, &breaks, tol).clamp(0.0, 1.0)
    }
}

/// `∫ e^{λ|x|} dμ` as a free function.
pub fn exp_moment(measure: &Measure, lambda: f64) -> IntegralVerdict {
    measure.exp_moment(lambda)
}

/// `μ(B(0, r))` as a free function.
pub fn ball_mass(measure: &Measure, r: f64) -> f64 {
    measure.ball_mass(r)
}

// ---------------------------------------------------------------------------
// Weights.

/// Serializable description of the named weight families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    /// `e^{V(x) - δ|x|} / (1+|x|)^{d+α}`
    TemperedEnvelope { delta: f64, alpha: f64 },
    /// `1 + |x|^β`
    Polynomial { beta: f64 },
    /// `e^{V(x)} γ(|x|)`
    Gamma,
    Constant,
    /// `(1+|x|)^p`
    Power { exponent: f64 },
}

#[derive(Clone)]
enum WeightRepr {
    TemperedEnvelope { potential: Potential, delta: f64, alpha: f64 },
    Polynomial { beta: f64 },
    Gamma { potential: Potential, kernel: Kernel },
    Constant,
    Power { exponent: f64 },
    CustomLog { name: String, log_value: PointFn, radial: bool },
    Modulated { base: Box<Weight>, name: String, log_factor: RadialFn },
}

/// Positive weight `ω(x)`, evaluated in log space because the envelope weights
/// carry `e^{V}` and overflow quickly.
#[derive(Clone)]
pub struct Weight {
    repr: WeightRepr,
    dim: usize,
}

impl fmt::Debug for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Weight({})", self.label())
    }
}

impl Weight {
    pub fn tempered_envelope(potential: &Potential, delta: f64, alpha: f64) -> Weight {
        Weight {
            dim: potential.dim(),
            repr: WeightRepr::TemperedEnvelope { potential: potential.clone(), delta, alpha },
        }
    }

    pub fn gamma(potential: &Potential, kernel: &Kernel) -> Weight {
        Weight {
            dim: potential.dim(),
            repr: WeightRepr::Gamma { potential: potential.clone(), kernel: kernel.clone() },
        }
    }

    pub fn constant(dim: usize) -> Weight {
        Weight { dim, repr: WeightRepr::Constant }
    }

    pub fn polynomial(dim: usize, beta: f64) -> Weight {
        Weight { dim, repr: WeightRepr::Polynomial { beta } }
    }

    pub fn power(dim: usize, exponent: f64) -> Weight {
        Weight { dim, repr: WeightRepr::Power { exponent } }
    }

    /// Custom weight given by `log ω`.
    pub fn custom_log(dim: usize, name: &str, log_value: PointFn, radial: bool) -> Weight {
        Weight {
            dim,
            repr: WeightRepr::CustomLog { name: name.to_string(), log_value, radial },
        }
    }

    /// `ω(x) · exp(log_factor(|x|))`.
    pub fn modulated(base: &Weight, name: &str, log_factor: RadialFn) -> Weight {
        Weight {
            dim: base.dim,
            repr: WeightRepr::Modulated {
                base: Box::new(base.clone()),
                name: name.to_string(),
                log_factor,
            },
        }
    }

    pub fn from_spec(spec: &WeightSpec, potential: &Potential, kernel: &Kernel) -> Result<Weight, ModelError> {
        let d = potential.dim();
        Ok(match *spec {
            WeightSpec::TemperedEnvelope { delta, alpha } => {
                check_range("delta", delta, delta >= 0.0, "[0, ∞)")?;
                check_range("alpha", alpha, alpha > 0.0 && alpha < 2.0, "(0, 2)")?;
                Weight::tempered_envelope(potential, delta, alpha)
            }
            WeightSpec::Polynomial { beta } => {
                check_range("beta", beta, beta > 0.0, "(0, ∞)")?;
                Weight::polynomial(d, beta)
            }
            WeightSpec::Gamma => Weight::gamma(potential, kernel),
            WeightSpec::Constant => Weight::constant(d),
            WeightSpec::Power { exponent } => {
                check_range("exponent", exponent, true, "finite reals")?;
                Weight::power(d, exponent)
            }
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> String {
        match &self.repr {
            WeightRepr::TemperedEnvelope { delta, alpha, .. } => format!("tempered_envelope(δ={delta}, α={alpha})"),
            WeightRepr::Polynomial { beta } => format!("polynomial(β={beta})"),
            WeightRepr::Gamma { .. } => "gamma".to_string(),
            WeightRepr::Constant => "constant".to_string(),
            WeightRepr::Power { exponent } => format!("power({exponent})"),
            WeightRepr::CustomLog { name, .. } => name.clone(),
            WeightRepr::Modulated { base, name, .. } => format!("{}·{}", base.label(), name),
        }
    }

    pub fn is_radial(&self) -> bool {
        match &self.repr {
            WeightRepr::TemperedEnvelope { potential, .. } | WeightRepr::Gamma { potential, .. } => {
                potential.is_radial()
            }
            WeightRepr::CustomLog { radial, .. } => *radial,
            WeightRepr::Modulated { base, .. } => base.is_radial(),
            _ => true,
        }
    }

    /// `log ω(x)`.
    pub fn log_value(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        match &self.repr {
            WeightRepr::TemperedEnvelope { potential, delta, alpha } => {
                potential.value(x) - delta * r - (self.dim as f64 + alpha) * r.ln_1p()
            }
            WeightRepr::Polynomial { beta } => r.powf(*beta).ln_1p(),
            WeightRepr::Gamma { potential, kernel } => potential.value(x) + kernel.log_gamma(r),
            WeightRepr::Constant => 0.0,
            WeightRepr::Power { exponent } => exponent * r.ln_1p(),
            WeightRepr::CustomLog { log_value, .. } => log_value(x),
            WeightRepr::Modulated { base, log_factor, .. } => base.log_value(x) + log_factor(r),
        }
    }

    /// `ω(x)`.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.log_value(x).exp()
    }

    fn log_sphere_min(&self, r: f64) -> f64 {
        match self.dim {
            1 => self.log_value(&[r]).min(self.log_value(&[-r])),
            2 if !self.is_radial() => circle_angles()
                .map(|(c, s)| self.log_value(&[r * c, r * s]))
                .fold(f64::INFINITY, f64::min),
            d => {
                let mut x = vec![0.0; d];
                x[0] = r;
                self.log_value(&x)
            }
        }
    }

    /// `log inf_{|x| ≥ s} ω(x)`.
    pub fn log_tail_inf(&self, s: f64) -> f64 {
        sampled_tail_min(&|r| self.log_sphere_min(r), s)
    }

    /// `inf_{|x| ≥ s} ω(x)`.
    pub fn tail_inf(&self, s: f64) -> f64 {
        self.log_tail_inf(s).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn abs_potential(c: f64) -> Potential {
        Potential::new(
            PotentialFamily::custom("c|x|", Arc::new(move |x: &[f64]| c * norm(x)), true, true),
            1,
        )
        .unwrap()
    }

    #[test]
    fn normalizer_closed_forms() {
        let c = normalizer(&abs_potential(1.0), Scale::V, 1e-10).unwrap();
        assert_relative_eq!(c, 0.5, max_relative = 1e-9);
        let c = normalizer(&abs_potential(2.0), Scale::V, 1e-10).unwrap();
        assert_relative_eq!(c, 1.0, max_relative = 1e-9);
        let q2 = Potential::quadratic(2).unwrap();
        let c = normalizer(&q2, Scale::V, 1e-10).unwrap();
        assert_relative_eq!(c, 1.0f64.exp() / std::f64::consts::PI, max_relative = 1e-9);
    }

    #[test]
    fn normalizer_log_polynomial_matches_trapezoid_oracle() {
        // ∫ (1+x²)^{-2.5} dx over R, oracle: trapezoid with 10⁶ nodes on
        // [-1000, 1000] plus the analytic x^{-5} tail.
        let p = Potential::log_polynomial(1.5, 1).unwrap();
        let c = normalizer(&p, Scale::TwoV, 1e-10).unwrap();
        let n = 1_000_000;
        let l = 1000.0;
        let h = 2.0 * l / (n - 1) as f64;
        let f = |x: f64| (1.0 + x * x).powf(-2.5);
        let mut acc = 0.5 * (f(-l) + f(l));
        for i in 1..n - 1 {
            acc += f(-l + h * i as f64);
        }
        let integral = acc * h + 2.0 * l.powi(-4) / 4.0;
        assert_relative_eq!(c, 1.0 / integral, max_relative = 1e-7);
        // Exact value: ∫(1+x²)^{-5/2} = 4/3.
        assert_relative_eq!(c, 0.75, max_relative = 1e-8);
    }

    #[test]
    fn non_integrable_measure_is_reported() {
        let flat = Potential::new(
            PotentialFamily::custom("0.5 log(1+|x|)", Arc::new(|x: &[f64]| 0.5 * norm(x).ln_1p()), true, true),
            1,
        )
        .unwrap();
        assert!(matches!(
            normalizer(&flat, Scale::V, 1e-8),
            Err(ModelError::NonIntegrable(_))
        ));
    }

    #[test]
    fn normalizer_is_truncation_stable() {
        let p = Potential::log_polynomial(0.7, 1).unwrap();
        let m = Measure::new(p.clone(), Scale::V, 1e-8).unwrap();
        let r = m.truncation_radius();
        // Mass outside the truncation radius is accounted for by extrapolation, so
        // the measure of the truncation ball differs from 1 by the remaining tail.
        let inside = m.ball_mass(2.0 * r);
        let outside_analytic = {
            // (1+x²)^{-0.85} ≈ x^{-1.7} beyond 2r.
            2.0 * m.normalizer() * (2.0 * r).powf(-0.7) / 0.7
        };
        assert_relative_eq!(inside + outside_analytic, 1.0, max_relative = 1e-3);
    }

    #[test]
    fn gamma_envelope_closed_forms() {
        let k = Kernel::tempered(1.0, 0.5, 1).unwrap();
        assert_relative_eq!(gamma_envelope(&k, 1.0), (-1.0f64).exp() * 0.25, max_relative = 1e-14);
        let k = Kernel::fractional(0.5, 2).unwrap();
        assert_relative_eq!(gamma_envelope(&k, 0.0), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn gamma_envelope_of_kernel_with_interior_dip() {
        let rho = |s: f64| s.powf(-1.5) * (1.0 - 0.9 * (-4.0 * (s - 2.0) * (s - 2.0)).exp());
        let k = Kernel::new(KernelFamily::custom("dip", Arc::new(rho), false), 1).unwrap();
        for &r in &[0.5, 1.5, 3.0, 6.0] {
            let top = r + 1.0;
            let n = 10_000_000usize;
            let oracle = (1..=n)
                .map(|i| rho(top * i as f64 / n as f64))
                .fold(f64::INFINITY, f64::min);
            assert_relative_eq!(k.gamma(r), oracle, max_relative = 1e-6);
        }
    }

    #[test]
    fn tail_supremum_closed_forms() {
        let q = Potential::quadratic(1).unwrap();
        assert_relative_eq!(q.tail_sup_exp_neg_v(2.0), (-5.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(q.tail_sup_exp_neg_v(0.0), q.exp_neg_bound(), max_relative = 1e-14);
        let lp = Potential::log_polynomial(0.4, 2).unwrap();
        assert_relative_eq!(lp.tail_sup_exp_neg_v(0.0), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn tail_supremum_of_oscillating_potential() {
        let v = |r: f64| r + 0.8 * (3.0 * r).sin();
        let p = Potential::new(
            PotentialFamily::custom("osc", Arc::new(move |x: &[f64]| v(norm(x))), true, false),
            1,
        )
        .unwrap();
        for &r in &[0.0, 0.7, 2.0, 5.3] {
            // Brute force over [r, r + 40]; V grows beyond, so the supremum is inside.
            let n = 10_000_000usize;
            let oracle = (0..=n)
                .map(|i| (-v(r + 40.0 * i as f64 / n as f64)).exp())
                .fold(0.0, f64::max);
            assert_relative_eq!(p.tail_sup_exp_neg_v(r), oracle, max_relative = 1e-6);
        }
    }

    #[test]
    fn exp_moment_cases() {
        let m = Measure::new(abs_potential(2.0), Scale::V, 1e-10).unwrap();
        let v = m.exp_moment(1.0);
        assert_eq!(v.verdict, Verdict::Convergent);
        assert_relative_eq!(v.value, 2.0, max_relative = 1e-8);
        let v = m.exp_moment(0.0);
        assert_relative_eq!(v.value, 1.0, max_relative = 1e-8);
        assert_eq!(m.exp_moment(2.0).verdict, Verdict::Divergent);

        let lp = Measure::new(Potential::log_polynomial(1.0, 1).unwrap(), Scale::V, 1e-8).unwrap();
        assert_eq!(lp.exp_moment(0.1).verdict, Verdict::Divergent);
    }

    #[test]
    fn exp_moment_is_log_convex() {
        let m = Measure::new(Potential::linear(1.5, 1).unwrap(), Scale::V, 1e-10).unwrap();
        let f = |l: f64| m.exp_moment(l).value.ln();
        let (a, b, c) = (f(0.2), f(0.6), f(1.0));
        assert!(a <= b && b <= c);
        assert!(b <= 0.5 * (a + c) + 1e-10);
    }

    #[test]
    fn ball_mass_cases() {
        let m = Measure::new(abs_potential(2.0), Scale::V, 1e-10).unwrap();
        assert_relative_eq!(m.ball_mass(1.0), 1.0 - (-2.0f64).exp(), max_relative = 1e-9);
        assert_relative_eq!(m.ball_mass(1e3), 1.0, max_relative = 1e-8);

        // d = 2 Gaussian: closed form 1 - e^{-1}; compare with a polar oracle.
        let q = Measure::new(Potential::quadratic(2).unwrap(), Scale::V, 1e-10).unwrap();
        let n = 1_000_000;
        let h = 1.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let r = h * (i as f64 + 0.5);
            acc += 2.0 * std::f64::consts::PI * r * q.density(&[r, 0.0]);
        }
        assert_relative_eq!(q.ball_mass(1.0), acc * h, max_relative = 1e-9);
        assert_relative_eq!(q.ball_mass(1.0), 1.0 - (-1.0f64).exp(), max_relative = 1e-9);
    }

    #[test]
    fn validation_errors() {
        assert!(Kernel::fractional(2.5, 1).is_err());
        assert!(Kernel::tempered(1.0, -0.1, 1).is_err());
        assert!(Potential::linear(0.0, 1).is_err());
        let bad = Potential::new(
            PotentialFamily::custom("inf", Arc::new(|x: &[f64]| 1.0 / (norm(x) - 1.0).abs().min(0.0)), true, false),
            1,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn weights_are_positive_and_match_definitions() {
        let p = Potential::quadratic(1).unwrap();
        let k = Kernel::tempered(1.0, 1.0, 1).unwrap();
        let w = Weight::tempered_envelope(&p, 1.0, 1.0);
        let x = [2.0];
        assert_relative_eq!(w.value(&x), (5.0f64 - 2.0).exp() / 9.0, max_relative = 1e-13);
        let g = Weight::gamma(&p, &k);
        assert_relative_eq!(g.value(&x), 5.0f64.exp() * k.gamma(2.0), max_relative = 1e-13);
        assert_relative_eq!(Weight::power(1, 0.5).value(&[3.0]), 2.0, max_relative = 1e-14);
        assert_relative_eq!(Weight::polynomial(1, 2.0).value(&[3.0]), 10.0, max_relative = 1e-14);
        assert_eq!(Weight::constant(1).value(&[7.0]), 1.0);
    }

    #[test]
    fn weight_tail_infimum() {
        let w = Weight::power(1, 1.0);
        assert_relative_eq!(w.tail_inf(3.0), 4.0, max_relative = 1e-10);
        // Non-monotone: (1+|x|)^{-1} e^{|x|/4} has its minimum at |x| = 3.
        let w = Weight::custom_log(1, "dip", Arc::new(|x: &[f64]| 0.25 * norm(x) - norm(x).ln_1p()), true);
        assert_relative_eq!(w.tail_inf(0.0), (0.75f64).exp() / 4.0, max_relative = 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn envelope_is_nonincreasing(r1 in 0.0f64..20.0, dr in 0.0f64..20.0, alpha in 0.05f64..1.95, delta in 0.0f64..3.0) {
            let k = Kernel::tempered(alpha, delta, 1).unwrap();
            prop_assert!(k.gamma(r1 + dr) <= k.gamma(r1) * (1.0 + 1e-12));
        }

        #[test]
        fn tail_supremum_is_nonincreasing(r1 in 0.0f64..30.0, dr in 0.0f64..30.0, eps in 0.1f64..3.0) {
            let p = Potential::log_polynomial(eps, 1).unwrap();
            prop_assert!(p.tail_sup_exp_neg_v(r1 + dr) <= p.tail_sup_exp_neg_v(r1));
        }

        #[test]
        fn ball_mass_is_monotone(r1 in 0.01f64..10.0, dr in 0.0f64..10.0) {
            let m = Measure::new(Potential::linear(1.0, 1).unwrap(), Scale::V, 1e-8).unwrap();
            prop_assert!(m.ball_mass(r1) <= m.ball_mass(r1 + dr) + 1e-12);
        }
    }
}
