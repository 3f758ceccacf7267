//! Truncated generators, drift certificates and carré du champ identities.
//!
//! Only jumps longer than one enter the truncated generator. A certificate
//! for the test function `φ = 1 + |x|^{α₀}` states that on every grid node
//!
//! `L̂φ(x) ≤ -C1 e^{V(x)} γ(|x|) φ(x) + C2 1_{|x| ≤ r0}(x)`
//!
//! up to a relative tolerance.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretization::{DiscretizationError, Grid};
use crate::model::{Kernel, Measure, ModelError, Potential, Scale};
use crate::quadrature::{self, IntegralVerdict, Verdict};

/// Default relative certificate tolerance.
pub const DEFAULT_CERT_TOL: f64 = 1e-6;

/// Angles for the circle integral in two dimensions.
const GENERATOR_ANGLES: usize = 96;

/// Fraction of the worst observed drift rate kept as `C1`.
const DRIFT_SAFETY: f64 = 0.5;
/// Relative headroom added to `C2`.
const BUMP_SAFETY: f64 = 1.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LyapunovError {
    #[error("tail of the truncated generator does not converge at |x| = {0}")]
    TailDivergence(f64),
    #[error("no negative drift region: L̂φ ≥ 0 at the outermost node |x| = {0}")]
    NoNegativeDriftRegion(f64),
    #[error("vector has length {got}, grid has {expected} nodes")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("alpha0 = {0} must lie in (0, 2)")]
    BadExponent(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorVariant {
    /// `½ ∫_{|z|>1} (φ(x+z)-φ(x)) ρ(|z|) (e^{V(x)-V(x+z)} + 1) dz`
    RhoTruncated,
    /// `(1/C) ∫_{|z|>1} (φ(x+z)-φ(x)) ρ(|z|) e^{V(x)-V(x+z)} dz` with `C` the
    /// normalizer of `μ_{2V}`.
    PsiTruncated,
}

impl GeneratorVariant {
    pub fn reference_scale(self) -> Scale {
        match self {
            GeneratorVariant::RhoTruncated => Scale::V,
            GeneratorVariant::PsiTruncated => Scale::TwoV,
        }
    }
}

/// Test function `1 + |x|^{α₀}` outside the unit ball, continued inside by
/// the quadratic `1 + (1 - α₀/2) + (α₀/2)|x|²`, which matches value and slope
/// at `|x| = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLyapunov {
    pub alpha0: f64,
}

impl PowerLyapunov {
    pub fn new(alpha0: f64) -> Result<PowerLyapunov, LyapunovError> {
        if alpha0 > 0.0 && alpha0 < 2.0 {
            Ok(PowerLyapunov { alpha0 })
        } else {
            Err(LyapunovError::BadExponent(alpha0))
        }
    }

    pub fn radial(&self, r: f64) -> f64 {
        if r > 1.0 {
            1.0 + r.powf(self.alpha0)
        } else {
            1.0 + (1.0 - 0.5 * self.alpha0) + 0.5 * self.alpha0 * r * r
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.radial(norm(x))
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Truncated generator with a fixed model; evaluations may be rescaled by
/// `exp(-log_scale)` to avoid overflow of `e^{V(x)}`.
struct Generator<'a> {
    potential: &'a Potential,
    kernel: &'a Kernel,
    variant: GeneratorVariant,
    prefactor: f64,
    tol: f64,
}

impl<'a> Generator<'a> {
    fn new(
        potential: &'a Potential,
        kernel: &'a Kernel,
        variant: GeneratorVariant,
        tol: f64,
    ) -> Result<Generator<'a>, LyapunovError> {
        let prefactor = match variant {
            GeneratorVariant::RhoTruncated => 0.5,
            GeneratorVariant::PsiTruncated => {
                1.0 / Measure::new(potential.clone(), Scale::TwoV, tol)?.normalizer()
            }
        };
        Ok(Generator { potential, kernel, variant, prefactor, tol })
    }

    /// `L̂φ(x) · exp(-log_scale)`.
    fn apply_scaled(&self, phi: &dyn Fn(&[f64]) -> f64, x: &[f64], log_scale: f64) -> Result<f64, LyapunovError> {
        let d = x.len();
        let vx = self.potential.value(x);
        let phi_x = phi(x);
        let shift = (-log_scale).exp();
        let integrand = |z: &[f64]| {
            let y: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + b).collect();
            let jump = (vx - self.potential.value(&y) - log_scale).exp();
            let factor = match self.variant {
                GeneratorVariant::RhoTruncated => jump + shift,
                GeneratorVariant::PsiTruncated => jump,
            };
            (phi(&y) - phi_x) * factor
        };
        let radial = |r: f64| {
            r.powi(d as i32 - 1)
                * self.kernel.rho(r)
                * quadrature::sphere_integral(d, r, &integrand, false, GENERATOR_ANGLES)
        };
        let rx = norm(x);
        // Jumps landing near the origin make a bump around |z| = |x|; the
        // doubling tail only starts once past it.
        let breaks = [rx - 1.0, rx, rx + 1.0];
        let split = 2.0 * (rx + 1.0);
        let near = quadrature::adaptive_with_breaks(&radial, 1.0, split, &breaks, (self.tol * 1e-2).max(1e-14));
        let tail = quadrature::integrate_tail(&radial, split, &[], self.tol);
        if tail.verdict == Verdict::Divergent || !tail.value.is_finite() || !near.is_finite() {
            return Err(LyapunovError::TailDivergence(rx));
        }
        Ok(self.prefactor * (near + tail.value))
    }
}

/// `L̂φ(x)` for the truncated generator of `variant`.
pub fn truncated_generator_apply(
    potential: &Potential,
    kernel: &Kernel,
    phi: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    variant: GeneratorVariant,
    tol: f64,
) -> Result<f64, LyapunovError> {
    Generator::new(potential, kernel, variant, tol)?.apply_scaled(phi, x, 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorGrid {
    /// `L̂φ` at the grid nodes.
    pub values: Vec<f64>,
    pub quad_tol: f64,
    /// Jumps beyond the grid are integrated, not truncated.
    pub exterior_tail_included: bool,
}

/// `L̂φ` at every node of `grid`.
pub fn generator_on_grid(
    potential: &Potential,
    kernel: &Kernel,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    grid: &Grid,
    variant: GeneratorVariant,
    tol: f64,
) -> Result<GeneratorGrid, LyapunovError> {
    let generator = Generator::new(potential, kernel, variant, tol)?;
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| generator.apply_scaled(phi, grid.node(i), 0.0))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(GeneratorGrid { values, quad_tol: tol, exterior_tail_included: true })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    pub alpha0: f64,
    pub variant: GeneratorVariant,
    /// Node coordinates, flattened.
    pub nodes: Vec<f64>,
    pub phi: Vec<f64>,
    /// `C1 e^{V} γ φ` on the nodes (may overflow to infinity far out).
    #[serde(with = "crate::floats::vec")]
    pub h_function: Vec<f64>,
    #[serde(with = "crate::floats")]
    pub b: f64,
    #[serde(with = "crate::floats")]
    pub r0: f64,
    #[serde(with = "crate::floats")]
    pub c1: f64,
    #[serde(with = "crate::floats")]
    pub c2: f64,
    /// Worst relative slack `min_i slack_i / (e^{V}γφ)(x_i)`.
    #[serde(with = "crate::floats")]
    pub margin: f64,
    pub cert_tol: f64,
}

/// `g(x) = L̂φ(x) / (e^{V(x)} γ(|x|) φ(x))` and `log(e^{V}γφ)` at each node.
fn drift_ratios(
    generator: &Generator,
    kernel: &Kernel,
    potential: &Potential,
    lyapunov: PowerLyapunov,
    grid: &Grid,
) -> Result<Vec<(f64, f64)>, LyapunovError> {
    let phi = |x: &[f64]| lyapunov.value(x);
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.node(i);
            let log_scale = potential.value(x) + kernel.log_gamma(norm(x)) + phi(x).ln();
            let g = generator.apply_scaled(&phi, x, log_scale)?;
            Ok((g, log_scale))
        })
        .collect()
}

/// Relative slack of the drift inequality at one node.
fn relative_slack(g: f64, log_scale: f64, r: f64, c1: f64, c2: f64, r0: f64) -> f64 {
    let bump = if r <= r0 + 1e-12 { c2 * (-log_scale).exp() } else { 0.0 };
    -c1 + bump - g
}

/// Fits `C1`, `C2`, `r0` for `φ = 1 + |x|^{α₀}` on `grid`.
///
/// `r0` is the smallest node radius beyond which the drift ratio `g` is
/// negative at every node, `C1` is half the smallest `-g` there and `C2`
/// covers the positive part inside with 10% headroom.
pub fn fit_drift_certificate(
    potential: &Potential,
    kernel: &Kernel,
    alpha0: f64,
    grid: &Grid,
    variant: GeneratorVariant,
    cert_tol: f64,
    quad_tol: f64,
) -> Result<LyapunovCertificate, LyapunovError> {
    let lyapunov = PowerLyapunov::new(alpha0)?;
    let generator = Generator::new(potential, kernel, variant, quad_tol)?;
    let ratios = drift_ratios(&generator, kernel, potential, lyapunov, grid)?;
    let radii: Vec<f64> = (0..grid.len()).map(|i| grid.norm(i)).collect();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| radii[b].total_cmp(&radii[a]));

    // Walk inward from the boundary while the drift stays negative. The
    // innermost negative shell becomes r0 and joins the bump region.
    let outermost = radii[order[0]];
    let mut shells: Vec<(f64, f64)> = Vec::new();
    let mut k = 0;
    while k < order.len() {
        let r = radii[order[k]];
        let shell: Vec<usize> = order[k..].iter().copied().take_while(|&i| (radii[i] - r).abs() <= 1e-12).collect();
        if shell.iter().any(|&i| ratios[i].0 >= 0.0) {
            break;
        }
        shells.push((r, shell.iter().map(|&i| -ratios[i].0).fold(f64::INFINITY, f64::min)));
        k += shell.len();
    }
    if shells.len() < 2 {
        return Err(LyapunovError::NoNegativeDriftRegion(outermost));
    }
    let r0 = shells.last().unwrap().0.max(grid.spacing());
    let worst_outside = shells.iter().filter(|s| s.0 > r0 + 1e-12).map(|s| s.1).fold(f64::INFINITY, f64::min);
    let c1 = DRIFT_SAFETY * worst_outside;
    let mut c2: f64 = 0.0;
    for (i, &(g, log_scale)) in ratios.iter().enumerate() {
        if radii[i] <= r0 + 1e-12 {
            c2 = c2.max(((g + c1) * log_scale.exp()).max(0.0));
        }
    }
    let c2 = BUMP_SAFETY * c2;
    let margin = ratios
        .iter()
        .enumerate()
        .map(|(i, &(g, ls))| relative_slack(g, ls, radii[i], c1, c2, r0))
        .fold(f64::INFINITY, f64::min);
    let phi = grid.sample(|x| lyapunov.value(x));
    let h_function = ratios.iter().map(|&(_, ls)| c1 * ls.exp()).collect();
    Ok(LyapunovCertificate {
        alpha0,
        variant,
        nodes: grid.nodes().flatten().copied().collect(),
        phi,
        h_function,
        b: c2,
        r0,
        c1,
        c2,
        margin,
        cert_tol,
    })
}

/// Worst relative slack of a certificate on another grid.
pub fn validate_certificate(
    certificate: &LyapunovCertificate,
    potential: &Potential,
    kernel: &Kernel,
    grid: &Grid,
    quad_tol: f64,
) -> Result<f64, LyapunovError> {
    let lyapunov = PowerLyapunov::new(certificate.alpha0)?;
    let generator = Generator::new(potential, kernel, certificate.variant, quad_tol)?;
    let ratios = drift_ratios(&generator, kernel, potential, lyapunov, grid)?;
    Ok(ratios
        .iter()
        .enumerate()
        .map(|(i, &(g, ls))| relative_slack(g, ls, grid.norm(i), certificate.c1, certificate.c2, certificate.r0))
        .fold(f64::INFINITY, f64::min))
}

/// Grid with twice the resolution on the same box.
pub fn refined(grid: &Grid) -> Result<Grid, DiscretizationError> {
    Grid::new(grid.dim(), grid.radius(), 2 * grid.points_per_axis() - 1)
}

/// `μ(φ/h)` for `h = C1 e^{V} γ φ`, i.e. `(1/C1) ∫ e^{-V}/γ dμ`, which the
/// drift-to-Poincaré step needs finite.
pub fn phi_over_h_integral(
    certificate: &LyapunovCertificate,
    potential: &Potential,
    kernel: &Kernel,
    tol: f64,
) -> Result<IntegralVerdict, LyapunovError> {
    let scale = certificate.variant.reference_scale();
    let c = Measure::new(potential.clone(), scale, tol)?.normalizer();
    let multiplier = scale.multiplier() + 1.0;
    Ok(quadrature::weighted_density_integral(potential, kernel, multiplier, tol).scaled(c / certificate.c1))
}

// ---------------------------------------------------------------------------
// Carré du champ on the grid.

/// Truncated jump intensities `K_ij` with `Γ̂(f,g)_i = Σ_j K_ij (f_i-f_j)(g_i-g_j)`,
/// and the reference cell masses. `μ_i K_ij` is symmetric.
#[derive(Clone, Debug)]
pub struct TruncatedContext {
    k: DMatrix<f64>,
    mass: Vec<f64>,
}

impl TruncatedContext {
    pub fn new(
        potential: &Potential,
        kernel: &Kernel,
        grid: &Grid,
        variant: GeneratorVariant,
        tol: f64,
    ) -> Result<TruncatedContext, LyapunovError> {
        let n = grid.len();
        let vol = grid.cell_volume();
        let measure = Measure::new(potential.clone(), variant.reference_scale(), tol)?;
        let v: Vec<f64> = (0..n).map(|i| potential.value(grid.node(i))).collect();
        let mass: Vec<f64> = (0..n).map(|i| measure.density(grid.node(i)) * vol).collect();
        let c = measure.normalizer();
        let k = DMatrix::from_fn(n, n, |i, j| {
            let (x, y) = (grid.node(i), grid.node(j));
            let r = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if r <= 1.0 {
                return 0.0;
            }
            let rho = kernel.rho(r) * vol;
            match variant {
                GeneratorVariant::RhoTruncated => 0.5 * rho * ((v[i] - v[j]).exp() + 1.0),
                GeneratorVariant::PsiTruncated => rho * (v[i] - v[j]).exp() / c,
            }
        });
        Ok(TruncatedContext { k, mass })
    }

    /// Context from explicit intensities; `mass_i K_ij` must be symmetric.
    pub fn from_parts(k: DMatrix<f64>, mass: Vec<f64>) -> TruncatedContext {
        TruncatedContext { k, mass }
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// `μ_i K_ij`.
    pub fn pair_weight(&self, i: usize, j: usize) -> f64 {
        self.mass[i] * self.k[(i, j)]
    }

    fn check(&self, f: &[f64]) -> Result<(), LyapunovError> {
        if f.len() == self.len() {
            Ok(())
        } else {
            Err(LyapunovError::DimensionMismatch { expected: self.len(), got: f.len() })
        }
    }

    /// `L̂f(x_i) = Σ_j K_ij (f_j - f_i)`.
    pub fn generator(&self, f: &[f64], i: usize) -> Result<f64, LyapunovError> {
        self.check(f)?;
        Ok((0..self.len()).map(|j| self.k[(i, j)] * (f[j] - f[i])).sum())
    }

    /// `Σ_{i<j} μ_i K_ij (f_i - f_j)²`.
    pub fn form_value(&self, f: &[f64]) -> Result<f64, LyapunovError> {
        self.check(f)?;
        let n = self.len();
        Ok((0..n)
            .map(|i| (i + 1..n).map(|j| self.pair_weight(i, j) * (f[i] - f[j]).powi(2)).sum::<f64>())
            .sum())
    }
}

/// `Γ̂(f, g)(x_i) = Σ_j K_ij (f_i - f_j)(g_i - g_j)`.
pub fn carre_du_champ(ctx: &TruncatedContext, f: &[f64], g: &[f64], i: usize) -> Result<f64, LyapunovError> {
    ctx.check(f)?;
    ctx.check(g)?;
    Ok((0..ctx.len()).map(|j| ctx.k[(i, j)] * (f[i] - f[j]) * (g[i] - g[j])).sum())
}

/// `Γ̂(f, g)` through the generator: `L̂(fg) - g L̂f - f L̂g`.
pub fn carre_du_champ_from_generator(
    ctx: &TruncatedContext,
    f: &[f64],
    g: &[f64],
    i: usize,
) -> Result<f64, LyapunovError> {
    let fg: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
    Ok(ctx.generator(&fg, i)? - g[i] * ctx.generator(f, i)? - f[i] * ctx.generator(g, i)?)
}

/// `E(f) = ∬ (f(x)-f(y))² φ(x)φ(y) j dμ dμ` evaluated twice: as the pair
/// sum `2 Σ_{i<j} (f_i-f_j)² φ_i φ_j μ_i K_ij` and as
/// `Σ_i μ_i [Γ̂(fφ², f) - 2 f φ Γ̂(f, φ)]_i`.
pub fn weighted_pair_energy_probe(ctx: &TruncatedContext, f: &[f64], phi: &[f64]) -> Result<(f64, f64), LyapunovError> {
    ctx.check(f)?;
    ctx.check(phi)?;
    let n = ctx.len();
    let pair_sum: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| 2.0 * (f[i] - f[j]).powi(2) * phi[i] * phi[j] * ctx.pair_weight(i, j))
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let f_phi2: Vec<f64> = f.iter().zip(phi).map(|(a, p)| a * p * p).collect();
    let mut combination = 0.0;
    for i in 0..n {
        let first = carre_du_champ(ctx, &f_phi2, f, i)?;
        let second = carre_du_champ(ctx, f, phi, i)?;
        combination += ctx.mass[i] * (first - 2.0 * f[i] * phi[i] * second);
    }
    Ok((pair_sum, combination))
}
