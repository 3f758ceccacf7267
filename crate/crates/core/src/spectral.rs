//! Best constants of discrete weighted Poincaré inequalities.
//!
//! The best constant is the largest eigenvalue of the pencil (variance
//! matrix, form matrix) on functions modulo constants. Both matrices vanish
//! on constants, so one node is grounded (`f = 0` there) and the remaining
//! pencil is definite when the form graph is connected.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretization::{self, assemble, DiscreteForm, DiscretizationError, FormKind, Grid};
use crate::model::{Kernel, Potential, Weight};

/// Grids with fewer nodes use the dense eigensolver by default.
pub const DENSE_LIMIT: usize = 1500;

/// Reduced form eigenvalues below this, after unit-diagonal scaling, mean the
/// proxy graph is disconnected.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Relative spread of the last three sweep values counted as stable.
pub const STABLE_SPREAD: f64 = 0.10;
/// Growth across a sweep counted as divergence.
pub const DIVERGING_GROWTH: f64 = 1.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("form is singular on functions modulo constants (disconnected proxy)")]
    SingularForm,
    #[error("form has fewer than two nodes")]
    TooSmall,
    #[error("masses must be finite and nonnegative with positive total")]
    NonPositiveMass,
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMethod {
    DenseOracle,
    InverseIteration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapResult {
    /// Smallest `C` with weighted variance ≤ `C ·` form on the grid.
    #[serde(with = "crate::floats")]
    pub best_constant: f64,
    /// Maximizer of the quotient, centered to reference mean zero.
    #[serde(with = "crate::floats::vec")]
    pub extremizer: Vec<f64>,
    /// `‖V f - C A f‖ / (C ‖A f‖)` for the extremizer.
    #[serde(with = "crate::floats")]
    pub residual: f64,
    pub method: GapMethod,
}

/// Scaled, grounded pencil: `Ã = D^{-1/2} A_red D^{-1/2}`, same for the
/// variance matrix, with `D = diag(A_red)`.
struct Pencil {
    ground: usize,
    scale: Vec<f64>,
    a: DMatrix<f64>,
    v: DMatrix<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

/// `Σ ω_i μ_i (f_i - m)²` as a matrix: `P^T M_ω P` with `P = I - 1 μ^T / S`.
fn variance_matrix(form: &DiscreteForm) -> DMatrix<f64> {
    let mu = form.mass();
    let w = form.weighted_mass();
    let n = mu.len();
    let s: f64 = mu.iter().sum();
    let wt: f64 = w.iter().sum();
    DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { w[i] } else { 0.0 };
        diag - (w[i] * mu[j] + mu[i] * w[j]) / s + wt * mu[i] * mu[j] / (s * s)
    })
}

impl Pencil {
    fn new(form: &DiscreteForm) -> Result<Pencil, SpectralError> {
        let n = form.len();
        if n < 2 {
            return Err(SpectralError::TooSmall);
        }
        // Far nodes of light-tailed measures may carry zero mass; the
        // variance only needs a positive total.
        let admissible = |m: &[f64]| m.iter().all(|&x| x >= 0.0 && x.is_finite()) && m.iter().any(|&x| x > 0.0);
        if !admissible(form.weighted_mass()) || !admissible(form.mass()) {
            return Err(SpectralError::NonPositiveMass);
        }
        // Ground the heaviest node: its row is the best conditioned.
        let ground = (0..n)
            .max_by(|&a, &b| form.mass()[a].total_cmp(&form.mass()[b]))
            .unwrap_or(0);
        let keep: Vec<usize> = (0..n).filter(|&i| i != ground).collect();
        let full_a = form.matrix();
        let full_v = variance_matrix(form);
        let scale: Vec<f64> = keep
            .iter()
            .map(|&i| {
                let d = full_a[(i, i)];
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        if scale.contains(&0.0) {
            return Err(SpectralError::SingularForm);
        }
        let m = keep.len();
        let a = DMatrix::from_fn(m, m, |p, q| full_a[(keep[p], keep[q])] * scale[p] * scale[q]);
        let v = DMatrix::from_fn(m, m, |p, q| full_v[(keep[p], keep[q])] * scale[p] * scale[q]);
        let chol = Cholesky::new(a.clone()).ok_or(SpectralError::SingularForm)?;
        let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |acc, &x| acc.min(x * x));
        if !(min_pivot > SINGULAR_TOL) {
            return Err(SpectralError::SingularForm);
        }
        Ok(Pencil { ground, scale, a, v, chol })
    }

    /// `L^{-1} Ṽ L^{-T}`.
    fn reduced_operator(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        let x = l.solve_lower_triangular(&self.v).expect("nonsingular factor");
        let c = l.solve_lower_triangular(&x.transpose()).expect("nonsingular factor");
        (&c + c.transpose()) * 0.5
    }

    fn apply_reduced(&self, y: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l();
        let z = l.transpose().solve_upper_triangular(y).expect("nonsingular factor");
        let vz = &self.v * z;
        l.solve_lower_triangular(&vz).expect("nonsingular factor")
    }

    /// Maps a scaled reduced vector back to grid values.
    fn expand(&self, z: &DVector<f64>, form: &DiscreteForm) -> Vec<f64> {
        let n = form.len();
        let mut f = vec![0.0; n];
        let mut p = 0;
        for (i, slot) in f.iter_mut().enumerate() {
            if i == self.ground {
                continue;
            }
            *slot = z[p] * self.scale[p];
            p += 1;
        }
        let m = discretization::mean(form.mass(), &f);
        f.iter_mut().for_each(|x| *x -= m);
        f
    }
}

fn finish(form: &DiscreteForm, f: Vec<f64>, method: GapMethod) -> Result<GapResult, SpectralError> {
    let fv = DVector::from_vec(f);
    let af = form.matrix() * &fv;
    let vf = variance_matrix(form) * &fv;
    let num = fv.dot(&vf);
    let den = fv.dot(&af);
    if !(den > 0.0) {
        return Err(SpectralError::SingularForm);
    }
    let lambda = num / den;
    let residual = (&vf - &af * lambda).norm() / (lambda * af.norm());
    Ok(GapResult { best_constant: lambda, extremizer: fv.data.into(), residual, method })
}

/// Best constant with the default method for the grid size.
pub fn best_constant(form: &DiscreteForm) -> Result<GapResult, SpectralError> {
    let method = if form.len() < DENSE_LIMIT { GapMethod::DenseOracle } else { GapMethod::InverseIteration };
    best_constant_with(form, method)
}

pub fn best_constant_with(form: &DiscreteForm, method: GapMethod) -> Result<GapResult, SpectralError> {
    let pencil = Pencil::new(form)?;
    match method {
        GapMethod::DenseOracle => {
            let c = pencil.reduced_operator();
            let eig = SymmetricEigen::new(c);
            let (idx, _) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            let y = eig.eigenvectors.column(idx).into_owned();
            let z = pencil.chol.l().transpose().solve_upper_triangular(&y).expect("nonsingular factor");
            finish(form, pencil.expand(&z, form), GapMethod::DenseOracle)
        }
        GapMethod::InverseIteration => {
            let (estimate, start) = lanczos_top(&pencil);
            let z = inverse_iteration(&pencil, estimate, start);
            finish(form, pencil.expand(&z, form), GapMethod::InverseIteration)
        }
    }
}

/// Largest Ritz value of the reduced operator with full reorthogonalization,
/// and the matching vector mapped back to the scaled pencil coordinates.
fn lanczos_top(pencil: &Pencil) -> (f64, DVector<f64>) {
    let m = pencil.a.nrows();
    let steps = m.min(400);
    // Deterministic start vector with no special symmetry.
    let mut q = DVector::from_fn(m, |i, _| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_75).fract());
    q /= q.norm();
    let mut basis: Vec<DVector<f64>> = vec![q.clone()];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut best = (f64::NEG_INFINITY, DVector::zeros(m));
    for k in 0..steps {
        let mut w = pencil.apply_reduced(&basis[k]);
        let a = basis[k].dot(&w);
        alphas.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let beta = w.norm();
        let t = DMatrix::from_fn(k + 1, k + 1, |i, j| {
            if i == j {
                alphas[i]
            } else if i + 1 == j {
                betas[i]
            } else if j + 1 == i {
                betas[j]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let (idx, top) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        let s = eig.eigenvectors.column(idx);
        let ritz_residual = beta * s[k].abs();
        let mut y = DVector::zeros(m);
        for (j, b) in basis.iter().enumerate() {
            y.axpy(s[j], b, 1.0);
        }
        best = (top, y);
        if ritz_residual <= 1e-13 * top.abs() || beta <= 1e-14 * top.abs() {
            break;
        }
        betas.push(beta);
        basis.push(w / beta);
    }
    let z = pencil.chol.l().transpose().solve_upper_triangular(&best.1).expect("nonsingular factor");
    (best.0, z)
}

/// Shifted inverse iteration on the pencil `(σ Ã - Ṽ) z' = Ã z` just above
/// the estimated top eigenvalue.
fn inverse_iteration(pencil: &Pencil, estimate: f64, start: DVector<f64>) -> DVector<f64> {
    let sigma = estimate * (1.0 + 1e-7) + f64::MIN_POSITIVE;
    let shifted = &pencil.a * sigma - &pencil.v;
    let lu = shifted.lu();
    let mut z = start;
    let mut last = estimate;
    for _ in 0..50 {
        let rhs = &pencil.a * &z;
        let Some(next) = lu.solve(&rhs) else { break };
        let norm = next.dot(&(&pencil.a * &next)).sqrt();
        if !(norm > 0.0) {
            break;
        }
        z = next / norm;
        let lambda = z.dot(&(&pencil.v * &z));
        let settled = (lambda - last).abs() <= 1e-14 * lambda.abs();
        last = lambda;
        if settled {
            break;
        }
    }
    z
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityVerdict {
    Stable,
    Diverging,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub radius: f64,
    pub points_per_axis: usize,
    #[serde(with = "crate::floats")]
    pub best_constant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilitySweep {
    pub spacing: f64,
    pub points: Vec<SweepPoint>,
    pub verdict: StabilityVerdict,
}

/// Classifies a sequence of best constants over growing boxes.
pub fn classify_sweep(values: &[f64]) -> StabilityVerdict {
    if values.len() < 3 {
        return StabilityVerdict::Inconclusive;
    }
    let last = &values[values.len() - 3..];
    let lo = last.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = last.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo * (1.0 + STABLE_SPREAD) {
        StabilityVerdict::Stable
    } else if values[values.len() - 1] >= DIVERGING_GROWTH * values[0] {
        StabilityVerdict::Diverging
    } else {
        StabilityVerdict::Inconclusive
    }
}

/// Radii `r_min · √2^k` up to `r_max`. With this spacing the last three
/// sweep values span a doubling of the box, which is what the stability rule
/// compares.
pub fn sweep_radii(r_min: f64, r_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let r = r_min * 2f64.powf(0.5 * k as f64);
        if r > r_max * (1.0 + 1e-12) {
            break;
        }
        out.push(r);
        k += 1;
    }
    out
}

/// Best constants on grids of fixed spacing and growing radius.
#[allow(clippy::too_many_arguments)]
pub fn constant_stability_sweep(
    potential: &Potential,
    kernel: &Kernel,
    weight: &Weight,
    radii: &[f64],
    spacing: f64,
    kind: FormKind,
    quad_tol: f64,
) -> Result<StabilitySweep, SpectralError> {
    let mut points = Vec::with_capacity(radii.len());
    for &radius in radii {
        let grid = Grid::with_spacing(potential.dim(), radius, spacing)?;
        let form = assemble(potential, kernel, weight, &grid, kind, quad_tol)?;
        let gap = best_constant(&form)?;
        points.push(SweepPoint {
            radius,
            points_per_axis: grid.points_per_axis(),
            best_constant: gap.best_constant,
        });
    }
    let values: Vec<f64> = points.iter().map(|p| p.best_constant).collect();
    Ok(StabilitySweep { spacing, points, verdict: classify_sweep(&values) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{form_value, weighted_variance};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn quadratic_form(n: usize, radius: f64, weight: &Weight) -> DiscreteForm {
        let p = Potential::quadratic(1).unwrap();
        let k = Kernel::fractional(1.0, 1).unwrap();
        assemble(&p, &k, weight, &Grid::new(1, radius, n).unwrap(), FormKind::Rho, 1e-10).unwrap()
    }

    #[test]
    fn complete_graph_toy() {
        let w = 0.7;
        let weights = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { w });
        let third = 1.0 / 3.0;
        let form = DiscreteForm::from_pair_weights(&weights, vec![third; 3], vec![third; 3]).unwrap();
        // Mean-zero f has variance ⅓|f|² and form w·3|f|², so C = 1/(9w).
        let gap = best_constant(&form).unwrap();
        assert_relative_eq!(gap.best_constant, 1.0 / (9.0 * w), max_relative = 1e-12);
        // Brute force over the mean-zero plane.
        let mut worst: f64 = 0.0;
        for k in 0..360 {
            let t = (k as f64).to_radians();
            let f = [t.cos(), t.sin(), -t.cos() - t.sin()];
            let q = weighted_variance(&form, &f).unwrap() / form_value(&form, &f).unwrap();
            worst = worst.max(q);
        }
        assert_relative_eq!(worst, gap.best_constant, max_relative = 1e-12);
        let iter = best_constant_with(&form, GapMethod::InverseIteration).unwrap();
        assert_relative_eq!(iter.best_constant, gap.best_constant, max_relative = 1e-12);
    }

    #[test]
    fn disconnected_form_is_singular() {
        let mut weights = DMatrix::zeros(4, 4);
        weights[(0, 1)] = 1.0;
        weights[(1, 0)] = 1.0;
        weights[(2, 3)] = 1.0;
        weights[(3, 2)] = 1.0;
        let form = DiscreteForm::from_pair_weights(&weights, vec![0.25; 4], vec![0.25; 4]).unwrap();
        assert_eq!(best_constant(&form).unwrap_err(), SpectralError::SingularForm);
    }

    #[test]
    fn dense_and_iterative_agree() {
        for (n, radius) in [(33, 4.0), (129, 6.0), (257, 8.0), (511, 10.0)] {
            let p = Potential::quadratic(1).unwrap();
            let w = Weight::tempered_envelope(&p, 0.0, 1.0);
            let form = quadratic_form(n, radius, &w);
            let dense = best_constant_with(&form, GapMethod::DenseOracle).unwrap();
            let iter = best_constant_with(&form, GapMethod::InverseIteration).unwrap();
            let rel = (dense.best_constant - iter.best_constant).abs() / dense.best_constant;
            assert!(rel <= 1e-8, "n={n}: {rel}");
            for gap in [&dense, &iter] {
                let f = &gap.extremizer;
                let quotient = weighted_variance(&form, f).unwrap() / form_value(&form, f).unwrap();
                assert_relative_eq!(quotient, gap.best_constant, max_relative = 1e-8);
                let m = discretization::mean(form.mass(), f);
                let scale = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                assert!(m.abs() <= 1e-10 * scale);
                assert!(gap.residual < 1e-6, "residual {}", gap.residual);
            }
        }
    }

    #[test]
    fn constant_scales_inversely_with_form() {
        let form = quadratic_form(65, 4.0, &Weight::constant(1));
        let base = best_constant(&form).unwrap().best_constant;
        let scaled = DiscreteForm::from_parts(form.matrix() * 3.0, form.mass().to_vec(), form.weighted_mass().to_vec())
            .unwrap();
        assert_relative_eq!(best_constant(&scaled).unwrap().best_constant, base / 3.0, max_relative = 1e-10);
    }

    #[test]
    fn sweep_verdicts() {
        let k = Kernel::fractional(1.0, 1).unwrap();
        let radii = [4.0, 8.0, 12.0, 16.0, 20.0];
        let q = Potential::quadratic(1).unwrap();
        let stable = constant_stability_sweep(&q, &k, &Weight::tempered_envelope(&q, 0.0, 1.0), &radii, 0.5, FormKind::Rho, 1e-10)
            .unwrap();
        assert_eq!(stable.verdict, StabilityVerdict::Stable, "{:?}", stable.points);

        let lp = Potential::log_polynomial(0.7, 1).unwrap();
        let radii = sweep_radii(8.0, 64.0);
        let diverging = constant_stability_sweep(&lp, &k, &Weight::constant(1), &radii, 0.5, FormKind::Rho, 1e-10)
            .unwrap();
        assert_eq!(diverging.verdict, StabilityVerdict::Diverging, "{:?}", diverging.points);

        let weighted = constant_stability_sweep(&lp, &k, &Weight::power(1, 0.7 - 1.0), &radii, 0.5, FormKind::Rho, 1e-10)
            .unwrap();
        assert_eq!(weighted.verdict, StabilityVerdict::Stable, "{:?}", weighted.points);
    }

    #[test]
    fn radii_are_geometric() {
        let r = sweep_radii(8.0, 64.0);
        assert_eq!(r.len(), 7);
        assert_relative_eq!(r[2], 16.0, max_relative = 1e-15);
        assert_relative_eq!(r[6], 64.0, max_relative = 1e-15);
    }

    #[test]
    fn sweep_classification_rules() {
        assert_eq!(classify_sweep(&[1.0, 1.02, 1.05, 1.07]), StabilityVerdict::Stable);
        assert_eq!(classify_sweep(&[1.0, 1.3, 1.6, 2.0]), StabilityVerdict::Diverging);
        assert_eq!(classify_sweep(&[1.0, 0.8, 1.1, 1.2]), StabilityVerdict::Inconclusive);
        assert_eq!(classify_sweep(&[1.0, 2.0]), StabilityVerdict::Inconclusive);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn dominated_weights_give_smaller_constants(bump in 0.0f64..2.0, power in 0.0f64..1.0) {
            let base = quadratic_form(41, 4.0, &Weight::constant(1));
            let grid = base.grid().unwrap().clone();
            let small: Vec<f64> = base.weighted_mass().to_vec();
            let large: Vec<f64> = small
                .iter()
                .enumerate()
                .map(|(i, w)| w * (1.0 + bump * (1.0 + grid.norm(i)).powf(power)))
                .collect();
            let c1 = best_constant(&base).unwrap().best_constant;
            let c2 = best_constant(&base.with_weighted_mass(large).unwrap()).unwrap().best_constant;
            prop_assert!(c1 <= c2 * (1.0 + 1e-10));
        }
    }
}
