//! Finite-dimensional proxies of the nonlocal forms on uniform grids.
//!
//! A form is stored as a dense symmetric matrix `A` with `fᵀAf = Σ_{i<j}
//! w_ij (f_i - f_j)²`, together with the cell masses of the reference
//! measure. Three contributions make up the pair weights `w_ij`:
//!
//! * node pairs, with the kernel averaged over the displacement cell when the
//!   nodes are close;
//! * the energy of jumps shorter than half a cell, replaced by a gradient
//!   proxy that couples neighbours of each node;
//! * jumps leaving the box, with the function extended by its value at the
//!   nearest boundary node.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Kernel, Measure, ModelError, Potential, Scale, Weight};
use crate::quadrature::{self, Verdict};

/// Largest grid for which dense matrices are assembled.
pub const MAX_NODES: usize = 4096;

const CELL_GAUSS_POINTS: usize = 4;
const STRIP_GAUSS_POINTS: usize = 8;
const TAIL_GAUSS_POINTS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizationError {
    #[error("grid spacing {spacing} must be below 1 to resolve the kernel")]
    GridTooCoarse { spacing: f64 },
    #[error("unsupported grid: {0}")]
    BadGrid(String),
    #[error("vector has length {got}, grid has {expected} nodes")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel is not a Lévy kernel: {0}")]
    NonIntegrable(String),
    #[error("cell mass underflows at node {0}")]
    MassUnderflow(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Uniform tensor grid on `[-R, R]^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    radius: f64,
    points_per_axis: usize,
    spacing: f64,
    coords: Vec<f64>,
}

impl Grid {
    pub fn new(dim: usize, radius: f64, points_per_axis: usize) -> Result<Grid, DiscretizationError> {
        if dim != 1 && dim != 2 {
            return Err(DiscretizationError::BadGrid(format!("dimension {dim} (only 1 and 2)")));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(DiscretizationError::BadGrid(format!("radius {radius}")));
        }
        if points_per_axis < 2 {
            return Err(DiscretizationError::BadGrid("need at least 2 points per axis".into()));
        }
        let count = points_per_axis.pow(dim as u32);
        if count > MAX_NODES {
            return Err(DiscretizationError::BadGrid(format!(
                "{count} nodes exceeds the dense limit {MAX_NODES}"
            )));
        }
        let spacing = 2.0 * radius / (points_per_axis - 1) as f64;
        if spacing >= 1.0 {
            return Err(DiscretizationError::GridTooCoarse { spacing });
        }
        let axis: Vec<f64> = (0..points_per_axis)
            .map(|k| {
                // Mirror so that nodes are exactly symmetric about the origin.
                let from_left = -radius + spacing * k as f64;
                let from_right = radius - spacing * (points_per_axis - 1 - k) as f64;
                if 2 * k < points_per_axis - 1 {
                    from_left
                } else if 2 * k > points_per_axis - 1 {
                    from_right
                } else {
                    0.0
                }
            })
            .collect();
        let mut coords = Vec::with_capacity(count * dim);
        if dim == 1 {
            coords.extend_from_slice(&axis);
        } else {
            for &y in &axis {
                for &x in &axis {
                    coords.push(x);
                    coords.push(y);
                }
            }
        }
        Ok(Grid { dim, radius, points_per_axis, spacing, coords })
    }

    /// Grid with spacing at most `spacing` covering `[-radius, radius]^d`.
    pub fn with_spacing(dim: usize, radius: f64, spacing: f64) -> Result<Grid, DiscretizationError> {
        let n = (2.0 * radius / spacing - 1e-9).ceil() as usize + 1;
        Grid::new(dim, radius, n)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim)
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.node(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Per-axis integer coordinates of node `i`.
    pub fn axis_index(&self, i: usize) -> [usize; 2] {
        let n = self.points_per_axis;
        if self.dim == 1 {
            [i, 0]
        } else {
            [i % n, i / n]
        }
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix + self.points_per_axis * iy
    }

    /// Evaluates `f` at every node.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        self.nodes().map(f).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormKind {
    /// `∬ (f(y)-f(x))² ρ(|x-y|) dy μ_V(dx)`, variance under `μ_V`.
    Rho,
    /// `∬ (f(y)-f(x))² ψ(|x-y|) e^{-V(y)} dy e^{-V(x)} dx`, variance under
    /// `μ_{2V}`.
    Psi,
}

impl FormKind {
    pub fn reference_scale(self) -> Scale {
        match self {
            FormKind::Rho => Scale::V,
            FormKind::Psi => Scale::TwoV,
        }
    }
}

/// Assembled form matrix with reference and weighted cell masses.
#[derive(Clone, Debug)]
pub struct DiscreteForm {
    grid: Option<Grid>,
    kind: FormKind,
    a: DMatrix<f64>,
    mass: Vec<f64>,
    weighted_mass: Vec<f64>,
    reference: Option<Reference>,
}

impl DiscreteForm {
    /// Form from explicit parts, for toy problems and tests. `a` is
    /// symmetrized.
    pub fn from_parts(
        a: DMatrix<f64>,
        mass: Vec<f64>,
        weighted_mass: Vec<f64>,
    ) -> Result<DiscreteForm, DiscretizationError> {
        let n = mass.len();
        if a.nrows() != n || a.ncols() != n || weighted_mass.len() != n {
            return Err(DiscretizationError::DimensionMismatch { expected: n, got: a.nrows() });
        }
        let a = (&a + a.transpose()) * 0.5;
        Ok(DiscreteForm { grid: None, kind: FormKind::Rho, a, mass, weighted_mass, reference: None })
    }

    /// Complete-graph form with pair weights `w[i][j]`.
    pub fn from_pair_weights(
        w: &DMatrix<f64>,
        mass: Vec<f64>,
        weighted_mass: Vec<f64>,
    ) -> Result<DiscreteForm, DiscretizationError> {
        DiscreteForm::from_parts(laplacian(w), mass, weighted_mass)
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.grid.as_ref()
    }

    pub fn kind(&self) -> FormKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Reference-measure cell masses.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Cell integrals of `ω` against the reference measure.
    pub fn weighted_mass(&self) -> &[f64] {
        &self.weighted_mass
    }

    /// Reference mass outside the grid cells.
    pub fn tail_mass(&self) -> f64 {
        1.0 - self.mass.iter().sum::<f64>()
    }

    /// Pair weight `w_ij = -A_ij`.
    pub fn pair_weight(&self, i: usize, j: usize) -> f64 {
        -self.a[(i, j)]
    }

    /// Same form with the weight replaced.
    pub fn reweighted(&self, weight: &Weight) -> DiscreteForm {
        let mut out = self.clone();
        if let (Some(grid), Some(reference)) = (&self.grid, &self.reference) {
            out.weighted_mass = weighted_masses(grid, weight, reference);
        }
        out
    }

    /// Same form with the weighted masses replaced.
    pub fn with_weighted_mass(&self, weighted_mass: Vec<f64>) -> Result<DiscreteForm, DiscretizationError> {
        self.check_len(&weighted_mass)?;
        let mut out = self.clone();
        out.weighted_mass = weighted_mass;
        Ok(out)
    }

    fn check_len(&self, f: &[f64]) -> Result<(), DiscretizationError> {
        if f.len() == self.len() {
            Ok(())
        } else {
            Err(DiscretizationError::DimensionMismatch { expected: self.len(), got: f.len() })
        }
    }

    /// Writes `i j value` lines: the upper triangle of `A`, then the
    /// reference masses (`i i mass`) and weighted masses after a comment line.
    pub fn dump(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "# form matrix (upper triangle)")?;
        for i in 0..self.len() {
            for j in i..self.len() {
                let v = self.a[(i, j)];
                if v != 0.0 {
                    writeln!(out, "{i} {j} {v:e}")?;
                }
            }
        }
        writeln!(out, "# reference mass")?;
        for (i, m) in self.mass.iter().enumerate() {
            writeln!(out, "{i} {i} {m:e}")?;
        }
        writeln!(out, "# weighted mass")?;
        for (i, m) in self.weighted_mass.iter().enumerate() {
            writeln!(out, "{i} {i} {m:e}")?;
        }
        Ok(())
    }
}

fn laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let wij = 0.5 * (w[(i, j)] + w[(j, i)]);
                a[(i, j)] = -wij;
                diag += wij;
            }
        }
        a[(i, i)] = diag;
    }
    a
}

/// `Σ_{i<j} w_ij (f_i - f_j)²`.
pub fn form_value(form: &DiscreteForm, f: &[f64]) -> Result<f64, DiscretizationError> {
    form.check_len(f)?;
    let n = f.len();
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = form.a.column(i);
            let mut acc = 0.0;
            for j in i + 1..n {
                let d = f[i] - f[j];
                acc -= row[j] * d * d;
            }
            acc
        })
        .sum();
    Ok(total.max(0.0))
}

/// `Σ_i ω_i μ_i (f_i - m)²` with `m` the reference-measure mean.
pub fn weighted_variance(form: &DiscreteForm, f: &[f64]) -> Result<f64, DiscretizationError> {
    form.check_len(f)?;
    let m = mean(&form.mass, f);
    Ok(form.weighted_mass.iter().zip(f).map(|(w, x)| w * (x - m) * (x - m)).sum())
}

/// Reference-measure mean of `f`, renormalized to the grid.
pub fn mean(mass: &[f64], f: &[f64]) -> f64 {
    let total: f64 = mass.iter().sum();
    mass.iter().zip(f).map(|(m, x)| m * x).sum::<f64>() / total
}

// ---------------------------------------------------------------------------
// Assembly.

/// `log ∫_cell exp(g(x)) dx` for every node, by tensor Gauss rules in log
/// space.
fn log_cell_integrals_of(grid: &Grid, g: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Vec<f64> {
    let (gx, gw) = quadrature::gauss_legendre(CELL_GAUSS_POINTS);
    let half = 0.5 * grid.spacing();
    let d = grid.dim();
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.node(i);
            let mut terms: Vec<(f64, f64)> = Vec::new();
            if d == 1 {
                for (x, w) in gx.iter().zip(&gw) {
                    terms.push((w * half, g(&[c[0] + half * x])));
                }
            } else {
                for (x, wx) in gx.iter().zip(&gw) {
                    for (y, wy) in gx.iter().zip(&gw) {
                        let p = [c[0] + half * x, c[1] + half * y];
                        terms.push((wx * wy * half * half, g(&p)));
                    }
                }
            }
            let top = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
            top + terms.iter().map(|(w, e)| w * (e - top).exp()).sum::<f64>().ln()
        })
        .collect()
}

/// `log ∫_cell e^{-s V(x)} dx` for every node.
fn log_cell_integrals(grid: &Grid, potential: &Potential, s: f64) -> Vec<f64> {
    log_cell_integrals_of(grid, &|x| -s * potential.value(x))
}

/// `∫_cell ω dμ` for every node, `μ` the reference measure of `reference`.
fn weighted_masses(grid: &Grid, weight: &Weight, reference: &Reference) -> Vec<f64> {
    let s = reference.scale.multiplier();
    log_cell_integrals_of(grid, &|x| weight.log_value(x) - s * reference.potential.value(x))
        .into_iter()
        .map(|l| (l + reference.log_normalizer).exp())
        .collect()
}

/// Reference measure of an assembled form.
#[derive(Clone, Debug)]
struct Reference {
    potential: Potential,
    scale: Scale,
    log_normalizer: f64,
}

/// `(1/h^d) ∫_{cell(offset·h)} ρ(|z|) dz`, the kernel averaged over the
/// displacement cell.
fn cell_average(kernel: &Kernel, offset: [i64; 2], dim: usize, h: f64, tol: f64) -> f64 {
    let lo = |k: i64| (k as f64 - 0.5) * h;
    let hi = |k: i64| (k as f64 + 0.5) * h;
    if dim == 1 {
        let (v, _) = quadrature::adaptive(&|r: f64| kernel.rho(r.abs()), lo(offset[0]), hi(offset[0]), tol);
        v / h
    } else {
        let inner = |x: f64| {
            quadrature::adaptive(&|y: f64| kernel.rho((x * x + y * y).sqrt()), lo(offset[1]), hi(offset[1]), tol).0
        };
        let (v, _) = quadrature::adaptive(&inner, lo(offset[0]), hi(offset[0]), tol);
        v / (h * h)
    }
}

/// Kernel values indexed by absolute axis offsets `(kx, ky)`.
fn kernel_table(kernel: &Kernel, grid: &Grid, tol: f64) -> Vec<f64> {
    let n = grid.points_per_axis();
    let h = grid.spacing();
    let ny = if grid.dim() == 1 { 1 } else { n };
    (0..n * ny)
        .into_par_iter()
        .map(|idx| {
            let (kx, ky) = (idx % n, idx / n);
            let r2 = (kx * kx + ky * ky) as f64;
            if r2 == 0.0 {
                0.0
            } else if r2 < 4.0 {
                cell_average(kernel, [kx as i64, ky as i64], grid.dim(), h, tol)
            } else {
                kernel.rho(r2.sqrt() * h)
            }
        })
        .collect()
}

/// Region outside the box assigned to one boundary node.
#[derive(Clone, Copy, Debug)]
enum ExteriorRegion {
    /// Half-line beyond the edge in direction `sign` (1D).
    Ray { sign: f64 },
    /// Strip beyond the edge normal to `axis` in direction `sign`, one cell
    /// wide around `center` along the other axis.
    Strip { axis: usize, sign: f64, center: f64 },
    /// Quadrant beyond a corner.
    Quadrant { sx: f64, sy: f64 },
}

struct ExteriorRule {
    near: (Vec<f64>, Vec<f64>),
    tail: (Vec<f64>, Vec<f64>),
    cell: (Vec<f64>, Vec<f64>),
}

impl ExteriorRule {
    fn new() -> ExteriorRule {
        ExteriorRule {
            near: quadrature::gauss_legendre(STRIP_GAUSS_POINTS),
            tail: quadrature::gauss_legendre(TAIL_GAUSS_POINTS),
            cell: quadrature::gauss_legendre(STRIP_GAUSS_POINTS),
        }
    }

    /// Nodes `(s, weight)` for `∫_0^∞ g(s) ds`: Gauss on `[0, h]` and a mapped
    /// rule `s = h + L t/(1-t)` beyond.
    fn outward(&self, h: f64, scale: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(STRIP_GAUSS_POINTS + TAIL_GAUSS_POINTS);
        for (x, w) in self.near.0.iter().zip(&self.near.1) {
            out.push((0.5 * h * (x + 1.0), 0.5 * h * w));
        }
        for (x, w) in self.tail.0.iter().zip(&self.tail.1) {
            let t = 0.5 * (x + 1.0);
            let s = h + scale * t / (1.0 - t);
            out.push((s, 0.5 * w * scale / ((1.0 - t) * (1.0 - t))));
        }
        out
    }

    /// `∫_region g(y) dy` seen from `x`.
    fn integrate(&self, g: &dyn Fn(&[f64]) -> f64, region: ExteriorRegion, x: &[f64], grid: &Grid) -> f64 {
        let h = grid.spacing();
        let edge = grid.radius() + 0.5 * h;
        match region {
            ExteriorRegion::Ray { .. } => unreachable!("rays use adaptive quadrature"),
            ExteriorRegion::Strip { axis, sign, center } => {
                let other = 1 - axis;
                let gap = edge - sign * x[axis];
                let scale = gap + h;
                let outward = self.outward(h, scale);
                let mut acc = 0.0;
                for (c, cw) in self.cell.0.iter().zip(&self.cell.1) {
                    let t = center + 0.5 * h * c;
                    for &(s, w) in &outward {
                        let mut y = [0.0; 2];
                        y[axis] = sign * (edge + s);
                        y[other] = t;
                        acc += 0.5 * h * cw * w * g(&y);
                    }
                }
                acc
            }
            ExteriorRegion::Quadrant { sx, sy } => {
                let ox = self.outward(h, edge - sx * x[0] + h);
                let oy = self.outward(h, edge - sy * x[1] + h);
                let mut acc = 0.0;
                for &(s, ws) in &ox {
                    for &(t, wt) in &oy {
                        acc += ws * wt * g(&[sx * (edge + s), sy * (edge + t)]);
                    }
                }
                acc
            }
        }
    }
}

fn exterior_regions(grid: &Grid) -> Vec<(usize, ExteriorRegion)> {
    let n = grid.points_per_axis();
    let mut out = Vec::new();
    if grid.dim() == 1 {
        out.push((0, ExteriorRegion::Ray { sign: -1.0 }));
        out.push((n - 1, ExteriorRegion::Ray { sign: 1.0 }));
        return out;
    }
    for k in 0..n {
        let t = grid.node(grid.index(k, 0))[0];
        out.push((grid.index(0, k), ExteriorRegion::Strip { axis: 0, sign: -1.0, center: t }));
        out.push((grid.index(n - 1, k), ExteriorRegion::Strip { axis: 0, sign: 1.0, center: t }));
        out.push((grid.index(k, 0), ExteriorRegion::Strip { axis: 1, sign: -1.0, center: t }));
        out.push((grid.index(k, n - 1), ExteriorRegion::Strip { axis: 1, sign: 1.0, center: t }));
    }
    for (ix, sx) in [(0, -1.0), (n - 1, 1.0)] {
        for (iy, sy) in [(0, -1.0), (n - 1, 1.0)] {
            out.push((grid.index(ix, iy), ExteriorRegion::Quadrant { sx, sy }));
        }
    }
    out
}

/// `|S^{d-1}| ∫_0^a r^{d+1} ρ(r) dr = ∫_{|z|<a} |z|² ρ(|z|) dz`.
fn small_ball_second_moment(kernel: &Kernel, a: f64, tol: f64) -> Result<f64, DiscretizationError> {
    let d = kernel.dim();
    let v = quadrature::integrate_near_zero(&|r| r.powi(d as i32 + 1) * kernel.rho(r), a, tol);
    if v.verdict == Verdict::Divergent {
        return Err(DiscretizationError::NonIntegrable("second moment near the origin".into()));
    }
    Ok(quadrature::sphere_area(d) * v.value)
}

/// Builds the discrete form of `kind` for `kernel` and `potential` on `grid`.
///
/// Pair weights use `½ ρ̄_ij (m_i + m_j) h^d` for the `ρ` form and
/// `ρ̄_ij E_i E_j` with `E_i = ∫_cell e^{-V}` for the `ψ` form, where `ρ̄` is
/// the kernel averaged over the displacement cell for pairs closer than two
/// cells and the point value otherwise.
pub fn assemble(
    potential: &Potential,
    kernel: &Kernel,
    weight: &Weight,
    grid: &Grid,
    kind: FormKind,
    quad_tol: f64,
) -> Result<DiscreteForm, DiscretizationError> {
    let d = grid.dim();
    if potential.dim() != d || kernel.dim() != d || weight.dim() != d {
        return Err(DiscretizationError::BadGrid("model and grid dimensions differ".into()));
    }
    let levy = quadrature::levy_integral(kernel, quad_tol);
    if levy.verdict == Verdict::Divergent {
        return Err(DiscretizationError::NonIntegrable(format!("{:?}", kernel.family())));
    }
    let n = grid.len();
    let h = grid.spacing();
    let vol = grid.cell_volume();
    let measure = Measure::new(potential.clone(), kind.reference_scale(), quad_tol)?;
    let log_c = measure.normalizer().ln();

    let log_e1 = log_cell_integrals(grid, potential, 1.0);
    let log_ref: Vec<f64> = match kind {
        FormKind::Rho => log_e1.iter().map(|l| l + log_c).collect(),
        FormKind::Psi => log_cell_integrals(grid, potential, 2.0).iter().map(|l| l + log_c).collect(),
    };
    let mass: Vec<f64> = log_ref.iter().map(|l| l.exp()).collect();
    // Far nodes of light-tailed measures may underflow; they still couple to
    // the bulk through the pair weights.
    if let Some(i) = mass.iter().position(|&m| m == 0.0) {
        if mass.iter().all(|&m| m == 0.0) {
            return Err(DiscretizationError::MassUnderflow(i));
        }
    }
    let e1: Vec<f64> = log_e1.iter().map(|l| l.exp()).collect();
    // Per-node factor entering pair weights.
    let pair_factor: Vec<f64> = match kind {
        FormKind::Rho => mass.clone(),
        FormKind::Psi => e1.clone(),
    };
    let pair = |i: usize, j: usize, rho_bar: f64| match kind {
        FormKind::Rho => 0.5 * rho_bar * (pair_factor[i] + pair_factor[j]) * vol,
        FormKind::Psi => rho_bar * pair_factor[i] * pair_factor[j],
    };

    let table = kernel_table(kernel, grid, quad_tol);
    let np = grid.points_per_axis();
    let mut w = DMatrix::<f64>::zeros(n, n);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let [ix, iy] = grid.axis_index(i);
            (0..n)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    let [jx, jy] = grid.axis_index(j);
                    let idx = ix.abs_diff(jx) + np * iy.abs_diff(jy);
                    pair(i, j, table[idx])
                })
                .collect()
        })
        .collect();
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            w[(i, j)] = v;
        }
    }

    // Jumps shorter than half a cell: ½ mass_i (1/d) ∫_{|z|<h/2}|z|²ρ |∇f(x_i)|²
    // with central differences inside and one-sided ones on the boundary.
    let second_moment = small_ball_second_moment(kernel, 0.5 * h, quad_tol)?;
    for i in 0..n {
        let local_mass = match kind {
            FormKind::Rho => mass[i],
            FormKind::Psi => e1[i] * (-potential.value(grid.node(i))).exp(),
        };
        let c = 0.5 * local_mass * second_moment / d as f64;
        let idx = grid.axis_index(i);
        for axis in 0..d {
            let k = idx[axis];
            let step = |kk: usize| {
                let mut t = idx;
                t[axis] = kk;
                grid.index(t[0], t[1])
            };
            let (a, b, coeff) = if k == 0 {
                (step(0), step(1), c / (h * h))
            } else if k == np - 1 {
                (step(np - 2), step(np - 1), c / (h * h))
            } else {
                (step(k - 1), step(k + 1), c / (4.0 * h * h))
            };
            w[(a, b)] += coeff;
            w[(b, a)] += coeff;
        }
    }

    // Jumps leaving the box, with f frozen at the boundary node's value.
    let regions = exterior_regions(grid);
    let rule = ExteriorRule::new();
    let tail_tol = quad_tol.max(1e-10);
    let exterior: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = grid.node(i);
            let jump = |y: &[f64]| {
                let r = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                kernel.rho(r)
            };
            let integrand = |y: &[f64]| match kind {
                FormKind::Rho => 0.5 * jump(y) * (mass[i] + vol * measure.density(y)),
                FormKind::Psi => e1[i] * jump(y) * (-potential.value(y)).exp(),
            };
            regions
                .iter()
                .filter(|(b, _)| *b != i)
                .map(|&(b, region)| {
                    let v = match region {
                        ExteriorRegion::Ray { sign } => {
                            let start = grid.radius() + 0.5 * h - sign * x[0];
                            let g = |s: f64| integrand(&[x[0] + sign * s]);
                            quadrature::integrate_tail(&g, start, &[], tail_tol).value
                        }
                        _ => rule.integrate(&integrand, region, x, grid),
                    };
                    (b, v)
                })
                .collect()
        })
        .collect();
    for (i, list) in exterior.into_iter().enumerate() {
        for (b, v) in list {
            w[(i, b)] += v;
            w[(b, i)] += v;
        }
    }

    let a = laplacian(&w);
    let reference = Reference { potential: potential.clone(), scale: kind.reference_scale(), log_normalizer: log_c };
    let weighted_mass = weighted_masses(grid, weight, &reference);
    Ok(DiscreteForm { grid: Some(grid.clone()), kind, a, mass, weighted_mass, reference: Some(reference) })
}

// ---------------------------------------------------------------------------
// Local Poincaré constant.

/// Symmetric jump density `j(x, y)` with respect to `μ_V ⊗ μ_V`.
#[derive(Clone)]
pub enum PairKernel {
    /// `ρ(|x-y|) (e^{V(x)} + e^{V(y)}) / (2 C_V)` with `C_V` the normalizer
    /// of `μ_V`; the density of the `ρ` form.
    Rho(Kernel),
    /// As `Rho`, restricted to jumps longer than one.
    Truncated(Kernel),
    Constant(f64),
    Custom(std::sync::Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>),
}

/// Outcome of a local Poincaré constant computation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum LocalConstant {
    Finite(f64),
    /// The jump density vanishes on pairs inside the ball.
    Infinite,
}

impl LocalConstant {
    pub fn value(self) -> f64 {
        match self {
            LocalConstant::Finite(v) => v,
            LocalConstant::Infinite => f64::INFINITY,
        }
    }
}

fn finish_local_constant(worst: f64, ball_mass: f64) -> LocalConstant {
    if worst.is_finite() {
        LocalConstant::Finite(worst / (ball_mass * ball_mass))
    } else {
        LocalConstant::Infinite
    }
}

/// `κ_r = μ(B)^{-2} max_{x_i ∈ B} Σ_{x_j ∈ B} μ_j / j(x_i, x_j)` with cell
/// masses of `μ_V` on `grid`. Singular kernels contribute nothing on the
/// diagonal.
pub fn local_poincare_constant(
    potential: &Potential,
    kernel: &PairKernel,
    r: f64,
    grid: &Grid,
    quad_tol: f64,
) -> Result<LocalConstant, DiscretizationError> {
    let measure = Measure::new(potential.clone(), Scale::V, quad_tol)?;
    let log_c = measure.normalizer().ln();
    let log_mass: Vec<f64> = log_cell_integrals(grid, potential, 1.0).iter().map(|l| l + log_c).collect();
    let inside: Vec<usize> = (0..grid.len()).filter(|&i| grid.norm(i) <= r + 1e-12).collect();
    let ball_mass: f64 = inside.iter().map(|&i| log_mass[i].exp()).sum();
    let c_v = measure.normalizer();
    let j = |a: usize, b: usize| -> f64 {
        let (x, y) = (grid.node(a), grid.node(b));
        let dist = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let sym = || 0.5 * ((potential.value(x)).exp() + (potential.value(y)).exp()) / c_v;
        match kernel {
            PairKernel::Rho(k) => k.rho(dist) * sym(),
            PairKernel::Truncated(k) => {
                if dist > 1.0 {
                    k.rho(dist) * sym()
                } else {
                    0.0
                }
            }
            PairKernel::Constant(c) => *c,
            PairKernel::Custom(f) => f(x, y),
        }
    };
    let worst = inside
        .par_iter()
        .map(|&a| {
            inside
                .iter()
                .map(|&b| {
                    let jab = j(a, b);
                    if jab == f64::INFINITY {
                        0.0
                    } else if jab <= 0.0 {
                        f64::INFINITY
                    } else {
                        log_mass[b].exp() / jab
                    }
                })
                .sum::<f64>()
        })
        .reduce(|| 0.0, f64::max);
    Ok(finish_local_constant(worst, ball_mass))
}

/// Local constant read off an assembled form, with the effective density
/// `j_ij = w_ij / (μ_i μ_j)`.
pub fn local_poincare_constant_of_form(form: &DiscreteForm, r: f64) -> LocalConstant {
    let inside = ball_nodes(form, r);
    let ball_mass: f64 = inside.iter().map(|&i| form.mass[i]).sum();
    let worst = inside
        .iter()
        .map(|&a| {
            inside
                .iter()
                .filter(|&&b| b != a)
                .map(|&b| {
                    let w = form.pair_weight(a, b);
                    if w <= 0.0 {
                        f64::INFINITY
                    } else {
                        form.mass[a] * form.mass[b] * form.mass[b] / w
                    }
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    finish_local_constant(worst, ball_mass)
}

fn ball_nodes(form: &DiscreteForm, r: f64) -> Vec<usize> {
    match &form.grid {
        Some(grid) => (0..grid.len()).filter(|&i| grid.norm(i) <= r + 1e-12).collect(),
        None => (0..form.len()).collect(),
    }
}

/// Both sides of the local inequality
/// `∫_B f² dμ ≤ κ_r ∬_{B×B} (f(x)-f(y))² j dμ dμ + (∫_B f dμ)²/μ(B)`.
///
/// The double integral over the full space is `2 fᵀAf`, which bounds the
/// one over `B × B`.
pub fn local_poincare_check(form: &DiscreteForm, r: f64, f: &[f64]) -> Result<(f64, f64), DiscretizationError> {
    form.check_len(f)?;
    let inside = ball_nodes(form, r);
    let lhs: f64 = inside.iter().map(|&i| form.mass[i] * f[i] * f[i]).sum();
    let ball_mass: f64 = inside.iter().map(|&i| form.mass[i]).sum();
    let integral: f64 = inside.iter().map(|&i| form.mass[i] * f[i]).sum();
    let kappa = local_poincare_constant_of_form(form, r).value();
    let energy = 2.0 * form_value(form, f)?;
    let first = if energy == 0.0 { 0.0 } else { kappa * energy };
    Ok((lhs, first + integral * integral / ball_mass))
}
