//! Radial quadrature for singular and heavy-tailed integrands.
//!
//! Every improper integral is split at a reference radius. The part near the
//! origin is summed over dyadic panels `[2^{-k-1}u, 2^{-k}u]`, the tail over
//! doubling annuli `[2^k a, 2^{k+1} a]`. Both produce a sequence of level
//! contributions that is fed to the same convergence/divergence detector, so
//! the verdict logic lives in one place.

use serde::{Deserialize, Serialize};

use crate::model::{Kernel, Potential};

/// Relative tolerance used when a caller does not supply one.
pub const DEFAULT_QUAD_TOL: f64 = 1e-8;

/// Doublings allowed for tail integrals before giving up.
pub const MAX_DOUBLINGS: usize = 12;

/// Dyadic panels allowed toward the origin.
pub const MAX_DYADIC_LEVELS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Convergent,
    Divergent,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegralVerdict {
    /// Integral value; only meaningful when `verdict` is convergent.
    #[serde(with = "crate::floats")]
    pub value: f64,
    pub verdict: Verdict,
    /// Ratio of the last two level contributions.
    #[serde(with = "crate::floats")]
    pub tail_ratio: f64,
    pub refinement_levels: usize,
}

impl IntegralVerdict {
    pub fn is_convergent(&self) -> bool {
        self.verdict == Verdict::Convergent
    }

    fn exact(value: f64) -> Self {
        IntegralVerdict {
            value,
            verdict: Verdict::Convergent,
            tail_ratio: 0.0,
            refinement_levels: 0,
        }
    }

    /// Sum of two pieces of one integral; the weakest verdict wins.
    pub fn combine(&self, other: &IntegralVerdict) -> IntegralVerdict {
        let verdict = match (self.verdict, other.verdict) {
            (Verdict::Divergent, _) | (_, Verdict::Divergent) => Verdict::Divergent,
            (Verdict::Inconclusive, _) | (_, Verdict::Inconclusive) => Verdict::Inconclusive,
            _ => Verdict::Convergent,
        };
        IntegralVerdict {
            value: self.value + other.value,
            verdict,
            tail_ratio: self.tail_ratio.max(other.tail_ratio),
            refinement_levels: self.refinement_levels + other.refinement_levels,
        }
    }

    /// Multiplies the value by a positive constant.
    pub fn scaled(mut self, c: f64) -> IntegralVerdict {
        self.value *= c;
        self
    }
}

// Gauss-Kronrod 7/15 abscissae and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Kronrod and embedded Gauss estimates on `[a, b]`.
pub fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hl = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for (j, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let s = f(c - hl * x) + f(c + hl * x);
        k += w * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * hl, g * hl)
}

/// Fixed 15-point Kronrod rule; used where a cheap deterministic rule is enough.
pub fn fixed_rule(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    gk15(f, a, b).0
}

/// Globally adaptive Gauss-Kronrod integration on a finite interval.
///
/// Returns `(value, error estimate)`. A non-finite integrand value makes the
/// result non-finite, which callers treat as divergence.
pub fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> (f64, f64) {
    if b <= a {
        return (0.0, 0.0);
    }
    const MAX_INTERVALS: usize = 2000;
    const INITIAL_PIECES: usize = 4;
    let mut pieces: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(64);
    let w = (b - a) / INITIAL_PIECES as f64;
    for i in 0..INITIAL_PIECES {
        let lo = a + w * i as f64;
        let hi = if i + 1 == INITIAL_PIECES { b } else { lo + w };
        let (k, g) = gk15(f, lo, hi);
        pieces.push((lo, hi, k, (k - g).abs()));
    }
    loop {
        let total: f64 = pieces.iter().map(|p| p.2).sum();
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        if !total.is_finite() || !err.is_finite() {
            return (total, err);
        }
        let scale: f64 = pieces.iter().map(|p| p.2.abs()).sum();
        if err <= rel_tol * scale || err <= f64::MIN_POSITIVE || pieces.len() >= MAX_INTERVALS {
            return (total, err);
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, p)| if p.3 > best.1 { (i, p.3) } else { best });
        let (lo, hi, _, _) = pieces[idx];
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return (total, err);
        }
        let (k1, g1) = gk15(f, lo, mid);
        let (k2, g2) = gk15(f, mid, hi);
        pieces[idx] = (lo, mid, k1, (k1 - g1).abs());
        pieces.push((mid, hi, k2, (k2 - g2).abs()));
    }
}

/// Adaptive integration with forced breakpoints inside `(a, b)`.
pub fn adaptive_with_breaks(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    rel_tol: f64,
) -> f64 {
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut lo = a;
    let mut total = 0.0;
    for hi in cuts.into_iter().chain(std::iter::once(b)) {
        total += adaptive(f, lo, hi, rel_tol).0;
        lo = hi;
    }
    total
}

/// Level ratio below which a settled series counts as convergent at the
/// level cap.
pub const SETTLED_RATIO: f64 = 0.95;

/// Decides convergence of a series of level contributions.
///
/// Contributions are expected to behave geometrically once the integrand is
/// in its asymptotic regime. Convergence is declared when the last level is
/// negligible, or when the geometric extrapolation of the remaining tail is
/// stable between levels. Divergence is declared when contributions stop
/// decaying and the partial sums grew by at least 1.5 over the last three
/// levels.
pub fn sum_levels(
    mut level: impl FnMut(usize) -> f64,
    max_levels: usize,
    tol: f64,
) -> IntegralVerdict {
    let mut contributions: Vec<f64> = Vec::new();
    let mut partial: Vec<f64> = Vec::new();
    let mut extrapolated: Vec<f64> = Vec::new();
    let mut sum = 0.0;
    let mut last_ratio = f64::NAN;
    for k in 0..max_levels {
        let c = level(k);
        if !c.is_finite() {
            return IntegralVerdict {
                value: f64::INFINITY,
                verdict: Verdict::Divergent,
                tail_ratio: f64::INFINITY,
                refinement_levels: k + 1,
            };
        }
        sum += c;
        contributions.push(c);
        partial.push(sum);
        let ratio = if k == 0 {
            f64::NAN
        } else {
            let prev = contributions[k - 1].abs();
            if prev == 0.0 {
                if c == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                c.abs() / prev
            }
        };
        last_ratio = ratio;
        let tail = if ratio.is_finite() && ratio < 1.0 {
            c * ratio / (1.0 - ratio)
        } else {
            f64::INFINITY
        };
        extrapolated.push(sum + tail);
        let done = |value: f64| IntegralVerdict {
            value,
            verdict: Verdict::Convergent,
            tail_ratio: ratio,
            refinement_levels: k + 1,
        };
        if k >= 1 {
            let scale = sum.abs().max(f64::MIN_POSITIVE);
            if c == 0.0 && contributions[k - 1] == 0.0 && k >= 2 {
                return done(sum);
            }
            if ratio < 1.0 && c.abs() <= tol * scale && tail.abs() <= tol * scale {
                return done(sum + tail);
            }
        }
        if k >= 3 {
            let ratios: Vec<f64> = (k - 2..=k)
                .map(|j| {
                    let p = contributions[j - 1].abs();
                    if p == 0.0 {
                        f64::INFINITY
                    } else {
                        contributions[j].abs() / p
                    }
                })
                .collect();
            let decaying = ratios.iter().all(|&q| q < 0.995);
            let steady = (ratios[2] - ratios[1]).abs() <= 0.02 * ratios[2].max(1e-3);
            let e_now = extrapolated[k];
            let e_prev = extrapolated[k - 1];
            if decaying
                && steady
                && e_now.is_finite()
                && (e_now - e_prev).abs() <= tol * e_now.abs().max(f64::MIN_POSITIVE)
            {
                return done(e_now);
            }
            let growing = ratios.iter().all(|&q| q >= 0.995);
            if growing && partial[k].abs() >= 1.5 * partial[k - 3].abs() {
                return IntegralVerdict {
                    value: f64::INFINITY,
                    verdict: Verdict::Divergent,
                    tail_ratio: ratio,
                    refinement_levels: k + 1,
                };
            }
        }
    }
    // Out of levels: classify by the trend of the last contributions.
    let n = contributions.len();
    let growing = n >= 4
        && (n - 3..n).all(|j| {
            let p = contributions[j - 1].abs();
            p == 0.0 || contributions[j].abs() / p >= 0.995
        });
    // Slowly converging power laws: ratios clearly below one and settling
    // monotonically. The value carries the extrapolation error.
    let ratio_at = |j: usize| contributions[j].abs() / contributions[j - 1].abs();
    let settling = n >= 5
        && (n - 4..n).all(|j| contributions[j - 1] != 0.0 && ratio_at(j) < SETTLED_RATIO)
        && (n - 3..n).all(|j| (ratio_at(j) - ratio_at(j - 1)).abs() <= (ratio_at(j - 1) - ratio_at(j - 2)).abs() + 1e-12);
    let verdict = if growing {
        Verdict::Divergent
    } else if settling {
        Verdict::Convergent
    } else {
        Verdict::Inconclusive
    };
    IntegralVerdict {
        value: if growing { f64::INFINITY } else { *extrapolated.last().unwrap_or(&0.0) },
        verdict,
        tail_ratio: last_ratio,
        refinement_levels: n,
    }
}

/// `∫_0^upper g(r) dr` over dyadic panels shrinking toward the origin.
pub fn integrate_near_zero(g: &dyn Fn(f64) -> f64, upper: f64, tol: f64) -> IntegralVerdict {
    let inner_tol = (tol * 1e-2).max(1e-14);
    sum_levels(
        |k| {
            let hi = upper * 0.5f64.powi(k as i32);
            adaptive(g, 0.5 * hi, hi, inner_tol).0
        },
        MAX_DYADIC_LEVELS,
        tol,
    )
}

/// `∫_start^∞ g(r) dr` over doubling annuli, splitting at `breaks`.
pub fn integrate_tail(
    g: &dyn Fn(f64) -> f64,
    start: f64,
    breaks: &[f64],
    tol: f64,
) -> IntegralVerdict {
    let inner_tol = (tol * 1e-2).max(1e-14);
    sum_levels(
        |k| {
            let lo = start * 2f64.powi(k as i32);
            adaptive_with_breaks(g, lo, 2.0 * lo, breaks, inner_tol)
        },
        MAX_DOUBLINGS + 1,
        tol,
    )
}

/// `∫_0^∞ g(r) dr` split at `r = 1`; the near part uses plain adaptive
/// quadrature because these integrands are regular at the origin.
pub fn integrate_half_line(g: &dyn Fn(f64) -> f64, tol: f64) -> IntegralVerdict {
    let inner_tol = (tol * 1e-2).max(1e-14);
    let (near, _) = adaptive(g, 0.0, 1.0, inner_tol);
    if !near.is_finite() {
        return IntegralVerdict {
            value: f64::INFINITY,
            verdict: Verdict::Divergent,
            tail_ratio: f64::INFINITY,
            refinement_levels: 0,
        };
    }
    IntegralVerdict::exact(near).combine(&integrate_tail(g, 1.0, &[], tol))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm) / (x * x - 1.0);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(half) / gamma_half_integer(d)
}

// Γ(d/2) for positive integers d.
fn gamma_half_integer(d: usize) -> f64 {
    let (mut value, mut x) = if d.is_multiple_of(2) {
        (1.0, 1.0)
    } else {
        (std::f64::consts::PI.sqrt(), 0.5)
    };
    while x + 1e-9 < d as f64 / 2.0 {
        value *= x;
        x += 1.0;
    }
    value
}

/// Angles used for the trapezoidal rule on the circle.
pub const CIRCLE_NODES: usize = 128;

/// `∫_{S^{d-1}} f(rθ) dσ(θ)`.
///
/// In one dimension the sphere is `{-1, +1}` with counting measure. In two
/// dimensions a non-radial integrand uses `nodes` equispaced angles. Higher
/// dimensions require `radial = true`.
pub fn sphere_integral(
    dim: usize,
    r: f64,
    f: &dyn Fn(&[f64]) -> f64,
    radial: bool,
    nodes: usize,
) -> f64 {
    match dim {
        1 => {
            if radial {
                2.0 * f(&[r])
            } else {
                f(&[r]) + f(&[-r])
            }
        }
        2 if !radial => {
            let step = 2.0 * std::f64::consts::PI / nodes as f64;
            let mut acc = 0.0;
            for i in 0..nodes {
                let t = step * i as f64;
                acc += f(&[r * t.cos(), r * t.sin()]);
            }
            acc * step
        }
        _ => {
            let mut x = vec![0.0; dim];
            x[0] = r;
            sphere_area(dim) * f(&x)
        }
    }
}

/// Lévy integrability `∫_0^∞ ρ(r)(1∧r²) r^{d-1} dr`.
pub fn levy_integral(kernel: &Kernel, tol: f64) -> IntegralVerdict {
    let d = kernel.dim() as i32;
    let near = integrate_near_zero(&|r| kernel.rho(r) * r.powi(d + 1), 1.0, tol);
    let tail = integrate_tail(&|r| kernel.rho(r) * r.powi(d - 1), 1.0, &[], tol);
    near.combine(&tail)
}

/// `∫_0^1 r^{d-1}/ρ(r) dr`.
pub fn inverse_kernel_ball_integral(kernel: &Kernel, tol: f64) -> IntegralVerdict {
    let d = kernel.dim() as i32;
    integrate_near_zero(&|r| r.powi(d - 1) / kernel.rho(r), 1.0, tol)
}

/// `∫_1^∞ r^{d+α₀-1} ρ(r) dr`.
pub fn tail_moment_integral(kernel: &Kernel, alpha0: f64, tol: f64) -> IntegralVerdict {
    let d = kernel.dim() as f64;
    integrate_tail(&|r| r.powf(d + alpha0 - 1.0) * kernel.rho(r), 1.0, &[], tol)
}

/// `∫_{|x|>1} e^{-sV(x)}/γ(|x|) dx` for the potential multiplier `s`.
pub fn weighted_density_integral(
    potential: &Potential,
    kernel: &Kernel,
    multiplier: f64,
    tol: f64,
) -> IntegralVerdict {
    let d = potential.dim();
    let radial = potential.is_radial();
    let g = |r: f64| {
        let log_inv_gamma = -kernel.log_gamma(r);
        let angular = sphere_integral(
            d,
            r,
            &|x| (log_inv_gamma - multiplier * potential.value(x)).exp(),
            radial,
            CIRCLE_NODES,
        );
        angular * r.powi(d as i32 - 1)
    };
    integrate_tail(&g, 1.0, &[], tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Kernel, KernelFamily, Potential, PotentialFamily};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn gk15_is_exact_for_polynomials() {
        let (k, _) = gk15(&|x| x.powi(20) - 3.0 * x.powi(7), -1.0, 2.0);
        let exact = (2f64.powi(21) + 1.0) / 21.0 - 3.0 * (2f64.powi(8) - 1.0) / 8.0;
        assert_relative_eq!(k, exact, max_relative = 1e-13);
    }

    #[test]
    fn adaptive_resolves_a_narrow_peak() {
        let (v, _) = adaptive(&|x| (-(x - 3.3f64).powi(2) * 400.0).exp(), 0.0, 10.0, 1e-12);
        assert_relative_eq!(v, (std::f64::consts::PI / 400.0).sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn near_zero_power_laws() {
        let v = integrate_near_zero(&|r| r.powf(-0.5), 1.0, 1e-10);
        assert_eq!(v.verdict, Verdict::Convergent);
        assert_relative_eq!(v.value, 2.0, max_relative = 1e-8);
        let v = integrate_near_zero(&|r| 1.0 / r, 1.0, 1e-10);
        assert_eq!(v.verdict, Verdict::Divergent);
    }

    #[test]
    fn tail_power_laws() {
        let v = integrate_tail(&|r| r.powf(-1.7), 1.0, &[], 1e-10);
        assert_eq!(v.verdict, Verdict::Convergent);
        assert_relative_eq!(v.value, 1.0 / 0.7, max_relative = 1e-8);
        let v = integrate_tail(&|r| r.powf(-0.8), 1.0, &[], 1e-10);
        assert_eq!(v.verdict, Verdict::Divergent);
        let v = integrate_tail(&|r| 1.0 / r, 1.0, &[], 1e-10);
        assert_eq!(v.verdict, Verdict::Divergent);
    }

    #[test]
    fn tail_with_slowly_settling_ratio() {
        // (1 + r²)^{-0.85}: ratio approaches 2^{-0.7} only asymptotically.
        let v = integrate_tail(&|r| (1.0 + r * r).powf(-0.85), 1.0, &[], 1e-8);
        assert_eq!(v.verdict, Verdict::Convergent);
        // Oracle: substitute r = tan t, integrand cos^{-0.3}... use a log-variable Simpson sum.
        let n = 400_000;
        let (a, b) = (0.0f64, 80.0f64);
        let h = (b - a) / n as f64;
        let f = |s: f64| {
            let r = s.exp();
            (1.0 + r * r).powf(-0.85) * r
        };
        let mut acc = f(a) + f(b);
        for i in 1..n {
            acc += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let oracle = acc * h / 3.0;
        assert_relative_eq!(v.value, oracle, max_relative = 1e-6);
    }

    #[test]
    fn sphere_area_values() {
        assert_relative_eq!(sphere_area(1), 2.0, max_relative = 1e-15);
        assert_relative_eq!(sphere_area(2), 2.0 * std::f64::consts::PI, max_relative = 1e-15);
        assert_relative_eq!(sphere_area(3), 4.0 * std::f64::consts::PI, max_relative = 1e-15);
    }

    #[test]
    fn levy_integral_of_tempered_kernel_matches_panel_oracle() {
        let k = Kernel::new(KernelFamily::FractionalTempered { alpha: 1.0, delta: 1.0 }, 1).unwrap();
        let v = levy_integral(&k, 1e-10);
        assert_eq!(v.verdict, Verdict::Convergent);
        // Near part ∫_0^1 e^{-r} dr; tail ∫_1^∞ e^{-r} r^{-2} dr by log-variable Simpson.
        let near = 1.0 - (-1.0f64).exp();
        let n = 1_000_000;
        let h = 6.0 / n as f64;
        let f = |s: f64| {
            let r = s.exp();
            (-r).exp() / r
        };
        let mut acc = f(0.0) + f(6.0);
        for i in 1..n {
            acc += f(h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        assert_relative_eq!(v.value, near + acc * h / 3.0, max_relative = 1e-6);
    }

    #[test]
    fn levy_integral_detects_non_integrable_singularity() {
        let k = Kernel::new(
            KernelFamily::custom("r^-3", Arc::new(|r: f64| r.powi(-3)), true),
            1,
        )
        .unwrap();
        assert_eq!(levy_integral(&k, 1e-8).verdict, Verdict::Divergent);
        let k = Kernel::new(KernelFamily::Fractional { alpha: 1.99 }, 3).unwrap();
        assert_eq!(levy_integral(&k, 1e-8).verdict, Verdict::Convergent);
    }

    #[test]
    fn levy_integral_scales_linearly() {
        let base = Kernel::new(KernelFamily::Fractional { alpha: 0.7 }, 2).unwrap();
        let scaled = Kernel::new(
            KernelFamily::custom("3ρ", Arc::new(|r: f64| 3.0 * r.powf(-2.7)), true),
            2,
        )
        .unwrap();
        let a = levy_integral(&base, 1e-10).value;
        let b = levy_integral(&scaled, 1e-10).value;
        assert_relative_eq!(b, 3.0 * a, max_relative = 1e-9);
        assert_relative_eq!(a, 1.0 / 1.3 + 1.0 / 0.7, max_relative = 1e-8);
    }

    #[test]
    fn inverse_kernel_ball_integral_cases() {
        let k = Kernel::new(KernelFamily::Fractional { alpha: 0.5 }, 1).unwrap();
        let v = inverse_kernel_ball_integral(&k, 1e-10);
        assert_eq!(v.verdict, Verdict::Convergent);
        assert_relative_eq!(v.value, 1.0 / 2.5, max_relative = 1e-8);

        let k = Kernel::new(
            KernelFamily::custom("exp(-1/r)", Arc::new(|r: f64| (-1.0 / r).exp()), false),
            1,
        )
        .unwrap();
        assert_eq!(inverse_kernel_ball_integral(&k, 1e-8).verdict, Verdict::Divergent);

        // ∫_0^1 r · r³e^{2r} dr, compared with a fine Simpson sum.
        let k = Kernel::new(KernelFamily::FractionalTempered { alpha: 1.0, delta: 2.0 }, 2).unwrap();
        let v = inverse_kernel_ball_integral(&k, 1e-10);
        let n = 100_000;
        let h = 1.0 / n as f64;
        let f = |r: f64| r.powi(4) * (2.0 * r).exp();
        let mut acc = f(0.0) + f(1.0);
        for i in 1..n {
            acc += f(h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        assert_relative_eq!(v.value, acc * h / 3.0, max_relative = 1e-6);
    }

    #[test]
    fn tail_moment_cases() {
        let frac = |a: f64| Kernel::new(KernelFamily::Fractional { alpha: a }, 1).unwrap();
        let v = tail_moment_integral(&frac(1.0), 0.5, 1e-10);
        assert_eq!(v.verdict, Verdict::Convergent);
        assert_relative_eq!(v.value, 2.0, max_relative = 1e-8);
        assert_eq!(tail_moment_integral(&frac(0.3), 0.5, 1e-10).verdict, Verdict::Divergent);
        let t = Kernel::new(KernelFamily::FractionalTempered { alpha: 0.3, delta: 0.1 }, 1).unwrap();
        assert_eq!(tail_moment_integral(&t, 0.9, 1e-8).verdict, Verdict::Convergent);
    }

    #[test]
    fn weighted_density_cases() {
        let q = Potential::new(PotentialFamily::Quadratic, 1).unwrap();
        let t = Kernel::new(KernelFamily::FractionalTempered { alpha: 1.0, delta: 1.0 }, 1).unwrap();
        assert_eq!(weighted_density_integral(&q, &t, 2.0, 1e-8).verdict, Verdict::Convergent);

        let frac = Kernel::new(KernelFamily::Fractional { alpha: 1.0 }, 1).unwrap();
        // Integrand ~ r^{α-1-2ε}: ε = 0.3 gives r^{-0.6}.
        let lp = Potential::new(PotentialFamily::LogPolynomial { epsilon: 0.3 }, 1).unwrap();
        assert_eq!(weighted_density_integral(&lp, &frac, 2.0, 1e-8).verdict, Verdict::Divergent);

        let half = Kernel::new(KernelFamily::Fractional { alpha: 0.5 }, 1).unwrap();
        let lp = Potential::new(PotentialFamily::LogPolynomial { epsilon: 3.0 }, 1).unwrap();
        assert_eq!(weighted_density_integral(&lp, &half, 2.0, 1e-8).verdict, Verdict::Convergent);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in [1usize, 2, 4, 7, 8, 16, 24] {
            let (x, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, max_relative = 1e-14);
            for p in 0..(2 * n) {
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert!((got - exact).abs() < 1e-13, "n={n} p={p}");
            }
        }
    }
}
