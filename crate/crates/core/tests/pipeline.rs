//! End-to-end checks across modules against closed-form values.

use std::f64::consts::{E, PI};

use approx::assert_relative_eq;
use proptest::prelude::*;

use nlform_core::discretization::{assemble, form_value, weighted_variance, FormKind, Grid};
use nlform_core::model::{normalizer, Kernel, Potential, Scale, Weight};
use nlform_core::quadrature::{levy_integral, Verdict};
use nlform_core::spectral::best_constant;

const TOL: f64 = 1e-9;

#[test]
fn levy_integral_of_fractional_kernels() {
    for dim in [1, 2] {
        for alpha in [0.5, 1.0, 1.5] {
            let v = levy_integral(&Kernel::fractional(alpha, dim).unwrap(), TOL);
            assert_eq!(v.verdict, Verdict::Convergent);
            // ∫_0^1 r^{1-α} dr + ∫_1^∞ r^{-1-α} dr
            assert_relative_eq!(v.value, 1.0 / (2.0 - alpha) + 1.0 / alpha, max_relative = 1e-7);
        }
    }
}

#[test]
fn normalizers_match_closed_forms() {
    let cases = [
        (Potential::quadratic(1).unwrap(), Scale::V, PI.sqrt() / E),
        (Potential::quadratic(2).unwrap(), Scale::V, PI / E),
        (Potential::quadratic(1).unwrap(), Scale::TwoV, (PI / 2.0).sqrt() / (E * E)),
        (Potential::log_polynomial(1.0, 1).unwrap(), Scale::V, PI),
        (Potential::log_polynomial(2.0, 2).unwrap(), Scale::V, PI),
    ];
    for (p, scale, mass) in cases {
        assert_relative_eq!(normalizer(&p, scale, TOL).unwrap(), 1.0 / mass, max_relative = 1e-7);
    }
}

#[test]
fn heavier_tails_need_larger_constants() {
    let kernel = Kernel::fractional(1.0, 1).unwrap();
    let grid = Grid::new(1, 16.0, 65).unwrap();
    let constant = |eps: f64| {
        let p = Potential::log_polynomial(eps, 1).unwrap();
        let form = assemble(&p, &kernel, &Weight::constant(1), &grid, FormKind::Rho, TOL).unwrap();
        best_constant(&form).unwrap().best_constant
    };
    assert!(constant(0.7) > constant(1.5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn best_constant_bounds_every_quotient(
        n in 15usize..40,
        eps in 0.5f64..3.0,
        alpha in 0.3f64..1.8,
        psi in any::<bool>(),
        f in prop::collection::vec(-1.0f64..1.0, 40),
    ) {
        let p = Potential::linear(eps, 1).unwrap();
        let k = Kernel::tempered(alpha, 1.0, 1).unwrap();
        let grid = Grid::new(1, 6.0, n).unwrap();
        let kind = if psi { FormKind::Psi } else { FormKind::Rho };
        let form = assemble(&p, &k, &Weight::tempered_envelope(&p, 1.0, alpha), &grid, kind, TOL).unwrap();
        let gap = best_constant(&form).unwrap();
        let f = &f[..n];
        let var = weighted_variance(&form, f).unwrap();
        let energy = form_value(&form, f).unwrap();
        prop_assert!(var <= gap.best_constant * energy * (1.0 + 1e-9) + 1e-14);
        let ext_var = weighted_variance(&form, &gap.extremizer).unwrap();
        let ext_energy = form_value(&form, &gap.extremizer).unwrap();
        prop_assert!((ext_var / ext_energy - gap.best_constant).abs() <= 1e-8 * gap.best_constant);
    }
}
