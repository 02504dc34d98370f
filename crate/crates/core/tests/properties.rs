use std::collections::BTreeMap;

use proptest::prelude::*;

use bhl::cell::{harmonic_mean, solve_corrector};
use bhl::coefficients::{OperatorModel, PeriodicMatrixFunction, SymbolB};
use bhl::fiber::{CorrectorMode, FiberContext, FiberErrorEvaluator, Variant};
use bhl::germ::germ_matrix;
use bhl::lattice::{build_lattice, FourierIndexSet};
use bhl::linalg::{self, cx};
use bhl::scenarios::builtin;

fn scalar_field(a: f64, b: f64, c: f64) -> PeriodicMatrixFunction {
    // a + b cos(2 pi x) + c sin(2 pi x)
    let mut coeffs = BTreeMap::new();
    coeffs.insert(vec![0], linalg::scaled_identity(1, a));
    coeffs.insert(vec![1], faer::Mat::from_fn(1, 1, |_, _| cx(0.5 * b, -0.5 * c)));
    coeffs.insert(vec![-1], faer::Mat::from_fn(1, 1, |_, _| cx(0.5 * b, 0.5 * c)));
    PeriodicMatrixFunction::new(1, 1, 1, coeffs, true).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dual_of_dual_is_the_original_basis(a in 0.5f64..2.0, b in -0.8f64..0.8, c in -0.8f64..0.8, d in 0.5f64..2.0) {
        prop_assume!((a * d - b * c).abs() > 0.2);
        let lat = build_lattice(&[vec![a, b], vec![c, d]]).unwrap();
        let back = build_lattice(&lat.dual_basis).unwrap();
        for (row, orig) in back.dual_basis.iter().zip(&lat.basis) {
            for (x, y) in row.iter().zip(orig) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn index_sets_have_full_size_and_an_involutive_negation(dim in 1usize..=3, n in 0usize..4) {
        let set = FourierIndexSet::new(dim, n);
        prop_assert_eq!(set.len(), (2 * n + 1).pow(dim as u32));
        prop_assert!(set.indices[set.zero_pos].iter().all(|&x| x == 0));
        let mut seen = vec![false; set.len()];
        for p in 0..set.len() {
            let q = set.negated(p);
            prop_assert_eq!(set.negated(q), p);
            seen[q] = true;
        }
        prop_assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn one_dimensional_effective_coefficient_is_the_harmonic_mean(a in 1.5f64..4.0, b in -0.6f64..0.6, c in -0.6f64..0.6) {
        let model = OperatorModel {
            lattice: build_lattice(&[vec![1.0]]).unwrap(),
            symbol: SymbolB::gradient(1),
            g: scalar_field(a, b, c),
            q: None,
        };
        let cell = solve_corrector(&model, 24).unwrap();
        let h = harmonic_mean(&model.g)[(0, 0)].re;
        prop_assert!((cell.g_eff[(0, 0)].re - h).abs() < 1e-10);
        // Closed form for a + r cos: sqrt(a^2 - r^2).
        let r = (b * b + c * c).sqrt();
        prop_assert!((h - (a * a - r * r).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn germ_is_homogeneous_of_degree_two(scale in 0.1f64..5.0, angle in 0.0f64..6.283) {
        let sc = builtin("elasticity2d").unwrap();
        let cell = solve_corrector(&sc.model, 6).unwrap();
        let theta = [angle.cos(), angle.sin()];
        let s1 = germ_matrix(&sc.model, &cell, &theta, None).unwrap().s;
        let s2 = germ_matrix(&sc.model, &cell, &[scale * theta[0], scale * theta[1]], None).unwrap().s;
        prop_assert!(linalg::max_abs(&(&s2 - &linalg::scale_re(&s1, scale * scale))) < 1e-10 * scale * scale);
    }

    #[test]
    fn cos_propagator_difference_is_at_most_two(k in -3.1f64..3.1, eps in 0.01f64..0.5, tau in 0.1f64..3.0) {
        let sc = builtin("model1d").unwrap();
        let cell = solve_corrector(&sc.model, 8).unwrap();
        let ctx = FiberContext::new(&sc.model, &cell.g_eff, 8, false).unwrap();
        let ev = FiberErrorEvaluator::new(&ctx, None, &[k], false, CorrectorMode::None).unwrap();
        let d = ev.difference(Variant::J1Cos, eps, tau).unwrap();
        prop_assert!(linalg::spectral_norm(&d) <= 2.0 + 1e-12);
    }

    #[test]
    fn smoothing_weights_decrease_with_s_on_high_modes(k in -3.1f64..3.1, eps in 0.01f64..0.5, s in 0.0f64..1.9) {
        let sc = builtin("model1d").unwrap();
        let cell = solve_corrector(&sc.model, 6).unwrap();
        let ctx = FiberContext::new(&sc.model, &cell.g_eff, 6, false).unwrap();
        let lo = ctx.smoothing_diag(&[k], eps, s);
        let hi = ctx.smoothing_diag(&[k], eps, s + 0.1);
        for (p, m) in ctx.index.indices.iter().enumerate() {
            let xi = 2.0 * std::f64::consts::PI * m[0] as f64 + k;
            if xi.abs() >= 1.0 {
                prop_assert!(hi[p] <= lo[p] + 1e-15);
            }
        }
    }

    #[test]
    fn parseval_holds_for_random_band_limited_fields(a in 1.0f64..3.0, b in -0.5f64..0.5, c in -0.5f64..0.5) {
        let f = scalar_field(a, b, c);
        let per_axis = 16;
        let samples = f.evaluate_on_grid(per_axis);
        let mean_sq = samples.iter().map(|m| m[(0, 0)].norm_sqr()).sum::<f64>() / samples.len() as f64;
        prop_assert!((mean_sq - f.l2_mean_square()).abs() < 1e-10 * mean_sq);
    }
}
