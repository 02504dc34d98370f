//! Independent oracles: finite differences, closed-form 1D and laminate
//! solutions, and pointwise multiplication.

use std::f64::consts::PI;

use bhl::cell::solve_corrector;
use bhl::coefficients::PeriodicMatrixFunction;
use bhl::config::ScenarioConfig;
use bhl::fiber::{lowest_band, scalar_propagator, FiberContext, PropagatorKind};
use bhl::linalg::{self, cx, CMat};
use bhl::scenarios::builtin;

/// Finite-volume Bloch operator `-(d/dx) g (d/dx)` with `u(x + 1) = e^{ik} u(x)`
/// on `n` cells, lowest `count` eigenvalues.
fn fd_bloch_eigenvalues(g: impl Fn(f64) -> f64, k: f64, n: usize, count: usize) -> Vec<f64> {
    let h = 1.0 / n as f64;
    let mut a: CMat = linalg::zeros(n, n);
    let phase = cx(k.cos(), k.sin());
    for j in 0..n {
        let right = g((j as f64 + 0.5) * h) / (h * h);
        let left = g((j as f64 - 0.5) * h) / (h * h);
        a[(j, j)] += cx(right + left, 0.0);
        let (jp, wrap_p) = if j + 1 == n { (0, phase) } else { (j + 1, cx(1.0, 0.0)) };
        a[(j, jp)] -= wrap_p * right;
        let (jm, wrap_m) = if j == 0 { (n - 1, phase.conj()) } else { (j - 1, cx(1.0, 0.0)) };
        a[(j, jm)] -= wrap_m * left;
    }
    let mut v = linalg::herm_eigenvalues(&linalg::hermitize(&a));
    v.truncate(count);
    v
}

#[test]
fn fiber_eigenvalues_match_richardson_extrapolated_finite_differences() {
    let sc = builtin("model1d").unwrap();
    let cell = solve_corrector(&sc.model, 24).unwrap();
    let ctx = FiberContext::new(&sc.model, &cell.g_eff, 24, false).unwrap();
    let g = |x: f64| 2.0 + (2.0 * PI * x).cos();
    for k in [0.0, 0.9, 2.5] {
        let galerkin = ctx.spectrum(&[k]).unwrap().eigenvalues()[..3].to_vec();
        let coarse = fd_bloch_eigenvalues(g, k, 200, 3);
        let fine = fd_bloch_eigenvalues(g, k, 400, 3);
        for j in 0..3 {
            let extrapolated = (4.0 * fine[j] - coarse[j]) / 3.0;
            let scale = galerkin[j].abs().max(1.0);
            assert!((galerkin[j] - extrapolated).abs() < 1e-6 * scale, "k {k} band {j}: {} vs {extrapolated}", galerkin[j]);
        }
    }
}

#[test]
fn one_dimensional_corrector_matches_the_integrated_flux_identity() {
    // With D = -i d/dx, g (1 - i Lambda') = g0, so Lambda(x) = i int_0^x (g0 / g - 1) up to a constant.
    let sc = builtin("model1d").unwrap();
    let cell = solve_corrector(&sc.model, 24).unwrap();
    let g0 = 3f64.sqrt();
    let g = |x: f64| 2.0 + (2.0 * PI * x).cos();
    let samples = 400;
    let h = 1.0 / samples as f64;
    // Cumulative Simpson integration of g0/g - 1 on [0, x_j].
    let f = |x: f64| g0 / g(x) - 1.0;
    let mut integral = vec![0.0; samples + 1];
    for j in 0..samples {
        let (a, b) = (j as f64 * h, (j + 1) as f64 * h);
        integral[j + 1] = integral[j] + (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
    }
    let mean = integral[..samples].iter().sum::<f64>() / samples as f64;
    let mut worst = 0.0f64;
    for (j, &value) in integral.iter().enumerate().take(samples) {
        let lambda = cell.lambda.evaluate_frac(&[j as f64 * h])[(0, 0)];
        worst = worst.max((lambda.im - (value - mean)).abs()).max(lambda.re.abs());
    }
    assert!(worst < 1e-9, "max deviation {worst:e}");
}

#[test]
fn laminate_effective_matrix_is_harmonic_across_and_arithmetic_along() {
    let text = r#"{
        "name": "laminate",
        "lattice": [[1.0, 0.0], [0.0, 1.0]],
        "symbol": [{"re": [[1.0], [0.0]]}, {"re": [[0.0], [1.0]]}],
        "g": [
            {"multi_index": [0, 0], "re": [[2.0, 0.0], [0.0, 2.0]]},
            {"multi_index": [1, 0], "re": [[0.5, 0.0], [0.0, 0.5]]},
            {"multi_index": [-1, 0], "re": [[0.5, 0.0], [0.0, 0.5]]}
        ],
        "expected_regime": "improved"
    }"#;
    let sc = ScenarioConfig::parse(text, "laminate").unwrap().to_scenario("laminate").unwrap();
    let cell = solve_corrector(&sc.model, 12).unwrap();
    let g = &cell.g_eff;
    assert!((g[(0, 0)].re - 3f64.sqrt()).abs() < 1e-10);
    assert!((g[(1, 1)].re - 2.0).abs() < 1e-12);
    assert!(g[(0, 1)].norm() < 1e-12 && g[(1, 0)].norm() < 1e-12);
}

#[test]
fn product_of_fields_matches_pointwise_multiplication_on_a_grid() {
    let sc = builtin("acoustics2d_hermitian").unwrap();
    let a = &sc.model.g;
    let b = builtin("acoustics2d_real").unwrap().model.g;
    let ab = a.mul(&b);
    for i in 0..7 {
        for j in 0..5 {
            let s = [i as f64 / 7.0, j as f64 / 5.0 + 0.03];
            let direct = &a.evaluate_frac(&s) * &b.evaluate_frac(&s);
            assert!(linalg::max_abs(&(&ab.evaluate_frac(&s) - &direct)) < 1e-13);
        }
    }
}

#[test]
fn lowest_band_curvature_gives_the_effective_coefficient_in_2d() {
    for name in ["acoustics2d_real", "acoustics2d_hermitian"] {
        let sc = builtin(name).unwrap();
        let cell = solve_corrector(&sc.model, 8).unwrap();
        let ctx = FiberContext::new(&sc.model, &cell.g_eff, 8, false).unwrap();
        let theta = [0.6, 0.8];
        let t = 1e-3;
        let e = lowest_band(&ctx, &[t * theta[0], t * theta[1]]).unwrap();
        let th = faer::Mat::from_fn(2, 1, |i, _| cx(theta[i], 0.0));
        let gamma = (linalg::adjoint(&th) * &cell.g_eff * &th)[(0, 0)].re;
        assert!((e / (t * t) - gamma).abs() < 1e-4 * gamma, "{name}");
    }
}

#[test]
fn kernel_dimension_at_zero_equals_the_number_of_components() {
    for name in bhl::scenarios::BUILTIN_NAMES {
        let sc = builtin(name).unwrap();
        let prep = sc.prepare(None, false).unwrap();
        let eig = prep.ctx.spectrum(&vec![0.0; sc.model.lattice.dim]).unwrap();
        let zeros = eig.eigenvalues().iter().filter(|&&l| l < sc.validation.delta_hat).count();
        assert_eq!(zeros, sc.model.symbol.n, "{name}");
    }
}

#[test]
fn propagators_obey_their_norm_bounds() {
    let sc = builtin("elasticity2d").unwrap();
    let prep = sc.prepare(None, false).unwrap();
    let spec = prep.ctx.spectrum(&[0.4, -1.1]).unwrap();
    for tau in [0.3, 7.0, 50.0] {
        let cos = linalg::spectral_apply(&spec.eig, |l| linalg::re(scalar_propagator(PropagatorKind::Cos, tau, l)));
        let sinc = linalg::spectral_apply(&spec.eig, |l| linalg::re(scalar_propagator(PropagatorKind::Sinc, tau, l)));
        assert!(linalg::spectral_norm(&cos) <= 1.0 + 1e-12);
        assert!(linalg::spectral_norm(&sinc) <= tau * (1.0 + 1e-12));
    }
}

#[test]
fn fiber_error_is_lipschitz_in_k_near_zero() {
    use bhl::fiber::{CorrectorMode, FiberErrorEvaluator, Variant};
    let sc = builtin("model1d").unwrap();
    let prep = sc.prepare(None, false).unwrap();
    let norm = |k: f64| {
        let ev = FiberErrorEvaluator::new(&prep.ctx, None, &[k], false, CorrectorMode::None).unwrap();
        let d = ev.difference(Variant::J1Cos, 0.05, 1.0).unwrap();
        ev.smoothed_norm(&d, 0.05, 1.0)
    };
    let k0 = 0.2;
    let h = 1e-3;
    let coarse = (norm(k0 + h) - norm(k0)).abs();
    let fine = (norm(k0 + h / 2.0) - norm(k0)).abs();
    let ratio = coarse / fine;
    assert!((2.0 * 0.3..=2.0 * 3.0).contains(&ratio), "increment ratio {ratio}");
}

#[test]
fn constant_field_is_its_own_mean() {
    let c = linalg::from_real_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]);
    let f = PeriodicMatrixFunction::constant(2, c.clone(), true);
    let cell = solve_corrector(
        &bhl::coefficients::OperatorModel {
            lattice: bhl::lattice::build_lattice(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            symbol: bhl::coefficients::SymbolB::gradient(2),
            g: f,
            q: None,
        },
        4,
    )
    .unwrap();
    assert!(linalg::max_abs(&(&cell.g_eff - &c)) < 1e-14);
}
