use bhl::cell::{solve_corrector, weighted_corrector};
use bhl::germ::{regime_classify, theta_samples, Regime};
use bhl::scenarios::{builtin, max_relative_mu, BUILTIN_NAMES};

#[test]
fn every_builtin_matches_its_expected_regime() {
    for name in BUILTIN_NAMES {
        let sc = builtin(name).unwrap();
        let cell = solve_corrector(&sc.model, sc.defaults.cell_cutoff).unwrap();
        let wc = sc.model.q.as_ref().map(|_| weighted_corrector(&sc.model, &cell).unwrap());
        let dirs = theta_samples(sc.model.lattice.dim, 16);
        let rep = regime_classify(&sc.model, &cell, None, wc.as_ref(), &dirs, sc.validation.c_star_hat).unwrap();
        assert_eq!(rep.regime, sc.expected, "{name}");
        assert!(rep.empirical);
    }
}

#[test]
fn hermitian_design_has_nonzero_mu() {
    let sc = builtin("acoustics2d_hermitian").unwrap();
    let (rel, theta) = max_relative_mu(&sc.model, 10, 32).unwrap();
    assert!(rel > 1e-3, "max |mu|/gamma = {rel} at {theta:?}");
}

#[test]
fn real_and_elastic_scenarios_have_vanishing_third_order_operator() {
    for name in ["acoustics2d_real", "elasticity2d", "hill2d", "model1d"] {
        let sc = builtin(name).unwrap();
        let cell = solve_corrector(&sc.model, sc.defaults.cell_cutoff).unwrap();
        let rep = regime_classify(&sc.model, &cell, None, None, &theta_samples(sc.model.lattice.dim, 8), sc.validation.c_star_hat)
            .unwrap();
        assert!(rep.n0_vanishes, "{name}");
        assert_eq!(rep.regime, Regime::Improved, "{name}");
    }
}

#[test]
fn formula_and_band_fit_routes_agree_on_a_shared_discretization() {
    use bhl::germ::{default_ladder, germ_expansion, GermContext, DEFAULT_FIT_TERMS};
    for name in BUILTIN_NAMES {
        let sc = builtin(name).unwrap();
        let weighted = sc.model.q.is_some();
        let prep = sc.prepare_matched(weighted).unwrap();
        let wc = weighted.then(|| weighted_corrector(&sc.model, &prep.cell).unwrap());
        let ctx = GermContext {
            model: &sc.model,
            cell: &prep.cell,
            second: None,
            weighted: wc.as_ref(),
            fiber: Some(&prep.ctx),
            ladder: default_ladder(sc.validation.t0_hat),
            fit_terms: DEFAULT_FIT_TERMS,
        };
        for theta in theta_samples(sc.model.lattice.dim, 8) {
            let ge = germ_expansion(&ctx, &theta).unwrap();
            let gamma_fit = ge.gamma_fit.as_ref().unwrap();
            let mu_fit = ge.mu_fit.as_ref().unwrap();
            for l in 0..ge.gamma.len() {
                let g = ge.gamma[l];
                assert!((g - gamma_fit[l]).abs() <= 1e-8 * g, "{name} {theta:?} gamma {g} vs {}", gamma_fit[l]);
                let gap = (ge.mu_formula[l] - mu_fit[l]).abs();
                assert!(gap <= 1e-6 * g.max(1.0), "{name} {theta:?} mu {} vs {}", ge.mu_formula[l], mu_fit[l]);
            }
        }
    }
}
