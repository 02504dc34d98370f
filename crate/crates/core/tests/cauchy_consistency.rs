use bhl::cauchy::{cauchy_solve, CauchyData};
use bhl::cell::solve_corrector;
use bhl::fiber::Variant;
use bhl::scenarios::{builtin, default_packet};
use bhl::study::operator_error_study;

#[test]
fn torus_error_is_dominated_by_the_fiber_supremum() {
    let sc = builtin("model1d").unwrap();
    let prep = sc.prepare(None, false).unwrap();
    let mut spec = sc.study_spec(Variant::J1Cos);
    spec.eps = vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    spec.ss = vec![0.0];
    let study = operator_error_study(&prep.ctx, &prep.cell, &spec, None).unwrap();

    let cell = solve_corrector(&sc.model, 24).unwrap();
    let data = CauchyData { phi: default_packet(), ..Default::default() };
    for m in [8usize, 16, 32] {
        let run = cauchy_solve(&sc.model, &cell, m, &data, &[1.0], 24 * m).unwrap();
        let datum = run.rows[0].err_u0_l2;
        let sup = study.entries.iter().find(|e| (e.eps * m as f64 - 1.0).abs() < 1e-12).unwrap().error;
        assert!(datum <= sup + 1e-6, "1/eps = {m}: datum {datum:e} vs fiber sup {sup:e}");
    }
}

#[test]
fn corrector_is_necessary_in_the_energy_norm() {
    let sc = builtin("model1d").unwrap();
    let cell = solve_corrector(&sc.model, 24).unwrap();
    let preset = sc.cauchy.clone().unwrap();
    let run = cauchy_solve(&sc.model, &cell, 32, &preset.data, &[1.0], 24 * 32).unwrap();
    let row = &run.rows[0];
    assert!(row.err_v_h1 <= 0.2 * row.err_u0_h1, "{} vs {}", row.err_v_h1, row.err_u0_h1);
}

#[test]
fn flux_error_decreases_at_first_order() {
    let sc = builtin("model1d").unwrap();
    let cell = solve_corrector(&sc.model, 24).unwrap();
    let preset = sc.cauchy.clone().unwrap();
    let rep = bhl::study::cauchy_study(&sc.name, &sc.model, &cell, &preset.data, &[12, 24, 48], &preset.taus, 24).unwrap();
    let slope = rep.sup_over_tau.flux_err_l2.as_ref().unwrap().slope;
    assert!((slope - 1.0).abs() <= 0.2, "flux slope {slope}");
}

#[test]
fn weighted_energy_is_conserved() {
    let sc = builtin("acoustics_weighted").unwrap();
    let cell = solve_corrector(&sc.model, 24).unwrap();
    let preset = sc.cauchy.clone().unwrap();
    let run = cauchy_solve(&sc.model, &cell, 8, &preset.data, &preset.taus, 24 * 8).unwrap();
    assert!(run.weighted);
    assert!(run.energy_drift.unwrap() < 1e-12);
}
