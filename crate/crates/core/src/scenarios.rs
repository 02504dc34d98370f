//! Built-in scenarios covering each convergence regime.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cauchy::{CauchyData, ModeValue};
use crate::cell::{solve_corrector, CellSolution};
use crate::fiber::{CorrectorMode, FiberContext, Variant};
use crate::study::{ErrorStudySpec, RadialFamily};
use crate::coefficients::{validate_model, OperatorModel, PeriodicMatrixFunction, SymbolB, ValidationReport};
use crate::error::{BhlError, Result};
use crate::germ::{acoustics_mu, germ_matrix, Regime};
use crate::lattice::{build_lattice, unit_directions, KGridSpec};
use crate::linalg::{self, cx, CMat};

pub const BUILTIN_NAMES: [&str; 6] =
    ["model1d", "acoustics2d_real", "acoustics2d_hermitian", "acoustics_weighted", "elasticity2d", "hill2d"];

/// Default parameters for a Cauchy study on the unit torus.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CauchyPreset {
    pub data: CauchyData,
    pub taus: Vec<f64>,
    /// `1/eps` values for the study.
    pub inverse_eps: Vec<usize>,
    /// Box cutoff used at the smallest `1/eps`; scaled with `1/eps` for the others.
    pub modes_per_period: usize,
}

/// Study defaults attached to a model.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StudyDefaults {
    pub cell_cutoff: usize,
    pub fiber_cutoff: usize,
    pub kgrid: KGridSpec,
    /// Number of directions of the radial family near `k = 0`.
    pub radial_directions: usize,
    pub eps: Vec<f64>,
    pub taus: Vec<f64>,
    pub ss: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub model: OperatorModel,
    pub expected: Regime,
    pub defaults: StudyDefaults,
    pub cauchy: Option<CauchyPreset>,
    pub validation: ValidationReport,
}

/// Cell solution and fiber context ready for studies.
pub struct Prepared {
    pub cell: CellSolution,
    pub ctx: FiberContext,
}

impl Scenario {
    /// Solves the cell problem at `max(cell cutoff, fiber cutoff)` and builds the fiber context.
    pub fn prepare(&self, fiber_cutoff: Option<usize>, weighted: bool) -> Result<Prepared> {
        let n = fiber_cutoff.unwrap_or(self.defaults.fiber_cutoff);
        let cell = solve_corrector(&self.model, self.defaults.cell_cutoff.max(n))?;
        let ctx = FiberContext::new(&self.model, &cell.g_eff, n, weighted)?;
        Ok(Prepared { cell, ctx })
    }

    /// Cell problem and fiber on the same Galerkin space (the fiber cutoff), so that
    /// the germ formulas and band fits describe one discrete operator.
    pub fn prepare_matched(&self, weighted: bool) -> Result<Prepared> {
        let n = self.defaults.fiber_cutoff;
        let cell = solve_corrector(&self.model, n)?;
        let ctx = FiberContext::new(&self.model, &cell.g_eff, n, weighted)?;
        Ok(Prepared { cell, ctx })
    }

    /// Error study with the scenario defaults for `variant`.
    pub fn study_spec(&self, variant: Variant) -> ErrorStudySpec {
        ErrorStudySpec {
            scenario: self.name.clone(),
            variant,
            eps: self.defaults.eps.clone(),
            taus: self.defaults.taus.clone(),
            ss: self.defaults.ss.clone(),
            kgrid: self.defaults.kgrid.clone(),
            radial: Some(RadialFamily::standard(self.model.lattice.dim, self.defaults.radial_directions)),
            corrector: CorrectorMode::WithPi,
            refine: true,
            extra_k: Vec::new(),
        }
    }
}

pub fn builtin(name: &str) -> Result<Scenario> {
    match name {
        "model1d" => model1d(),
        "acoustics2d_real" => acoustics2d_real(),
        "acoustics2d_hermitian" => acoustics2d_hermitian(),
        "acoustics_weighted" => acoustics_weighted(),
        "elasticity2d" => elasticity2d(),
        "hill2d" => hill2d(),
        other => Err(BhlError::UnknownScenario(other.to_string())),
    }
}

/// Builds a trigonometric matrix field from one coefficient per `{m, -m}` pair;
/// the partner at `-m` is the adjoint, so the field is Hermitian-valued.
pub fn hermitian_field(dim: usize, size: usize, terms: &[(Vec<i64>, CMat)]) -> Result<PeriodicMatrixFunction> {
    let mut c: BTreeMap<Vec<i64>, CMat> = BTreeMap::new();
    for (m, v) in terms {
        let neg: Vec<i64> = m.iter().map(|x| -x).collect();
        if neg == *m {
            linalg::add_assign(c.entry(m.clone()).or_insert_with(|| linalg::zeros(size, size)), &linalg::hermitize(v));
        } else {
            linalg::add_assign(c.entry(m.clone()).or_insert_with(|| linalg::zeros(size, size)), v);
            linalg::add_assign(c.entry(neg).or_insert_with(|| linalg::zeros(size, size)), &linalg::adjoint(v));
        }
    }
    PeriodicMatrixFunction::new(dim, size, size, c, true)
}

fn scalar(v: f64) -> CMat {
    linalg::scaled_identity(1, v)
}

fn diag(values: &[f64]) -> CMat {
    faer::Mat::from_fn(values.len(), values.len(), |i, j| linalg::re(if i == j { values[i] } else { 0.0 }))
}

fn unit_square() -> Result<crate::lattice::LatticeInfo> {
    build_lattice(&[vec![1.0, 0.0], vec![0.0, 1.0]])
}

pub(crate) fn finish(
    name: &str,
    description: &str,
    model: OperatorModel,
    expected: Regime,
    defaults: StudyDefaults,
    cauchy: Option<CauchyPreset>,
) -> Result<Scenario> {
    let validation = validate_model(&model, 64, 64)?;
    Ok(Scenario { name: name.into(), description: description.into(), model, expected, defaults, cauchy, validation })
}

/// Study defaults by dimension, as used by the builtins.
pub fn study_defaults(dim: usize, fiber_cutoff: usize) -> StudyDefaults {
    match dim {
        1 => defaults_1d(fiber_cutoff),
        2 => defaults_2d(fiber_cutoff),
        _ => StudyDefaults {
            cell_cutoff: 4,
            fiber_cutoff,
            kgrid: KGridSpec::Uniform { counts: vec![7; dim] },
            radial_directions: 8,
            eps: ladder(3, 6),
            taus: vec![1.0],
            ss: vec![0.5, 1.0, 1.5, 2.0],
        },
    }
}

fn ladder(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|j| 0.5f64.powi(j)).collect()
}

fn defaults_1d(fiber_cutoff: usize) -> StudyDefaults {
    StudyDefaults {
        cell_cutoff: 16,
        fiber_cutoff,
        kgrid: KGridSpec::Uniform { counts: vec![129] },
        radial_directions: 2,
        eps: ladder(7, 11),
        taus: vec![1.0],
        ss: vec![0.5, 1.0, 1.5, 2.0],
    }
}

fn defaults_2d(fiber_cutoff: usize) -> StudyDefaults {
    StudyDefaults {
        cell_cutoff: 10,
        fiber_cutoff,
        kgrid: KGridSpec::Uniform { counts: vec![17, 17] },
        radial_directions: 16,
        eps: ladder(3, 7),
        taus: vec![1.0],
        ss: vec![0.5, 1.0, 1.5, 2.0],
    }
}

/// Band-limited packet with `psi_hat(p) = p^{-2}` on modes `1..=top`, normalized in L2.
pub fn packet(top: i64) -> Vec<ModeValue> {
    let raw: Vec<f64> = (1..=top).map(|p| 1.0 / (p * p) as f64).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.iter()
        .enumerate()
        .map(|(i, v)| ModeValue { mode: vec![i as i64 + 1], value: vec![[v / norm, 0.0]] })
        .collect()
}

/// Five-mode packet.
pub fn default_packet() -> Vec<ModeValue> {
    packet(5)
}

/// Packet used by the built-in Cauchy presets. Its frequencies `2 pi p`, `p <= 3`,
/// stay inside the window `|xi| < pi / eps` of `Pi_eps` for every `eps <= 1/8`.
pub fn preset_packet() -> Vec<ModeValue> {
    packet(3)
}

/// Forty equally spaced times in `(0, 1]`.
pub fn cauchy_times() -> Vec<f64> {
    (1..=40).map(|i| i as f64 / 40.0).collect()
}

fn model1d() -> Result<Scenario> {
    let g = hermitian_field(1, 1, &[(vec![0], scalar(2.0)), (vec![1], scalar(0.5))])?;
    let model = OperatorModel { lattice: build_lattice(&[vec![1.0]])?, symbol: SymbolB::gradient(1), g, q: None };
    let cauchy = CauchyPreset {
        data: CauchyData { psi: preset_packet(), ..Default::default() },
        taus: cauchy_times(),
        inverse_eps: vec![8, 16, 32, 64],
        modes_per_period: 24,
    };
    finish(
        "model1d",
        "1D acoustics with g = 2 + cos(2 pi x)",
        model,
        Regime::Improved,
        defaults_1d(16),
        Some(cauchy),
    )
}

fn acoustics2d_real() -> Result<Scenario> {
    let g = hermitian_field(
        2,
        2,
        &[
            (vec![0, 0], diag(&[2.0, 1.5])),
            (vec![1, 0], linalg::from_real_rows(&[vec![0.5, 0.0], vec![0.0, 0.0]])),
            (vec![0, 1], linalg::from_real_rows(&[vec![0.0, 0.0], vec![0.0, 0.25]])),
            // 0.4 sin(2 pi (x1 + x2)) off the diagonal.
            (vec![1, 1], faer::Mat::from_fn(2, 2, |i, j| if i != j { cx(0.0, -0.2) } else { cx(0.0, 0.0) })),
        ],
    )?;
    let model = OperatorModel { lattice: unit_square()?, symbol: SymbolB::gradient(2), g, q: None };
    finish(
        "acoustics2d_real",
        "2D acoustics with a real symmetric trigonometric coefficient",
        model,
        Regime::Improved,
        defaults_2d(6),
        None,
    )
}

/// Overall factor of the Hermitian design; it raises the wave speed and with
/// it the weight of the cubic term relative to the zone scale.
pub const HERMITIAN_SCALE: f64 = 1.0;

/// Coefficients of the complex-Hermitian design at modes (1,0), (0,1), (1,1),
/// each as `[re, im]` of the entries 11, 12, 21, 22.
const HERMITIAN_DESIGN: [[[f64; 2]; 4]; 3] = [
    [[0.16, -0.02], [-0.03, -0.10], [0.17, 0.0], [-0.04, -0.09]],
    [[-0.13, 0.09], [-0.14, 0.12], [0.13, -0.08], [0.11, 0.0]],
    [[0.07, 0.02], [0.10, 0.02], [-0.13, -0.11], [0.12, 0.06]],
];

fn hermitian_model(scale: f64) -> Result<OperatorModel> {
    let mut terms = vec![(vec![0, 0], linalg::scaled_identity(2, scale))];
    for (m, c) in [vec![1, 0], vec![0, 1], vec![1, 1]].into_iter().zip(HERMITIAN_DESIGN.iter()) {
        terms.push((m, faer::Mat::from_fn(2, 2, |i, j| cx(scale * c[2 * i + j][0], scale * c[2 * i + j][1]))));
    }
    Ok(OperatorModel { lattice: unit_square()?, symbol: SymbolB::gradient(2), g: hermitian_field(2, 2, &terms)?, q: None })
}

/// Largest `|mu(theta)| / gamma(theta)` over `count` directions.
pub fn max_relative_mu(model: &OperatorModel, cutoff: usize, count: usize) -> Result<(f64, Vec<f64>)> {
    let cell = solve_corrector(model, cutoff)?;
    let mut best = (0.0f64, vec![1.0, 0.0]);
    for th in unit_directions(model.lattice.dim, count) {
        let mu = acoustics_mu(model, &cell, &th)?;
        let gamma = germ_matrix(model, &cell, &th, None)?.gamma[0];
        if mu.abs() / gamma > best.0 {
            best = (mu.abs() / gamma, th);
        }
    }
    Ok(best)
}

fn acoustics2d_hermitian() -> Result<Scenario> {
    let model = hermitian_model(HERMITIAN_SCALE)?;
    let (rel, _) = max_relative_mu(&model, 10, 32)?;
    if rel < 1e-3 {
        return Err(BhlError::Validation(format!(
            "Hermitian design yields max |mu|/gamma = {rel:e} over 32 directions; the general regime would not be exercised"
        )));
    }
    finish(
        "acoustics2d_hermitian",
        "2D acoustics with a Hermitian non-real trigonometric coefficient (N_0 not zero)",
        model,
        Regime::General,
        defaults_2d(6),
        None,
    )
}

fn acoustics_weighted() -> Result<Scenario> {
    let g = hermitian_field(1, 1, &[(vec![0], scalar(2.0)), (vec![1], scalar(0.5))])?;
    // Q = 2 + sin(2 pi x).
    let q = hermitian_field(1, 1, &[(vec![0], scalar(2.0)), (vec![1], faer::Mat::from_fn(1, 1, |_, _| cx(0.0, -0.5)))])?;
    let model = OperatorModel { lattice: build_lattice(&[vec![1.0]])?, symbol: SymbolB::gradient(1), g, q: Some(q) };
    let cauchy = CauchyPreset {
        data: CauchyData { psi: preset_packet(), ..Default::default() },
        taus: cauchy_times(),
        inverse_eps: vec![8, 16, 32],
        modes_per_period: 24,
    };
    finish(
        "acoustics_weighted",
        "1D acoustics with g = 2 + cos(2 pi x) and density Q = 2 + sin(2 pi x)",
        model,
        Regime::Improved,
        defaults_1d(16),
        Some(cauchy),
    )
}

/// Isotropic plane-strain stiffness for bulk-type modulus `k` and shear modulus `mu`.
fn isotropic(k: f64, mu: f64) -> CMat {
    linalg::from_real_rows(&[vec![k + mu, 0.0, k - mu], vec![0.0, 4.0 * mu, 0.0], vec![k - mu, 0.0, k + mu]])
}

fn elasticity2d() -> Result<Scenario> {
    // K = 2 + 0.5 cos(2 pi x1), mu = 1 + 0.3 cos(2 pi x2).
    let k1 = linalg::scale_re(&isotropic(1.0, 0.0), 0.25);
    let mu1 = linalg::scale_re(&isotropic(0.0, 1.0), 0.15);
    let g = hermitian_field(2, 3, &[(vec![0, 0], isotropic(2.0, 1.0)), (vec![1, 0], k1), (vec![0, 1], mu1)])?;
    let model = OperatorModel { lattice: unit_square()?, symbol: SymbolB::plane_strain(), g, q: None };
    finish(
        "elasticity2d",
        "planar isotropic elasticity with varying bulk and shear moduli",
        model,
        Regime::Improved,
        defaults_2d(5),
        None,
    )
}

/// Hill body: `g = diag(beta(x), mu0/2)` with `beta = 2 + 0.5 cos(2 pi x1) + 0.5 cos(2 pi x2)` and `mu0 = 1`.
fn hill2d() -> Result<Scenario> {
    let g = hermitian_field(
        2,
        2,
        &[(vec![0, 0], diag(&[2.0, 0.5])), (vec![1, 0], diag(&[0.25, 0.0])), (vec![0, 1], diag(&[0.25, 0.0]))],
    )?;
    let model = OperatorModel { lattice: unit_square()?, symbol: SymbolB::hill(), g, q: None };
    finish("hill2d", "Hill body: isotropic elasticity with constant shear modulus", model, Regime::Improved, defaults_2d(5), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::harmonic_mean;

    #[test]
    fn every_builtin_builds_and_validates() {
        for name in BUILTIN_NAMES {
            let sc = builtin(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(sc.validation.g_min_eig > 0.0, "{name}");
            assert!(sc.defaults.fiber_cutoff >= sc.model.g.bandwidth() + 2, "{name}");
        }
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!(matches!(builtin("nope"), Err(BhlError::UnknownScenario(_))));
    }

    #[test]
    fn hill_effective_matrix_is_the_harmonic_mean() {
        let sc = builtin("hill2d").unwrap();
        let cell = solve_corrector(&sc.model, 12).unwrap();
        let under = harmonic_mean(&sc.model.g);
        assert!(linalg::max_abs(&linalg::sub(&cell.g_eff, &under)) < 1e-10);
        assert!((cell.g_eff[(1, 1)].re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weighted_density_is_two_plus_sine() {
        let sc = builtin("acoustics_weighted").unwrap();
        let q = sc.model.q.as_ref().unwrap();
        for &x in &[0.0, 0.1, 0.37] {
            let v = q.evaluate_frac(&[x])[(0, 0)];
            assert!((v.re - (2.0 + (2.0 * std::f64::consts::PI * x).sin())).abs() < 1e-14 && v.im.abs() < 1e-14);
        }
    }

    #[test]
    fn hermitian_design_is_not_real_and_not_even() {
        let m = hermitian_model(1.0).unwrap();
        let a = m.g.evaluate_frac(&[0.2, 0.7]);
        let b = m.g.evaluate_frac(&[-0.2, -0.7]);
        assert!(linalg::max_abs(&linalg::sub(&a, &b)) > 1e-2);
        assert!((0..2).any(|i| (0..2).any(|j| a[(i, j)].im.abs() > 1e-2)));
    }

    #[test]
    fn real_scenario_has_real_values() {
        let sc = builtin("acoustics2d_real").unwrap();
        let v = sc.model.g.evaluate_frac(&[0.3, 0.45]);
        assert!((0..2).all(|i| (0..2).all(|j| v[(i, j)].im.abs() < 1e-14)));
        let expected = 0.4 * (2.0 * std::f64::consts::PI * 0.75).sin();
        assert!((v[(0, 1)].re - expected).abs() < 1e-14);
    }
}
