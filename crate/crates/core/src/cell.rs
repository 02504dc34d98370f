//! Periodic cell problems: the corrector, the flux, the effective matrix,
//! Voigt-Reuss brackets, the second corrector and the weighted shift.

use serde::{Deserialize, Serialize};

use crate::coefficients::{OperatorModel, PeriodicMatrixFunction};
use crate::error::{BhlError, Result};
use crate::fiber::FiberContext;
use crate::linalg::{self, CMat};

/// Corrector data for `b(D)* g (b(D) Lambda + 1) = 0`.
#[derive(Clone, Debug)]
pub struct CellSolution {
    pub cutoff: usize,
    pub n: usize,
    pub m: usize,
    pub lambda: PeriodicMatrixFunction,
    /// `b(D) Lambda`, an `m x m` field.
    pub b_lambda: PeriodicMatrixFunction,
    pub g_tilde: PeriodicMatrixFunction,
    pub g_eff: CMat,
    pub g_bar: CMat,
    pub g_under: CMat,
    /// H^{-1} norm of the cell residual on the trial modes.
    pub residual_norm: f64,
    /// H^{-1} norm of the residual on modes beyond the cutoff (up to twice it).
    pub truncation_residual: f64,
    pub lambda_sup_norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellSummary {
    pub cutoff: usize,
    pub g_eff: Vec<Vec<[f64; 2]>>,
    pub g_bar: Vec<Vec<[f64; 2]>>,
    pub g_under: Vec<Vec<[f64; 2]>>,
    pub residual_norm: f64,
    pub truncation_residual: f64,
    pub lambda_sup_norm: f64,
    pub voigt_margin: f64,
    pub reuss_margin: f64,
}

impl CellSolution {
    pub fn summary(&self) -> CellSummary {
        let vr = voigt_reuss(self);
        CellSummary {
            cutoff: self.cutoff,
            g_eff: linalg::to_nested(&self.g_eff),
            g_bar: linalg::to_nested(&self.g_bar),
            g_under: linalg::to_nested(&self.g_under),
            residual_norm: self.residual_norm,
            truncation_residual: self.truncation_residual,
            lambda_sup_norm: self.lambda_sup_norm,
            voigt_margin: vr.upper_margin,
            reuss_margin: vr.lower_margin,
        }
    }

    /// Cell mean of `<g b(D) Lambda, b(D) Lambda>` as an `m x m` form.
    pub fn corrector_energy(&self, model: &OperatorModel) -> CMat {
        let gbl = model.g.mul(&self.b_lambda);
        self.b_lambda.adjoint().mean_product(&gbl)
    }
}

/// Applies `b(D)` to an `n x c` field, giving an `m x c` field.
pub fn apply_symbol(model: &OperatorModel, f: &PeriodicMatrixFunction) -> PeriodicMatrixFunction {
    let coeffs = f
        .coeffs
        .iter()
        .map(|(q, c)| (q.clone(), &model.symbol.eval(&model.lattice.dual_vector(q)) * c))
        .collect();
    PeriodicMatrixFunction { rows: model.symbol.m, cols: f.cols, dim: f.dim, coeffs, hermitian: false }
}

fn grid_for_means(dim: usize) -> usize {
    if dim >= 3 {
        24
    } else {
        64
    }
}

/// `(mean of g^{-1})^{-1}` by the periodic trapezoidal rule.
pub fn harmonic_mean(g: &PeriodicMatrixFunction) -> CMat {
    let p = grid_for_means(g.dim).max(4 * g.bandwidth() + 8);
    let samples = g.evaluate_on_grid(p);
    let mut acc = linalg::zeros(g.rows, g.cols);
    for s in &samples {
        linalg::add_assign(&mut acc, &linalg::inverse(s));
    }
    let mean_inv = linalg::scale_re(&acc, 1.0 / samples.len() as f64);
    linalg::hermitize(&linalg::inverse(&mean_inv))
}

/// Solves the zero-mean Galerkin problem `K X = rhs` where `rhs[p]` is an
/// `n x c` block per mode `p` (the zero mode entry is ignored).
fn zero_mean_solve(ctx: &FiberContext, rhs: &[CMat]) -> Result<Vec<CMat>> {
    let n = ctx.n;
    let len = ctx.index.len();
    let z = ctx.index.zero_pos;
    let cols = rhs[0].ncols();
    let full = ctx.assemble_hat(&vec![0.0; ctx.model.lattice.dim]);
    let red = n * (len - 1);
    let map = |p: usize| if p < z { p } else { p - 1 };
    let mut k = linalg::zeros(red, red);
    let mut b = linalg::zeros(red, cols);
    for p in (0..len).filter(|&p| p != z) {
        for q in (0..len).filter(|&q| q != z) {
            linalg::set_block(&mut k, map(p) * n, map(q) * n, &linalg::block(&full, p * n, q * n, n, n));
        }
        linalg::set_block(&mut b, map(p) * n, 0, &rhs[p]);
    }
    let x = if red == 0 { b } else { linalg::solve_hpd(&k, &b)? };
    Ok((0..len)
        .map(|p| if p == z { linalg::zeros(n, cols) } else { linalg::block(&x, map(p) * n, 0, n, cols) })
        .collect())
}

fn field_from_blocks(ctx: &FiberContext, blocks: Vec<CMat>, tol: f64) -> PeriodicMatrixFunction {
    let (rows, cols) = (blocks[0].nrows(), blocks[0].ncols());
    let coeffs = ctx
        .index
        .indices
        .iter()
        .zip(blocks)
        .filter(|(_, c)| linalg::max_abs(c) > tol)
        .map(|(m, c)| (m.clone(), c))
        .collect();
    PeriodicMatrixFunction { rows, cols, dim: ctx.model.lattice.dim, coeffs, hermitian: false }
}

/// H^{-1} norms of the residual `b(b(p))* r(p)` split at the cutoff.
fn residual_norms(model: &OperatorModel, residual_field: &PeriodicMatrixFunction, cutoff: usize) -> (f64, f64) {
    let mut inner = 0.0;
    let mut outer = 0.0;
    for (p, c) in &residual_field.coeffs {
        let norm = crate::lattice::FourierIndexSet::max_norm(p) as usize;
        if norm == 0 || norm > 2 * cutoff {
            continue;
        }
        let xi = model.lattice.dual_vector(p);
        let r2: f64 = xi.iter().map(|x| x * x).sum();
        let bp = model.symbol.eval(&xi);
        let val = linalg::frobenius(&linalg::mul_adj(&bp, c)).powi(2) / r2;
        if norm <= cutoff {
            inner += val;
        } else {
            outer += val;
        }
    }
    (inner.sqrt(), outer.sqrt())
}

fn sup_grid(dim: usize, cutoff: usize) -> usize {
    let base = match dim {
        1 => 256,
        2 => 48,
        _ => 16,
    };
    base.max(2 * cutoff + 2)
}

pub fn solve_corrector(model: &OperatorModel, cutoff: usize) -> Result<CellSolution> {
    let (n, m) = (model.symbol.n, model.symbol.m);
    let bw = model.g.bandwidth();
    if cutoff < bw + 2 && !model.g.is_constant(0.0) {
        return Err(BhlError::Precondition(format!("cutoff {cutoff} is below bandwidth(g) + 2 = {}", bw + 2)));
    }
    let g_bar = model.g.mean();
    let ctx = FiberContext::new(model, &g_bar, cutoff, false)?;
    let rhs: Vec<CMat> = ctx
        .index
        .indices
        .iter()
        .map(|p| {
            let bp = model.symbol.eval(&model.lattice.dual_vector(p));
            linalg::scale_re(&linalg::mul_adj(&bp, &model.g.coeff(p)), -1.0)
        })
        .collect();
    let blocks = zero_mean_solve(&ctx, &rhs)?;
    let lambda = field_from_blocks(&ctx, blocks, 0.0);
    debug_assert_eq!((lambda.rows, lambda.cols), (n, m));
    let b_lambda = apply_symbol(model, &lambda);
    let g_tilde = model.g.mul(&b_lambda.add_constant(&linalg::identity(m)));
    let g_eff = linalg::hermitize(&g_tilde.mean());
    let (residual_norm, truncation_residual) = residual_norms(model, &g_tilde, cutoff);
    let g_under = harmonic_mean(&model.g);
    let lambda_sup_norm = lambda.sup_norm(sup_grid(model.lattice.dim, cutoff));
    if linalg::min_eigenvalue(&g_eff) <= 0.0 {
        return Err(BhlError::Numerical("effective matrix is not positive definite".into()));
    }
    Ok(CellSolution {
        cutoff,
        n,
        m,
        lambda,
        b_lambda,
        g_tilde,
        g_eff,
        g_bar,
        g_under,
        residual_norm,
        truncation_residual,
        lambda_sup_norm,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VoigtReuss {
    pub g_bar: Vec<Vec<[f64; 2]>>,
    pub g_under: Vec<Vec<[f64; 2]>>,
    /// `min eig(g_bar - g0)`.
    pub upper_margin: f64,
    /// `min eig(g0 - g_under)`.
    pub lower_margin: f64,
}

pub fn voigt_reuss(cell: &CellSolution) -> VoigtReuss {
    VoigtReuss {
        g_bar: linalg::to_nested(&cell.g_bar),
        g_under: linalg::to_nested(&cell.g_under),
        upper_margin: linalg::min_eigenvalue(&(&cell.g_bar - &cell.g_eff)),
        lower_margin: linalg::min_eigenvalue(&(&cell.g_eff - &cell.g_under)),
    }
}

/// Solutions `Lambda_l^(2)`, one per coordinate direction.
#[derive(Clone, Debug)]
pub struct SecondCellSolution {
    pub cutoff: usize,
    pub lambda2: Vec<PeriodicMatrixFunction>,
    pub residuals: Vec<f64>,
}

impl SecondCellSolution {
    /// `Lambda^(2)(x; theta) = sum_l theta_l Lambda_l^(2)(x)`.
    pub fn along(&self, theta: &[f64]) -> PeriodicMatrixFunction {
        let mut out = PeriodicMatrixFunction::zero(self.lambda2[0].dim, self.lambda2[0].rows, self.lambda2[0].cols);
        for (l, f) in self.lambda2.iter().enumerate() {
            out = out.add(&f.scale(linalg::re(theta[l])));
        }
        out
    }
}

/// Mean of the right-hand side `b_l* (g0 - g_tilde)`; zero by construction of `g0`.
pub fn second_rhs_mean(model: &OperatorModel, cell: &CellSolution, l: usize) -> CMat {
    let bl = &model.symbol.b[l];
    linalg::mul_adj(bl, &(&cell.g_eff - &cell.g_tilde.mean()))
}

pub fn solve_second_corrector(model: &OperatorModel, cell: &CellSolution, cutoff: usize) -> Result<SecondCellSolution> {
    if cell.cutoff < cutoff {
        return Err(BhlError::Precondition(format!(
            "cell solution cutoff {} is below the requested cutoff {cutoff}",
            cell.cutoff
        )));
    }
    let (n, m, d) = (model.symbol.n, model.symbol.m, model.lattice.dim);
    let ctx = FiberContext::new(model, &cell.g_eff, cutoff, false)?;
    let len = ctx.index.len();
    let ident_m = linalg::identity(m);
    let fluxes: Vec<PeriodicMatrixFunction> = (0..d)
        .map(|l| model.g.mul(&cell.lambda.sandwich(&model.symbol.b[l], &ident_m)))
        .collect();
    let mut rhs = vec![linalg::zeros(n, m * d); len];
    for (p, mp) in ctx.index.indices.iter().enumerate() {
        if p == ctx.index.zero_pos {
            continue;
        }
        let bp = model.symbol.eval(&model.lattice.dual_vector(mp));
        let gt = cell.g_tilde.coeff(mp);
        for l in 0..d {
            let a = linalg::mul_adj(&bp, &fluxes[l].coeff(mp));
            let b = linalg::mul_adj(&model.symbol.b[l], &gt);
            linalg::set_block(&mut rhs[p], 0, l * m, &linalg::scale_re(&(&a + &b), -1.0));
        }
    }
    let blocks = zero_mean_solve(&ctx, &rhs)?;
    let mut lambda2 = Vec::with_capacity(d);
    let mut residuals = Vec::with_capacity(d);
    for l in 0..d {
        let bl: Vec<CMat> = blocks.iter().map(|b| linalg::block(b, 0, l * m, n, m)).collect();
        let f = field_from_blocks(&ctx, bl, 0.0);
        // Residual: g (b(D) L2 + b_l Lambda) - (flux that balances b_l*(g0 - g~)).
        let inner = apply_symbol(model, &f).add(&cell.lambda.sandwich(&model.symbol.b[l], &ident_m));
        let flux = model.g.mul(&inner);
        let mut worst = 0.0f64;
        for (mp, c) in &flux.coeffs {
            let norm = crate::lattice::FourierIndexSet::max_norm(mp) as usize;
            if norm == 0 || norm > cutoff {
                continue;
            }
            let xi = model.lattice.dual_vector(mp);
            let bp = model.symbol.eval(&xi);
            let lhs = linalg::mul_adj(&bp, c);
            let r = &lhs + &linalg::mul_adj(&model.symbol.b[l], &cell.g_tilde.coeff(mp));
            let r2: f64 = xi.iter().map(|x| x * x).sum();
            worst += linalg::frobenius(&r).powi(2) / r2;
        }
        residuals.push(worst.sqrt());
        lambda2.push(f);
    }
    Ok(SecondCellSolution { cutoff, lambda2, residuals })
}

/// `Lambda_Q = Lambda + Lambda_Q^0` with `mean(Q Lambda_Q) = 0`.
#[derive(Clone, Debug)]
pub struct WeightedCorrector {
    pub lambda_q: PeriodicMatrixFunction,
    pub lambda_q0: CMat,
    pub q_bar: CMat,
    /// `(mean Q)^{-1/2}`.
    pub f0: CMat,
    /// `mean(Q Lambda_Q)`, zero up to round-off.
    pub weighted_mean: CMat,
}

pub fn weighted_corrector(model: &OperatorModel, cell: &CellSolution) -> Result<WeightedCorrector> {
    let q = model
        .q
        .as_ref()
        .ok_or_else(|| BhlError::Precondition("weighted corrector needs a weight Q".into()))?;
    let q_bar = q.mean();
    let mean_ql = q.mean_product(&cell.lambda);
    let lambda_q0 = linalg::scale_re(&linalg::solve_general(&q_bar, &mean_ql), -1.0);
    let lambda_q = cell.lambda.add_constant(&lambda_q0);
    let weighted_mean = q.mean_product(&lambda_q);
    let f0 = linalg::psd_inv_sqrt(&q_bar);
    Ok(WeightedCorrector { lambda_q, lambda_q0, q_bar, f0, weighted_mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::SymbolB;
    use crate::lattice::build_lattice;
    use crate::linalg::{cx, re};
    use std::collections::BTreeMap;

    fn scalar(v: f64) -> CMat {
        linalg::scaled_identity(1, v)
    }

    fn model1d() -> OperatorModel {
        let mut c = BTreeMap::new();
        c.insert(vec![0], scalar(2.0));
        c.insert(vec![1], scalar(0.5));
        c.insert(vec![-1], scalar(0.5));
        OperatorModel {
            lattice: build_lattice(&[vec![1.0]]).unwrap(),
            symbol: SymbolB::gradient(1),
            g: PeriodicMatrixFunction::new(1, 1, 1, c, true).unwrap(),
            q: None,
        }
    }

    #[test]
    fn constant_g_has_trivial_corrector() {
        let g = linalg::from_real_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]);
        let model = OperatorModel {
            lattice: build_lattice(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            symbol: SymbolB::gradient(2),
            g: PeriodicMatrixFunction::constant(2, g.clone(), true),
            q: None,
        };
        let cell = solve_corrector(&model, 3).unwrap();
        assert!(cell.lambda.coeffs.values().all(|c| linalg::max_abs(c) == 0.0));
        assert!(linalg::max_abs(&(&cell.g_eff - &g)) < 1e-15);
        assert_eq!(cell.residual_norm, 0.0);
        let vr = voigt_reuss(&cell);
        assert!(vr.upper_margin.abs() < 1e-14 && vr.lower_margin.abs() < 1e-12);
        let second = solve_second_corrector(&model, &cell, 3).unwrap();
        assert!(second.lambda2.iter().all(|f| f.coeffs.values().all(|c| linalg::max_abs(c) < 1e-15)));
    }

    #[test]
    fn one_dimensional_harmonic_mean() {
        let model = model1d();
        let cell = solve_corrector(&model, 16).unwrap();
        let s3 = 3f64.sqrt();
        assert!((cell.g_eff[(0, 0)].re - s3).abs() < 1e-12);
        assert!((cell.g_under[(0, 0)].re - s3).abs() < 1e-12);
        assert!(cell.residual_norm < 1e-12);
        assert!(cell.truncation_residual < 1e-8);
        assert!(linalg::max_abs(&cell.lambda.mean()) < 1e-15);
        let vr = voigt_reuss(&cell);
        assert!((vr.upper_margin - (2.0 - s3)).abs() < 1e-12);
        assert!(vr.lower_margin.abs() < 1e-12);
    }

    #[test]
    fn residual_decreases_with_cutoff() {
        let model = model1d();
        let a = solve_corrector(&model, 4).unwrap();
        let b = solve_corrector(&model, 8).unwrap();
        assert!(b.truncation_residual <= a.truncation_residual);
    }

    #[test]
    fn cutoff_below_bandwidth_is_rejected() {
        let model = model1d();
        assert!(matches!(solve_corrector(&model, 2), Err(BhlError::Precondition(_))));
    }

    #[test]
    fn corrector_energy_is_bounded_by_g_sup() {
        let model = model1d();
        let cell = solve_corrector(&model, 12).unwrap();
        let e = cell.corrector_energy(&model)[(0, 0)].re;
        assert!((0.0..=2.5).contains(&e));
    }

    #[test]
    fn second_corrector_rhs_has_zero_mean() {
        let model = model1d();
        let cell = solve_corrector(&model, 12).unwrap();
        assert!(linalg::max_abs(&second_rhs_mean(&model, &cell, 0)) < 1e-12);
    }

    #[test]
    fn divergence_free_columns_give_arithmetic_mean() {
        // g depends on x2 only in the (1,1) entry: b(D)* g e_1 = D_1 a(x2) = 0.
        let mut c = BTreeMap::new();
        c.insert(vec![0, 0], linalg::from_real_rows(&[vec![2.0, 0.0], vec![0.0, 1.5]]));
        let mut e = linalg::zeros(2, 2);
        e[(0, 0)] = re(0.4);
        c.insert(vec![0, 1], e.clone());
        c.insert(vec![0, -1], e);
        let model = OperatorModel {
            lattice: build_lattice(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            symbol: SymbolB::gradient(2),
            g: PeriodicMatrixFunction::new(2, 2, 2, c, true).unwrap(),
            q: None,
        };
        let cell = solve_corrector(&model, 4).unwrap();
        let vr = voigt_reuss(&cell);
        assert!(vr.upper_margin.abs() < 1e-13);
        assert!(linalg::max_abs(&(&cell.g_eff - &cell.g_bar)) < 1e-13);
    }

    #[test]
    fn weighted_shift_vanishes_for_identity_weight() {
        let mut model = model1d();
        model.q = Some(PeriodicMatrixFunction::constant(1, scalar(1.0), true));
        let cell = solve_corrector(&model, 8).unwrap();
        let w = weighted_corrector(&model, &cell).unwrap();
        assert!(linalg::max_abs(&w.lambda_q0) < 1e-15);
        assert!(linalg::max_abs(&(&w.f0 - &scalar(1.0))) < 1e-15);
    }

    #[test]
    fn weighted_shift_has_zero_weighted_mean() {
        let mut model = model1d();
        let mut q = BTreeMap::new();
        q.insert(vec![0], scalar(2.0));
        q.insert(vec![1], linalg::scaled_identity(1, 0.0).clone());
        q.get_mut(&vec![1]).unwrap()[(0, 0)] = cx(0.0, -0.5);
        q.insert(vec![-1], linalg::zeros(1, 1));
        q.get_mut(&vec![-1]).unwrap()[(0, 0)] = cx(0.0, 0.5);
        model.q = Some(PeriodicMatrixFunction::new(1, 1, 1, q, true).unwrap());
        let cell = solve_corrector(&model, 12).unwrap();
        let w = weighted_corrector(&model, &cell).unwrap();
        assert!(linalg::max_abs(&w.weighted_mean) < 1e-14);
        assert!(linalg::max_abs(&w.lambda_q0) > 1e-3);
    }
}
