//! Truncated Fourier-Galerkin fiber operators, their spectra, propagators and
//! the fiber error norms.

use serde::{Deserialize, Serialize};

use crate::cell::CellSolution;
use crate::coefficients::{inverse_sqrt_field, OperatorModel};
use crate::error::{BhlError, Result};
use crate::lattice::FourierIndexSet;
use crate::linalg::{self, CMat, HermEig, C};

const EIG_NEG_TOL: f64 = 1e-10;

/// Galerkin data for one model at one cutoff, reused across quasi-momenta.
#[derive(Clone, Debug)]
pub struct FiberContext {
    pub model: OperatorModel,
    pub index: FourierIndexSet,
    pub n: usize,
    pub m: usize,
    /// Nonzero Fourier coefficients of `g` as (offset, coefficient).
    g_terms: Vec<(Vec<i64>, CMat)>,
    pub g0: CMat,
    pub weight: Option<WeightData>,
}

/// Multiplication by `f = Q^{-1/2}` on the truncated space and its constant counterpart.
#[derive(Clone, Debug)]
pub struct WeightData {
    pub f: CMat,
    pub f_inv: CMat,
    pub q_bar: CMat,
    pub f0: CMat,
    pub f0_inv: CMat,
}

impl FiberContext {
    pub fn new(model: &OperatorModel, g0: &CMat, cutoff: usize, weighted: bool) -> Result<Self> {
        let bw = model.g.bandwidth();
        if cutoff < bw + 2 && !model.g.is_constant(0.0) {
            return Err(BhlError::Precondition(format!("cutoff {cutoff} is below bandwidth(g) + 2 = {}", bw + 2)));
        }
        let index = FourierIndexSet::new(model.lattice.dim, cutoff);
        let g_terms = model.g.coeffs.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let weight = if weighted {
            let q = model
                .q
                .as_ref()
                .ok_or_else(|| BhlError::Precondition("weighted fiber requested without a weight Q".into()))?;
            Some(weight_data(q, &index, model.symbol.n))
        } else {
            None
        };
        Ok(FiberContext {
            model: model.clone(),
            index,
            n: model.symbol.n,
            m: model.symbol.m,
            g_terms,
            g0: g0.clone(),
            weight,
        })
    }

    pub fn dim(&self) -> usize {
        self.n * self.index.len()
    }

    pub fn cutoff(&self) -> usize {
        self.index.cutoff
    }

    /// `b(b(p) + k)` for every mode `p`.
    pub fn symbol_blocks(&self, k: &[f64]) -> Vec<CMat> {
        self.index
            .indices
            .iter()
            .map(|p| {
                let mut xi = self.model.lattice.dual_vector(p);
                for (x, kk) in xi.iter_mut().zip(k) {
                    *x += kk;
                }
                self.model.symbol.eval(&xi)
            })
            .collect()
    }

    /// Galerkin matrix of `b(D+k)* g b(D+k)`.
    pub fn assemble_hat(&self, k: &[f64]) -> CMat {
        let blocks = self.symbol_blocks(k);
        self.assemble_from_blocks(&blocks)
    }

    fn assemble_from_blocks(&self, blocks: &[CMat]) -> CMat {
        let n = self.n;
        let mut a = linalg::zeros(self.dim(), self.dim());
        let adj: Vec<CMat> = blocks.iter().map(linalg::adjoint).collect();
        for (p, mp) in self.index.indices.iter().enumerate() {
            for (delta, gd) in &self.g_terms {
                let mq: Vec<i64> = mp.iter().zip(delta).map(|(x, y)| x - y).collect();
                if let Some(q) = self.index.position(&mq) {
                    let blk = &(&adj[p] * gd) * &blocks[q];
                    linalg::add_block(&mut a, p * n, q * n, &blk);
                }
            }
        }
        linalg::hermitize(&a)
    }

    /// `(b(b(p)+k)* g0 b(b(p)+k))_p`, the diagonal blocks of the effective fiber.
    pub fn effective_blocks(&self, k: &[f64]) -> Vec<CMat> {
        self.symbol_blocks(k).iter().map(|b| linalg::hermitize(&(&linalg::mul_adj(b, &self.g0) * b))).collect()
    }

    /// The Galerkin quadratic form `<g b(D+k) u, b(D+k) u>` evaluated in flux form.
    pub fn energy_form(&self, k: &[f64], u: &[C]) -> f64 {
        let blocks = self.symbol_blocks(k);
        let n = self.n;
        let w: Vec<Vec<C>> = blocks
            .iter()
            .enumerate()
            .map(|(p, b)| linalg::matvec(b, &u[p * n..(p + 1) * n]))
            .collect();
        let mut acc = C::new(0.0, 0.0);
        for (p, mp) in self.index.indices.iter().enumerate() {
            for (delta, gd) in &self.g_terms {
                let mq: Vec<i64> = mp.iter().zip(delta).map(|(x, y)| x - y).collect();
                if let Some(q) = self.index.position(&mq) {
                    acc += linalg::dot(&w[p], &linalg::matvec(gd, &w[q]));
                }
            }
        }
        acc.re
    }

    /// Spectrum of `A_hat(k)` or, for a weighted context, of `f A_hat(k) f`.
    pub fn spectrum(&self, k: &[f64]) -> Result<FiberSpectrum> {
        let hat = self.assemble_hat(k);
        let matrix = match &self.weight {
            Some(w) => linalg::hermitize(&(&(&w.f * &hat) * &w.f)),
            None => hat,
        };
        let eig = checked_eig(&matrix)?;
        Ok(FiberSpectrum { k: k.to_vec(), dim: self.dim(), matrix, eig, weighted: self.weight.is_some() })
    }

    /// Lowest `count` eigenvalues refined by the Rayleigh quotient in flux form,
    /// which keeps relative accuracy for small eigenvalues.
    pub fn refined_low_eigenvalues(&self, spec: &FiberSpectrum, count: usize) -> Vec<f64> {
        (0..count.min(spec.eig.values.len()))
            .map(|j| {
                let v = linalg::column(&spec.eig.vectors, j);
                let u = match &self.weight {
                    Some(w) => linalg::matvec(&w.f, &v),
                    None => v.clone(),
                };
                let num = self.energy_form(&spec.k, &u);
                let den = linalg::vec_norm(&v).powi(2);
                num / den
            })
            .collect()
    }

    /// Spectrum of the effective fiber, block by block.
    pub fn effective_spectrum(&self, k: &[f64]) -> BlockSpectrum {
        let mut blocks = self.effective_blocks(k);
        if let Some(w) = &self.weight {
            blocks = blocks.iter().map(|b| linalg::hermitize(&(&(&w.f0 * b) * &w.f0))).collect();
        }
        let eigs = blocks.iter().map(linalg::herm_eig).collect();
        BlockSpectrum { n: self.n, blocks, eigs }
    }

    /// Weights `eps^s (|b(m)+k|^2 + eps^2)^{-s/2}` replicated over vector components.
    pub fn smoothing_diag(&self, k: &[f64], eps: f64, s: f64) -> Vec<f64> {
        smoothing_diag(&self.model, &self.index, self.n, k, eps, s)
    }
}

fn weight_data(q: &crate::coefficients::PeriodicMatrixFunction, index: &FourierIndexSet, n: usize) -> WeightData {
    let f_field = inverse_sqrt_field(q, 2 * index.cutoff);
    let len = index.len();
    let mut f = linalg::zeros(n * len, n * len);
    for (p, mp) in index.indices.iter().enumerate() {
        for (qq, mq) in index.indices.iter().enumerate() {
            let d: Vec<i64> = mp.iter().zip(mq).map(|(a, b)| a - b).collect();
            if let Some(c) = f_field.coeff_ref(&d) {
                linalg::set_block(&mut f, p * n, qq * n, c);
            }
        }
    }
    let f = linalg::hermitize(&f);
    let f_inv = linalg::inverse(&f);
    let q_bar = q.mean();
    let (sq, sq_inv) = linalg::psd_sqrt_pair(&q_bar, 1e-13);
    WeightData { f, f_inv, q_bar, f0: sq_inv, f0_inv: sq }
}

fn checked_eig(matrix: &CMat) -> Result<HermEig> {
    let mut eig = linalg::herm_eig(matrix);
    if let Some(&lo) = eig.values.first() {
        if lo < -EIG_NEG_TOL * linalg::max_abs(matrix).max(1.0) {
            return Err(BhlError::Numerical(format!("fiber matrix has a negative eigenvalue {lo:e}")));
        }
    }
    for v in eig.values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(eig)
}

pub fn smoothing_diag(model: &OperatorModel, index: &FourierIndexSet, n: usize, k: &[f64], eps: f64, s: f64) -> Vec<f64> {
    let mut w = Vec::with_capacity(n * index.len());
    for p in &index.indices {
        let xi = model.lattice.dual_vector(p);
        let r2: f64 = xi.iter().zip(k).map(|(a, b)| (a + b) * (a + b)).sum();
        let val = if s == 0.0 { 1.0 } else { (eps * eps / (r2 + eps * eps)).powf(0.5 * s) };
        for _ in 0..n {
            w.push(val);
        }
    }
    w
}

#[derive(Clone, Debug)]
pub struct FiberSpectrum {
    pub k: Vec<f64>,
    pub dim: usize,
    pub matrix: CMat,
    pub eig: HermEig,
    pub weighted: bool,
}

impl FiberSpectrum {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig.values
    }
}

/// Spectrum of a block-diagonal operator (one `n x n` block per Fourier mode).
#[derive(Clone, Debug)]
pub struct BlockSpectrum {
    pub n: usize,
    pub blocks: Vec<CMat>,
    pub eigs: Vec<HermEig>,
}

impl BlockSpectrum {
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.eigs.iter().flat_map(|e| e.values.iter().map(|x| x.max(0.0))).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    /// Dense block-diagonal matrix of `phi` applied blockwise.
    pub fn apply(&self, phi: impl Fn(f64) -> C) -> CMat {
        let n = self.n;
        let total = n * self.blocks.len();
        let mut out = linalg::zeros(total, total);
        for (p, e) in self.eigs.iter().enumerate() {
            let blk = linalg::spectral_apply(e, |l| phi(l.max(0.0)));
            linalg::set_block(&mut out, p * n, p * n, &blk);
        }
        out
    }

    pub fn dense(&self) -> CMat {
        self.apply(linalg::re)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PropagatorKind {
    Cos,
    Sinc,
}

/// `cos(tau sqrt(lambda))` and `tau sinc(tau sqrt(lambda)) = sin(tau sqrt(lambda)) / sqrt(lambda)`.
pub fn scalar_propagator(kind: PropagatorKind, tau: f64, lambda: f64) -> f64 {
    let w = lambda.max(0.0).sqrt();
    match kind {
        PropagatorKind::Cos => (tau * w).cos(),
        PropagatorKind::Sinc => tau * sinc(tau * w),
    }
}

pub fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        let z2 = z * z;
        1.0 - z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sin() / z
    }
}

pub fn fiber_propagator(eig: &HermEig, tau: f64, kind: PropagatorKind) -> CMat {
    linalg::spectral_apply(eig, |l| linalg::re(scalar_propagator(kind, tau, l)))
}

/// `I + Lambda b(D+k) P_hat` (or `I + Lambda b(D+k)` on all modes when `use_pi` is false).
pub fn corrector_multiplier(ctx: &FiberContext, cell: &CellSolution, k: &[f64], use_pi: bool) -> CMat {
    let n = ctx.n;
    let mut out = linalg::identity(ctx.dim());
    let blocks = ctx.symbol_blocks(k);
    let columns: Vec<usize> = if use_pi { vec![ctx.index.zero_pos] } else { (0..ctx.index.len()).collect() };
    for p in columns {
        let mp = &ctx.index.indices[p];
        for (mlam, lam) in &cell.lambda.coeffs {
            let mq: Vec<i64> = mp.iter().zip(mlam).map(|(a, b)| a + b).collect();
            if let Some(q) = ctx.index.position(&mq) {
                linalg::add_block(&mut out, q * n, p * n, &(lam * &blocks[p]));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Hash, PartialOrd, Ord)]
pub enum Variant {
    #[serde(rename = "J1")]
    J1Cos,
    #[serde(rename = "J2")]
    J2Sinc,
    #[serde(rename = "J3")]
    J3SincSandwich,
    #[serde(rename = "J_energy")]
    JEnergyCorrector,
    #[serde(rename = "J1_weighted")]
    J1Weighted,
    #[serde(rename = "J3_weighted")]
    J3Weighted,
    #[serde(rename = "J_energy_weighted")]
    JEnergyWeighted,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::J1Cos,
        Variant::J2Sinc,
        Variant::J3SincSandwich,
        Variant::JEnergyCorrector,
        Variant::J1Weighted,
        Variant::J3Weighted,
        Variant::JEnergyWeighted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::J1Cos => "J1",
            Variant::J2Sinc => "J2",
            Variant::J3SincSandwich => "J3",
            Variant::JEnergyCorrector => "J_energy",
            Variant::J1Weighted => "J1_weighted",
            Variant::J3Weighted => "J3_weighted",
            Variant::JEnergyWeighted => "J_energy_weighted",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Variant::ALL.into_iter().find(|v| v.name().to_ascii_lowercase() == key || v.alias() == key)
    }

    fn alias(self) -> &'static str {
        match self {
            Variant::J1Cos => "j1_cos",
            Variant::J2Sinc => "j2_sinc",
            Variant::J3SincSandwich => "j3_sinc_sandwich",
            Variant::JEnergyCorrector => "j_energy_corrector",
            Variant::J1Weighted => "j1w",
            Variant::J3Weighted => "j3w",
            Variant::JEnergyWeighted => "jew",
        }
    }

    /// Whether the variant acts on the weighted fiber `f A_hat f`.
    pub fn needs_weight(self) -> bool {
        matches!(self, Variant::J1Weighted | Variant::J3Weighted | Variant::JEnergyWeighted)
    }

    /// Sandwich variants use the weight when the model carries one.
    pub fn uses_weight(self, has_q: bool) -> bool {
        self.needs_weight() || (self == Variant::J3SincSandwich && has_q)
    }

    pub fn uses_corrector(self) -> bool {
        matches!(self, Variant::JEnergyCorrector | Variant::JEnergyWeighted)
    }

    /// The sinc variants carry one power of `eps` under the scaling transform.
    pub fn eps_power(self) -> i32 {
        match self {
            Variant::J2Sinc | Variant::J3SincSandwich | Variant::J3Weighted => 1,
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectorMode {
    None,
    WithPi,
    WithoutPi,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberErrorRequest {
    pub variant: Variant,
    pub epsilon: f64,
    pub tau: f64,
    pub s: f64,
    pub corrector: CorrectorMode,
}

impl FiberErrorRequest {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(BhlError::Validation("epsilon must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.s) {
            return Err(BhlError::Validation(format!("smoothing exponent s = {} outside [0, 2]", self.s)));
        }
        Ok(())
    }
}

/// All spectral data needed to evaluate error norms at one quasi-momentum.
pub struct FiberErrorEvaluator<'a> {
    pub k: Vec<f64>,
    ctx: &'a FiberContext,
    hat: HermEig,
    hat0: BlockSpectrum,
    weighted: Option<(HermEig, BlockSpectrum)>,
    multiplier: Option<CMat>,
}

impl<'a> FiberErrorEvaluator<'a> {
    /// `weighted_ctx` supplies the weight data when weighted variants are needed.
    pub fn new(
        ctx: &'a FiberContext,
        cell: Option<&CellSolution>,
        k: &[f64],
        need_weighted: bool,
        corrector: CorrectorMode,
    ) -> Result<Self> {
        let hat_matrix = ctx.assemble_hat(k);
        let hat = checked_eig(&hat_matrix)?;
        let mut hat0 = ctx.effective_spectrum(k);
        if ctx.weight.is_some() {
            // Unweighted effective blocks are needed for the unweighted variants.
            let blocks = ctx.effective_blocks(k);
            let eigs = blocks.iter().map(linalg::herm_eig).collect();
            hat0 = BlockSpectrum { n: ctx.n, blocks, eigs };
        }
        let weighted = if need_weighted {
            let w = ctx
                .weight
                .as_ref()
                .ok_or_else(|| BhlError::Precondition("weighted variant requested without a weight Q".into()))?;
            let a = linalg::hermitize(&(&(&w.f * &hat_matrix) * &w.f));
            Some((checked_eig(&a)?, ctx.effective_spectrum(k)))
        } else {
            None
        };
        let multiplier = match (corrector, cell) {
            (CorrectorMode::None, _) => None,
            (_, None) => return Err(BhlError::Precondition("corrector requested without a cell solution".into())),
            (mode, Some(cell)) => {
                if cell.cutoff < ctx.cutoff() {
                    return Err(BhlError::Precondition(format!(
                        "cell solution cutoff {} is below the fiber cutoff {}",
                        cell.cutoff,
                        ctx.cutoff()
                    )));
                }
                Some(corrector_multiplier(ctx, cell, k, mode == CorrectorMode::WithPi))
            }
        };
        Ok(FiberErrorEvaluator { k: k.to_vec(), ctx, hat, hat0, weighted, multiplier })
    }

    pub fn hat_eigenvalues(&self) -> &[f64] {
        &self.hat.values
    }

    /// The unsmoothed difference operator for `variant` at rescaled time `tau / eps`,
    /// including the power of `eps` carried by the variant.
    pub fn difference(&self, variant: Variant, eps: f64, tau: f64) -> Result<CMat> {
        let tp = tau / eps;
        let cos = |l: f64| linalg::re(scalar_propagator(PropagatorKind::Cos, tp, l));
        let sinc = |l: f64| linalg::re(scalar_propagator(PropagatorKind::Sinc, tp, l));
        let sin = |l: f64| linalg::re((tp * l.max(0.0).sqrt()).sin());
        let epsf = eps.powi(variant.eps_power());
        let weighted = || {
            self.weighted
                .as_ref()
                .zip(self.ctx.weight.as_ref())
                .ok_or_else(|| BhlError::Precondition(format!("variant {} needs a weighted fiber", variant.name())))
        };
        let d = match variant {
            Variant::J1Cos => &linalg::spectral_apply(&self.hat, cos) - self.hat0.apply(cos),
            Variant::J2Sinc => &linalg::spectral_apply(&self.hat, sinc) - self.hat0.apply(sinc),
            Variant::J3SincSandwich | Variant::J3Weighted => {
                if variant == Variant::J3SincSandwich && self.weighted.is_none() {
                    &linalg::spectral_apply(&self.hat, sinc) - self.hat0.apply(sinc)
                } else {
                    let ((a, a0), w) = weighted()?;
                    let left = &(&w.f * &linalg::spectral_apply(a, sinc)) * &w.f;
                    let right = &(&w.f0_block(self.ctx) * &a0.apply(sinc)) * &w.f0_block(self.ctx);
                    &left - &right
                }
            }
            Variant::J1Weighted => {
                let ((a, a0), w) = weighted()?;
                let left = &(&w.f * &linalg::spectral_apply(a, cos)) * &w.f_inv;
                let right = &(&w.f0_block(self.ctx) * &a0.apply(cos)) * &w.f0_inv_block(self.ctx);
                &left - &right
            }
            Variant::JEnergyCorrector => {
                let first = linalg::spectral_apply(&self.hat, sin);
                let half = linalg::spectral_apply(&self.hat, |l| linalg::re(l.max(0.0).sqrt()));
                let mut second = self.hat0.apply(sinc);
                if let Some(mult) = &self.multiplier {
                    second = mult * &second;
                }
                &first - &(&half * &second)
            }
            Variant::JEnergyWeighted => {
                let ((a, a0), w) = weighted()?;
                let half = linalg::spectral_apply(&self.hat, |l| linalg::re(l.max(0.0).sqrt()));
                let left = &(&w.f * &linalg::spectral_apply(a, sinc)) * &w.f_inv;
                let mut right = &(&w.f0_block(self.ctx) * &a0.apply(sinc)) * &w.f0_inv_block(self.ctx);
                if let Some(mult) = &self.multiplier {
                    right = mult * &right;
                }
                &half * &(&left - &right)
            }
        };
        Ok(if epsf != 1.0 { linalg::scale_re(&d, epsf) } else { d })
    }

    /// Spectral norm of `difference * diag(smoothing weights)`.
    pub fn smoothed_norm(&self, difference: &CMat, eps: f64, s: f64) -> f64 {
        let w = self.ctx.smoothing_diag(&self.k, eps, s);
        linalg::spectral_norm(&linalg::scale_columns(difference, &w))
    }

    pub fn norm(&self, req: &FiberErrorRequest) -> Result<f64> {
        req.validate()?;
        let d = self.difference(req.variant, req.epsilon, req.tau)?;
        Ok(self.smoothed_norm(&d, req.epsilon, req.s))
    }
}

impl WeightData {
    fn f0_block(&self, ctx: &FiberContext) -> CMat {
        block_diagonal(&self.f0, ctx.index.len())
    }

    fn f0_inv_block(&self, ctx: &FiberContext) -> CMat {
        block_diagonal(&self.f0_inv, ctx.index.len())
    }
}

pub fn block_diagonal(b: &CMat, copies: usize) -> CMat {
    let n = b.nrows();
    let mut out = linalg::zeros(n * copies, n * copies);
    for p in 0..copies {
        linalg::set_block(&mut out, p * n, p * n, b);
    }
    out
}

/// One-shot fiber error norm.
pub fn fiber_error_norm(ctx: &FiberContext, cell: Option<&CellSolution>, k: &[f64], req: &FiberErrorRequest) -> Result<f64> {
    let corrector = if req.variant.uses_corrector() { req.corrector } else { CorrectorMode::None };
    let need_w = req.variant.uses_weight(ctx.model.q.is_some());
    let ev = FiberErrorEvaluator::new(ctx, cell, k, need_w, corrector)?;
    ev.norm(req)
}

/// Lowest band `E_1(k)` helper used by diagnostics.
pub fn lowest_band(ctx: &FiberContext, k: &[f64]) -> Result<f64> {
    let sp = ctx.spectrum(k)?;
    Ok(ctx.refined_low_eigenvalues(&sp, 1)[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::solve_corrector;
    use crate::scenarios::builtin;

    fn model1d_ctx(n: usize) -> (FiberContext, CellSolution) {
        let sc = builtin("model1d").unwrap();
        let cell = solve_corrector(&sc.model, n).unwrap();
        (FiberContext::new(&sc.model, &cell.g_eff, n, false).unwrap(), cell)
    }

    #[test]
    fn assembled_fiber_is_hermitian_and_matches_the_flux_form() {
        let (ctx, _) = model1d_ctx(6);
        let k = [0.7];
        let a = ctx.assemble_hat(&k);
        assert!(linalg::max_abs(&(&a - linalg::adjoint(&a))) < 1e-12);
        let u: Vec<C> = (0..ctx.dim()).map(|i| C::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
        let au = linalg::matvec(&a, &u);
        let quad = linalg::dot(&u, &au).re;
        assert!((quad - ctx.energy_form(&k, &u)).abs() < 1e-10 * quad.abs());
    }

    #[test]
    fn constant_coefficient_differences_vanish() {
        let sc = builtin("model1d").unwrap();
        let mut model = sc.model.clone();
        model.g = crate::coefficients::PeriodicMatrixFunction::constant(1, linalg::scaled_identity(1, 2.0), true);
        let cell = solve_corrector(&model, 4).unwrap();
        let ctx = FiberContext::new(&model, &cell.g_eff, 4, false).unwrap();
        let ev = FiberErrorEvaluator::new(&ctx, Some(&cell), &[0.3], false, CorrectorMode::WithPi).unwrap();
        for v in [Variant::J1Cos, Variant::J2Sinc, Variant::J3SincSandwich, Variant::JEnergyCorrector] {
            let d = ev.difference(v, 0.01, 1.0).unwrap();
            assert!(linalg::max_abs(&d) < 1e-10, "{}", v.name());
        }
    }

    #[test]
    fn lowest_band_is_quadratic_with_the_effective_coefficient() {
        let (ctx, cell) = model1d_ctx(12);
        let t = 1e-3;
        let e = lowest_band(&ctx, &[t]).unwrap();
        let g0 = cell.g_eff[(0, 0)].re;
        assert!((e / (t * t) - g0).abs() < 1e-5, "{} vs {g0}", e / (t * t));
    }

    #[test]
    fn smoothing_weights_lie_in_the_unit_interval() {
        let (ctx, _) = model1d_ctx(4);
        let w = ctx.smoothing_diag(&[0.2], 0.05, 1.5);
        assert!(w.iter().all(|&x| x > 0.0 && x <= 1.0));
        assert!(ctx.smoothing_diag(&[0.2], 0.05, 0.0).iter().all(|&x| x == 1.0));
        let zero_mode = ctx.index.zero_pos;
        let expected = (0.05f64.powi(2) / (0.04 + 0.05f64.powi(2))).powf(0.75);
        assert!((w[zero_mode] - expected).abs() < 1e-15);
    }

    #[test]
    fn cutoff_below_bandwidth_is_rejected() {
        let sc = builtin("model1d").unwrap();
        let g0 = linalg::scaled_identity(1, 3f64.sqrt());
        assert!(matches!(FiberContext::new(&sc.model, &g0, 2, false), Err(BhlError::Precondition(_))));
    }

    #[test]
    fn weighted_context_needs_a_weight() {
        let sc = builtin("model1d").unwrap();
        let g0 = linalg::scaled_identity(1, 3f64.sqrt());
        assert!(FiberContext::new(&sc.model, &g0, 4, true).is_err());
    }

    #[test]
    fn request_validation() {
        let mut req = FiberErrorRequest { variant: Variant::J1Cos, epsilon: 0.1, tau: 1.0, s: 1.0, corrector: CorrectorMode::None };
        assert!(req.validate().is_ok());
        req.s = 2.5;
        assert!(req.validate().is_err());
        req.s = 1.0;
        req.epsilon = 0.0;
        assert!(req.validate().is_err());
    }

    #[test]
    fn variant_names_parse_back() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()), Some(v));
        }
        assert_eq!(Variant::parse("j-energy"), Some(Variant::JEnergyCorrector));
        assert_eq!(Variant::parse("J9"), None);
    }
}
