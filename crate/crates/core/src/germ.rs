//! Threshold analytics along directions `theta`: the germ `S(theta)`, the
//! operators `N(theta)`, `N_0(theta)` and the fourth-order cluster operators,
//! with band fitting as an independent route to `gamma`, `mu`, `nu`.

use serde::{Deserialize, Serialize};

use crate::cell::{apply_symbol, CellSolution, SecondCellSolution, WeightedCorrector};
use crate::coefficients::{OperatorModel, PeriodicMatrixFunction};
use crate::error::{BhlError, Result};
use crate::fiber::FiberContext;
use crate::lattice::unit_directions;
use crate::linalg::{self, CMat, C};

pub const CLUSTER_REL_TOL: f64 = 1e-8;
pub const VERDICT_TOL: f64 = 1e-8;
pub const OVERLAP_THRESHOLD: f64 = 0.7;

/// Eigen-data of the germ `b(theta)* g0 b(theta)`, generalized with `Q_bar` when given.
#[derive(Clone, Debug)]
pub struct GermData {
    pub theta: Vec<f64>,
    pub s: CMat,
    pub gamma: Vec<f64>,
    /// Orthonormal (or `Q_bar`-orthonormal) eigenvectors as columns.
    pub vectors: CMat,
    pub clusters: Vec<Vec<usize>>,
    pub q_bar: Option<CMat>,
}

impl GermData {
    /// Orthogonal (or `Q_bar`-skew) projection onto cluster `j`.
    pub fn projection(&self, j: usize) -> CMat {
        let n = self.s.nrows();
        let mut p = linalg::zeros(n, n);
        for &l in &self.clusters[j] {
            let v = linalg::col_mat(&linalg::column(&self.vectors, l));
            linalg::add_assign(&mut p, &linalg::mul_adj(&linalg::adjoint(&v), &linalg::adjoint(&v)));
        }
        match &self.q_bar {
            Some(q) => &p * q,
            None => p,
        }
    }

    pub fn cluster_of(&self, l: usize) -> usize {
        self.clusters.iter().position(|c| c.contains(&l)).unwrap_or(0)
    }

    fn cluster_basis(&self, j: usize) -> CMat {
        let n = self.s.nrows();
        let idx = &self.clusters[j];
        faer::Mat::from_fn(n, idx.len(), |r, c| self.vectors[(r, idx[c])])
    }
}

pub fn group_clusters(values: &[f64]) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match clusters.last_mut() {
            Some(c) if (v - values[*c.last().unwrap()]).abs() <= CLUSTER_REL_TOL * v.abs().max(1.0) => c.push(i),
            _ => clusters.push(vec![i]),
        }
    }
    clusters
}

pub fn symbol_at(model: &OperatorModel, theta: &[f64]) -> CMat {
    model.symbol.eval(theta)
}

pub fn germ_matrix(model: &OperatorModel, cell: &CellSolution, theta: &[f64], q_bar: Option<&CMat>) -> Result<GermData> {
    let b = symbol_at(model, theta);
    let s = linalg::hermitize(&(&linalg::mul_adj(&b, &cell.g_eff) * &b));
    let eig = match q_bar {
        Some(q) => linalg::gen_herm_eig(&s, q)?,
        None => linalg::herm_eig(&s),
    };
    let clusters = group_clusters(&eig.values);
    Ok(GermData { theta: theta.to_vec(), s, gamma: eig.values, vectors: eig.vectors, clusters, q_bar: q_bar.cloned() })
}

/// `N(theta)`, `N_0(theta)` and the diagonal coefficients `mu_l`.
#[derive(Clone, Debug)]
pub struct ThirdOrder {
    pub l: CMat,
    pub n: CMat,
    pub n0: CMat,
    pub mu: Vec<f64>,
}

/// `mean(Lam* b* g~ + g~* b Lam)` for a corrector-like `n x m` field `Lam`.
fn l_matrix(model: &OperatorModel, cell: &CellSolution, lam: &PeriodicMatrixFunction, theta: &[f64]) -> CMat {
    let b = symbol_at(model, theta);
    let ident = linalg::identity(cell.m);
    let x = cell.g_tilde.adjoint().mean_product(&lam.sandwich(&b, &ident));
    linalg::hermitize(&linalg::scale_re(&(&x + &linalg::adjoint(&x)), 1.0))
}

fn third_order_from(model: &OperatorModel, germ: &GermData, l: CMat) -> ThirdOrder {
    let b = symbol_at(model, &germ.theta);
    let nmat = linalg::hermitize(&(&linalg::mul_adj(&b, &l) * &b));
    let dim = nmat.nrows();
    let mut n0 = linalg::zeros(dim, dim);
    let mut mu = vec![0.0; germ.gamma.len()];
    for (j, cl) in germ.clusters.iter().enumerate() {
        let p = germ.projection(j);
        linalg::add_assign(&mut n0, &(&linalg::mul_adj(&p, &nmat) * &p));
        let basis = germ.cluster_basis(j);
        let restricted = linalg::hermitize(&(&linalg::mul_adj(&basis, &nmat) * &basis));
        let vals = linalg::herm_eigenvalues(&restricted);
        for (slot, v) in cl.iter().zip(vals) {
            mu[*slot] = v;
        }
    }
    ThirdOrder { l, n: nmat, n0, mu }
}

pub fn n_operator(model: &OperatorModel, cell: &CellSolution, germ: &GermData) -> ThirdOrder {
    let l = l_matrix(model, cell, &cell.lambda, &germ.theta);
    third_order_from(model, germ, l)
}

/// `N_Q(theta)` and `N_{0,Q}(theta)` with skew projections; `germ` must be the
/// generalized germ built with `Q_bar`.
pub fn weighted_n_operator(model: &OperatorModel, cell: &CellSolution, wc: &WeightedCorrector, germ: &GermData) -> Result<ThirdOrder> {
    if germ.q_bar.is_none() {
        return Err(BhlError::Precondition("weighted N needs the generalized germ".into()));
    }
    let l = l_matrix(model, cell, &wc.lambda_q, &germ.theta);
    Ok(third_order_from(model, germ, l))
}

/// Fourth-order cluster operators and the coefficients `nu_l`.
#[derive(Clone, Debug)]
pub struct FourthOrder {
    pub l2: CMat,
    pub n10: CMat,
    pub z_star_z: CMat,
    pub cluster_ops: Vec<CMat>,
    pub nu: Vec<f64>,
    pub ill_conditioned: bool,
}

pub fn fourth_order_operator(
    model: &OperatorModel,
    cell: &CellSolution,
    second: &SecondCellSolution,
    germ: &GermData,
    third: &ThirdOrder,
) -> Result<FourthOrder> {
    if germ.q_bar.is_some() {
        return Err(BhlError::Precondition("the fourth-order formula is implemented for the unweighted germ only".into()));
    }
    let scale = linalg::max_abs(&germ.s).max(1.0);
    let n0_norm = linalg::spectral_norm(&third.n0);
    if n0_norm > VERDICT_TOL * scale {
        return Err(BhlError::Precondition(format!("N_0(theta) is nonzero (norm {n0_norm:e}); the nu formula does not apply")));
    }
    let theta = &germ.theta;
    let b = symbol_at(model, theta);
    let m = cell.m;
    let ident = linalg::identity(m);
    let l2f = second.along(theta);
    // First integral: mean(L2* b* g~ + g~* b L2).
    let x = cell.g_tilde.adjoint().mean_product(&l2f.sandwich(&b, &ident));
    let first = &x + &linalg::adjoint(&x);
    // Second integral: mean(w* g w) with w = b(D) L2 + b(theta) Lambda.
    let w = apply_symbol(model, &l2f).add(&cell.lambda.sandwich(&b, &ident));
    let second_term = w.adjoint().mean_product(&model.g.mul(&w));
    let l2 = linalg::hermitize(&(&first + &second_term));
    let n10 = linalg::hermitize(&(&linalg::mul_adj(&b, &l2) * &b));
    let lam_sq = cell.lambda.adjoint().mean_product(&cell.lambda);
    let z_star_z = linalg::hermitize(&(&linalg::mul_adj(&b, &lam_sq) * &b));
    let core = &(&n10 - &linalg::scale_re(&(&z_star_z * &germ.s), 0.5)) - &linalg::scale_re(&(&germ.s * &z_star_z), 0.5);
    let gammas: Vec<f64> = germ.clusters.iter().map(|c| germ.gamma[c[0]]).collect();
    let mut nu = vec![0.0; germ.gamma.len()];
    let mut cluster_ops = Vec::with_capacity(germ.clusters.len());
    let mut ill = false;
    for (q, cl) in germ.clusters.iter().enumerate() {
        let pq = germ.projection(q);
        let mut op = &(&pq * &core) * &pq;
        for (j, _) in germ.clusters.iter().enumerate().filter(|(j, _)| *j != q) {
            let gap = gammas[q] - gammas[j];
            if gap.abs() < 1e-6 * scale {
                ill = true;
            }
            let pj = germ.projection(j);
            let term = &(&(&(&pq * &third.n) * &pj) * &third.n) * &pq;
            linalg::add_assign(&mut op, &linalg::scale_re(&term, 1.0 / gap));
        }
        let op = linalg::hermitize(&op);
        let basis = germ.cluster_basis(q);
        let vals = linalg::herm_eigenvalues(&linalg::hermitize(&(&linalg::mul_adj(&basis, &op) * &basis)));
        for (slot, v) in cl.iter().zip(vals) {
            nu[*slot] = v;
        }
        cluster_ops.push(op);
    }
    Ok(FourthOrder { l2, n10, z_star_z, cluster_ops, nu, ill_conditioned: ill })
}

fn require_acoustics(model: &OperatorModel) -> Result<()> {
    if model.symbol.n != 1 || model.symbol.m != model.lattice.dim {
        return Err(BhlError::Precondition("acoustics formulas need b(D) = D (n = 1, m = d)".into()));
    }
    Ok(())
}

/// Scalar component `(r, c)` of a matrix field.
fn entry(f: &PeriodicMatrixFunction, r: usize, c: usize) -> PeriodicMatrixFunction {
    let coeffs = f
        .coeffs
        .iter()
        .map(|(m, v)| (m.clone(), faer::Mat::from_fn(1, 1, |_, _| v[(r, c)])))
        .collect();
    PeriodicMatrixFunction { rows: 1, cols: 1, dim: f.dim, coeffs, hermitian: false }
}

fn mean_scalar(a: &PeriodicMatrixFunction, b: &PeriodicMatrixFunction) -> C {
    a.mean_product(b)[(0, 0)]
}

/// `Phi_j = -i Lambda_{1j}` for acoustics.
fn phis(cell: &CellSolution, d: usize) -> Vec<PeriodicMatrixFunction> {
    (0..d).map(|j| entry(&cell.lambda, 0, j).scale(linalg::cx(0.0, -1.0))).collect()
}

/// Gradient of a scalar field as a `d x 1` field.
fn gradient(model: &OperatorModel, f: &PeriodicMatrixFunction) -> PeriodicMatrixFunction {
    let d = model.lattice.dim;
    let coeffs = f
        .coeffs
        .iter()
        .map(|(m, v)| {
            let xi = model.lattice.dual_vector(m);
            (m.clone(), faer::Mat::from_fn(d, 1, |i, _| linalg::cx(0.0, xi[i]) * v[(0, 0)]))
        })
        .collect();
    PeriodicMatrixFunction { rows: d, cols: 1, dim: d, coeffs, hermitian: false }
}

fn unit_field(d: usize, dim: usize, l: usize, scale: &PeriodicMatrixFunction) -> PeriodicMatrixFunction {
    let e = faer::Mat::from_fn(d, 1, |i, _| linalg::re(if i == l { 1.0 } else { 0.0 }));
    scale.sandwich(&e, &linalg::identity(1)).with_dim(dim)
}

trait WithDim {
    fn with_dim(self, dim: usize) -> Self;
}

impl WithDim for PeriodicMatrixFunction {
    fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }
}

/// `mu(theta) = -i sum (a_jlk - conj(a_jlk)) theta_j theta_l theta_k` with
/// `a_jlk = mean(conj(Phi_j) g~_{kl})`.
pub fn acoustics_mu(model: &OperatorModel, cell: &CellSolution, theta: &[f64]) -> Result<f64> {
    require_acoustics(model)?;
    let d = model.lattice.dim;
    let phi = phis(cell, d);
    let mut acc = C::new(0.0, 0.0);
    for j in 0..d {
        let pj = phi[j].adjoint();
        for l in 0..d {
            for k in 0..d {
                let a = mean_scalar(&pj, &entry(&cell.g_tilde, k, l));
                acc += (a - a.conj()) * (theta[j] * theta[l] * theta[k]);
            }
        }
    }
    Ok((linalg::cx(0.0, -1.0) * acc).re)
}

/// `nu(theta) = sum (alpha_pqlk - mean(conj(Phi_p) Phi_q) g0_lk) theta_p theta_q theta_l theta_k`.
pub fn acoustics_nu(model: &OperatorModel, cell: &CellSolution, second: &SecondCellSolution, theta: &[f64]) -> Result<f64> {
    require_acoustics(model)?;
    let d = model.lattice.dim;
    let phi = phis(cell, d);
    // Psi_{jl} = (Lambda_l^(2))_{1j}.
    let psi: Vec<Vec<PeriodicMatrixFunction>> =
        (0..d).map(|j| (0..d).map(|l| entry(&second.lambda2[l], 0, j)).collect()).collect();
    let gt: Vec<Vec<PeriodicMatrixFunction>> = (0..d).map(|r| (0..d).map(|c| entry(&cell.g_tilde, r, c)).collect()).collect();
    // w_{ql} = grad Psi_{ql} - Phi_q e_l as d x 1 fields.
    let w: Vec<Vec<PeriodicMatrixFunction>> = (0..d)
        .map(|q| {
            (0..d)
                .map(|l| gradient(model, &psi[q][l]).add(&unit_field(d, d, l, &phi[q]).scale(linalg::re(-1.0))))
                .collect()
        })
        .collect();
    let mut acc = C::new(0.0, 0.0);
    for p in 0..d {
        for q in 0..d {
            let pq = mean_scalar(&phi[p].adjoint(), &phi[q]);
            for l in 0..d {
                for k in 0..d {
                    let th = theta[p] * theta[q] * theta[l] * theta[k];
                    if th == 0.0 {
                        continue;
                    }
                    let a1 = mean_scalar(&gt[l][p], &psi[q][k]) + mean_scalar(&gt[k][q], &psi[p][l]);
                    let a2 = w[p][l].adjoint().mean_product(&model.g.mul(&w[q][k]))[(0, 0)];
                    let alpha = a1 + a2;
                    acc += (alpha - pq * cell.g_eff[(l, k)]) * th;
                }
            }
        }
    }
    Ok(acc.re)
}

/// Band fit result for one direction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BandFit {
    pub theta: Vec<f64>,
    pub ts: Vec<f64>,
    /// `lambdas[i][l]`: branch `l` at `ts[i]`.
    pub lambdas: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub rho: Vec<f64>,
    /// Max relative residual of `lambda / t^2` per branch.
    pub residual: Vec<f64>,
    pub condition: f64,
    pub min_overlap: Vec<f64>,
    pub reliable: Vec<bool>,
}

/// Default ladder `t0 2^{-j}`, `j = 2..9`.
pub fn default_ladder(t0: f64) -> Vec<f64> {
    (2..=9).map(|j| t0 * 0.5f64.powi(j)).collect()
}

pub const DEFAULT_FIT_TERMS: usize = 6;

/// Fits the `n` lowest analytic branches of the fiber along `t theta`.
pub fn band_fit_expansion(ctx: &FiberContext, germ: &GermData, ts: &[f64], terms: usize) -> Result<BandFit> {
    if ts.len() < 6 {
        return Err(BhlError::Validation("band fitting needs at least 6 t values".into()));
    }
    if ts.iter().any(|&t| t <= 0.0) {
        return Err(BhlError::Validation("band fitting needs positive t values".into()));
    }
    let terms = terms.clamp(3, ts.len() - 1);
    let n = ctx.n;
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by(|&a, &b| ts[a].partial_cmp(&ts[b]).unwrap());
    let sorted: Vec<f64> = order.iter().map(|&i| ts[i]).collect();
    let dim = ctx.dim();
    // Embryos of the branches as fiber vectors.
    let z = ctx.index.zero_pos;
    let mut embryo = linalg::zeros(dim, n);
    for l in 0..n {
        for r in 0..n {
            embryo[(z * n + r, l)] = germ.vectors[(r, l)];
        }
    }
    if let Some(w) = &ctx.weight {
        embryo = &w.f_inv * &embryo;
    }
    for l in 0..n {
        let nrm = linalg::vec_norm(&linalg::column(&embryo, l));
        for r in 0..dim {
            embryo[(r, l)] /= nrm;
        }
    }
    let mut lambdas = vec![vec![0.0; n]; sorted.len()];
    let mut min_overlap = vec![1.0f64; n];
    let mut prev: Option<CMat> = None;
    for (i, &t) in sorted.iter().enumerate() {
        let k: Vec<f64> = germ.theta.iter().map(|x| x * t).collect();
        let spec = ctx.spectrum(&k)?;
        let vals = ctx.refined_low_eigenvalues(&spec, n);
        let vecs = faer::Mat::from_fn(dim, n, |r, c| spec.eig.vectors[(r, c)]);
        let (assign, overlaps, new_prev) = match &prev {
            None => match_to_embryos(germ, &embryo, &vecs, &vals),
            Some(p) => match_to_previous(p, &vecs),
        };
        for l in 0..n {
            lambdas[i][l] = vals[assign[l]];
            min_overlap[l] = min_overlap[l].min(overlaps[l]);
        }
        prev = Some(new_prev);
    }
    let mut gamma = vec![0.0; n];
    let mut mu = vec![0.0; n];
    let mut nu = vec![0.0; n];
    let mut rho = vec![0.0; n];
    let mut residual = vec![0.0; n];
    let mut condition = 0.0f64;
    let rows: Vec<Vec<f64>> = sorted.iter().map(|&t| (0..terms).map(|p| t.powi(p as i32)).collect()).collect();
    for l in 0..n {
        let rhs: Vec<f64> = sorted.iter().enumerate().map(|(i, &t)| lambdas[i][l] / (t * t)).collect();
        let (c, cond) = linalg::lstsq_real(&rows, &rhs);
        condition = condition.max(cond);
        gamma[l] = c[0];
        mu[l] = c[1];
        nu[l] = c[2];
        rho[l] = if terms > 3 { c[3] } else { 0.0 };
        let scale = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        residual[l] = rows
            .iter()
            .zip(&rhs)
            .map(|(row, y)| (row.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() - y).abs() / scale)
            .fold(0.0, f64::max);
    }
    let reliable = min_overlap.iter().map(|&o| o >= OVERLAP_THRESHOLD).collect();
    Ok(BandFit { theta: germ.theta.clone(), ts: sorted, lambdas, gamma, mu, nu, rho, residual, condition, min_overlap, reliable })
}

/// Assigns fiber eigenvectors to germ branches by projection onto germ clusters.
fn match_to_embryos(germ: &GermData, embryo: &CMat, vecs: &CMat, vals: &[f64]) -> (Vec<usize>, Vec<f64>, CMat) {
    let n = vecs.ncols();
    let mut assign = vec![0usize; n];
    let mut overlaps = vec![0.0; n];
    let mut used = vec![false; n];
    for cl in &germ.clusters {
        let proj: Vec<f64> = (0..n)
            .map(|j| {
                let v = linalg::column(vecs, j);
                cl.iter().map(|&l| linalg::abs2(linalg::dot(&linalg::column(embryo, l), &v))).sum::<f64>().sqrt()
            })
            .collect();
        let mut cand: Vec<usize> = (0..n).filter(|&j| !used[j]).collect();
        cand.sort_by(|&a, &b| proj[b].partial_cmp(&proj[a]).unwrap());
        let mut chosen: Vec<usize> = cand.into_iter().take(cl.len()).collect();
        chosen.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        for (&l, &j) in cl.iter().zip(&chosen) {
            assign[l] = j;
            overlaps[l] = proj[j];
            used[j] = true;
        }
    }
    let ordered = faer::Mat::from_fn(vecs.nrows(), n, |r, c| vecs[(r, assign[c])]);
    (assign, overlaps, ordered)
}

/// Greedy maximal-overlap assignment against the previous step's branch vectors.
fn match_to_previous(prev: &CMat, vecs: &CMat) -> (Vec<usize>, Vec<f64>, CMat) {
    let n = vecs.ncols();
    let ov: Vec<Vec<f64>> = (0..n)
        .map(|l| {
            let p = linalg::column(prev, l);
            (0..n).map(|j| linalg::dot(&p, &linalg::column(vecs, j)).norm()).collect()
        })
        .collect();
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|l| (0..n).map(move |j| (l, j))).collect();
    pairs.sort_by(|a, b| ov[b.0][b.1].partial_cmp(&ov[a.0][a.1]).unwrap());
    let mut assign = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for (l, j) in pairs {
        if assign[l] == usize::MAX && !used[j] {
            assign[l] = j;
            used[j] = true;
        }
    }
    let overlaps = (0..n).map(|l| ov[l][assign[l]]).collect();
    let ordered = faer::Mat::from_fn(vecs.nrows(), n, |r, c| vecs[(r, assign[c])]);
    (assign, overlaps, ordered)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Formula,
    BandFit,
    Both,
}

/// Direction-resolved threshold coefficients from both routes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GermExpansion {
    pub theta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub mu_source: Source,
    pub nu_source: Option<Source>,
    pub mu_formula: Vec<f64>,
    pub nu_formula: Option<Vec<f64>>,
    pub gamma_fit: Option<Vec<f64>>,
    pub mu_fit: Option<Vec<f64>>,
    pub nu_fit: Option<Vec<f64>>,
    pub fit_residual: Option<Vec<f64>>,
    pub fit_condition: Option<f64>,
    pub fit_reliable: Option<Vec<bool>>,
    pub cluster_sizes: Vec<usize>,
    pub n_norm: f64,
    pub n0_norm: f64,
}

/// Inputs shared by all directions of one analysis.
pub struct GermContext<'a> {
    pub model: &'a OperatorModel,
    pub cell: &'a CellSolution,
    pub second: Option<&'a SecondCellSolution>,
    pub weighted: Option<&'a WeightedCorrector>,
    pub fiber: Option<&'a FiberContext>,
    pub ladder: Vec<f64>,
    pub fit_terms: usize,
}

pub fn germ_expansion(ctx: &GermContext, theta: &[f64]) -> Result<GermExpansion> {
    let q_bar = ctx.weighted.map(|w| &w.q_bar);
    let germ = germ_matrix(ctx.model, ctx.cell, theta, q_bar)?;
    let third = match ctx.weighted {
        Some(w) => weighted_n_operator(ctx.model, ctx.cell, w, &germ)?,
        None => n_operator(ctx.model, ctx.cell, &germ),
    };
    let scale = linalg::max_abs(&germ.s).max(1.0);
    let n0_norm = linalg::spectral_norm(&third.n0);
    let nu_formula = match (ctx.second, ctx.weighted) {
        (Some(second), None) if n0_norm <= VERDICT_TOL * scale => {
            Some(fourth_order_operator(ctx.model, ctx.cell, second, &germ, &third)?.nu)
        }
        _ => None,
    };
    let fit = match ctx.fiber {
        Some(f) => Some(band_fit_expansion(f, &germ, &ctx.ladder, ctx.fit_terms)?),
        None => None,
    };
    let mu_source = if fit.is_some() { Source::Both } else { Source::Formula };
    let nu_source = match (&nu_formula, &fit) {
        (Some(_), Some(_)) => Some(Source::Both),
        (Some(_), None) => Some(Source::Formula),
        (None, Some(_)) => Some(Source::BandFit),
        (None, None) => None,
    };
    let nu = match (&nu_formula, &fit) {
        (Some(v), _) => v.clone(),
        (None, Some(f)) => f.nu.clone(),
        _ => vec![f64::NAN; germ.gamma.len()],
    };
    Ok(GermExpansion {
        theta: theta.to_vec(),
        gamma: germ.gamma.clone(),
        mu: third.mu.clone(),
        nu,
        mu_source,
        nu_source,
        mu_formula: third.mu.clone(),
        nu_formula,
        gamma_fit: fit.as_ref().map(|f| f.gamma.clone()),
        mu_fit: fit.as_ref().map(|f| f.mu.clone()),
        nu_fit: fit.as_ref().map(|f| f.nu.clone()),
        fit_residual: fit.as_ref().map(|f| f.residual.clone()),
        fit_condition: fit.as_ref().map(|f| f.condition),
        fit_reliable: fit.as_ref().map(|f| f.reliable.clone()),
        cluster_sizes: germ.clusters.iter().map(|c| c.len()).collect(),
        n_norm: linalg::spectral_norm(&third.n),
        n0_norm,
    })
}

/// Directions used for sampling: `{+1, -1}` in 1D, otherwise `count` spread directions.
pub fn theta_samples(dim: usize, count: usize) -> Vec<Vec<f64>> {
    if dim == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        unit_directions(dim, count)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Constant coefficients: homogenized and exact operators coincide.
    Exact,
    /// `N_0 = 0`: L2 exponent `2s/3` for `s <= 3/2`.
    Improved,
    /// L2 exponent `s/2` for `s <= 2`.
    General,
}

impl Regime {
    /// Expected exponent of the `H^s -> L2` error in `eps`.
    pub fn l2_exponent(self, s: f64) -> f64 {
        match self {
            Regime::Exact => f64::INFINITY,
            Regime::Improved => (2.0 * s / 3.0).min(1.0),
            Regime::General => (s / 2.0).min(1.0),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegimeRow {
    pub theta: Vec<f64>,
    pub n_norm: f64,
    pub n0_norm: f64,
    pub cluster_norms: Vec<f64>,
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegimeReport {
    pub rows: Vec<RegimeRow>,
    pub n_vanishes: bool,
    pub n0_vanishes: bool,
    /// `min{c_hat_*, |gamma_k - gamma_r| / n}` over sampled directions and coupled pairs.
    pub c_circ: Option<f64>,
    pub regime: Regime,
    pub weighted: bool,
    /// Verdicts are empirical over the sampled directions only.
    pub empirical: bool,
    pub directions: usize,
}

pub fn regime_classify(
    model: &OperatorModel,
    cell: &CellSolution,
    second: Option<&SecondCellSolution>,
    weighted: Option<&WeightedCorrector>,
    thetas: &[Vec<f64>],
    c_star_hat: f64,
) -> Result<RegimeReport> {
    let mut rows = Vec::with_capacity(thetas.len());
    let mut n_max = 0.0f64;
    let mut n0_max = 0.0f64;
    let mut c_circ: Option<f64> = None;
    let n = model.symbol.n;
    for theta in thetas {
        let germ = germ_matrix(model, cell, theta, weighted.map(|w| &w.q_bar))?;
        let third = match weighted {
            Some(w) => weighted_n_operator(model, cell, w, &germ)?,
            None => n_operator(model, cell, &germ),
        };
        let scale = linalg::max_abs(&germ.s).max(1.0);
        let n_norm = linalg::spectral_norm(&third.n);
        let n0_norm = linalg::spectral_norm(&third.n0);
        n_max = n_max.max(n_norm / scale);
        n0_max = n0_max.max(n0_norm / scale);
        for k in 0..n {
            for r in 0..n {
                if k == r || germ.cluster_of(k) == germ.cluster_of(r) {
                    continue;
                }
                let vk = linalg::col_mat(&linalg::column(&germ.vectors, k));
                let vr = linalg::col_mat(&linalg::column(&germ.vectors, r));
                let coupling = (&linalg::mul_adj(&vk, &third.n) * &vr)[(0, 0)].norm();
                if coupling > VERDICT_TOL * scale {
                    let c = c_star_hat.min((germ.gamma[k] - germ.gamma[r]).abs() / n as f64);
                    c_circ = Some(c_circ.map_or(c, |x: f64| x.min(c)));
                }
            }
        }
        let cluster_norms = match (second, weighted) {
            (Some(s), None) if n0_norm <= VERDICT_TOL * scale => {
                fourth_order_operator(model, cell, s, &germ, &third)?.cluster_ops.iter().map(linalg::spectral_norm).collect()
            }
            _ => vec![],
        };
        rows.push(RegimeRow { theta: theta.clone(), n_norm, n0_norm, cluster_norms, gamma: germ.gamma.clone(), mu: third.mu.clone() });
    }
    let n_vanishes = n_max <= VERDICT_TOL;
    let n0_vanishes = n0_max <= VERDICT_TOL;
    let lambda_zero = cell.lambda.coeffs.values().all(|c| linalg::max_abs(c) <= 1e-14);
    let regime = if lambda_zero && model.g.is_constant(1e-14) {
        Regime::Exact
    } else if n0_vanishes {
        Regime::Improved
    } else {
        Regime::General
    };
    Ok(RegimeReport {
        rows,
        n_vanishes,
        n0_vanishes,
        c_circ,
        regime,
        weighted: weighted.is_some(),
        empirical: true,
        directions: thetas.len(),
    })
}
