//! Cauchy problems `Q^eps u'' = -b(D)* g^eps b(D) u + F + D*G` on the unit torus
//! with `eps = 1/M`, solved by eigendecomposition, plus a leapfrog oracle.
//!
//! With `eps = 1/M` the coefficients only couple Fourier modes that differ by
//! multiples of `M`, so the box `|p|_inf <= K` splits into `M^d` residue classes
//! that are solved independently.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::CellSolution;
use crate::coefficients::{wrap_position, GridFft, OperatorModel, PeriodicMatrixFunction};
use crate::error::{BhlError, Result};
use crate::fiber::sinc;
use crate::lattice::FourierIndexSet;
use crate::linalg::{self, CMat, HermEig, C};
use num_complex::Complex64;

/// One Fourier coefficient of a vector field on the torus, as `[re, im]` per component.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct ModeValue {
    pub mode: Vec<i64>,
    pub value: Vec<[f64; 2]>,
}

/// A source `F + D*G` held constant on `[start, end)`.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct SourcePiece {
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub f: Vec<ModeValue>,
    /// Components of `G_1, ..., G_d` stacked, `n * d` values per mode.
    #[serde(default)]
    pub g: Vec<ModeValue>,
}

/// Initial data and sources. The initial momentum is `Q psi + D* rho`
/// (so the velocity is `psi + Q^{-1} D* rho`).
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct CauchyData {
    pub phi: Vec<ModeValue>,
    pub psi: Vec<ModeValue>,
    /// Components of `rho_1, ..., rho_d` stacked, `n * d` values per mode.
    pub rho: Vec<ModeValue>,
    pub sources: Vec<SourcePiece>,
}

impl CauchyData {
    pub fn max_mode(&self) -> i64 {
        let lists = [&self.phi, &self.psi, &self.rho];
        lists
            .iter()
            .flat_map(|l| l.iter())
            .chain(self.sources.iter().flat_map(|s| s.f.iter().chain(s.g.iter())))
            .map(|mv| FourierIndexSet::max_norm(&mv.mode))
            .max()
            .unwrap_or(0)
    }
}

/// Fourier modes `|p|_inf <= K` of the unit torus and their wave vectors.
struct Torus {
    index: FourierIndexSet,
    xi: Vec<Vec<f64>>,
    volume: f64,
}

impl Torus {
    fn new(model: &OperatorModel, cutoff: usize) -> Self {
        let index = FourierIndexSet::new(model.lattice.dim, cutoff);
        let xi = index.indices.iter().map(|p| model.lattice.dual_vector(p)).collect();
        Torus { index, xi, volume: model.lattice.cell_volume }
    }

    fn len(&self) -> usize {
        self.index.len()
    }

    fn l2(&self, f: &[C], comps: usize) -> f64 {
        (self.volume * f.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt() * if comps == 0 { 0.0 } else { 1.0 }
    }

    fn h1(&self, f: &[C], comps: usize) -> f64 {
        let mut acc = 0.0;
        for (p, xi) in self.xi.iter().enumerate() {
            let w = 1.0 + xi.iter().map(|x| x * x).sum::<f64>();
            acc += w * f[p * comps..(p + 1) * comps].iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        (self.volume * acc).sqrt()
    }
}

fn data_vector(torus: &Torus, list: &[ModeValue], comps: usize, what: &str) -> Result<Vec<C>> {
    let mut v = vec![C::new(0.0, 0.0); torus.len() * comps];
    for mv in list {
        let pos = torus.index.position(&mv.mode).ok_or_else(|| {
            BhlError::Validation(format!("{what}: mode {:?} lies outside the box |p| <= {}", mv.mode, torus.index.cutoff))
        })?;
        if mv.value.len() != comps {
            return Err(BhlError::Validation(format!(
                "{what}: mode {:?} has {} components, expected {comps}",
                mv.mode,
                mv.value.len()
            )));
        }
        for (c, z) in mv.value.iter().enumerate() {
            v[pos * comps + c] += C::new(z[0], z[1]);
        }
    }
    Ok(v)
}

/// `sum_j xi_j rho_j`, the symbol of `D* rho` for stacked `rho`.
fn divergence_vector(torus: &Torus, list: &[ModeValue], n: usize, what: &str) -> Result<Vec<C>> {
    let d = torus.index.dim;
    let stacked = data_vector(torus, list, n * d, what)?;
    let mut v = vec![C::new(0.0, 0.0); torus.len() * n];
    for (p, xi) in torus.xi.iter().enumerate() {
        for j in 0..d {
            for c in 0..n {
                v[p * n + c] += stacked[p * n * d + j * n + c] * xi[j];
            }
        }
    }
    Ok(v)
}

fn add_vec(a: &[C], b: &[C]) -> Vec<C> {
    a.iter().zip(b).map(|(x, y)| *x + *y).collect()
}

fn sub_vec(a: &[C], b: &[C]) -> Vec<C> {
    a.iter().zip(b).map(|(x, y)| *x - *y).collect()
}

/// Data of one problem projected onto the torus.
struct TorusData {
    phi: Vec<C>,
    psi: Vec<C>,
    /// `D* rho`, added to the momentum.
    div_rho: Vec<C>,
    /// `(start, end, F + D* G)`.
    sources: Vec<(f64, f64, Vec<C>)>,
}

impl TorusData {
    fn new(torus: &Torus, data: &CauchyData, n: usize) -> Result<Self> {
        let mut sources = Vec::with_capacity(data.sources.len());
        for (i, s) in data.sources.iter().enumerate() {
            if !(s.end > s.start) || s.start < 0.0 {
                return Err(BhlError::Validation(format!("source piece {i} needs 0 <= start < end")));
            }
            let f = data_vector(torus, &s.f, n, "source F")?;
            let g = divergence_vector(torus, &s.g, n, "source G")?;
            sources.push((s.start, s.end, add_vec(&f, &g)));
        }
        Ok(TorusData {
            phi: data_vector(torus, &data.phi, n, "phi")?,
            psi: data_vector(torus, &data.psi, n, "psi")?,
            div_rho: divergence_vector(torus, &data.rho, n, "rho")?,
            sources,
        })
    }
}

/// Solutions at one time on the torus modes (n components per mode).
#[derive(Clone, Debug)]
pub struct CauchyFields {
    pub tau: f64,
    pub u_eps: Vec<C>,
    pub u_eps_velocity: Vec<C>,
    pub u0: Vec<C>,
    pub v_eps: Vec<C>,
    pub v_eps_without_pi: Vec<C>,
    /// `g^eps b(D) u_eps` (m components per mode).
    pub flux: Vec<C>,
    /// `g_tilde^eps b(D) Pi_eps u0` (m components per mode).
    pub flux_approx: Vec<C>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CauchyRow {
    pub tau: f64,
    pub u_eps_l2: f64,
    pub err_u0_l2: f64,
    pub err_u0_h1: f64,
    pub err_v_h1: f64,
    pub err_v_without_pi_h1: f64,
    pub flux_err_l2: f64,
    pub energy: f64,
    pub energy_homogenized: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CauchyResult {
    pub eps: f64,
    pub inverse_eps: usize,
    pub box_cutoff: usize,
    pub weighted: bool,
    pub rows: Vec<CauchyRow>,
    /// `max |E(tau) - E(0)| / E(0)` over the time grid (zero sources only).
    pub energy_drift: Option<f64>,
    #[serde(skip)]
    pub fields: Vec<CauchyFields>,
    #[serde(skip)]
    pub modes: Vec<Vec<i64>>,
}

/// Spectral solution of `M u'' = -H u + s(t)` in `M`-orthonormal eigen-coordinates.
struct ModalSolver {
    h: CMat,
    mass: Option<CMat>,
    eig: HermEig,
}

impl ModalSolver {
    fn new(h: CMat, mass: Option<CMat>) -> Result<Self> {
        let mut eig = match &mass {
            Some(m) => linalg::gen_herm_eig(&h, m)?,
            None => linalg::herm_eig(&h),
        };
        let scale = linalg::max_abs(&h).max(1.0);
        for v in eig.values.iter_mut() {
            if *v < -1e-10 * scale {
                return Err(BhlError::Numerical(format!("torus operator has a negative eigenvalue {v:e}")));
            }
            *v = v.max(0.0);
        }
        Ok(ModalSolver { h, mass, eig })
    }

    fn apply_mass(&self, v: &[C]) -> Vec<C> {
        match &self.mass {
            Some(m) => linalg::matvec(m, v),
            None => v.to_vec(),
        }
    }

    fn coords(&self, v: &[C]) -> Vec<C> {
        linalg::matvec(&linalg::adjoint(&self.eig.vectors), v)
    }

    /// `(u, u')` at each `tau`; `momentum = M psi + D* rho`.
    fn evolve(&self, phi: &[C], momentum: &[C], sources: &[(f64, f64, Vec<C>)], taus: &[f64]) -> Vec<(Vec<C>, Vec<C>)> {
        let a = self.coords(&self.apply_mass(phi));
        let b = self.coords(momentum);
        let cs: Vec<(f64, f64, Vec<C>)> = sources.iter().map(|(s0, s1, f)| (*s0, *s1, self.coords(f))).collect();
        taus.iter()
            .map(|&tau| {
                let mut alpha = vec![C::new(0.0, 0.0); a.len()];
                let mut beta = vec![C::new(0.0, 0.0); a.len()];
                for (j, &lam) in self.eig.values.iter().enumerate() {
                    let w = lam.sqrt();
                    alpha[j] = a[j] * (tau * w).cos() + b[j] * (tau * sinc(tau * w));
                    beta[j] = -a[j] * (w * w * tau * sinc(tau * w)) + b[j] * (tau * w).cos();
                    for (s0, s1, c) in &cs {
                        if tau <= *s0 {
                            continue;
                        }
                        let u1 = tau - s0;
                        let u2 = tau - s1.min(tau);
                        let (sum, diff) = (u1 + u2, u1 - u2);
                        alpha[j] += c[j] * (0.5 * sum * diff * sinc(0.5 * sum * w) * sinc(0.5 * diff * w));
                        beta[j] += c[j] * (diff * (0.5 * sum * w).cos() * sinc(0.5 * diff * w));
                    }
                }
                (linalg::matvec(&self.eig.vectors, &alpha), linalg::matvec(&self.eig.vectors, &beta))
            })
            .collect()
    }

    fn energy(&self, u: &[C], du: &[C]) -> f64 {
        let kinetic = linalg::dot(du, &self.apply_mass(du)).re;
        let potential = linalg::dot(u, &linalg::matvec(&self.h, u)).re;
        kinetic + potential
    }
}

fn residue_key(p: &[i64], m: i64) -> Vec<i64> {
    p.iter().map(|x| x.rem_euclid(m)).collect()
}

/// Galerkin matrix on one residue class of `b(D)* F^eps b(D)` (or of `F^eps`
/// itself when `sandwich` is false), where `F^eps(x) = F(M x)`.
fn class_matrix(
    torus: &Torus,
    model: &OperatorModel,
    field: &PeriodicMatrixFunction,
    members: &[usize],
    m: i64,
    sandwich: bool,
) -> CMat {
    let n = model.symbol.n;
    let symbols: Vec<CMat> = members.iter().map(|&p| model.symbol.eval(&torus.xi[p])).collect();
    let mut out = linalg::zeros(n * members.len(), n * members.len());
    for (a, &pa) in members.iter().enumerate() {
        for (b, &pb) in members.iter().enumerate() {
            let d: Vec<i64> = torus.index.indices[pa].iter().zip(&torus.index.indices[pb]).map(|(x, y)| (x - y) / m).collect();
            if let Some(c) = field.coeff_ref(&d) {
                let blk = if sandwich { &(&linalg::adjoint(&symbols[a]) * c) * &symbols[b] } else { c.clone() };
                linalg::set_block(&mut out, a * n, b * n, &blk);
            }
        }
    }
    linalg::hermitize(&out)
}

fn gather(v: &[C], members: &[usize], n: usize) -> Vec<C> {
    members.iter().flat_map(|&p| v[p * n..(p + 1) * n].iter().copied()).collect()
}

fn scatter(dst: &mut [C], src: &[C], members: &[usize], n: usize) {
    for (a, &p) in members.iter().enumerate() {
        dst[p * n..(p + 1) * n].copy_from_slice(&src[a * n..(a + 1) * n]);
    }
}

/// `sum_m F_m w(p - M m)` on the box, with `w` given on the box.
fn multiply_by_scaled_field(torus: &Torus, field: &PeriodicMatrixFunction, w: &[C], m: i64) -> Vec<C> {
    let (rows, cols) = (field.rows, field.cols);
    let mut out = vec![C::new(0.0, 0.0); torus.len() * rows];
    for (p, mp) in torus.index.indices.iter().enumerate() {
        for (mm, c) in &field.coeffs {
            let q: Vec<i64> = mp.iter().zip(mm).map(|(x, y)| x - m * y).collect();
            if let Some(qp) = torus.index.position(&q) {
                let src = &w[qp * cols..(qp + 1) * cols];
                if src.iter().all(|z| *z == C::new(0.0, 0.0)) {
                    continue;
                }
                for r in 0..rows {
                    let mut acc = C::new(0.0, 0.0);
                    for k in 0..cols {
                        acc += c[(r, k)] * src[k];
                    }
                    out[p * rows + r] += acc;
                }
            }
        }
    }
    out
}

fn apply_symbol_on_box(torus: &Torus, model: &OperatorModel, u: &[C]) -> Vec<C> {
    let (mm, n) = (model.symbol.m, model.symbol.n);
    let mut out = vec![C::new(0.0, 0.0); torus.len() * mm];
    for (p, xi) in torus.xi.iter().enumerate() {
        let b = model.symbol.eval(xi);
        let w = linalg::matvec(&b, &u[p * n..(p + 1) * n]);
        out[p * mm..(p + 1) * mm].copy_from_slice(&w);
    }
    out
}

/// The sharp cutoff `Pi_eps` to `xi in M * zone`.
fn cutoff_pi(torus: &Torus, model: &OperatorModel, u: &[C], m: usize) -> Vec<C> {
    let n = model.symbol.n;
    let mut out = u.to_vec();
    for (p, xi) in torus.xi.iter().enumerate() {
        let k: Vec<f64> = xi.iter().map(|x| x / m as f64).collect();
        if !model.lattice.in_zone(&k) {
            out[p * n..(p + 1) * n].iter_mut().for_each(|z| *z = C::new(0.0, 0.0));
        }
    }
    out
}

/// Eigendecomposition route for the Cauchy problem with `eps = 1/inverse_eps`.
pub fn cauchy_solve(
    model: &OperatorModel,
    cell: &CellSolution,
    inverse_eps: usize,
    data: &CauchyData,
    taus: &[f64],
    box_cutoff: usize,
) -> Result<CauchyResult> {
    if inverse_eps == 0 {
        return Err(BhlError::Validation("1/eps must be a positive integer".into()));
    }
    if data.max_mode() >= box_cutoff as i64 {
        return Err(BhlError::Validation(format!(
            "data reaches mode {} but must stay below the box cutoff {box_cutoff}",
            data.max_mode()
        )));
    }
    let n = model.symbol.n;
    let m = inverse_eps as i64;
    let torus = Torus::new(model, box_cutoff);
    let td = TorusData::new(&torus, data, n)?;
    let weighted = model.q.is_some();
    let q_bar = model.q.as_ref().map(|q| q.mean());

    let mut classes: std::collections::BTreeMap<Vec<i64>, Vec<usize>> = std::collections::BTreeMap::new();
    for (p, mp) in torus.index.indices.iter().enumerate() {
        classes.entry(residue_key(mp, m)).or_default().push(p);
    }
    let classes: Vec<Vec<usize>> = classes.into_values().collect();

    // Exact solution, class by class.
    type Traj = Vec<(Vec<C>, Vec<C>)>;
    let per_class: Vec<Result<(Traj, Vec<f64>)>> = classes
        .par_iter()
        .map(|members| {
            let h = class_matrix(&torus, model, &model.g, members, m, true);
            let mass = model.q.as_ref().map(|q| class_matrix(&torus, model, q, members, m, false));
            let solver = ModalSolver::new(h, mass)?;
            let phi = gather(&td.phi, members, n);
            let momentum = add_vec(&solver.apply_mass(&gather(&td.psi, members, n)), &gather(&td.div_rho, members, n));
            let src: Vec<(f64, f64, Vec<C>)> =
                td.sources.iter().map(|(a, b, f)| (*a, *b, gather(f, members, n))).collect();
            let traj = solver.evolve(&phi, &momentum, &src, taus);
            let energies = traj.iter().map(|(u, du)| solver.energy(u, du)).collect();
            Ok((traj, energies))
        })
        .collect();

    let len = torus.len();
    let mut u_eps = vec![vec![C::new(0.0, 0.0); len * n]; taus.len()];
    let mut du_eps = u_eps.clone();
    let mut energy = vec![0.0; taus.len()];
    for (members, res) in classes.iter().zip(per_class) {
        let (traj, en) = res?;
        for (t, (u, du)) in traj.iter().enumerate() {
            scatter(&mut u_eps[t], u, members, n);
            scatter(&mut du_eps[t], du, members, n);
            energy[t] += torus.volume * en[t];
        }
    }

    // Homogenized solution, mode by mode.
    let mut u0 = vec![vec![C::new(0.0, 0.0); len * n]; taus.len()];
    let mut energy0 = vec![0.0; taus.len()];
    let active: Vec<usize> = (0..len)
        .filter(|&p| {
            let nz = |v: &[C]| v[p * n..(p + 1) * n].iter().any(|z| z.norm() > 0.0);
            nz(&td.phi) || nz(&td.psi) || nz(&td.div_rho) || td.sources.iter().any(|(_, _, f)| nz(f))
        })
        .collect();
    for &p in &active {
        let b = model.symbol.eval(&torus.xi[p]);
        let h0 = linalg::hermitize(&(&linalg::mul_adj(&b, &cell.g_eff) * &b));
        let solver = ModalSolver::new(h0, q_bar.clone())?;
        let slice = |v: &[C]| v[p * n..(p + 1) * n].to_vec();
        let momentum = add_vec(&solver.apply_mass(&slice(&td.psi)), &slice(&td.div_rho));
        let src: Vec<(f64, f64, Vec<C>)> = td.sources.iter().map(|(a, b, f)| (*a, *b, slice(f))).collect();
        let traj = solver.evolve(&slice(&td.phi), &momentum, &src, taus);
        for (t, (u, du)) in traj.iter().enumerate() {
            u0[t][p * n..(p + 1) * n].copy_from_slice(u);
            energy0[t] += torus.volume * solver.energy(u, du);
        }
    }

    let eps = 1.0 / inverse_eps as f64;
    let mut rows = Vec::with_capacity(taus.len());
    let mut fields = Vec::with_capacity(taus.len());
    for (t, &tau) in taus.iter().enumerate() {
        let pi_u0 = cutoff_pi(&torus, model, &u0[t], inverse_eps);
        let corr = |src: &[C]| {
            let w = apply_symbol_on_box(&torus, model, src);
            let lw = multiply_by_scaled_field(&torus, &cell.lambda, &w, m);
            add_vec(&u0[t], &lw.iter().map(|z| *z * eps).collect::<Vec<_>>())
        };
        let v_eps = corr(&pi_u0);
        let v_eps_without_pi = corr(&u0[t]);
        let flux = multiply_by_scaled_field(&torus, &model.g, &apply_symbol_on_box(&torus, model, &u_eps[t]), m);
        let flux_approx =
            multiply_by_scaled_field(&torus, &cell.g_tilde, &apply_symbol_on_box(&torus, model, &pi_u0), m);
        rows.push(CauchyRow {
            tau,
            u_eps_l2: torus.l2(&u_eps[t], n),
            err_u0_l2: torus.l2(&sub_vec(&u_eps[t], &u0[t]), n),
            err_u0_h1: torus.h1(&sub_vec(&u_eps[t], &u0[t]), n),
            err_v_h1: torus.h1(&sub_vec(&u_eps[t], &v_eps), n),
            err_v_without_pi_h1: torus.h1(&sub_vec(&u_eps[t], &v_eps_without_pi), n),
            flux_err_l2: torus.l2(&sub_vec(&flux, &flux_approx), model.symbol.m),
            energy: energy[t],
            energy_homogenized: energy0[t],
        });
        fields.push(CauchyFields {
            tau,
            u_eps: u_eps[t].clone(),
            u_eps_velocity: du_eps[t].clone(),
            u0: u0[t].clone(),
            v_eps,
            v_eps_without_pi,
            flux,
            flux_approx,
        });
    }
    let energy_drift = if td.sources.is_empty() {
        let e0 = initial_energy(&torus, model, &classes, &td, m)?;
        Some(energy.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs().max(f64::MIN_POSITIVE))
    } else {
        None
    };
    Ok(CauchyResult {
        eps,
        inverse_eps,
        box_cutoff,
        weighted,
        rows,
        energy_drift,
        fields,
        modes: torus.index.indices.clone(),
    })
}

/// `E(0) = <M u'(0), u'(0)> + a[phi, phi]` from the data directly.
fn initial_energy(torus: &Torus, model: &OperatorModel, classes: &[Vec<usize>], td: &TorusData, m: i64) -> Result<f64> {
    let n = model.symbol.n;
    let mut e = 0.0;
    for members in classes {
        let h = class_matrix(torus, model, &model.g, members, m, true);
        let phi = gather(&td.phi, members, n);
        let psi = gather(&td.psi, members, n);
        let rho = gather(&td.div_rho, members, n);
        let kinetic = match &model.q {
            Some(q) => {
                let mass = class_matrix(torus, model, q, members, m, false);
                // u'(0) = psi + M^{-1} D* rho, so <M u', u'> = <M psi, psi> + 2 Re<rho, psi> + <M^{-1} rho, rho>.
                let mpsi = linalg::matvec(&mass, &psi);
                let minv_rho = linalg::matvec(&linalg::inverse(&mass), &rho);
                linalg::dot(&psi, &mpsi).re + 2.0 * linalg::dot(&rho, &psi).re + linalg::dot(&rho, &minv_rho).re
            }
            None => {
                let v = add_vec(&psi, &rho);
                linalg::dot(&v, &v).re
            }
        };
        e += kinetic + linalg::dot(&phi, &linalg::matvec(&h, &phi)).re;
    }
    Ok(torus.volume * e)
}

/// Grid solution of the leapfrog oracle, as Fourier coefficients on the box.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LeapfrogResult {
    pub dt: f64,
    pub steps: usize,
    pub grid: usize,
    #[serde(skip)]
    pub u: Vec<C>,
    /// Relative drift of the discrete staggered energy (zero sources only).
    pub energy_drift: Option<f64>,
}

/// Smallest `2^a 3^b 5^c` not below `n`.
fn smooth_size(n: usize) -> usize {
    let mut k = n.max(1);
    loop {
        let mut r = k;
        for f in [2, 3, 5] {
            while r.is_multiple_of(f) {
                r /= f;
            }
        }
        if r == 1 {
            return k;
        }
        k += 1;
    }
}

/// Pseudo-spectral operator `b(D)* g^eps b(D)` on a grid, dealiased to the box.
struct GridOperator<'a> {
    model: &'a OperatorModel,
    torus: &'a Torus,
    fft: GridFft,
    grid: usize,
    positions: Vec<usize>,
    symbols: Vec<CMat>,
    /// Entries of `g(M x)` on the grid, `g_grid[r * m + c][x]`.
    g_grid: Vec<Vec<Complex64>>,
    /// Entries of `Q(M x)^{-1}` on the grid.
    q_inv_grid: Option<Vec<Vec<Complex64>>>,
}

impl<'a> GridOperator<'a> {
    fn new(model: &'a OperatorModel, torus: &'a Torus, m: usize) -> Self {
        let bw = model.g.bandwidth().max(model.q.as_ref().map_or(0, |q| q.bandwidth()));
        let grid = smooth_size(2 * torus.index.cutoff + m * bw + 2);
        let fft = GridFft::new(model.lattice.dim, grid);
        let positions = torus.index.indices.iter().map(|p| wrap_position(p, grid)).collect();
        let symbols = torus.xi.iter().map(|xi| model.symbol.eval(xi)).collect();
        let sample = |f: &PeriodicMatrixFunction| -> Vec<Vec<Complex64>> {
            let mut out = Vec::with_capacity(f.rows * f.cols);
            for r in 0..f.rows {
                for c in 0..f.cols {
                    let mut buf = vec![Complex64::new(0.0, 0.0); fft.len()];
                    for (mm, v) in &f.coeffs {
                        let scaled: Vec<i64> = mm.iter().map(|x| x * m as i64).collect();
                        let z = v[(r, c)];
                        buf[wrap_position(&scaled, grid)] += Complex64::new(z.re, z.im);
                    }
                    fft.process(&mut buf, true);
                    out.push(buf);
                }
            }
            out
        };
        let g_grid = sample(&model.g);
        let q_inv_grid = model.q.as_ref().map(|q| {
            let vals = sample(q);
            let n = q.rows;
            let mut inv = vec![vec![Complex64::new(0.0, 0.0); fft.len()]; n * n];
            for x in 0..fft.len() {
                let mat = faer::Mat::from_fn(n, n, |i, j| {
                    let z = vals[i * n + j][x];
                    C::new(z.re, z.im)
                });
                let mi = linalg::inverse(&mat);
                for i in 0..n {
                    for j in 0..n {
                        inv[i * n + j][x] = Complex64::new(mi[(i, j)].re, mi[(i, j)].im);
                    }
                }
            }
            inv
        });
        GridOperator { model, torus, fft, grid, positions, symbols, g_grid, q_inv_grid }
    }

    fn to_grid(&self, coeffs: &[C], comps: usize) -> Vec<Vec<Complex64>> {
        (0..comps)
            .map(|c| {
                let mut buf = vec![Complex64::new(0.0, 0.0); self.fft.len()];
                for (p, &pos) in self.positions.iter().enumerate() {
                    let z = coeffs[p * comps + c];
                    buf[pos] = Complex64::new(z.re, z.im);
                }
                self.fft.process(&mut buf, true);
                buf
            })
            .collect()
    }

    fn from_grid(&self, mut fields: Vec<Vec<Complex64>>) -> Vec<C> {
        let comps = fields.len();
        let norm = 1.0 / self.fft.len() as f64;
        let mut out = vec![C::new(0.0, 0.0); self.torus.len() * comps];
        for (c, buf) in fields.iter_mut().enumerate() {
            self.fft.process(buf, false);
            for (p, &pos) in self.positions.iter().enumerate() {
                out[p * comps + c] = C::new(buf[pos].re * norm, buf[pos].im * norm);
            }
        }
        out
    }

    fn pointwise(&self, mats: &[Vec<Complex64>], size: usize, fields: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        (0..size)
            .map(|r| {
                let mut acc = vec![Complex64::new(0.0, 0.0); self.fft.len()];
                for c in 0..size {
                    let g = &mats[r * size + c];
                    for ((a, gv), f) in acc.iter_mut().zip(g).zip(&fields[c]) {
                        *a += gv * f;
                    }
                }
                acc
            })
            .collect()
    }

    fn apply(&self, u: &[C]) -> Vec<C> {
        let (mm, n) = (self.model.symbol.m, self.model.symbol.n);
        let mut w = vec![C::new(0.0, 0.0); self.torus.len() * mm];
        for (p, b) in self.symbols.iter().enumerate() {
            let v = linalg::matvec(b, &u[p * n..(p + 1) * n]);
            w[p * mm..(p + 1) * mm].copy_from_slice(&v);
        }
        let grid_w = self.to_grid(&w, mm);
        let flux = self.from_grid(self.pointwise(&self.g_grid, mm, &grid_w));
        let mut out = vec![C::new(0.0, 0.0); self.torus.len() * n];
        for (p, b) in self.symbols.iter().enumerate() {
            let v = linalg::matvec(&linalg::adjoint(b), &flux[p * mm..(p + 1) * mm]);
            out[p * n..(p + 1) * n].copy_from_slice(&v);
        }
        out
    }

    fn apply_inverse_mass(&self, r: &[C]) -> Vec<C> {
        match &self.q_inv_grid {
            None => r.to_vec(),
            Some(qi) => {
                let n = self.model.symbol.n;
                self.from_grid(self.pointwise(qi, n, &self.to_grid(r, n)))
            }
        }
    }
}

/// Explicit central-difference time stepping with the pseudo-spectral operator.
pub fn leapfrog_oracle(
    model: &OperatorModel,
    inverse_eps: usize,
    data: &CauchyData,
    tau: f64,
    dt: f64,
    box_cutoff: usize,
) -> Result<LeapfrogResult> {
    if inverse_eps == 0 {
        return Err(BhlError::Validation("1/eps must be a positive integer".into()));
    }
    if !(dt > 0.0) || !(tau >= 0.0) {
        return Err(BhlError::Validation("leapfrog needs dt > 0 and tau >= 0".into()));
    }
    let n = model.symbol.n;
    let torus = Torus::new(model, box_cutoff);
    let td = TorusData::new(&torus, data, n)?;
    let op = GridOperator::new(model, &torus, inverse_eps);

    let g_sup = model.g.sup_norm(64);
    let q_min = match &model.q {
        Some(q) => q.evaluate_on_grid(64).iter().map(linalg::min_eigenvalue).fold(f64::INFINITY, f64::min),
        None => 1.0,
    };
    let cell_len = model
        .lattice
        .basis
        .iter()
        .map(|a| a.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min);
    let h = cell_len / op.grid as f64;
    let limit = 0.5 * h / (g_sup / q_min).sqrt();
    if dt > limit {
        return Err(BhlError::Precondition(format!("CFL violated: dt = {dt:e} exceeds 0.5 h / sqrt(|g| / min Q) = {limit:e}")));
    }

    let steps = (tau / dt).ceil().max(1.0) as usize;
    let dt = tau / steps as f64;
    let source_at = |t: f64| -> Vec<C> {
        let mut s = vec![C::new(0.0, 0.0); torus.len() * n];
        for (a, b, f) in &td.sources {
            if t >= *a && t < *b {
                s = add_vec(&s, f);
            }
        }
        s
    };
    let accel = |u: &[C], au: &[C], t: f64| -> Vec<C> {
        let _ = u;
        let r = sub_vec(&source_at(t), au);
        op.apply_inverse_mass(&r)
    };
    let v0 = add_vec(&td.psi, &op.apply_inverse_mass(&td.div_rho));
    let mut prev = td.phi.clone();
    let mut a_prev = op.apply(&prev);
    let acc0 = accel(&prev, &a_prev, 0.0);
    let mut cur: Vec<C> = (0..prev.len()).map(|i| prev[i] + v0[i] * dt + acc0[i] * (0.5 * dt * dt)).collect();
    let mut energies = Vec::with_capacity(steps);
    for step in 1..steps {
        let a_cur = op.apply(&cur);
        let diff: Vec<C> = cur.iter().zip(&prev).map(|(a, b)| (*a - *b) / dt).collect();
        energies.push(linalg::dot(&diff, &diff).re + linalg::dot(&a_cur, &prev).re);
        let acc = accel(&cur, &a_cur, step as f64 * dt);
        let next: Vec<C> = (0..cur.len()).map(|i| cur[i] * 2.0 - prev[i] + acc[i] * (dt * dt)).collect();
        prev = std::mem::replace(&mut cur, next);
        a_prev = a_cur;
    }
    let _ = a_prev;
    let energy_drift = if td.sources.is_empty() && model.q.is_none() && !energies.is_empty() {
        let e0 = energies[0];
        Some(energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs().max(f64::MIN_POSITIVE))
    } else {
        None
    };
    Ok(LeapfrogResult { dt, steps, grid: op.grid, u: cur, energy_drift })
}

/// `L2` norm on the box of the difference between two coefficient vectors.
pub fn box_l2_difference(model: &OperatorModel, box_cutoff: usize, a: &[C], b: &[C]) -> f64 {
    let torus = Torus::new(model, box_cutoff);
    torus.l2(&sub_vec(a, b), model.symbol.n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::solve_corrector;
    use crate::coefficients::SymbolB;
    use crate::lattice::build_lattice;
    use std::collections::BTreeMap;

    fn scalar_model(coeffs: &[(i64, f64)]) -> OperatorModel {
        let mut c = BTreeMap::new();
        for &(m, v) in coeffs {
            c.insert(vec![m], linalg::scaled_identity(1, v));
        }
        OperatorModel {
            lattice: build_lattice(&[vec![1.0]]).unwrap(),
            symbol: SymbolB::gradient(1),
            g: PeriodicMatrixFunction::new(1, 1, 1, c, true).unwrap(),
            q: None,
        }
    }

    fn one_mode(p: i64, v: f64) -> Vec<ModeValue> {
        vec![ModeValue { mode: vec![p], value: vec![[v, 0.0]] }]
    }

    #[test]
    fn constant_coefficients_single_mode_is_exact_cosine() {
        let model = scalar_model(&[(0, 3.0)]);
        let cell = solve_corrector(&model, 2).unwrap();
        let data = CauchyData { phi: one_mode(2, 1.0), ..Default::default() };
        let taus = [0.0, 0.3, 1.0];
        let res = cauchy_solve(&model, &cell, 4, &data, &taus, 6).unwrap();
        let pos = FourierIndexSet::new(1, 6).position(&[2]).unwrap();
        let omega = (3.0f64).sqrt() * 4.0 * std::f64::consts::PI;
        for (f, &tau) in res.fields.iter().zip(&taus) {
            assert!((f.u_eps[pos].re - (tau * omega).cos()).abs() < 1e-13);
            assert!(f.u_eps.iter().enumerate().all(|(i, z)| i == pos || z.norm() < 1e-14));
        }
        assert!(res.rows.iter().all(|r| r.err_u0_l2 < 1e-13 && r.err_v_h1 < 1e-12));
        assert!(res.energy_drift.unwrap() < 1e-13);
    }

    #[test]
    fn duhamel_term_for_a_constant_source() {
        // u'' = -w^2 u + 1 on a single mode from rest: u = (1 - cos w t) / w^2.
        let model = scalar_model(&[(0, 1.0)]);
        let cell = solve_corrector(&model, 2).unwrap();
        let piece = SourcePiece { start: 0.0, end: 10.0, f: one_mode(1, 1.0), g: vec![] };
        let data = CauchyData { sources: vec![piece], ..Default::default() };
        let res = cauchy_solve(&model, &cell, 2, &data, &[0.7], 3).unwrap();
        let pos = FourierIndexSet::new(1, 3).position(&[1]).unwrap();
        let w = 2.0 * std::f64::consts::PI;
        assert!((res.fields[0].u_eps[pos].re - (1.0 - (0.7 * w).cos()) / (w * w)).abs() < 1e-14);
        assert!(res.energy_drift.is_none());
    }

    #[test]
    fn leapfrog_is_second_order_in_time() {
        let model = scalar_model(&[(0, 2.0)]);
        let data = CauchyData { phi: one_mode(1, 1.0), ..Default::default() };
        let pos = FourierIndexSet::new(1, 3).position(&[1]).unwrap();
        let exact = (2.0f64.sqrt() * 2.0 * std::f64::consts::PI).cos();
        let err = |dt: f64| (leapfrog_oracle(&model, 2, &data, 1.0, dt, 3).unwrap().u[pos].re - exact).abs();
        let (e1, e2) = (err(2e-3), err(1e-3));
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.1, "order {order}");
    }

    #[test]
    fn leapfrog_rejects_cfl_violation() {
        let model = scalar_model(&[(0, 2.0)]);
        let data = CauchyData { phi: one_mode(1, 1.0), ..Default::default() };
        assert!(matches!(leapfrog_oracle(&model, 2, &data, 1.0, 0.5, 3), Err(BhlError::Precondition(_))));
    }

    #[test]
    fn data_above_cutoff_is_rejected() {
        let model = scalar_model(&[(0, 2.0)]);
        let cell = solve_corrector(&model, 2).unwrap();
        let data = CauchyData { psi: one_mode(5, 1.0), ..Default::default() };
        assert!(cauchy_solve(&model, &cell, 2, &data, &[1.0], 5).is_err());
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(7), 8);
        assert_eq!(smooth_size(31), 32);
        assert_eq!(smooth_size(121), 125);
    }
}
