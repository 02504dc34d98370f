//! Periodic matrix fields, the symbol `b(xi)` and the validated operator model.

use std::collections::BTreeMap;

use faer::Mat;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{BhlError, Result};
use crate::lattice::{cube_indices, unit_directions, FourierIndexSet, LatticeInfo};
use crate::linalg::{self, CMat, C};

/// A lattice-periodic matrix field given by its Fourier coefficients,
/// `F(x) = sum_m F_m exp(i <b(m), x>)`.
#[derive(Clone, Debug)]
pub struct PeriodicMatrixFunction {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub coeffs: BTreeMap<Vec<i64>, CMat>,
    pub hermitian: bool,
}

const HERMITIAN_COEFF_TOL: f64 = 1e-14;

impl PeriodicMatrixFunction {
    pub fn new(dim: usize, rows: usize, cols: usize, coeffs: BTreeMap<Vec<i64>, CMat>, hermitian: bool) -> Result<Self> {
        for (m, c) in &coeffs {
            if m.len() != dim {
                return Err(BhlError::Validation(format!("multi-index {m:?} has wrong length for d = {dim}")));
            }
            if c.nrows() != rows || c.ncols() != cols {
                return Err(BhlError::Validation(format!("coefficient at {m:?} has wrong shape")));
            }
        }
        let f = PeriodicMatrixFunction { rows, cols, dim, coeffs, hermitian };
        if hermitian {
            if rows != cols {
                return Err(BhlError::Validation("a Hermitian field must be square".into()));
            }
            let scale = f.coeffs.values().map(linalg::max_abs).fold(1.0, f64::max);
            for (m, c) in &f.coeffs {
                let neg: Vec<i64> = m.iter().map(|x| -x).collect();
                let d = linalg::max_abs(&(&f.coeff(&neg) - linalg::adjoint(c)));
                if d > HERMITIAN_COEFF_TOL * scale {
                    return Err(BhlError::Validation(format!(
                        "coefficient at {neg:?} is not the adjoint of the one at {m:?} (defect {d:e})"
                    )));
                }
            }
        }
        Ok(f)
    }

    pub fn constant(dim: usize, value: CMat, hermitian: bool) -> Self {
        let mut coeffs = BTreeMap::new();
        let (rows, cols) = (value.nrows(), value.ncols());
        coeffs.insert(vec![0; dim], value);
        PeriodicMatrixFunction { rows, cols, dim, coeffs, hermitian }
    }

    pub fn zero(dim: usize, rows: usize, cols: usize) -> Self {
        PeriodicMatrixFunction { rows, cols, dim, coeffs: BTreeMap::new(), hermitian: false }
    }

    pub fn coeff(&self, m: &[i64]) -> CMat {
        self.coeffs.get(m).cloned().unwrap_or_else(|| linalg::zeros(self.rows, self.cols))
    }

    pub fn coeff_ref(&self, m: &[i64]) -> Option<&CMat> {
        self.coeffs.get(m)
    }

    /// Largest max-norm of a stored multi-index.
    pub fn bandwidth(&self) -> usize {
        self.coeffs.keys().map(|m| FourierIndexSet::max_norm(m) as usize).max().unwrap_or(0)
    }

    pub fn mean(&self) -> CMat {
        self.coeff(&vec![0; self.dim])
    }

    pub fn is_constant(&self, tol: f64) -> bool {
        self.coeffs.iter().all(|(m, c)| m.iter().all(|&x| x == 0) || linalg::max_abs(c) <= tol)
    }

    /// Value at fractional cell coordinates `s` (so `x = sum s_j a_j`).
    pub fn evaluate_frac(&self, s: &[f64]) -> CMat {
        let mut out = linalg::zeros(self.rows, self.cols);
        for (m, c) in &self.coeffs {
            let phase: f64 = m.iter().zip(s).map(|(&mi, &si)| 2.0 * std::f64::consts::PI * mi as f64 * si).sum();
            let e = linalg::cis(phase);
            for j in 0..self.cols {
                for i in 0..self.rows {
                    out[(i, j)] += c[(i, j)] * e;
                }
            }
        }
        out
    }

    /// Samples at the grid points `x = sum_j (i_j / P) a_j`, listed with the
    /// first axis varying slowest.
    pub fn evaluate_on_grid(&self, per_axis: usize) -> Vec<CMat> {
        let p = per_axis.max(1);
        let total = p.pow(self.dim as u32);
        let mut out = vec![linalg::zeros(self.rows, self.cols); total];
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        for r in 0..self.rows {
            for c in 0..self.cols {
                buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
                for (m, mat) in &self.coeffs {
                    let pos = wrap_position(m, p);
                    let v = mat[(r, c)];
                    buf[pos] += Complex64::new(v.re, v.im);
                }
                fft_nd(&mut buf, self.dim, p, true);
                for (o, z) in out.iter_mut().zip(&buf) {
                    o[(r, c)] = C::new(z.re, z.im);
                }
            }
        }
        out
    }

    /// Fourier coefficients with max-norm at most `cutoff` from grid samples.
    pub fn from_grid(dim: usize, samples: &[CMat], per_axis: usize, cutoff: usize, hermitian: bool) -> Self {
        let rows = samples[0].nrows();
        let cols = samples[0].ncols();
        let total = samples.len();
        let mut coeffs: BTreeMap<Vec<i64>, CMat> = BTreeMap::new();
        let idx = cube_indices(dim, cutoff as i64);
        for m in &idx {
            coeffs.insert(m.clone(), linalg::zeros(rows, cols));
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        for r in 0..rows {
            for c in 0..cols {
                for (b, s) in buf.iter_mut().zip(samples) {
                    *b = Complex64::new(s[(r, c)].re, s[(r, c)].im);
                }
                fft_nd(&mut buf, dim, per_axis, false);
                for m in &idx {
                    let z = buf[wrap_position(m, per_axis)] / total as f64;
                    coeffs.get_mut(m).unwrap()[(r, c)] = C::new(z.re, z.im);
                }
            }
        }
        let mut f = PeriodicMatrixFunction { rows, cols, dim, coeffs, hermitian };
        if hermitian {
            f = f.hermitian_part();
        }
        f
    }

    /// Pointwise `(F + F*) / 2`.
    pub fn hermitian_part(&self) -> Self {
        let adj = self.adjoint();
        let mut sum = self.add(&adj);
        sum = sum.scale(linalg::re(0.5));
        sum.hermitian = true;
        sum
    }

    /// Pointwise adjoint field.
    pub fn adjoint(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .map(|(m, c)| (m.iter().map(|x| -x).collect(), linalg::adjoint(c)))
            .collect();
        PeriodicMatrixFunction { rows: self.cols, cols: self.rows, dim: self.dim, coeffs, hermitian: self.hermitian }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut coeffs = self.coeffs.clone();
        for (m, c) in &other.coeffs {
            match coeffs.get_mut(m) {
                Some(e) => linalg::add_assign(e, c),
                None => {
                    coeffs.insert(m.clone(), c.clone());
                }
            }
        }
        PeriodicMatrixFunction { rows: self.rows, cols: self.cols, dim: self.dim, coeffs, hermitian: self.hermitian && other.hermitian }
    }

    pub fn scale(&self, s: C) -> Self {
        let coeffs = self.coeffs.iter().map(|(m, c)| (m.clone(), linalg::scale(c, s))).collect();
        PeriodicMatrixFunction { rows: self.rows, cols: self.cols, dim: self.dim, coeffs, hermitian: self.hermitian && s.im == 0.0 }
    }

    /// `L F(x) R` for constant matrices.
    pub fn sandwich(&self, left: &CMat, right: &CMat) -> Self {
        let coeffs = self.coeffs.iter().map(|(m, c)| (m.clone(), &(left * c) * right)).collect();
        PeriodicMatrixFunction { rows: left.nrows(), cols: right.ncols(), dim: self.dim, coeffs, hermitian: false }
    }

    pub fn add_constant(&self, c: &CMat) -> Self {
        self.add(&PeriodicMatrixFunction::constant(self.dim, c.clone(), false))
    }

    /// Pointwise product `F(x) G(x)` (exact convolution of coefficients).
    pub fn mul(&self, other: &Self) -> Self {
        let mut coeffs: BTreeMap<Vec<i64>, CMat> = BTreeMap::new();
        for (m1, a) in &self.coeffs {
            for (m2, b) in &other.coeffs {
                let m: Vec<i64> = m1.iter().zip(m2).map(|(x, y)| x + y).collect();
                let p = a * b;
                match coeffs.get_mut(&m) {
                    Some(e) => linalg::add_assign(e, &p),
                    None => {
                        coeffs.insert(m, p);
                    }
                }
            }
        }
        PeriodicMatrixFunction { rows: self.rows, cols: other.cols, dim: self.dim, coeffs, hermitian: false }
    }

    /// Cell mean of `F(x) G(x)` by Parseval.
    pub fn mean_product(&self, other: &Self) -> CMat {
        let mut out = linalg::zeros(self.rows, other.cols);
        for (m, a) in &self.coeffs {
            let neg: Vec<i64> = m.iter().map(|x| -x).collect();
            if let Some(b) = other.coeffs.get(&neg) {
                linalg::add_assign(&mut out, &(a * b));
            }
        }
        out
    }

    /// Drops coefficients with max-norm above `cutoff`.
    pub fn truncate(&self, cutoff: usize) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .filter(|(m, _)| FourierIndexSet::max_norm(m) as usize <= cutoff)
            .map(|(m, c)| (m.clone(), c.clone()))
            .collect();
        PeriodicMatrixFunction { rows: self.rows, cols: self.cols, dim: self.dim, coeffs, hermitian: self.hermitian }
    }

    /// Sum over coefficients of squared Frobenius norms (the cell mean of `|F|^2`).
    pub fn l2_mean_square(&self) -> f64 {
        self.coeffs.values().map(|c| linalg::frobenius(c).powi(2)).sum()
    }

    /// Max over a grid of the pointwise spectral norm.
    pub fn sup_norm(&self, per_axis: usize) -> f64 {
        self.evaluate_on_grid(per_axis).iter().map(linalg::spectral_norm).fold(0.0, f64::max)
    }
}

/// Linear position of a multi-index wrapped modulo `p` on a tensor grid.
pub fn wrap_position(m: &[i64], p: usize) -> usize {
    let pi = p as i64;
    m.iter().fold(0usize, |acc, &x| acc * p + x.rem_euclid(pi) as usize)
}

/// Planned tensor FFT over a `p^dim` grid stored first-axis-slowest.
pub struct GridFft {
    dim: usize,
    p: usize,
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl GridFft {
    pub fn new(dim: usize, p: usize) -> Self {
        let mut planner = FftPlanner::new();
        GridFft { dim, p, forward: planner.plan_fft_forward(p), inverse: planner.plan_fft_inverse(p) }
    }

    pub fn len(&self) -> usize {
        self.p.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.p == 0
    }

    /// `inverse = true` computes `sum_k X_k exp(+2 pi i k n / p)` without normalization.
    pub fn process(&self, buf: &mut [Complex64], inverse: bool) {
        let fft = if inverse { &self.inverse } else { &self.forward };
        let p = self.p;
        let total = buf.len();
        let mut line = vec![Complex64::new(0.0, 0.0); p];
        for axis in 0..self.dim {
            let stride = p.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                for chunk in buf.chunks_mut(p) {
                    fft.process(chunk);
                }
                continue;
            }
            for start in 0..total {
                if !(start / stride).is_multiple_of(p) {
                    continue;
                }
                for i in 0..p {
                    line[i] = buf[start + i * stride];
                }
                fft.process(&mut line);
                for i in 0..p {
                    buf[start + i * stride] = line[i];
                }
            }
        }
    }
}

/// One-shot tensor FFT; see [`GridFft::process`].
pub fn fft_nd(buf: &mut [Complex64], dim: usize, p: usize, inverse: bool) {
    GridFft::new(dim, p).process(buf, inverse);
}

/// Constant matrices `b_1..b_d` defining `b(xi) = sum_l xi_l b_l`.
#[derive(Clone, Debug)]
pub struct SymbolB {
    pub dim: usize,
    pub m: usize,
    pub n: usize,
    pub b: Vec<CMat>,
}

impl SymbolB {
    pub fn new(b: Vec<CMat>) -> Result<Self> {
        if b.is_empty() {
            return Err(BhlError::Validation("symbol needs at least one matrix".into()));
        }
        let (m, n) = (b[0].nrows(), b[0].ncols());
        if b.iter().any(|x| x.nrows() != m || x.ncols() != n) {
            return Err(BhlError::Validation("symbol matrices must share one shape".into()));
        }
        if m < n {
            return Err(BhlError::Validation(format!("symbol must have m >= n, got m = {m}, n = {n}")));
        }
        Ok(SymbolB { dim: b.len(), m, n, b })
    }

    pub fn eval(&self, xi: &[f64]) -> CMat {
        let mut out = linalg::zeros(self.m, self.n);
        for (l, &x) in xi.iter().enumerate() {
            if x != 0.0 {
                for j in 0..self.n {
                    for i in 0..self.m {
                        out[(i, j)] += self.b[l][(i, j)] * x;
                    }
                }
            }
        }
        out
    }

    /// Acoustics symbol `b(D) = D`: `b_l = e_l` as a `d x 1` column.
    pub fn gradient(dim: usize) -> Self {
        let b = (0..dim).map(|l| Mat::from_fn(dim, 1, |i, _| linalg::re(if i == l { 1.0 } else { 0.0 }))).collect();
        SymbolB { dim, m: dim, n: 1, b }
    }

    /// Planar elasticity symbol with rows `(xi1, 0), (xi2/2, xi1/2), (0, xi2)`.
    pub fn plane_strain() -> Self {
        let b1 = linalg::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 0.5], vec![0.0, 0.0]]);
        let b2 = linalg::from_real_rows(&[vec![0.0, 0.0], vec![0.5, 0.0], vec![0.0, 1.0]]);
        SymbolB { dim: 2, m: 3, n: 2, b: vec![b1, b2] }
    }

    /// Hill-body factorization in the plane: rows `(xi1, xi2)` and `(xi2, -xi1)`.
    pub fn hill() -> Self {
        let b1 = linalg::from_real_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]);
        let b2 = linalg::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        SymbolB { dim: 2, m: 2, n: 2, b: vec![b1, b2] }
    }

    /// `(alpha0, alpha1)`: extreme eigenvalues of `b(theta)* b(theta)` over sampled directions.
    pub fn alphas(&self, sphere_samples: usize) -> (f64, f64) {
        let dirs = unit_directions(self.dim, sphere_samples);
        let mut a0 = f64::INFINITY;
        let mut a1 = 0.0f64;
        for th in dirs {
            let bt = self.eval(&th);
            let ev = linalg::herm_eigenvalues(&linalg::mul_adj(&bt, &bt));
            a0 = a0.min(ev[0]);
            a1 = a1.max(*ev.last().unwrap());
        }
        (a0, a1)
    }
}

/// The operator `b(D)* g(x) b(D)` with optional weight `Q(x)`.
#[derive(Clone, Debug)]
pub struct OperatorModel {
    pub lattice: LatticeInfo,
    pub symbol: SymbolB,
    pub g: PeriodicMatrixFunction,
    pub q: Option<PeriodicMatrixFunction>,
}

/// Constants extracted by [`validate_model`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub alpha0: f64,
    pub alpha1: f64,
    pub g_sup: f64,
    pub g_inv_sup: f64,
    pub q_sup: Option<f64>,
    pub q_inv_sup: Option<f64>,
    /// `|f|_inf` and `|f^{-1}|_inf` for `f = Q^{-1/2}` (both 1 without a weight).
    pub f_sup: f64,
    pub f_inv_sup: f64,
    pub c_star_hat: f64,
    pub delta_hat: f64,
    pub t0_hat: f64,
    /// Weighted counterparts (equal to the hatted ones without a weight).
    pub c_star: f64,
    pub delta: f64,
    pub t0: f64,
    pub g_min_eig: f64,
    pub per_axis: usize,
    pub sphere_samples: usize,
}

pub const DEFAULT_VALIDATION_GRID: usize = 64;
pub const DEFAULT_SPHERE_SAMPLES: usize = 256;

pub fn validate_model(model: &OperatorModel, per_axis: usize, sphere_samples: usize) -> Result<ValidationReport> {
    if per_axis < 8 {
        return Err(BhlError::Validation("validation grid needs at least 8 points per axis".into()));
    }
    let d = model.lattice.dim;
    if d >= 2 && sphere_samples < 16 {
        return Err(BhlError::Validation("at least 16 sphere samples are required for d >= 2".into()));
    }
    if model.symbol.dim != d || model.g.dim != d {
        return Err(BhlError::Validation("dimension mismatch between lattice, symbol and g".into()));
    }
    let (m, n) = (model.symbol.m, model.symbol.n);
    if model.g.rows != m || model.g.cols != m {
        return Err(BhlError::Validation(format!("g must be {m} x {m}")));
    }
    if !model.g.hermitian {
        return Err(BhlError::Validation("g must be flagged Hermitian".into()));
    }
    let (alpha0, alpha1) = model.symbol.alphas(sphere_samples);
    if alpha0 <= 1e-10 {
        return Err(BhlError::Validation(format!("symbol is rank deficient (alpha0 = {alpha0:e})")));
    }
    let (g_min, g_sup, g_inv_sup) = field_bounds(&model.g, per_axis);
    if g_min <= 0.0 {
        return Err(BhlError::Validation(format!("g is not positive definite (min eigenvalue {g_min:e})")));
    }
    let (q_sup, q_inv_sup, f_sup, f_inv_sup) = match &model.q {
        Some(q) => {
            if q.rows != n || q.cols != n || !q.hermitian {
                return Err(BhlError::Validation(format!("Q must be a Hermitian {n} x {n} field")));
            }
            let (q_min, q_sup, q_inv_sup) = field_bounds(q, per_axis);
            if q_min <= 0.0 {
                return Err(BhlError::Validation(format!("Q is not positive definite (min eigenvalue {q_min:e})")));
            }
            // f = Q^{-1/2}: |f| = |Q^{-1}|^{1/2}, |f^{-1}| = |Q|^{1/2}.
            (Some(q_sup), Some(q_inv_sup), q_inv_sup.sqrt(), q_sup.sqrt())
        }
        None => (None, None, 1.0, 1.0),
    };
    let r0 = model.lattice.r0;
    let c_star_hat = alpha0 / g_inv_sup;
    let delta_hat = c_star_hat * r0 * r0 / 4.0;
    let t0_hat = 0.5 * r0 * (alpha0 / alpha1).sqrt() / (g_sup * g_inv_sup).sqrt();
    let c_star = alpha0 / (f_inv_sup * f_inv_sup * g_inv_sup);
    let delta = c_star * r0 * r0 / 4.0;
    let t0 = 0.5 * r0 * (alpha0 / alpha1).sqrt() / ((g_sup * g_inv_sup).sqrt() * f_sup * f_inv_sup);
    Ok(ValidationReport {
        alpha0,
        alpha1,
        g_sup,
        g_inv_sup,
        q_sup,
        q_inv_sup,
        f_sup,
        f_inv_sup,
        c_star_hat,
        delta_hat,
        t0_hat,
        c_star,
        delta,
        t0,
        g_min_eig: g_min,
        per_axis,
        sphere_samples,
    })
}

/// (min eigenvalue, sup of norm, sup of inverse norm) over the grid.
fn field_bounds(f: &PeriodicMatrixFunction, per_axis: usize) -> (f64, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for s in f.evaluate_on_grid(per_axis) {
        let ev = linalg::herm_eigenvalues(&s);
        lo = lo.min(ev[0]);
        hi = hi.max(ev.iter().fold(0.0f64, |a, &b| a.max(b.abs())));
    }
    let inv = if lo > 0.0 { 1.0 / lo } else { f64::INFINITY };
    (lo, hi, inv)
}

/// Coefficients of `Q^{-1/2}` up to `cutoff`, from pointwise Hermitian square roots.
pub fn inverse_sqrt_field(q: &PeriodicMatrixFunction, cutoff: usize) -> PeriodicMatrixFunction {
    let per_axis = (8 * cutoff + 1).max(64);
    let samples: Vec<CMat> = q.evaluate_on_grid(per_axis).iter().map(linalg::psd_inv_sqrt).collect();
    PeriodicMatrixFunction::from_grid(q.dim, &samples, per_axis, cutoff, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_lattice;
    use crate::linalg::{cx, re};
    use proptest::prelude::*;

    fn cos_field() -> PeriodicMatrixFunction {
        let mut c = BTreeMap::new();
        c.insert(vec![0], linalg::scaled_identity(1, 2.0));
        c.insert(vec![1], linalg::scaled_identity(1, 0.5));
        c.insert(vec![-1], linalg::scaled_identity(1, 0.5));
        PeriodicMatrixFunction::new(1, 1, 1, c, true).unwrap()
    }

    #[test]
    fn constant_samples() {
        let f = PeriodicMatrixFunction::constant(2, linalg::scaled_identity(2, 3.5), true);
        for s in f.evaluate_on_grid(5) {
            assert!(linalg::max_abs(&(&s - linalg::scaled_identity(2, 3.5))) < 1e-15);
        }
    }

    #[test]
    fn cosine_field_on_grid() {
        let f = cos_field();
        let s = f.evaluate_on_grid(256);
        let mut lo = f64::INFINITY;
        for (i, v) in s.iter().enumerate() {
            let x = i as f64 / 256.0;
            assert!((v[(0, 0)].re - (2.0 + (2.0 * std::f64::consts::PI * x).cos())).abs() < 1e-13);
            lo = lo.min(v[(0, 0)].re);
        }
        assert!((lo - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hermitian_2d_field_matches_direct_summation() {
        let a = Mat::from_fn(2, 2, |i, j| cx(0.3 * (i + 1) as f64, 0.2 * j as f64 - 0.1));
        let mut c = BTreeMap::new();
        c.insert(vec![0, 0], linalg::scaled_identity(2, 3.0));
        c.insert(vec![1, 0], a.clone());
        c.insert(vec![-1, 0], linalg::adjoint(&a));
        let f = PeriodicMatrixFunction::new(2, 2, 2, c, true).unwrap();
        let grid = f.evaluate_on_grid(64);
        for (ord, s) in grid.iter().enumerate().step_by(97) {
            assert!(linalg::hermitian_defect(s) < 1e-12);
            let (i0, i1) = (ord / 64, ord % 64);
            let direct = f.evaluate_frac(&[i0 as f64 / 64.0, i1 as f64 / 64.0]);
            assert!(linalg::max_abs(&(s - &direct)) < 1e-12);
        }
    }

    #[test]
    fn non_hermitian_coefficients_rejected() {
        let mut c = BTreeMap::new();
        c.insert(vec![1], linalg::scaled_identity(1, 0.5));
        c.insert(vec![-1], linalg::scaled_identity(1, 0.4));
        assert!(PeriodicMatrixFunction::new(1, 1, 1, c, true).is_err());
    }

    #[test]
    fn grid_round_trip() {
        let f = cos_field();
        let back = PeriodicMatrixFunction::from_grid(1, &f.evaluate_on_grid(16), 16, 3, true);
        for m in -3i64..=3 {
            assert!(linalg::max_abs(&(&back.coeff(&[m]) - &f.coeff(&[m]))) < 1e-14);
        }
    }

    #[test]
    fn product_matches_pointwise() {
        let f = cos_field();
        let p = f.mul(&f);
        let x = 0.137;
        let direct = f.evaluate_frac(&[x])[(0, 0)] * f.evaluate_frac(&[x])[(0, 0)];
        assert!((p.evaluate_frac(&[x])[(0, 0)] - direct).abs() < 1e-13);
        assert!((f.mean_product(&f)[(0, 0)] - p.mean()[(0, 0)]).abs() < 1e-14);
    }

    #[test]
    fn acoustics_symbol_alphas() {
        for d in 1..=3 {
            let s = SymbolB::gradient(d);
            let (a0, a1) = s.alphas(64);
            assert!((a0 - 1.0).abs() < 1e-14 && (a1 - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn elasticity_symbol_alphas_match_dense_scan() {
        let s = SymbolB::plane_strain();
        let (a0, a1) = s.alphas(256);
        // b(theta)* b(theta) = [[t1^2 + t2^2/4, t1 t2/4], [t1 t2/4, t2^2 + t1^2/4]] has eigenvalues
        // whose extremes over the circle are found by a dense independent scan.
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for j in 0..100000 {
            let a = 2.0 * std::f64::consts::PI * j as f64 / 100000.0;
            let (t1, t2) = (a.cos(), a.sin());
            let (p, q, r) = (t1 * t1 + t2 * t2 / 4.0, t1 * t2 / 4.0, t2 * t2 + t1 * t1 / 4.0);
            let mid = 0.5 * (p + r);
            let rad = (0.25 * (p - r) * (p - r) + q * q).sqrt();
            lo = lo.min(mid - rad);
            hi = hi.max(mid + rad);
        }
        assert!((a0 - lo).abs() < 1e-8 && (a1 - hi).abs() < 1e-8, "{a0} {a1} {lo} {hi}");
    }

    #[test]
    fn indefinite_g_rejected() {
        let lat = build_lattice(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let g = PeriodicMatrixFunction::constant(2, linalg::from_real_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]), true);
        let model = OperatorModel { lattice: lat, symbol: SymbolB::gradient(2), g, q: None };
        assert!(validate_model(&model, 16, 32).is_err());
    }

    #[test]
    fn model1d_constants() {
        let lat = build_lattice(&[vec![1.0]]).unwrap();
        let model = OperatorModel { lattice: lat, symbol: SymbolB::gradient(1), g: cos_field(), q: None };
        let v = validate_model(&model, 256, 2).unwrap();
        assert!((v.g_sup - 3.0).abs() < 1e-12 && (v.g_inv_sup - 1.0).abs() < 1e-12);
        assert!((v.c_star_hat - 1.0).abs() < 1e-12);
        assert!((v.t0_hat - std::f64::consts::PI / 2.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!(v.t0_hat <= std::f64::consts::PI / 2.0);
    }

    #[test]
    fn inverse_sqrt_of_scalar_weight() {
        let mut c = BTreeMap::new();
        c.insert(vec![0], linalg::scaled_identity(1, 2.0));
        c.insert(vec![1], Mat::from_fn(1, 1, |_, _| cx(0.0, -0.5)));
        c.insert(vec![-1], Mat::from_fn(1, 1, |_, _| cx(0.0, 0.5)));
        let q = PeriodicMatrixFunction::new(1, 1, 1, c, true).unwrap();
        let f = inverse_sqrt_field(&q, 24);
        for x in [0.0, 0.21, 0.5, 0.77] {
            let qx = q.evaluate_frac(&[x])[(0, 0)].re;
            assert!((f.evaluate_frac(&[x])[(0, 0)] - re(qx.powf(-0.5))).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn parseval(c0 in 0.5f64..3.0, c1r in -1.0f64..1.0, c1i in -1.0f64..1.0, c2r in -1.0f64..1.0) {
            let mut c = BTreeMap::new();
            c.insert(vec![0, 0], linalg::scaled_identity(1, c0));
            c.insert(vec![1, -1], Mat::from_fn(1, 1, |_, _| cx(c1r, c1i)));
            c.insert(vec![0, 2], Mat::from_fn(1, 1, |_, _| cx(c2r, 0.0)));
            let f = PeriodicMatrixFunction::new(2, 1, 1, c, false).unwrap();
            let p = 8;
            let grid = f.evaluate_on_grid(p);
            let mean_sq: f64 = grid.iter().map(|s| linalg::abs2(s[(0, 0)])).sum::<f64>() / grid.len() as f64;
            let expect = f.l2_mean_square();
            prop_assert!((mean_sq - expect).abs() <= 1e-10 * expect);
        }

        #[test]
        fn alphas_monotone_under_refinement(k in 4usize..40) {
            let s = SymbolB::plane_strain();
            let (a0, a1) = s.alphas(4 * k);
            let (b0, b1) = s.alphas(8 * k);
            prop_assert!(b0 <= a0 + 1e-9);
            prop_assert!(b1 >= a1 - 1e-9);
        }
    }
}
