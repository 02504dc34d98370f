//! Dense complex linear algebra helpers on top of `faer`.

use faer::complex_native::c64;
use faer::linalg::triangular_solve;
use faer::prelude::*;
use faer::{Mat, Parallelism, Side};

use crate::error::{BhlError, Result};

pub type C = c64;
pub type CMat = Mat<c64>;

#[inline]
pub fn cx(re: f64, im: f64) -> C {
    c64::new(re, im)
}

#[inline]
pub fn re(x: f64) -> C {
    c64::new(x, 0.0)
}

/// `exp(i phi)`.
#[inline]
pub fn cis(phi: f64) -> C {
    c64::new(phi.cos(), phi.sin())
}

#[inline]
pub fn abs2(z: C) -> f64 {
    z.re * z.re + z.im * z.im
}

pub fn zeros(r: usize, c: usize) -> CMat {
    Mat::zeros(r, c)
}

pub fn identity(n: usize) -> CMat {
    Mat::identity(n, n)
}

pub fn scaled_identity(n: usize, s: f64) -> CMat {
    Mat::from_fn(n, n, |i, j| if i == j { re(s) } else { C::new(0.0, 0.0) })
}

pub fn from_real_rows(rows: &[Vec<f64>]) -> CMat {
    let r = rows.len();
    let c = if r == 0 { 0 } else { rows[0].len() };
    Mat::from_fn(r, c, |i, j| re(rows[i][j]))
}

pub fn adjoint(a: &CMat) -> CMat {
    Mat::from_fn(a.ncols(), a.nrows(), |i, j| a[(j, i)].conj())
}

pub fn conj(a: &CMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].conj())
}

pub fn scale(a: &CMat, s: C) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

pub fn scale_re(a: &CMat, s: f64) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

pub fn add(a: &CMat, b: &CMat) -> CMat {
    a + b
}

pub fn sub(a: &CMat, b: &CMat) -> CMat {
    a - b
}

pub fn mul(a: &CMat, b: &CMat) -> CMat {
    a * b
}

/// `a* b` without materializing the adjoint.
pub fn mul_adj(a: &CMat, b: &CMat) -> CMat {
    a.adjoint() * b
}

pub fn add_assign(a: &mut CMat, b: &CMat) {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            a[(i, j)] += b[(i, j)];
        }
    }
}

pub fn frobenius(a: &CMat) -> f64 {
    a.norm_l2()
}

pub fn max_abs(a: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

pub fn trace(a: &CMat) -> C {
    let mut t = C::new(0.0, 0.0);
    for i in 0..a.nrows().min(a.ncols()) {
        t += a[(i, i)];
    }
    t
}

/// Largest deviation of `a` from Hermitian symmetry, relative to its size.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let scale = max_abs(a).max(1e-300);
    let mut d = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..=j.min(a.nrows() - 1) {
            d = d.max((a[(i, j)] - a[(j, i)].conj()).abs());
        }
    }
    d / scale
}

pub fn hermitize(a: &CMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

/// Eigen-decomposition of a Hermitian matrix with ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct HermEig {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

pub fn herm_eig(a: &CMat) -> HermEig {
    let n = a.nrows();
    if n == 0 {
        return HermEig { values: vec![], vectors: zeros(0, 0) };
    }
    let h = hermitize(a);
    let evd = h.selfadjoint_eigendecomposition(Side::Lower);
    let s = evd.s();
    let u = evd.u();
    let mut order: Vec<usize> = (0..n).collect();
    let vals: Vec<f64> = (0..n).map(|i| s.column_vector().read(i).re).collect();
    order.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| vals[i]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| u.read(r, order[c]));
    HermEig { values, vectors }
}

pub fn herm_eigenvalues(a: &CMat) -> Vec<f64> {
    herm_eig(a).values
}

pub fn min_eigenvalue(a: &CMat) -> f64 {
    herm_eigenvalues(a).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(a: &CMat) -> f64 {
    herm_eigenvalues(a).last().copied().unwrap_or(0.0)
}

/// Largest singular value.
pub fn spectral_norm(a: &CMat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.singular_values().into_iter().fold(0.0, f64::max)
}

/// `V diag(d) V*` for a Hermitian eigen-decomposition.
pub fn spectral_apply(eig: &HermEig, f: impl Fn(f64) -> C) -> CMat {
    let n = eig.values.len();
    let d: Vec<C> = eig.values.iter().map(|&l| f(l)).collect();
    let vd = Mat::from_fn(n, n, |i, j| eig.vectors[(i, j)] * d[j]);
    vd * eig.vectors.adjoint()
}

/// Solves `K x = rhs` for Hermitian positive definite `K`.
pub fn solve_hpd(k: &CMat, rhs: &CMat) -> Result<CMat> {
    let ch = hermitize(k)
        .cholesky(Side::Lower)
        .map_err(|_| BhlError::Numerical("Galerkin matrix is not positive definite".into()))?;
    Ok(ch.solve(rhs))
}

pub fn solve_general(a: &CMat, rhs: &CMat) -> CMat {
    a.partial_piv_lu().solve(rhs)
}

pub fn inverse(a: &CMat) -> CMat {
    solve_general(a, &identity(a.nrows()))
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky_lower(a: &CMat) -> Result<CMat> {
    let ch = hermitize(a)
        .cholesky(Side::Lower)
        .map_err(|_| BhlError::Numerical("matrix is not positive definite".into()))?;
    Ok(ch.compute_l())
}

/// Solves `L X = B` in place for lower-triangular `L`.
pub fn lower_solve(l: &CMat, b: &CMat) -> CMat {
    let mut x = b.clone();
    triangular_solve::solve_lower_triangular_in_place(l.as_ref(), x.as_mut(), Parallelism::None);
    x
}

/// Solves `L* X = B` in place for lower-triangular `L`.
pub fn lower_adjoint_solve(l: &CMat, b: &CMat) -> CMat {
    let mut x = b.clone();
    triangular_solve::solve_upper_triangular_in_place(l.adjoint(), x.as_mut(), Parallelism::None);
    x
}

/// Generalized Hermitian problem `A v = lambda B v` with `B` positive definite.
/// Eigenvectors are `B`-orthonormal.
pub fn gen_herm_eig(a: &CMat, b: &CMat) -> Result<HermEig> {
    let l = cholesky_lower(b)?;
    let y = lower_solve(&l, a);
    let c = lower_solve(&l, &adjoint(&y));
    let eig = herm_eig(&c);
    let vectors = lower_adjoint_solve(&l, &eig.vectors);
    Ok(HermEig { values: eig.values, vectors })
}

/// Hermitian positive square root and its inverse.
pub fn psd_sqrt_pair(a: &CMat, floor: f64) -> (CMat, CMat) {
    let eig = herm_eig(a);
    let s = spectral_apply(&eig, |l| re(l.max(floor).sqrt()));
    let si = spectral_apply(&eig, |l| re(1.0 / l.max(floor).sqrt()));
    (s, si)
}

pub fn psd_inv_sqrt(a: &CMat) -> CMat {
    psd_sqrt_pair(a, 1e-13).1
}

/// Block of `a` starting at (r0, c0).
pub fn block(a: &CMat, r0: usize, c0: usize, r: usize, c: usize) -> CMat {
    Mat::from_fn(r, c, |i, j| a[(r0 + i, c0 + j)])
}

pub fn set_block(a: &mut CMat, r0: usize, c0: usize, b: &CMat) {
    for j in 0..b.ncols() {
        for i in 0..b.nrows() {
            a[(r0 + i, c0 + j)] = b[(i, j)];
        }
    }
}

pub fn add_block(a: &mut CMat, r0: usize, c0: usize, b: &CMat) {
    for j in 0..b.ncols() {
        for i in 0..b.nrows() {
            a[(r0 + i, c0 + j)] += b[(i, j)];
        }
    }
}

/// Multiplies column `j` of `a` by `w[j]`.
pub fn scale_columns(a: &CMat, w: &[f64]) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * w[j])
}

pub fn column(a: &CMat, j: usize) -> Vec<C> {
    (0..a.nrows()).map(|i| a[(i, j)]).collect()
}

pub fn col_mat(v: &[C]) -> CMat {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn vec_norm(v: &[C]) -> f64 {
    v.iter().map(|z| abs2(*z)).sum::<f64>().sqrt()
}

pub fn dot(a: &[C], b: &[C]) -> C {
    let mut s = C::new(0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        s += x.conj() * *y;
    }
    s
}

pub fn matvec(a: &CMat, v: &[C]) -> Vec<C> {
    let mut out = vec![C::new(0.0, 0.0); a.nrows()];
    for j in 0..a.ncols() {
        let vj = v[j];
        if vj.re == 0.0 && vj.im == 0.0 {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += a[(i, j)] * vj;
        }
    }
    out
}

/// Least-squares solution of `A x ~ b` (real, full column rank) with column
/// equilibration; returns the solution and the 2-norm condition number of the
/// equilibrated matrix.
pub fn lstsq_real(rows: &[Vec<f64>], b: &[f64]) -> (Vec<f64>, f64) {
    use faer::solvers::SpSolverLstsq;
    let (r, c) = (rows.len(), rows[0].len());
    let scale: Vec<f64> = (0..c)
        .map(|j| rows.iter().map(|row| row[j] * row[j]).sum::<f64>().sqrt().max(f64::MIN_POSITIVE))
        .collect();
    let a = Mat::<f64>::from_fn(r, c, |i, j| rows[i][j] / scale[j]);
    let rhs = Mat::<f64>::from_fn(r, 1, |i, _| b[i]);
    let x = a.qr().solve_lstsq(&rhs);
    let sv = a.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    ((0..c).map(|j| x[(j, 0)] / scale[j]).collect(), smax / smin)
}

pub fn to_nested(a: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| [a[(i, j)].re, a[(i, j)].im]).collect())
        .collect()
}

pub fn real_parts(a: &CMat) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)].re).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample_hermitian(n: usize) -> CMat {
        let a = Mat::from_fn(n, n, |i, j| cx(((i * 7 + j * 3) % 5) as f64, ((i + 2 * j) % 3) as f64 - 1.0));
        let h = &a + adjoint(&a);
        &h + scaled_identity(n, 10.0)
    }

    #[test]
    fn eigen_ascending_and_reconstructs() {
        let h = sample_hermitian(7);
        let e = herm_eig(&h);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        let back = spectral_apply(&e, re);
        assert!(frobenius(&(&back - &h)) < 1e-11 * frobenius(&h));
    }

    #[test]
    fn generalized_eigenvectors_are_b_orthonormal() {
        let a = sample_hermitian(5);
        let b = &sample_hermitian(5) + scaled_identity(5, 5.0);
        let e = gen_herm_eig(&a, &b).unwrap();
        let gram = mul_adj(&e.vectors, &(&b * &e.vectors));
        assert!(frobenius(&(&gram - identity(5))) < 1e-10);
        let lhs = &a * &e.vectors;
        let rhs = &b * scale_columns(&e.vectors, &e.values);
        assert!(frobenius(&(&lhs - &rhs)) < 1e-9);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let d = Mat::from_fn(3, 3, |i, j| if i == j { re([1.0, -4.0, 2.5][i]) } else { re(0.0) });
        assert_relative_eq!(spectral_norm(&d), 4.0, epsilon = 1e-13);
    }

    #[test]
    fn sqrt_pair_inverts() {
        let h = sample_hermitian(4);
        let (s, si) = psd_sqrt_pair(&h, 1e-13);
        assert!(frobenius(&(&(&s * &s) - &h)) < 1e-10 * frobenius(&h));
        assert!(frobenius(&(&(&s * &si) - identity(4))) < 1e-11);
    }

    #[test]
    fn triangular_solves_match_cholesky() {
        let h = sample_hermitian(6);
        let l = cholesky_lower(&h).unwrap();
        let b = Mat::from_fn(6, 2, |i, j| cx(i as f64, j as f64 + 1.0));
        let x = lower_adjoint_solve(&l, &lower_solve(&l, &b));
        let y = solve_hpd(&h, &b).unwrap();
        assert!(frobenius(&(&x - &y)) < 1e-12 * frobenius(&y));
    }
}
