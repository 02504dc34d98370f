//! Lattices, the Brillouin zone and truncated Fourier index sets.

use serde::{Deserialize, Serialize};

use crate::error::{BhlError, Result};

const ZONE_TOL: f64 = 1e-12;
const SCAN_SHELL: i64 = 3;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatticeInfo {
    pub dim: usize,
    /// Rows are the periodicity vectors `a_j`.
    pub basis: Vec<Vec<f64>>,
    /// Rows are the dual vectors `b_l` with `<b_l, a_j> = 2 pi delta_lj`.
    pub dual_basis: Vec<Vec<f64>>,
    pub cell_volume: f64,
    pub dual_cell_volume: f64,
    /// Inradius of the Brillouin zone.
    pub r0: f64,
    /// Largest `|k|` over the zone boundary.
    pub r1: f64,
}

/// All integer multi-indices of length `dim` with max-norm at most `r`,
/// in lexicographic order with the first axis varying slowest.
pub fn cube_indices(dim: usize, r: i64) -> Vec<Vec<i64>> {
    let side = (2 * r + 1) as usize;
    let total = side.pow(dim as u32);
    (0..total)
        .map(|mut ord| {
            let mut m = vec![0i64; dim];
            for l in (0..dim).rev() {
                m[l] = (ord % side) as i64 - r;
                ord /= side;
            }
            m
        })
        .collect()
}

fn det(m: &[Vec<f64>]) -> f64 {
    match m.len() {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => f64::NAN,
    }
}

/// Inverse of a small dense matrix by cofactors.
fn inverse_small(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = m.len();
    let dt = det(m);
    match d {
        1 => vec![vec![1.0 / m[0][0]]],
        2 => vec![vec![m[1][1] / dt, -m[0][1] / dt], vec![-m[1][0] / dt, m[0][0] / dt]],
        _ => {
            let mut inv = vec![vec![0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    let (r1, r2) = ((j + 1) % 3, (j + 2) % 3);
                    let (c1, c2) = ((i + 1) % 3, (i + 2) % 3);
                    inv[i][j] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / dt;
                }
            }
            inv
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dotr(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn build_lattice(basis: &[Vec<f64>]) -> Result<LatticeInfo> {
    let dim = basis.len();
    if !(1..=3).contains(&dim) || basis.iter().any(|r| r.len() != dim) {
        return Err(BhlError::Validation(format!(
            "lattice basis must be a square matrix of size 1, 2 or 3, got {} rows",
            dim
        )));
    }
    let dt = det(basis);
    let scale = basis.iter().map(|r| norm(r)).product::<f64>();
    if !dt.is_finite() || dt.abs() <= 1e-12 * scale.max(1e-300) {
        return Err(BhlError::Validation(format!("singular lattice basis (det = {dt:e})")));
    }
    // Rows b_l of 2 pi A^{-T}.
    let inv = inverse_small(basis);
    let dual_basis: Vec<Vec<f64>> =
        (0..dim).map(|l| (0..dim).map(|c| 2.0 * std::f64::consts::PI * inv[c][l]).collect()).collect();
    let cell_volume = dt.abs();
    let dual_cell_volume = det(&dual_basis).abs();
    let mut lat = LatticeInfo { dim, basis: basis.to_vec(), dual_basis, cell_volume, dual_cell_volume, r0: 0.0, r1: 0.0 };
    lat.r0 = 0.5 * lat.shortest_dual_vector(SCAN_SHELL);
    lat.r1 = lat.zone_outer_radius();
    Ok(lat)
}

impl LatticeInfo {
    /// `b(m) = sum_l m_l b_l`.
    pub fn dual_vector(&self, m: &[i64]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for (l, &ml) in m.iter().enumerate() {
            for c in 0..self.dim {
                v[c] += ml as f64 * self.dual_basis[l][c];
            }
        }
        v
    }

    /// `x = sum_j s_j a_j` for fractional coordinates `s`.
    pub fn cell_point(&self, s: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for (j, &sj) in s.iter().enumerate() {
            for c in 0..self.dim {
                x[c] += sj * self.basis[j][c];
            }
        }
        x
    }

    pub fn shortest_dual_vector(&self, shell: i64) -> f64 {
        cube_indices(self.dim, shell)
            .into_iter()
            .filter(|m| m.iter().any(|&x| x != 0))
            .map(|m| norm(&self.dual_vector(&m)))
            .fold(f64::INFINITY, f64::min)
    }

    fn scan_vectors(&self) -> Vec<Vec<f64>> {
        cube_indices(self.dim, SCAN_SHELL)
            .into_iter()
            .filter(|m| m.iter().any(|&x| x != 0))
            .map(|m| self.dual_vector(&m))
            .collect()
    }

    /// Closed Brillouin zone membership: `|k| <= |k - b| + tol` for all scanned `b`.
    pub fn in_zone(&self, k: &[f64]) -> bool {
        let kk = norm(k);
        self.scan_vectors().iter().all(|b| {
            let d: Vec<f64> = k.iter().zip(b).map(|(x, y)| x - y).collect();
            kk <= norm(&d) + ZONE_TOL * (1.0 + kk)
        })
    }

    /// Translates `k` by dual lattice vectors into the closed zone.
    pub fn fold_into_zone(&self, k: &[f64]) -> Vec<f64> {
        let scan = self.scan_vectors();
        let mut cur = k.to_vec();
        for _ in 0..64 {
            let kk = norm(&cur);
            let mut best: Option<(f64, &Vec<f64>)> = None;
            for b in &scan {
                let d: Vec<f64> = cur.iter().zip(b).map(|(x, y)| x - y).collect();
                let nd = norm(&d);
                if nd < kk - ZONE_TOL * (1.0 + kk) && best.is_none_or(|(bn, _)| nd < bn) {
                    best = Some((nd, b));
                }
            }
            match best {
                Some((_, b)) => {
                    for c in 0..self.dim {
                        cur[c] -= b[c];
                    }
                }
                None => break,
            }
        }
        cur
    }

    /// Distance from the origin to the zone boundary along the unit direction `u`.
    pub fn boundary_radius(&self, u: &[f64]) -> f64 {
        self.scan_vectors()
            .iter()
            .filter_map(|b| {
                let ub = dotr(u, b);
                (ub > 1e-14).then(|| dotr(b, b) / (2.0 * ub))
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn zone_outer_radius(&self) -> f64 {
        match self.dim {
            1 => self.r0,
            2 => {
                // Clip a large square by the bisector half-planes <k, b> <= |b|^2 / 2.
                let big = 10.0 * self.shortest_dual_vector(SCAN_SHELL).max(1.0) * 10.0;
                let mut poly = vec![[-big, -big], [big, -big], [big, big], [-big, big]];
                for b in self.scan_vectors() {
                    let h = 0.5 * dotr(&b, &b);
                    let inside = |p: &[f64; 2]| p[0] * b[0] + p[1] * b[1] <= h;
                    let mut out = Vec::new();
                    for i in 0..poly.len() {
                        let p = poly[i];
                        let q = poly[(i + 1) % poly.len()];
                        let (ip, iq) = (inside(&p), inside(&q));
                        if ip {
                            out.push(p);
                        }
                        if ip != iq {
                            let fp = p[0] * b[0] + p[1] * b[1] - h;
                            let fq = q[0] * b[0] + q[1] * b[1] - h;
                            let s = fp / (fp - fq);
                            out.push([p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]);
                        }
                    }
                    poly = out;
                }
                poly.iter().map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt()).fold(0.0, f64::max)
            }
            _ => {
                let n = 64;
                let mut best = 0.0f64;
                for i in 0..=n {
                    let th = std::f64::consts::PI * i as f64 / n as f64;
                    for j in 0..2 * n {
                        let ph = std::f64::consts::PI * j as f64 / n as f64;
                        let u = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
                        best = best.max(self.boundary_radius(&u));
                    }
                }
                best
            }
        }
    }
}

/// How to sample the Brillouin zone.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KGridSpec {
    /// Tensor grid over the dual cell, `counts[l]` points along `b_l`, folded into the zone.
    Uniform { counts: Vec<usize> },
    /// Points `t_i * theta_j`.
    Radial { ts: Vec<f64>, directions: Vec<Vec<f64>> },
}

/// A sampled point with the index of its radial direction (if any).
#[derive(Clone, Debug, PartialEq)]
pub struct KPoint {
    pub k: Vec<f64>,
    pub direction: Option<usize>,
}

pub fn brillouin_sample(lattice: &LatticeInfo, spec: &KGridSpec) -> Result<Vec<KPoint>> {
    match spec {
        KGridSpec::Uniform { counts } => {
            if counts.len() != lattice.dim || counts.contains(&0) {
                return Err(BhlError::Validation("uniform k-grid needs one positive count per axis".into()));
            }
            let idx = grid_indices(counts);
            Ok(idx
                .into_iter()
                .map(|i| {
                    let mut k = vec![0.0; lattice.dim];
                    for l in 0..lattice.dim {
                        let c = if counts[l] == 1 { 0.0 } else { -0.5 + i[l] as f64 / (counts[l] - 1) as f64 };
                        for a in 0..lattice.dim {
                            k[a] += c * lattice.dual_basis[l][a];
                        }
                    }
                    KPoint { k: lattice.fold_into_zone(&k), direction: None }
                })
                .collect())
        }
        KGridSpec::Radial { ts, directions } => {
            if let Some(t) = ts.iter().find(|&&t| t > lattice.r0 * (1.0 + ZONE_TOL) || t < 0.0) {
                return Err(BhlError::Validation(format!("radial sample t = {t} lies outside [0, r0 = {}]", lattice.r0)));
            }
            let mut out = Vec::with_capacity(ts.len() * directions.len());
            for (j, th) in directions.iter().enumerate() {
                if th.len() != lattice.dim {
                    return Err(BhlError::Validation("direction dimension mismatch".into()));
                }
                let nrm = norm(th);
                if (nrm - 1.0).abs() > 1e-10 {
                    return Err(BhlError::Validation("radial directions must be unit vectors".into()));
                }
                for &t in ts {
                    out.push(KPoint { k: th.iter().map(|x| t * x).collect(), direction: Some(j) });
                }
            }
            Ok(out)
        }
    }
}

fn grid_indices(counts: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = counts.iter().product();
    (0..total)
        .map(|mut ord| {
            let mut i = vec![0usize; counts.len()];
            for l in (0..counts.len()).rev() {
                i[l] = ord % counts[l];
                ord /= counts[l];
            }
            i
        })
        .collect()
}

/// Evenly spread unit directions: `{+1, -1}` in 1D, a circle in 2D,
/// a Fibonacci sphere in 3D.
pub fn unit_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|j| {
                let a = 2.0 * std::f64::consts::PI * j as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|j| {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * j as f64;
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect()
        }
    }
}

/// Multi-indices with max-norm at most `cutoff`.
#[derive(Clone, Debug)]
pub struct FourierIndexSet {
    pub dim: usize,
    pub cutoff: usize,
    pub indices: Vec<Vec<i64>>,
    pub zero_pos: usize,
}

impl FourierIndexSet {
    pub fn new(dim: usize, cutoff: usize) -> Self {
        let indices = cube_indices(dim, cutoff as i64);
        let zero_pos = indices.len() / 2;
        FourierIndexSet { dim, cutoff, indices, zero_pos }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn side(&self) -> usize {
        2 * self.cutoff + 1
    }

    pub fn position(&self, m: &[i64]) -> Option<usize> {
        let n = self.cutoff as i64;
        let side = 2 * n + 1;
        let mut ord = 0i64;
        for &x in m {
            if x.abs() > n {
                return None;
            }
            ord = ord * side + (x + n);
        }
        Some(ord as usize)
    }

    /// Ordinal of `-m` given the ordinal of `m`.
    pub fn negated(&self, pos: usize) -> usize {
        self.len() - 1 - pos
    }

    pub fn max_norm(m: &[i64]) -> i64 {
        m.iter().map(|x| x.abs()).max().unwrap_or(0)
    }
}
