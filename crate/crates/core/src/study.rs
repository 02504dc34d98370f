//! Sweeps of sup-over-k fiber errors, log-log rate fits, sharpness probes
//! and epsilon studies of Cauchy problems.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cauchy::{cauchy_solve, CauchyData, CauchyRow};
use crate::cell::CellSolution;
use crate::coefficients::OperatorModel;
use crate::error::{BhlError, Result};
use crate::fiber::{CorrectorMode, FiberContext, FiberErrorEvaluator, Variant};
use crate::germ::{GermExpansion, Regime};
use crate::lattice::{brillouin_sample, unit_directions, KGridSpec};

/// Errors at or below this value are treated as exact zeros.
pub const ZERO_ERROR: f64 = 1e-12;
/// Fits with a smaller coefficient of determination are flagged unreliable.
pub const MIN_R2: f64 = 0.98;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Indices of input pairs dropped because their error was zero.
    pub excluded: Vec<usize>,
    pub reliable: bool,
}

/// Ordinary least squares of `log error` against `log eps`.
pub fn rate_fit(pairs: &[(f64, f64)]) -> Result<RateFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = Vec::new();
    for (i, &(eps, err)) in pairs.iter().enumerate() {
        if !(eps > 0.0) || !eps.is_finite() || !err.is_finite() || err < 0.0 {
            return Err(BhlError::Validation(format!("invalid pair (eps = {eps}, error = {err})")));
        }
        if err <= 0.0 {
            excluded.push(i);
            continue;
        }
        xs.push(eps.ln());
        ys.push(err.ln());
    }
    if xs.len() < 3 {
        return Err(BhlError::Validation(format!("rate fit needs at least 3 nonzero pairs, got {}", xs.len())));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx <= 0.0 {
        return Err(BhlError::Validation("rate fit needs distinct eps values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(RateFit { slope, intercept, r2, excluded, reliable: r2 >= MIN_R2 })
}

/// Dense geometric radial family added to the k-grid.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RadialFamily {
    pub directions: Vec<Vec<f64>>,
    pub per_octave: usize,
    /// Extra radii, for instance critical scalings from germ data.
    #[serde(default)]
    pub extra_ts: Vec<f64>,
}

impl RadialFamily {
    /// `{+1, -1}` in 1D, otherwise `count` spread directions, 8 points per octave.
    pub fn standard(dim: usize, count: usize) -> Self {
        RadialFamily { directions: unit_directions(dim, count), per_octave: 8, extra_ts: Vec::new() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorStudySpec {
    pub scenario: String,
    pub variant: Variant,
    pub eps: Vec<f64>,
    pub taus: Vec<f64>,
    pub ss: Vec<f64>,
    pub kgrid: KGridSpec,
    pub radial: Option<RadialFamily>,
    pub corrector: CorrectorMode,
    /// Radial refinement near 0 and local refinement around each argmax.
    pub refine: bool,
    /// Additional quasi-momenta evaluated alongside the grid.
    #[serde(default)]
    pub extra_k: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub eps: f64,
    pub tau: f64,
    pub s: f64,
    pub error: f64,
    pub kmax_at: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitEntry {
    pub tau: f64,
    pub s: f64,
    pub fit: Option<RateFit>,
    /// All errors vanish: the approximation is exact and no slope exists.
    pub exact: bool,
    /// Error does not decrease monotonically as eps decreases.
    pub non_monotone: bool,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KGridSummary {
    pub base: KGridSpec,
    pub radial_directions: usize,
    pub radial_per_octave: usize,
    pub points: usize,
    pub inner_refinement: bool,
    pub local_points: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorStudyReport {
    pub scenario: String,
    pub variant: Variant,
    pub cutoff: usize,
    pub regime: Option<Regime>,
    pub kgrid: KGridSummary,
    pub entries: Vec<ErrorEntry>,
    pub fits: Vec<FitEntry>,
}

impl ErrorStudyReport {
    pub fn fit(&self, tau: f64, s: f64) -> Option<&FitEntry> {
        self.fits.iter().find(|f| f.tau == tau && f.s == s)
    }

    pub fn errors(&self, tau: f64, s: f64) -> Vec<(f64, f64)> {
        self.entries.iter().filter(|e| e.tau == tau && e.s == s).map(|e| (e.eps, e.error)).collect()
    }

    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.error).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
struct Sample {
    k: Vec<f64>,
    /// Unit direction and radius when the sample lies on a ray from 0.
    ray: Option<(Vec<f64>, f64)>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn ray_sample(dir: &[f64], t: f64) -> Sample {
    Sample { k: dir.iter().map(|x| x * t).collect(), ray: Some((dir.to_vec(), t)) }
}

fn geometric(lo: f64, hi: f64, per_octave: usize) -> Vec<f64> {
    if !(hi > lo) || lo <= 0.0 {
        return vec![];
    }
    let steps = ((hi / lo).log2() * per_octave as f64).ceil().max(1.0) as usize;
    (0..=steps).map(|i| lo * (hi / lo).powf(i as f64 / steps as f64)).collect()
}

fn validate_ladder(eps: &[f64]) -> Result<()> {
    if eps.len() < 4 {
        return Err(BhlError::Validation(format!("eps ladder needs at least 4 values, got {}", eps.len())));
    }
    if eps.iter().any(|e| !(*e > 0.0)) {
        return Err(BhlError::Validation("eps values must be positive".into()));
    }
    let ratio = eps[1] / eps[0];
    if !(ratio < 1.0) {
        return Err(BhlError::Validation("eps ladder must be descending".into()));
    }
    for w in eps.windows(2) {
        if ((w[1] / w[0]) / ratio - 1.0).abs() > 1e-6 {
            return Err(BhlError::Validation("eps ladder must be geometric".into()));
        }
    }
    Ok(())
}

struct Study<'a> {
    ctx: &'a FiberContext,
    cell: &'a CellSolution,
    spec: &'a ErrorStudySpec,
    corrector: CorrectorMode,
    need_weight: bool,
}

impl Study<'_> {
    fn triples(&self) -> usize {
        self.spec.eps.len() * self.spec.taus.len() * self.spec.ss.len()
    }

    fn triple(&self, idx: usize) -> (usize, usize, usize) {
        let (nt, ns) = (self.spec.taus.len(), self.spec.ss.len());
        (idx / (nt * ns), (idx / ns) % nt, idx % ns)
    }

    fn evaluator(&self, k: &[f64]) -> Result<FiberErrorEvaluator<'_>> {
        FiberErrorEvaluator::new(self.ctx, Some(self.cell), k, self.need_weight, self.corrector)
    }

    fn all_triples(&self, k: &[f64]) -> Result<Vec<f64>> {
        let ev = self.evaluator(k)?;
        let mut out = Vec::with_capacity(self.triples());
        for &eps in &self.spec.eps {
            for &tau in &self.spec.taus {
                let d = ev.difference(self.spec.variant, eps, tau)?;
                for &s in &self.spec.ss {
                    out.push(ev.smoothed_norm(&d, eps, s));
                }
            }
        }
        Ok(out)
    }

    fn one_triple(&self, k: &[f64], idx: usize) -> Result<f64> {
        let (ie, it, is) = self.triple(idx);
        let (eps, tau, s) = (self.spec.eps[ie], self.spec.taus[it], self.spec.ss[is]);
        let ev = self.evaluator(k)?;
        let d = ev.difference(self.spec.variant, eps, tau)?;
        Ok(ev.smoothed_norm(&d, eps, s))
    }

    fn sweep(&self, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
        samples.par_iter().map(|smp| self.all_triples(&smp.k)).collect()
    }

    /// Best value of one triple over a list of samples.
    fn best_of(&self, samples: Vec<Sample>, idx: usize) -> Result<Option<(f64, Sample)>> {
        let vals: Vec<f64> = samples.par_iter().map(|s| self.one_triple(&s.k, idx)).collect::<Result<_>>()?;
        Ok(vals
            .into_iter()
            .zip(samples)
            .fold(None, |acc: Option<(f64, Sample)>, (v, s)| match acc {
                Some((b, _)) if b >= v => acc,
                _ => Some((v, s)),
            }))
    }
}

fn rotate2(dir: &[f64], angle: f64) -> Vec<f64> {
    let (c, s) = (angle.cos(), angle.sin());
    vec![c * dir[0] - s * dir[1], s * dir[0] + c * dir[1]]
}

/// `sup_k` of the smoothed fiber error for every `(eps, tau, s)` and the fitted rates.
pub fn operator_error_study(
    ctx: &FiberContext,
    cell: &CellSolution,
    spec: &ErrorStudySpec,
    regime: Option<Regime>,
) -> Result<ErrorStudyReport> {
    validate_ladder(&spec.eps)?;
    if spec.taus.is_empty() || spec.ss.is_empty() {
        return Err(BhlError::Validation("study needs at least one tau and one s".into()));
    }
    if let Some(s) = spec.ss.iter().find(|s| !(0.0..=2.0).contains(*s)) {
        return Err(BhlError::Validation(format!("smoothing exponent s = {s} outside [0, 2]")));
    }
    let model = &ctx.model;
    if spec.variant.needs_weight() && model.q.is_none() {
        return Err(BhlError::Precondition(format!("variant {} requires a weight Q", spec.variant.name())));
    }
    if spec.variant.uses_weight(model.q.is_some()) && ctx.weight.is_none() {
        return Err(BhlError::Precondition("weighted variant needs a weighted fiber context".into()));
    }
    let corrector = if spec.variant.uses_corrector() { spec.corrector } else { CorrectorMode::None };
    let study = Study { ctx, cell, spec, corrector, need_weight: spec.variant.uses_weight(model.q.is_some()) };
    let lattice = &model.lattice;
    let dim = lattice.dim;
    let eps_min = spec.eps.iter().cloned().fold(f64::INFINITY, f64::min);

    let mut samples: Vec<Sample> =
        brillouin_sample(lattice, &spec.kgrid)?.into_iter().map(|p| Sample { k: p.k, ray: None }).collect();
    for k in &spec.extra_k {
        if k.len() != dim {
            return Err(BhlError::Validation("extra quasi-momentum has the wrong dimension".into()));
        }
        samples.push(Sample { k: k.clone(), ray: None });
    }
    let t_lo = eps_min / 8.0;
    let (per_octave, directions) = match &spec.radial {
        Some(r) => (r.per_octave.max(1), r.directions.clone()),
        None => (8, Vec::new()),
    };
    for dir in &directions {
        let nrm = norm(dir);
        if (nrm - 1.0).abs() > 1e-10 {
            return Err(BhlError::Validation("radial directions must be unit vectors".into()));
        }
        let t_hi = lattice.boundary_radius(dir) * (1.0 - 1e-9);
        let mut ts = geometric(t_lo, t_hi, per_octave);
        if let Some(r) = &spec.radial {
            ts.extend(r.extra_ts.iter().copied().filter(|&t| t > 0.0 && t <= t_hi));
        }
        samples.extend(ts.into_iter().map(|t| ray_sample(dir, t)));
    }
    let mut values = study.sweep(&samples)?;
    let ntrip = study.triples();

    let argmax = |values: &[Vec<f64>], idx: usize| -> usize {
        (0..values.len()).fold(0, |b, i| if values[i][idx] > values[b][idx] { i } else { b })
    };

    // One radial refinement toward 0 when an argmax sits in the innermost shell.
    let mut inner_refinement = false;
    if spec.refine && !directions.is_empty() {
        let innermost = (0..ntrip).any(|idx| {
            let b = argmax(&values, idx);
            values[b][idx] > ZERO_ERROR && norm(&samples[b].k) <= t_lo * 2f64.powf(1.0 / per_octave as f64) * (1.0 + 1e-12)
        });
        if innermost {
            inner_refinement = true;
            let extra: Vec<Sample> = directions
                .iter()
                .flat_map(|dir| geometric(t_lo / 64.0, t_lo, per_octave).into_iter().map(move |t| ray_sample(dir, t)))
                .collect();
            values.extend(study.sweep(&extra)?);
            samples.extend(extra);
        }
    }

    let mut best: Vec<(f64, Vec<f64>)> = (0..ntrip)
        .map(|idx| {
            let b = argmax(&values, idx);
            (values[b][idx], samples[b].k.clone())
        })
        .collect();

    // Local refinement around each argmax: radial, angular (2D), radial again.
    let mut local_points = 0usize;
    if spec.refine {
        let step = 2f64.powf(1.0 / per_octave as f64);
        let angle = if dim == 2 && !directions.is_empty() {
            2.0 * std::f64::consts::PI / directions.len() as f64
        } else if dim == 2 {
            0.2
        } else {
            0.0
        };
        for (idx, slot) in best.iter_mut().enumerate() {
            if slot.0 <= ZERO_ERROR {
                continue;
            }
            let t = norm(&slot.1);
            if t == 0.0 {
                continue;
            }
            let mut dir: Vec<f64> = slot.1.iter().map(|x| x / t).collect();
            let mut t_best = t;
            let t_max = lattice.boundary_radius(&dir) * (1.0 - 1e-9);
            let radial = |dir: &[f64], center: f64, ratio: f64, count: usize| -> Vec<Sample> {
                geometric(center / ratio, (center * ratio).min(t_max), count)
                    .into_iter()
                    .map(|t| ray_sample(dir, t))
                    .collect()
            };
            let mut improve = |cands: Vec<Sample>, dir: &mut Vec<f64>, t_best: &mut f64| -> Result<()> {
                local_points += cands.len();
                if let Some((v, smp)) = study.best_of(cands, idx)? {
                    if v > slot.0 {
                        slot.0 = v;
                        slot.1 = smp.k.clone();
                        if let Some((d, tt)) = smp.ray {
                            *dir = d;
                            *t_best = tt;
                        }
                    }
                }
                Ok(())
            };
            improve(radial(&dir.clone(), t_best, step, 32), &mut dir, &mut t_best)?;
            if angle > 0.0 {
                let cands = (-8..=8)
                    .map(|j| {
                        let d = rotate2(&dir, angle * j as f64 / 16.0);
                        let tt = t_best.min(lattice.boundary_radius(&d) * (1.0 - 1e-9));
                        ray_sample(&d, tt)
                    })
                    .collect();
                improve(cands, &mut dir, &mut t_best)?;
            }
            let fine = radial(&dir.clone(), t_best, step.powf(1.0 / 16.0), 16);
            improve(fine, &mut dir, &mut t_best)?;
        }
    }

    let mut entries = Vec::with_capacity(ntrip);
    for (idx, (err, k)) in best.iter().enumerate() {
        let (ie, it, is) = study.triple(idx);
        let error = if *err <= ZERO_ERROR { 0.0 } else { *err };
        entries.push(ErrorEntry { eps: spec.eps[ie], tau: spec.taus[it], s: spec.ss[is], error, kmax_at: k.clone() });
    }
    let mut fits = Vec::new();
    for &tau in &spec.taus {
        for &s in &spec.ss {
            let pairs: Vec<(f64, f64)> =
                entries.iter().filter(|e| e.tau == tau && e.s == s).map(|e| (e.eps, e.error)).collect();
            let exact = pairs.iter().all(|p| p.1 == 0.0);
            let non_monotone = pairs.windows(2).any(|w| w[1].1 > w[0].1 * (1.0 + 1e-9));
            let (fit, note) = if exact {
                (None, Some("all errors vanish: exact".to_string()))
            } else {
                match rate_fit(&pairs) {
                    Ok(f) => {
                        let note = (!f.excluded.is_empty()).then(|| format!("{} zero errors excluded", f.excluded.len()));
                        (Some(f), note)
                    }
                    Err(e) => (None, Some(e.to_string())),
                }
            };
            fits.push(FitEntry { tau, s, fit, exact, non_monotone, note });
        }
    }
    Ok(ErrorStudyReport {
        scenario: spec.scenario.clone(),
        variant: spec.variant,
        cutoff: ctx.cutoff(),
        regime,
        kgrid: KGridSummary {
            base: spec.kgrid.clone(),
            radial_directions: directions.len(),
            radial_per_octave: per_octave,
            points: samples.len(),
            inner_refinement,
            local_points,
        },
        entries,
        fits,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeOrder {
    Cubic,
    Quadratic,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub branch: usize,
    pub theta: Vec<f64>,
    pub tau: f64,
    pub eps: Vec<f64>,
    pub order: ProbeOrder,
    pub s: f64,
    /// Move each eps to the nearest value at which the homogenized phase is a multiple of 2 pi.
    pub snap: bool,
    /// Evaluate points with `t(eps) > t0` instead of rejecting the probe.
    pub allow_out_of_range: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbePoint {
    pub eps_requested: f64,
    pub eps: f64,
    pub t: f64,
    pub in_range: bool,
    pub lambda: f64,
    pub discrepancy: f64,
    pub scaled: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeTrace {
    pub order: ProbeOrder,
    pub s: f64,
    pub gamma: f64,
    pub mu: f64,
    pub nu: f64,
    pub t0: f64,
    pub points: Vec<ProbePoint>,
    /// max/min of the scaled trace over points with `t <= t0`.
    pub ratio_in_range: Option<f64>,
    /// max/min over all evaluated points.
    pub ratio_all: f64,
    /// Every point satisfied `t <= t0`.
    pub complete: bool,
}

/// Scalar discrepancy of the fitted branch against its quadratic germ along the
/// critical scaling `t(eps)`, weighted by the smoothing factor and divided by `eps`.
pub fn sharpness_probe(ctx: &FiberContext, germ: &GermExpansion, spec: &ProbeSpec, t0: f64) -> Result<ProbeTrace> {
    let j = spec.branch;
    if j >= germ.gamma.len() {
        return Err(BhlError::Validation(format!("branch {j} out of range")));
    }
    if spec.eps.is_empty() || spec.eps.iter().any(|e| !(*e > 0.0)) {
        return Err(BhlError::Validation("probe needs positive eps values".into()));
    }
    if !(spec.tau > 0.0) {
        return Err(BhlError::Validation("probe needs tau > 0".into()));
    }
    let (gamma, mu, nu) = (germ.gamma[j], germ.mu[j], germ.nu[j]);
    let scale = gamma.abs().max(1.0);
    let mu_zero = mu.abs() < 1e-8 * scale;
    let tau = spec.tau;
    // `t = c eps^p`, homogenized phase `beta eps^{p - 1}`.
    let (c, p) = match spec.order {
        ProbeOrder::Cubic => {
            if !mu_zero {
                return Err(BhlError::Precondition(format!("cubic probe needs mu = 0, got {mu:e}")));
            }
            if !(nu.is_finite() && nu.abs() > 1e-8 * scale) {
                return Err(BhlError::Precondition("cubic probe needs nu != 0".into()));
            }
            ((2.0 * std::f64::consts::PI).powf(1.0 / 3.0) * gamma.powf(1.0 / 6.0) * (nu * tau).abs().powf(-1.0 / 3.0), 1.0 / 3.0)
        }
        ProbeOrder::Quadratic => {
            if mu_zero {
                return Err(BhlError::Precondition("quadratic probe needs mu != 0".into()));
            }
            ((2.0 * std::f64::consts::PI * gamma.sqrt() / (mu.abs() * tau)).sqrt(), 0.5)
        }
    };
    let beta = tau * gamma.sqrt() * c;
    let snap = |eps: f64| -> f64 {
        // beta eps^{p-1} = 2 pi k
        let k = (beta * eps.powf(p - 1.0) / (2.0 * std::f64::consts::PI)).round().max(1.0);
        (beta / (2.0 * std::f64::consts::PI * k)).powf(1.0 / (1.0 - p))
    };
    let theta_norm = norm(&spec.theta);
    if (theta_norm - 1.0).abs() > 1e-10 {
        return Err(BhlError::Validation("probe direction must be a unit vector".into()));
    }
    let mut points = Vec::with_capacity(spec.eps.len());
    for &er in &spec.eps {
        let eps = if spec.snap { snap(er) } else { er };
        let t = c * eps.powf(p);
        let in_range = t <= t0;
        if !in_range && !spec.allow_out_of_range {
            return Err(BhlError::Precondition(format!("t(eps) = {t:.4} exceeds t0 = {t0:.4} at eps = {eps:e}")));
        }
        let k: Vec<f64> = spec.theta.iter().map(|x| x * t).collect();
        let sp = ctx.spectrum(&k)?;
        let lambda = ctx.refined_low_eigenvalues(&sp, j + 1)[j];
        let discrepancy = ((tau / eps) * lambda.max(0.0).sqrt()).cos() - ((tau / eps) * t * gamma.sqrt()).cos();
        let weight = (eps * eps / (t * t + eps * eps)).powf(0.5 * spec.s);
        points.push(ProbePoint {
            eps_requested: er,
            eps,
            t,
            in_range,
            lambda,
            discrepancy: discrepancy.abs(),
            scaled: discrepancy.abs() * weight / eps,
        });
    }
    let ratio = |pts: &mut dyn Iterator<Item = f64>| -> Option<f64> {
        let (lo, hi) = pts.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        (lo.is_finite()).then(|| if lo > 0.0 { hi / lo } else { f64::INFINITY })
    };
    let in_range_count = points.iter().filter(|p| p.in_range).count();
    let ratio_in_range =
        if in_range_count >= 2 { ratio(&mut points.iter().filter(|p| p.in_range).map(|p| p.scaled)) } else { None };
    let ratio_all = ratio(&mut points.iter().map(|p| p.scaled)).unwrap_or(f64::NAN);
    Ok(ProbeTrace {
        order: spec.order,
        s: spec.s,
        gamma,
        mu,
        nu,
        t0,
        complete: in_range_count == points.len(),
        points,
        ratio_in_range,
        ratio_all,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CauchyStudyRow {
    pub inverse_eps: usize,
    pub box_cutoff: usize,
    pub rows: Vec<CauchyRow>,
    pub energy_drift: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CauchyStudyReport {
    pub scenario: String,
    pub taus: Vec<f64>,
    pub runs: Vec<CauchyStudyRow>,
    /// Slopes against eps of the errors at the last time of the grid.
    pub final_tau: CauchySlopes,
    /// Slopes against eps of the errors maximized over the time grid.
    pub sup_over_tau: CauchySlopes,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CauchySlopes {
    pub err_u0_l2: Option<RateFit>,
    pub err_u0_h1: Option<RateFit>,
    pub err_v_h1: Option<RateFit>,
    pub err_v_without_pi_h1: Option<RateFit>,
    pub flux_err_l2: Option<RateFit>,
}

impl CauchyStudyRow {
    /// Largest value of `metric` over the time grid.
    pub fn sup(&self, metric: impl Fn(&CauchyRow) -> f64) -> f64 {
        self.rows.iter().map(metric).fold(0.0, f64::max)
    }
}

fn cauchy_slopes(runs: &[CauchyStudyRow], pick: &dyn Fn(&CauchyStudyRow, &dyn Fn(&CauchyRow) -> f64) -> f64) -> CauchySlopes {
    let fit = |f: &dyn Fn(&CauchyRow) -> f64| -> Option<RateFit> {
        let pairs: Vec<(f64, f64)> = runs.iter().map(|r| (1.0 / r.inverse_eps as f64, pick(r, f))).collect();
        rate_fit(&pairs).ok()
    };
    CauchySlopes {
        err_u0_l2: fit(&|r| r.err_u0_l2),
        err_u0_h1: fit(&|r| r.err_u0_h1),
        err_v_h1: fit(&|r| r.err_v_h1),
        err_v_without_pi_h1: fit(&|r| r.err_v_without_pi_h1),
        flux_err_l2: fit(&|r| r.flux_err_l2),
    }
}

/// Solves the Cauchy problem for each `1/eps` with box cutoff `modes_per_period / eps`.
pub fn cauchy_study(
    scenario: &str,
    model: &OperatorModel,
    cell: &CellSolution,
    data: &CauchyData,
    inverse_eps: &[usize],
    taus: &[f64],
    modes_per_period: usize,
) -> Result<CauchyStudyReport> {
    if taus.is_empty() {
        return Err(BhlError::Validation("Cauchy study needs at least one time".into()));
    }
    let mut runs = Vec::with_capacity(inverse_eps.len());
    for &m in inverse_eps {
        let box_cutoff = modes_per_period * m;
        let res = cauchy_solve(model, cell, m, data, taus, box_cutoff)?;
        runs.push(CauchyStudyRow { inverse_eps: m, box_cutoff, rows: res.rows, energy_drift: res.energy_drift });
    }
    let final_tau = cauchy_slopes(&runs, &|r, f| f(r.rows.last().expect("nonempty time grid")));
    let sup_over_tau = cauchy_slopes(&runs, &|r, f| r.sup(f));
    Ok(CauchyStudyReport { scenario: scenario.to_string(), taus: taus.to_vec(), runs, final_tau, sup_over_tau })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws_are_recovered() {
        let pairs: Vec<(f64, f64)> = (3..8).map(|j| 0.5f64.powi(j)).map(|e| (e, 3.0 * e)).collect();
        let f = rate_fit(&pairs).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        let pairs: Vec<(f64, f64)> = (3..8).map(|j| 0.5f64.powi(j)).map(|e| (e, 0.2 * e.powf(0.75))).collect();
        let f = rate_fit(&pairs).unwrap();
        assert!((f.slope - 0.75).abs() < 1e-12);
        assert!((f.intercept - 0.2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_errors_are_excluded_and_noted() {
        let pairs = [(0.5, 0.5), (0.25, 0.0), (0.125, 0.125), (0.0625, 0.0625)];
        let f = rate_fit(&pairs).unwrap();
        assert_eq!(f.excluded, vec![1]);
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!(rate_fit(&[(0.5, 0.0), (0.25, 0.0), (0.125, 1.0)]).is_err());
    }

    #[test]
    fn ladders_must_be_geometric_and_descending() {
        assert!(validate_ladder(&[0.5, 0.25, 0.125, 0.0625]).is_ok());
        assert!(validate_ladder(&[0.5, 0.25, 0.125]).is_err());
        assert!(validate_ladder(&[0.0625, 0.125, 0.25, 0.5]).is_err());
        assert!(validate_ladder(&[0.5, 0.25, 0.1, 0.05]).is_err());
    }

    #[test]
    fn geometric_family_spans_the_interval() {
        let ts = geometric(0.01, 0.16, 8);
        assert_eq!(ts.len(), 33);
        assert!((ts[0] - 0.01).abs() < 1e-15 && (ts[32] - 0.16).abs() < 1e-15);
    }
}
