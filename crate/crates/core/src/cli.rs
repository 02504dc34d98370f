//! Command-line front end. Exit status: 0 on success, 2 on validation
//! failure, 3 on numerical failure.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::cauchy::CauchyData;
use crate::cell::{solve_corrector, solve_second_corrector, voigt_reuss, weighted_corrector};
use crate::checks::{scenarios_of, CheckSession, Outcome};
use crate::config::ScenarioConfig;
use crate::error::{BhlError, Result};
use crate::fiber::Variant;
use crate::germ::{default_ladder, germ_expansion, regime_classify, theta_samples, GermContext, DEFAULT_FIT_TERMS};
use crate::lattice::KGridSpec;
use crate::report::{sha256_hex, two_column, Manifest, ReportWriter};
use crate::scenarios::{builtin, Scenario, BUILTIN_NAMES};
use crate::study::{cauchy_study, operator_error_study, sharpness_probe, ProbeOrder, ProbeSpec};

#[derive(Parser, Debug)]
#[command(name = "bhl", version, about = "Bloch-fiber homogenization laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    /// Scenario config file (JSON).
    #[arg(long, global = true, conflicts_with = "builtin")]
    pub scenario: Option<PathBuf>,
    /// Name of a built-in scenario.
    #[arg(long, global = true)]
    pub builtin: Option<String>,
    /// Comma-separated operator variants (J1, J2, J3, J_energy, J1_weighted, J3_weighted, J_energy_weighted).
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Comma-separated eps ladder.
    #[arg(long, global = true)]
    pub eps: Option<String>,
    /// Comma-separated times.
    #[arg(long, global = true)]
    pub tau: Option<String>,
    /// Comma-separated smoothness indices.
    #[arg(long, global = true)]
    pub s: Option<String>,
    /// Fiber cutoff N.
    #[arg(long, global = true)]
    pub cutoff: Option<usize>,
    /// Uniform k-grid counts per axis, e.g. `33` or `17x17`.
    #[arg(long, global = true)]
    pub kgrid: Option<String>,
    /// Worker threads; the BHL_THREADS environment variable takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "bhl-out")]
    pub out: PathBuf,
    /// Run the acceptance property checks that involve the scenario.
    #[arg(long, global = true)]
    pub check: bool,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Solve the cell problem and report the effective matrix.
    Cell,
    /// Threshold coefficients gamma, mu, nu per direction.
    Germ {
        #[arg(long, default_value_t = 16)]
        thetas: usize,
    },
    /// Lowest fiber eigenvalues along a ray from k = 0 to the zone boundary.
    Bands {
        #[arg(long, default_value_t = 64)]
        points: usize,
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Ray direction (comma-separated); the first sampled direction by default.
        #[arg(long)]
        theta: Option<String>,
    },
    /// Operator-norm error study with rate fits.
    ErrorStudy,
    /// Resonance probe along the critical scale t(eps).
    Sharpness {
        #[arg(long, value_enum, default_value_t = OrderArg::Cubic)]
        order: OrderArg,
        #[arg(long)]
        theta: Option<String>,
        #[arg(long, default_value_t = 0)]
        branch: usize,
        /// Keep points whose critical scale exceeds the estimated threshold radius.
        #[arg(long)]
        allow_out_of_range: bool,
        /// Use the requested eps values exactly instead of snapping them to resonance.
        #[arg(long)]
        no_snap: bool,
    },
    /// Cauchy problem on the unit torus with periodic data.
    Cauchy {
        /// Data file (JSON); the scenario preset by default.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        modes_per_period: Option<usize>,
    },
    /// Classify the convergence regime from the third-order operators.
    Regimes {
        #[arg(long, default_value_t = 16)]
        thetas: usize,
    },
    /// Print a built-in scenario as an editable config, or list the builtins.
    Builtin { name: Option<String> },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum OrderArg {
    Cubic,
    Quadratic,
}

/// Parses `argv` (program name first), runs the command and returns the exit status.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("bhl: {e}");
            e.exit_code()
        }
    }
}

fn threads(common: &Common) -> Result<usize> {
    let env = std::env::var("BHL_THREADS").ok();
    let n = match env {
        Some(v) => Some(v.trim().parse::<usize>().map_err(|_| BhlError::Validation(format!("BHL_THREADS = `{v}` is not a count")))?),
        None => common.threads,
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(BhlError::Validation("thread count must be positive".into()));
        }
        // A pool installed earlier in the process stays in place.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

fn list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| BhlError::Validation(format!("--{what}: `{x}` is not a number"))))
        .collect()
}

fn variants(text: &str) -> Result<Vec<Variant>> {
    text.split(',').map(|v| Variant::parse(v.trim()).ok_or_else(|| BhlError::Validation(format!("unknown variant `{v}`")))).collect()
}

struct Loaded {
    scenario: Scenario,
    config_json: String,
    builtin: bool,
}

fn load(common: &Common) -> Result<Loaded> {
    match (&common.scenario, &common.builtin) {
        (Some(path), _) => {
            let origin = path.display().to_string();
            let text = std::fs::read_to_string(path).map_err(|e| BhlError::Config {
                path: origin.clone(),
                field: "<file>".into(),
                message: e.to_string(),
            })?;
            let cfg = ScenarioConfig::parse(&text, &origin)?;
            Ok(Loaded { scenario: cfg.to_scenario(&origin)?, config_json: text, builtin: false })
        }
        (None, Some(name)) => {
            let scenario = builtin(name)?;
            let config_json = ScenarioConfig::from_scenario(&scenario).to_json()?;
            Ok(Loaded { scenario, config_json, builtin: true })
        }
        (None, None) => Err(BhlError::Validation("one of --scenario or --builtin is required".into())),
    }
}

/// Applies the command-line overrides to the scenario defaults.
fn apply_overrides(sc: &mut Scenario, common: &Common) -> Result<()> {
    if let Some(e) = &common.eps {
        sc.defaults.eps = list(e, "eps")?;
    }
    if let Some(t) = &common.tau {
        sc.defaults.taus = list(t, "tau")?;
    }
    if let Some(s) = &common.s {
        sc.defaults.ss = list(s, "s")?;
    }
    if let Some(n) = common.cutoff {
        sc.defaults.fiber_cutoff = n;
    }
    if let Some(k) = &common.kgrid {
        let counts: Vec<usize> = k
            .split('x')
            .map(|c| c.trim().parse::<usize>().map_err(|_| BhlError::Validation(format!("--kgrid: `{c}` is not a count"))))
            .collect::<Result<_>>()?;
        let dim = sc.model.lattice.dim;
        let counts = if counts.len() == 1 { vec![counts[0]; dim] } else { counts };
        if counts.len() != dim || counts.contains(&0) {
            return Err(BhlError::Validation(format!("--kgrid needs {dim} positive counts")));
        }
        sc.defaults.kgrid = KGridSpec::Uniform { counts };
    }
    Ok(())
}

fn direction(text: &Option<String>, dim: usize) -> Result<Vec<f64>> {
    match text {
        Some(t) => {
            let v = list(t, "theta")?;
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if v.len() != dim || norm == 0.0 {
                return Err(BhlError::Validation(format!("--theta needs {dim} components, not all zero")));
            }
            Ok(v.iter().map(|x| x / norm).collect())
        }
        None => Ok(theta_samples(dim, 1).remove(0)),
    }
}

#[derive(Serialize)]
struct CheckReport<'a> {
    scenario: &'a str,
    outcomes: &'a [Outcome],
}

fn execute(cli: &Cli) -> Result<i32> {
    let start = Instant::now();
    let threads = threads(&cli.common)?;
    if let Some(Command::Builtin { name }) = &cli.command {
        match name {
            None => BUILTIN_NAMES.iter().for_each(|n| println!("{n}")),
            Some(n) => println!("{}", ScenarioConfig::from_scenario(&builtin(n)?).to_json()?),
        }
        return Ok(0);
    }
    let loaded = load(&cli.common)?;
    let mut sc = loaded.scenario;
    apply_overrides(&mut sc, &cli.common)?;
    let mut out = ReportWriter::new(&cli.common.out)?;
    let mut code = 0;

    if cli.common.check {
        if !loaded.builtin {
            return Err(BhlError::Validation("--check runs on built-in scenarios only".into()));
        }
        let session = CheckSession::new();
        let outcomes: Vec<Outcome> = (1..=13u8)
            .filter(|&id| scenarios_of(id).contains(&sc.name.as_str()))
            .map(|id| {
                let o = session.run(id);
                println!("{}", o.line());
                o
            })
            .collect();
        if outcomes.iter().any(|o| !o.pass) {
            code = 2;
        }
        out.json("check.json", &CheckReport { scenario: &sc.name, outcomes: &outcomes })?;
    }

    let command = match &cli.command {
        Some(c) => c.clone(),
        None if cli.common.check => Command::Regimes { thetas: 0 },
        None => return Err(BhlError::Validation("a subcommand or --check is required".into())),
    };
    let command_name = match &command {
        Command::Cell => "cell",
        Command::Germ { .. } => "germ",
        Command::Bands { .. } => "bands",
        Command::ErrorStudy => "error-study",
        Command::Sharpness { .. } => "sharpness",
        Command::Cauchy { .. } => "cauchy",
        Command::Regimes { .. } => "regimes",
        Command::Builtin { .. } => unreachable!("handled above"),
    };
    let dim = sc.model.lattice.dim;
    let weighted = sc.model.q.is_some();
    let mut grids = json!(null);

    match command {
        Command::Cell => {
            let cell = solve_corrector(&sc.model, sc.defaults.cell_cutoff)?;
            let summary = cell.summary();
            let vr = voigt_reuss(&cell);
            println!("g0 = {:?}", summary.g_eff);
            println!("Voigt margin {:.3e}, Reuss margin {:.3e}, residual {:.3e}", vr.upper_margin, vr.lower_margin, cell.residual_norm);
            out.json("cell.json", &json!({ "scenario": sc.name, "cell": summary, "voigt_reuss": vr }))?;
        }
        Command::Germ { thetas } if thetas > 0 => {
            let prep = sc.prepare_matched(weighted)?;
            let second = if weighted { None } else { Some(solve_second_corrector(&sc.model, &prep.cell, prep.ctx.cutoff())?) };
            let wc = if weighted { Some(weighted_corrector(&sc.model, &prep.cell)?) } else { None };
            let ctx = GermContext {
                model: &sc.model,
                cell: &prep.cell,
                second: second.as_ref(),
                weighted: wc.as_ref(),
                fiber: Some(&prep.ctx),
                ladder: default_ladder(sc.validation.t0_hat),
                fit_terms: DEFAULT_FIT_TERMS,
            };
            let mut rows = Vec::new();
            for th in theta_samples(dim, thetas) {
                rows.push(germ_expansion(&ctx, &th)?);
            }
            let max_mu = rows.iter().flat_map(|r| r.mu.iter()).fold(0.0f64, |a, &b| a.max(b.abs()));
            println!("{} directions, max |mu| = {max_mu:.3e}", rows.len());
            let gamma: Vec<(f64, f64)> = rows.iter().enumerate().map(|(i, r)| (i as f64, r.gamma[0])).collect();
            let mu: Vec<(f64, f64)> = rows.iter().enumerate().map(|(i, r)| (i as f64, r.mu[0])).collect();
            out.text("germ_gamma.dat", &two_column(&gamma))?;
            out.text("germ_mu.dat", &two_column(&mu))?;
            out.json("germ.json", &json!({ "scenario": sc.name, "rows": rows }))?;
        }
        Command::Germ { .. } => return Err(BhlError::Validation("--thetas must be positive".into())),
        Command::Bands { points, count, theta } => {
            let prep = sc.prepare(None, weighted)?;
            let th = direction(&theta, dim)?;
            let radius = sc.model.lattice.boundary_radius(&th);
            let mut rows = Vec::with_capacity(points + 1);
            for i in 0..=points {
                let t = radius * i as f64 / points.max(1) as f64;
                let k: Vec<f64> = th.iter().map(|x| t * x).collect();
                let spec = prep.ctx.spectrum(&k)?;
                rows.push((t, spec.eigenvalues().iter().take(count).copied().collect::<Vec<f64>>()));
            }
            for b in 0..count {
                let pairs: Vec<(f64, f64)> = rows.iter().filter_map(|(t, v)| v.get(b).map(|&l| (*t, l))).collect();
                out.text(&format!("bands_{b}.dat"), &two_column(&pairs))?;
            }
            grids = json!({ "direction": th, "points": points + 1, "radius": radius });
            out.json("bands.json", &json!({ "scenario": sc.name, "direction": th, "rows": rows }))?;
        }
        Command::ErrorStudy => {
            let list = match &cli.common.variant {
                Some(v) => variants(v)?,
                None => vec![if weighted { Variant::J3Weighted } else { Variant::J1Cos }],
            };
            for variant in list {
                let prep = sc.prepare(None, variant.uses_weight(weighted))?;
                let spec = sc.study_spec(variant);
                let rep = operator_error_study(&prep.ctx, &prep.cell, &spec, Some(sc.expected))?;
                for f in &rep.fits {
                    match &f.fit {
                        Some(r) => println!("{} tau {} s {}: slope {:.4} (R2 {:.4})", variant.name(), f.tau, f.s, r.slope, r.r2),
                        None => println!("{} tau {} s {}: no fit ({})", variant.name(), f.tau, f.s, f.note.clone().unwrap_or_default()),
                    }
                }
                grids = serde_json::to_value(&rep.kgrid)?;
                out.study(&rep)?;
            }
        }
        Command::Sharpness { order, theta, branch, allow_out_of_range, no_snap } => {
            let prep = sc.prepare(None, false)?;
            let second = solve_second_corrector(&sc.model, &prep.cell, sc.defaults.cell_cutoff)?;
            let ctx = GermContext {
                model: &sc.model,
                cell: &prep.cell,
                second: Some(&second),
                weighted: None,
                fiber: None,
                ladder: default_ladder(sc.validation.t0_hat),
                fit_terms: DEFAULT_FIT_TERMS,
            };
            let th = direction(&theta, dim)?;
            let ge = germ_expansion(&ctx, &th)?;
            let eps = match &cli.common.eps {
                Some(e) => list(e, "eps")?,
                None => (4..=12).map(|j| 0.5f64.powi(j)).collect(),
            };
            let ss = match &cli.common.s {
                Some(s) => list(s, "s")?,
                None => vec![1.0, 1.5],
            };
            let order = match order {
                OrderArg::Cubic => ProbeOrder::Cubic,
                OrderArg::Quadratic => ProbeOrder::Quadratic,
            };
            let mut traces = Vec::new();
            for s in ss {
                let spec = ProbeSpec {
                    branch,
                    theta: th.clone(),
                    tau: sc.defaults.taus.first().copied().unwrap_or(1.0),
                    eps: eps.clone(),
                    order,
                    s,
                    snap: !no_snap,
                    allow_out_of_range,
                };
                let tr = sharpness_probe(&prep.ctx, &ge, &spec, sc.validation.t0_hat)?;
                println!("s {s}: ratio over all points {:.3}, in range {:?}", tr.ratio_all, tr.ratio_in_range);
                let pairs: Vec<(f64, f64)> = tr.points.iter().map(|p| (p.eps, p.discrepancy)).collect();
                out.text(&format!("sharpness_s{s}.dat"), &two_column(&pairs))?;
                traces.push(tr);
            }
            out.json("sharpness.json", &json!({ "scenario": sc.name, "germ": ge, "traces": traces }))?;
        }
        Command::Cauchy { data, modes_per_period } => {
            let preset = sc.cauchy.clone();
            let data: CauchyData = match (&data, &preset) {
                (Some(p), _) => {
                    let origin = p.display().to_string();
                    let text = std::fs::read_to_string(p)?;
                    let de = &mut serde_json::Deserializer::from_str(&text);
                    serde_path_to_error::deserialize(de).map_err(|e| BhlError::Config {
                        path: origin,
                        field: e.path().to_string(),
                        message: e.into_inner().to_string(),
                    })?
                }
                (None, Some(pr)) => pr.data.clone(),
                (None, None) => return Err(BhlError::Validation(format!("{} has no Cauchy preset; pass --data", sc.name))),
            };
            let inverse_eps: Vec<usize> = match &cli.common.eps {
                Some(e) => list(e, "eps")?
                    .into_iter()
                    .map(|x| {
                        let m = (1.0 / x).round();
                        if x <= 0.0 || (1.0 / x - m).abs() > 1e-9 {
                            Err(BhlError::Validation(format!("eps = {x} is not the reciprocal of an integer")))
                        } else {
                            Ok(m as usize)
                        }
                    })
                    .collect::<Result<_>>()?,
                None => preset.as_ref().map(|p| p.inverse_eps.clone()).unwrap_or_else(|| vec![8, 16, 32]),
            };
            let taus = match &cli.common.tau {
                Some(t) => list(t, "tau")?,
                None => preset.as_ref().map(|p| p.taus.clone()).unwrap_or_else(crate::scenarios::cauchy_times),
            };
            let mpp = modes_per_period.or(preset.as_ref().map(|p| p.modes_per_period)).unwrap_or(24);
            let cell = solve_corrector(&sc.model, sc.defaults.cell_cutoff.max(24))?;
            let rep = cauchy_study(&sc.name, &sc.model, &cell, &data, &inverse_eps, &taus, mpp)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["inverse_eps", "tau", "u_eps_l2", "err_u0_l2", "err_u0_h1", "err_v_h1", "err_v_without_pi_h1", "flux_err_l2"])?;
            for run in &rep.runs {
                for r in &run.rows {
                    let f = crate::report::fmt17;
                    w.write_record([
                        run.inverse_eps.to_string(),
                        f(r.tau),
                        f(r.u_eps_l2),
                        f(r.err_u0_l2),
                        f(r.err_u0_h1),
                        f(r.err_v_h1),
                        f(r.err_v_without_pi_h1),
                        f(r.flux_err_l2),
                    ])?;
                }
            }
            let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
            out.text("cauchy.csv", &String::from_utf8_lossy(&bytes))?;
            let metrics: [(&str, fn(&crate::cauchy::CauchyRow) -> f64); 3] =
                [("err_u0_h1", |r| r.err_u0_h1), ("err_v_h1", |r| r.err_v_h1), ("flux_err_l2", |r| r.flux_err_l2)];
            for (metric, pick) in metrics {
                let pairs: Vec<(f64, f64)> = rep.runs.iter().map(|r| (1.0 / r.inverse_eps as f64, r.sup(pick))).collect();
                out.text(&format!("cauchy_{metric}.dat"), &two_column(&pairs))?;
            }
            let slope = |f: &Option<crate::study::RateFit>| f.as_ref().map(|x| format!("{:.3}", x.slope)).unwrap_or("-".into());
            println!(
                "sup over tau: |u - v|_H1 slope {}, |u - u0|_H1 slope {}, flux slope {}",
                slope(&rep.sup_over_tau.err_v_h1),
                slope(&rep.sup_over_tau.err_u0_h1),
                slope(&rep.sup_over_tau.flux_err_l2)
            );
            grids = json!({ "inverse_eps": inverse_eps, "modes_per_period": mpp, "taus": taus.len() });
            out.json("cauchy.json", &rep)?;
        }
        Command::Regimes { thetas } => {
            let count = if thetas == 0 { 16 } else { thetas };
            let cell = solve_corrector(&sc.model, sc.defaults.cell_cutoff)?;
            let wc = if weighted { Some(weighted_corrector(&sc.model, &cell)?) } else { None };
            let rep = regime_classify(&sc.model, &cell, None, wc.as_ref(), &theta_samples(dim, count), sc.validation.c_star_hat)?;
            println!("verdict {:?} (expected {:?}); N = 0: {}, N_0 = 0: {}", rep.regime, sc.expected, rep.n_vanishes, rep.n0_vanishes);
            if rep.regime != sc.expected {
                code = 2;
            }
            out.json("regimes.json", &json!({ "scenario": sc.name, "expected": sc.expected, "report": rep }))?;
        }
        Command::Builtin { .. } => unreachable!("handled above"),
    }

    let manifest = Manifest {
        command: command_name.to_string(),
        scenario: sc.name.clone(),
        config_hash: sha256_hex(loaded.config_json.as_bytes()),
        cutoffs: json!({ "cell": sc.defaults.cell_cutoff, "fiber": sc.defaults.fiber_cutoff }),
        grids: if grids.is_null() { serde_json::to_value(&sc.defaults.kgrid)? } else { grids },
        threads,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        files: out.files().to_vec(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    out.manifest(&manifest)?;
    Ok(code)
}
