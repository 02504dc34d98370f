//! Report persistence: study CSV, JSON documents, two-column plot data and
//! the run manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::study::ErrorStudyReport;

pub const CSV_COLUMNS: [&str; 9] = ["scenario", "variant", "eps", "tau", "s", "error", "kmax_at", "slope", "r2"];

/// Fixed-width scientific format with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per (eps, tau, s) entry; slope and r2 repeat the fit of the entry's (tau, s) series.
pub fn study_csv(report: &ErrorStudyReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for e in &report.entries {
        let fit = report.fit(e.tau, e.s).and_then(|f| f.fit.as_ref());
        let k = e.kmax_at.iter().map(|&v| fmt17(v)).collect::<Vec<_>>().join(" ");
        w.write_record([
            report.scenario.clone(),
            report.variant.name().to_string(),
            fmt17(e.eps),
            fmt17(e.tau),
            fmt17(e.s),
            fmt17(e.error),
            k,
            fit.map_or(String::new(), |f| fmt17(f.slope)),
            fit.map_or(String::new(), |f| fmt17(f.r2)),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Whitespace-separated `x y` lines.
pub fn two_column(pairs: &[(f64, f64)]) -> String {
    pairs.iter().map(|(x, y)| format!("{} {}\n", fmt17(*x), fmt17(*y))).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects the files written by one command.
pub struct ReportWriter {
    dir: PathBuf,
    files: Vec<String>,
}

impl ReportWriter {
    /// The directory is created with the first file written.
    pub fn new(dir: &Path) -> Result<Self> {
        Ok(ReportWriter { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn text(&mut self, name: &str, content: &str) -> Result<PathBuf> {
        if self.files.is_empty() {
            std::fs::create_dir_all(&self.dir)?;
        }
        let path = self.dir.join(name);
        std::fs::write(&path, content)?;
        self.files.push(name.to_string());
        Ok(path)
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.text(name, &s)
    }

    /// CSV, JSON and one plot file per (tau, s) series of a study.
    pub fn study(&mut self, report: &ErrorStudyReport) -> Result<()> {
        let stem = format!("{}_{}", report.scenario, report.variant.name());
        self.text(&format!("{stem}.csv"), &study_csv(report)?)?;
        self.json(&format!("{stem}.json"), report)?;
        for f in &report.fits {
            let data = two_column(&report.errors(f.tau, f.s));
            self.text(&format!("{stem}_tau{}_s{}.dat", f.tau, f.s), &data)?;
        }
        Ok(())
    }

    pub fn manifest(&mut self, m: &Manifest) -> Result<PathBuf> {
        self.json("manifest.json", m)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub scenario: String,
    /// SHA-256 of the scenario config JSON.
    pub config_hash: String,
    pub cutoffs: serde_json::Value,
    pub grids: serde_json::Value,
    pub threads: usize,
    pub wall_time_seconds: f64,
    pub files: Vec<String>,
    pub version: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::Variant;
    use crate::lattice::KGridSpec;
    use crate::study::{ErrorEntry, FitEntry, KGridSummary, RateFit};

    fn report() -> ErrorStudyReport {
        ErrorStudyReport {
            scenario: "demo".into(),
            variant: Variant::J1Cos,
            cutoff: 4,
            regime: None,
            kgrid: KGridSummary {
                base: KGridSpec::Uniform { counts: vec![3] },
                radial_directions: 0,
                radial_per_octave: 0,
                points: 3,
                inner_refinement: false,
                local_points: 0,
            },
            entries: vec![
                ErrorEntry { eps: 0.5, tau: 1.0, s: 1.0, error: 0.1, kmax_at: vec![0.25, -1.0] },
                ErrorEntry { eps: 0.25, tau: 1.0, s: 1.0, error: 1.0 / 3.0, kmax_at: vec![0.125, 0.0] },
            ],
            fits: vec![FitEntry {
                tau: 1.0,
                s: 1.0,
                fit: Some(RateFit { slope: 1.0, intercept: 0.0, r2: 1.0, excluded: vec![], reliable: true }),
                exact: false,
                non_monotone: false,
                note: None,
            }],
        }
    }

    #[test]
    fn csv_has_the_fixed_columns_and_17_digits() {
        let text = study_csv(&report()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        let row = lines.next().unwrap();
        assert!(row.starts_with("demo,J1,5.0000000000000000e-1,"), "{row}");
        assert!(text.contains("3.3333333333333331e-1"));
        assert_eq!(text, study_csv(&report()).unwrap());
    }

    #[test]
    fn fmt17_round_trips() {
        for x in [1.0 / 3.0, 2f64.sqrt(), 1e-300, -7.25e12] {
            assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn hash_matches_a_known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
