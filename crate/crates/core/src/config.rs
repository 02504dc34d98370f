//! JSON scenario configs: parsing with path-anchored diagnostics, conversion to
//! and from [`Scenario`].

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell::solve_corrector;
use crate::coefficients::{OperatorModel, PeriodicMatrixFunction, SymbolB};
use crate::error::{BhlError, Result};
use crate::fiber::Variant;
use crate::germ::{regime_classify, theta_samples, Regime};
use crate::lattice::build_lattice;
use crate::linalg::{cx, CMat};
use crate::scenarios::{finish, study_defaults, CauchyPreset, Scenario, StudyDefaults};

/// A complex matrix as separate real and imaginary row lists.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub multi_index: Vec<i64>,
    pub re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Lattice basis, one row per basis vector.
    pub lattice: Vec<Vec<f64>>,
    /// Symbol matrices `b_1, ..., b_d`.
    pub symbol: Vec<MatrixSpec>,
    pub g: Vec<CoefficientSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<CoefficientSpec>>,
    /// Classified from the germ when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_regime: Option<Regime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defaults: Option<StudyDefaults>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cauchy: Option<CauchyPreset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

fn config_error(path: &str, field: impl Into<String>, message: impl Into<String>) -> BhlError {
    BhlError::Config { path: path.to_string(), field: field.into(), message: message.into() }
}

impl ScenarioConfig {
    /// Parses JSON text; `origin` names the source in diagnostics.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            config_error(origin, field, format!("{inner} (line {}, column {})", inner.line(), inner.column()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(&path.display().to_string(), "<file>", e.to_string()))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Builds and validates the scenario. Failures name the offending field.
    pub fn to_scenario(&self, origin: &str) -> Result<Scenario> {
        let anchored = |field: String| move |e: BhlError| config_error(origin, field, e.to_string());
        let lattice = build_lattice(&self.lattice).map_err(anchored("lattice".into()))?;
        let dim = lattice.dim;
        let mut b = Vec::with_capacity(self.symbol.len());
        for (l, m) in self.symbol.iter().enumerate() {
            b.push(matrix(m, origin, &format!("symbol[{l}]"))?);
        }
        if b.len() != dim {
            return Err(config_error(origin, "symbol", format!("expected {dim} matrices, found {}", b.len())));
        }
        let symbol = SymbolB::new(b).map_err(anchored("symbol".into()))?;
        let g = field(&self.g, dim, symbol.m, origin, "g")?;
        let q = match &self.q {
            Some(list) => Some(field(list, dim, symbol.n, origin, "q")?),
            None => None,
        };
        let model = OperatorModel { lattice, symbol, g, q };
        let defaults = self.defaults.clone().unwrap_or_else(|| study_defaults(dim, model.g.bandwidth() + 4));
        if defaults.eps.is_empty() || defaults.eps.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(config_error(origin, "defaults.eps", "values must lie in (0, 1]"));
        }
        let expected = match self.expected_regime {
            Some(r) => r,
            None => {
                let cell = solve_corrector(&model, defaults.cell_cutoff).map_err(anchored("g".into()))?;
                let c_star = crate::coefficients::validate_model(&model, 64, 64).map_err(anchored("g".into()))?.c_star_hat;
                regime_classify(&model, &cell, None, None, &theta_samples(dim, 16), c_star)
                    .map_err(anchored("g".into()))?
                    .regime
            }
        };
        finish(&self.name, &self.description, model, expected, defaults, self.cauchy.clone()).map_err(anchored("g".into()))
    }

    /// Config reproducing `sc`.
    pub fn from_scenario(sc: &Scenario) -> Self {
        ScenarioConfig {
            name: sc.name.clone(),
            description: sc.description.clone(),
            lattice: sc.model.lattice.basis.clone(),
            symbol: sc.model.symbol.b.iter().map(matrix_spec).collect(),
            g: coefficient_list(&sc.model.g),
            q: sc.model.q.as_ref().map(coefficient_list),
            expected_regime: Some(sc.expected),
            defaults: Some(sc.defaults.clone()),
            variants: Vec::new(),
            cauchy: sc.cauchy.clone(),
            output: None,
        }
    }
}

fn matrix(m: &MatrixSpec, origin: &str, at: &str) -> Result<CMat> {
    let rows = m.re.len();
    let cols = m.re.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(config_error(origin, format!("{at}.re"), "matrix is empty"));
    }
    if let Some(r) = m.re.iter().position(|r| r.len() != cols) {
        return Err(config_error(origin, format!("{at}.re[{r}]"), format!("row length differs from {cols}")));
    }
    if let Some(im) = &m.im {
        if im.len() != rows || im.iter().any(|r| r.len() != cols) {
            return Err(config_error(origin, format!("{at}.im"), format!("shape must match re ({rows} x {cols})")));
        }
    }
    Ok(faer::Mat::from_fn(rows, cols, |i, j| cx(m.re[i][j], m.im.as_ref().map_or(0.0, |im| im[i][j]))))
}

fn field(list: &[CoefficientSpec], dim: usize, n: usize, origin: &str, name: &str) -> Result<PeriodicMatrixFunction> {
    let mut coeffs = BTreeMap::new();
    for (i, c) in list.iter().enumerate() {
        let at = format!("{name}[{i}]");
        if c.multi_index.len() != dim {
            return Err(config_error(origin, format!("{at}.multi_index"), format!("expected {dim} entries")));
        }
        let v = matrix(&MatrixSpec { re: c.re.clone(), im: c.im.clone() }, origin, &at)?;
        if v.nrows() != n || v.ncols() != n {
            return Err(config_error(origin, at, format!("expected a {n} x {n} matrix")));
        }
        if coeffs.insert(c.multi_index.clone(), v).is_some() {
            return Err(config_error(origin, format!("{at}.multi_index"), "duplicate multi-index"));
        }
    }
    if list.is_empty() {
        return Err(config_error(origin, name, "at least one coefficient is required"));
    }
    PeriodicMatrixFunction::new(dim, n, n, coeffs, true).map_err(|e| config_error(origin, name, e.to_string()))
}

fn matrix_spec(m: &CMat) -> MatrixSpec {
    let re: Vec<Vec<f64>> = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)].re).collect()).collect();
    let im: Vec<Vec<f64>> = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)].im).collect()).collect();
    let has_im = im.iter().flatten().any(|&v| v != 0.0);
    MatrixSpec { re, im: has_im.then_some(im) }
}

fn coefficient_list(f: &PeriodicMatrixFunction) -> Vec<CoefficientSpec> {
    f.coeffs
        .iter()
        .map(|(m, c)| {
            let MatrixSpec { re, im } = matrix_spec(c);
            CoefficientSpec { multi_index: m.clone(), re, im }
        })
        .collect()
}
