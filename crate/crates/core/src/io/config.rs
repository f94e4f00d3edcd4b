//! Run configuration read from TOML.
//!
//! ```toml
//! [model]
//! family = "LT"                 # LL | LT | LS, for simulate and reproduce-tables
//! data = "us.csv"               # filter: observations
//! time_column = "quarter"       # optional
//! columns = ["invest", "inventory"]
//! b = [[1, 0], [0, 1]]          # filter: design, default I
//! c = [[1, 1], [0, 1]]          # filter: transition, default I
//! discounts = [0.2, 0.4]        # discount evolution; or w = [[...]]
//! v_true = [[1, 2], [2, 5]]     # simulation truth
//!
//! [priors]
//! m0 = [80.622, 4.047]
//! p0_scale = 1000.0             # or p0 = [[...]]
//! v0 = [[66.403, 22.239], [22.239, 46.547]]
//! eta0 = 10.0
//! k0_scale = 0.001              # or k0 = [[...]] on the vech scale
//!
//! [run]
//! seed = 2024
//! n_series = 200
//! length = 500
//! burn_in = 0
//! snapshots = [100, 200, 500]
//! models = ["DLM1", "DLM3"]
//!
//! [output]
//! path = "report.json"
//! format = "json"               # or "csv"
//! ```
//!
//! Every key is optional. Unknown keys are rejected with their position.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dlm::{check_discounts, Evolution, FilterState, ObsMode, StateSpaceSpec, VarBelief};
use crate::error::{Error, Result};
use crate::gsop::MatrixVarBelief;
use crate::linalg;
use crate::sim::{default_v_true, Dlm1Priors, ExperimentOptions, Family, ModelKind, SimSpec};

/// Matrices are written as lists of rows.
pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub priors: PriorSection,
    pub run: RunSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub family: Family,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_column: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<Rows>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<Rows>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discounts: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_true: Option<Rows>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            family: Family::LL,
            data: None,
            time_column: None,
            columns: None,
            b: None,
            c: None,
            w: None,
            discounts: None,
            v_true: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p0: Option<Rows>,
    pub p0_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0: Option<Rows>,
    pub eta0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0: Option<Rows>,
    pub k0_scale: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        let d = Dlm1Priors::default();
        PriorSection {
            m0: None,
            p0: None,
            p0_scale: d.p0_scale,
            v0: None,
            eta0: d.eta0,
            k0: None,
            k0_scale: d.k0_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub n_series: usize,
    pub length: usize,
    pub burn_in: usize,
    pub snapshots: Vec<usize>,
    pub models: Vec<ModelKind>,
    /// Replication written by `simulate`.
    pub index: usize,
    /// Monte Carlo draws for `postulate-check`.
    pub draws: usize,
    pub bins: usize,
    /// Degrees of freedom of the t laws in `postulate-check`.
    pub dof: f64,
    /// Randomised cases for `postulate-check` and `sop-compare`.
    pub cases: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 2024,
            n_series: 200,
            length: 500,
            burn_in: 0,
            snapshots: vec![100, 200, 500],
            models: vec![ModelKind::Dlm1, ModelKind::Dlm3],
            index: 0,
            draws: 1_000_000,
            bins: 8,
            dof: 30.0,
            cases: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub format: Format,
    /// Include the per-step series in filter reports.
    pub series: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            path: None,
            format: Format::Json,
            series: true,
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg = parse_unvalidated(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates a config file. A relative `model.data` path is taken
/// relative to the file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let cfg = read_config(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// [`load_config`] without the final validation, for callers that apply
/// overrides first.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg: RunConfig = parse_unvalidated(&text)?;
    if let (Some(data), Some(dir)) = (&cfg.model.data, path.parent()) {
        if data.is_relative() {
            cfg.model.data = Some(dir.join(data));
        }
    }
    Ok(cfg)
}

fn parse_unvalidated(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| {
        let loc = e.span().map(|s| line_col(text, s.start));
        Error::Config {
            line: loc.map(|l| l.0),
            column: loc.map(|l| l.1),
            message: e.message().trim().to_string(),
        }
    })
}

pub fn to_toml(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config {
        line: None,
        column: None,
        message: e.to_string(),
    })
}

fn field(name: &str, reason: impl Into<String>) -> Error {
    Error::ConfigField {
        field: name.to_string(),
        reason: reason.into(),
    }
}

fn to_matrix(rows: &Rows, name: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(field(name, "empty matrix"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != m) {
        return Err(field(name, format!("row {} has {} entries, expected {m}", i + 1, rows[i].len())));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(field(name, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn to_sym(rows: &Rows, name: &str, dim: Option<usize>) -> Result<DMatrix<f64>> {
    let a = to_matrix(rows, name)?;
    if let Some(d) = dim {
        if a.nrows() != d || a.ncols() != d {
            return Err(field(name, format!("expected {d}x{d}, got {}x{}", a.nrows(), a.ncols())));
        }
    }
    linalg::check_symmetric(&a, "matrix").map_err(|e| field(name, e.to_string()))?;
    Ok(linalg::symmetrize(&a))
}

fn psd(rows: &Rows, name: &str, dim: Option<usize>) -> Result<DMatrix<f64>> {
    let a = to_sym(rows, name, dim)?;
    linalg::psd_repair(&a).map_err(|e| field(name, e.to_string()))
}

impl RunConfig {
    /// Checks every field against the constraints of the module it feeds.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if let Some(d) = &m.discounts {
            if d.is_empty() {
                return Err(field("model.discounts", "empty list"));
            }
            check_discounts(d).map_err(|_| {
                let bad = d.iter().find(|&&x| !(x > 0.0 && x <= 1.0)).copied().unwrap_or(f64::NAN);
                field("model.discounts", format!("discount out of (0,1]: {bad}"))
            })?;
            if m.w.is_some() {
                return Err(field("model.w", "give either w or discounts, not both"));
            }
        }
        if let Some(path) = &m.data {
            if !path.is_file() {
                return Err(field("model.data", format!("file not found: {}", path.display())));
            }
        }
        if let Some(v) = &m.v_true {
            let v = to_sym(v, "model.v_true", Some(2))?;
            linalg::check_spd(&v, "v_true").map_err(|e| field("model.v_true", e.to_string()))?;
        }
        if let Some(w) = &m.w {
            psd(w, "model.w", None)?;
        }
        for (rows, name) in [(&m.b, "model.b"), (&m.c, "model.c")] {
            if let Some(r) = rows {
                to_matrix(r, name)?;
            }
        }

        let p = &self.priors;
        if !(p.eta0 > 0.0 && p.eta0.is_finite()) {
            return Err(field("priors.eta0", "must be positive"));
        }
        if !(p.p0_scale >= 0.0 && p.p0_scale.is_finite()) {
            return Err(field("priors.p0_scale", "must be non-negative"));
        }
        if !(p.k0_scale >= 0.0 && p.k0_scale.is_finite()) {
            return Err(field("priors.k0_scale", "must be non-negative"));
        }
        if let Some(r) = &p.p0 {
            psd(r, "priors.p0", None)?;
        }
        if let Some(r) = &p.k0 {
            psd(r, "priors.k0", None)?;
        }
        if let Some(r) = &p.v0 {
            to_sym(r, "priors.v0", None)?;
        }
        if p.m0.iter().flatten().any(|x| !x.is_finite()) {
            return Err(field("priors.m0", "entries must be finite"));
        }

        let r = &self.run;
        if r.n_series == 0 {
            return Err(field("run.n_series", "must be at least 1"));
        }
        if r.length == 0 {
            return Err(field("run.length", "must be at least 1"));
        }
        if r.burn_in >= r.length {
            return Err(field("run.burn_in", "must be shorter than run.length"));
        }
        if let Some(t) = r.snapshots.iter().find(|&&t| t == 0 || t > r.length) {
            return Err(field("run.snapshots", format!("time {t} outside 1..={}", r.length)));
        }
        if r.models.is_empty() {
            return Err(field("run.models", "need at least one model"));
        }
        if r.index >= r.n_series {
            return Err(field("run.index", "must be below run.n_series"));
        }
        if r.bins < 2 || r.draws < 1000 * r.bins {
            return Err(field("run.draws", "need at least 2 bins and 1000 draws per bin"));
        }
        if !(r.dof > 4.0) {
            return Err(field("run.dof", "must exceed 4"));
        }
        if r.cases == 0 {
            return Err(field("run.cases", "must be at least 1"));
        }
        Ok(())
    }

    /// Simulation settings for the configured family.
    pub fn sim_spec(&self, family: Family) -> Result<SimSpec> {
        let v = match &self.model.v_true {
            Some(v) => to_sym(v, "model.v_true", Some(2))?,
            None => default_v_true(),
        };
        let k = family.state_dim();
        let w = match &self.model.w {
            Some(w) => psd(w, "model.w", Some(k))?,
            None => DMatrix::identity(k, k),
        };
        SimSpec::with_covariances(family, v, w, self.run.n_series, self.run.length, self.run.seed)
    }

    pub fn experiment_options(&self) -> Result<ExperimentOptions> {
        let p = &self.priors;
        let v0 = match &p.v0 {
            Some(v) => to_sym(v, "priors.v0", Some(2))?,
            None => DMatrix::identity(2, 2),
        };
        Ok(ExperimentOptions {
            priors: Dlm1Priors {
                p0_scale: p.p0_scale,
                v0,
                eta0: p.eta0,
                k0_scale: p.k0_scale,
            },
            burn_in: self.run.burn_in,
        })
    }

    /// Model and initial state of the PSPP filter for `p`-variate data.
    pub fn filter_setup(&self, p: usize) -> Result<(StateSpaceSpec, FilterState)> {
        let m = &self.model;
        let b = match &m.b {
            Some(b) => to_matrix(b, "model.b")?,
            None => DMatrix::identity(p, p),
        };
        if b.nrows() != p {
            return Err(field("model.b", format!("has {} rows but the data have {p} columns", b.nrows())));
        }
        let k = b.ncols();
        let c = match &m.c {
            Some(c) => to_matrix(c, "model.c")?,
            None => DMatrix::identity(k, k),
        };
        if c.shape() != (k, k) {
            return Err(field("model.c", format!("expected {k}x{k}")));
        }
        let evolution = match (&m.discounts, &m.w) {
            (Some(d), _) => {
                if d.len() != k {
                    return Err(field("model.discounts", format!("expected {k} factors")));
                }
                Evolution::Discount(DVector::from_column_slice(d))
            }
            (None, Some(w)) => Evolution::Fixed(psd(w, "model.w", Some(k))?),
            (None, None) => Evolution::Fixed(DMatrix::identity(k, k)),
        };
        let spec = StateSpaceSpec::new(b, c, evolution, ObsMode::MatrixBelief)?;

        let pr = &self.priors;
        let m0 = match &pr.m0 {
            Some(v) if v.len() == k => DVector::from_column_slice(v),
            Some(_) => return Err(field("priors.m0", format!("expected {k} entries"))),
            None => DVector::zeros(k),
        };
        let p0 = match &pr.p0 {
            Some(r) => psd(r, "priors.p0", Some(k))?,
            None => DMatrix::identity(k, k) * pr.p0_scale,
        };
        let v0 = match &pr.v0 {
            Some(r) => to_sym(r, "priors.v0", Some(p))?,
            None => DMatrix::identity(p, p),
        };
        let d = linalg::vech_len(p);
        let k0 = match &pr.k0 {
            Some(r) => psd(r, "priors.k0", Some(d))?,
            None => DMatrix::identity(d, d) * pr.k0_scale,
        };
        let belief = MatrixVarBelief::new(v0, k0, pr.eta0, 1.0)?;
        let state = FilterState::new(m0, p0, VarBelief::Matrix(belief))?;
        Ok((spec, state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const US: &str = r#"
[model]
family = "LT"
c = [[1.0, 1.0], [0.0, 1.0]]
discounts = [0.2, 0.4]

[priors]
m0 = [80.622, 4.047]
p0_scale = 1000.0
v0 = [[66.403, 22.239], [22.239, 46.547]]
eta0 = 10.0
k0_scale = 0.0
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = parse_config("[model]\nfamily = \"LL\"\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.run.n_series, 200);
        assert_eq!(cfg.run.length, 500);
        assert_eq!(cfg.run.snapshots, vec![100, 200, 500]);
        assert_eq!(cfg.priors.eta0, Dlm1Priors::default().eta0);
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
    }

    #[test]
    fn discount_outside_unit_interval_is_rejected() {
        let err = parse_config("[model]\ndiscounts = [1.3, 0.5]\n").unwrap_err();
        assert!(err.to_string().contains("discount out of (0,1]"), "{err}");
        assert_eq!(err.exit_code(), 2);
        assert!(parse_config("[model]\ndiscounts = [0.0, 0.5]\n").is_err());
    }

    #[test]
    fn unknown_key_reports_position() {
        let err = parse_config("[run]\nseed = 1\nsede = 2\n").unwrap_err();
        match err {
            Error::Config { line, column, .. } => {
                assert_eq!(line, Some(3));
                assert_eq!(column, Some(1));
            }
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(parse_config("[extra]\n"), Err(Error::Config { .. })));
        assert!(matches!(parse_config("[run]\nseed = \"x\"\n"), Err(Error::Config { line: Some(2), .. })));
    }

    #[test]
    fn us_config_round_trips() {
        let cfg = parse_config(US).unwrap();
        let text = to_toml(&cfg).unwrap();
        let again = parse_config(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(to_toml(&again).unwrap(), text);
        let (spec, state) = cfg.filter_setup(2).unwrap();
        assert_eq!(state.m[0], 80.622);
        assert_eq!(state.p_mat[(1, 1)], 1000.0);
        assert!(matches!(spec.evolution, Evolution::Discount(_)));
    }

    #[test]
    fn constraint_violations_name_the_field() {
        let cases = [
            ("[priors]\neta0 = -1.0\n", "priors.eta0"),
            ("[run]\nlength = 10\nsnapshots = [20]\n", "run.snapshots"),
            ("[model]\nv_true = [[1.0, 2.0], [2.0, 1.0]]\n", "model.v_true"),
            ("[model]\nb = [[1.0, 0.0], [1.0]]\n", "model.b"),
            ("[model]\ndata = \"/nonexistent/file.csv\"\n", "model.data"),
            ("[run]\nmodels = []\n", "run.models"),
        ];
        for (text, name) in cases {
            match parse_config(text) {
                Err(Error::ConfigField { field, .. }) => assert_eq!(field, name),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn data_path_is_relative_to_config_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("d.csv"), "a,b\n1,2\n").unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(&cfg_path, "[model]\ndata = \"d.csv\"\n").unwrap();
        let cfg = load_config(&cfg_path).unwrap();
        assert_eq!(cfg.model.data.unwrap(), dir.path().join("d.csv"));
    }

    #[test]
    fn filter_setup_checks_dimensions() {
        let cfg = parse_config("[model]\nb = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]\n").unwrap();
        let (spec, state) = cfg.filter_setup(2).unwrap();
        assert_eq!(spec.state_dim(), 3);
        assert_eq!(state.m.len(), 3);
        assert!(cfg.filter_setup(3).is_err());
    }
}
