//! Reports as JSON or CSV. Both formats are rendered from the same [`Table`]s.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dlm::{ForecastMetrics, StepReport};
use crate::error::{Error, Result};
use crate::io::config::{Format, RunConfig};
use crate::io::data::csv_io;
use crate::io::write_atomic;
use crate::sim::{ExperimentResult, Tables};

/// Rows of string keys followed by numeric values.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Table {
    pub key_columns: Vec<String>,
    pub value_columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub keys: Vec<String>,
    pub values: Vec<f64>,
}

impl Table {
    pub fn new(key_columns: &[&str], value_columns: Vec<String>) -> Self {
        Table {
            key_columns: key_columns.iter().map(|s| s.to_string()).collect(),
            value_columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, keys: Vec<String>, values: Vec<f64>) {
        debug_assert_eq!(keys.len(), self.key_columns.len());
        debug_assert_eq!(values.len(), self.value_columns.len());
        self.rows.push(TableRow { keys, values });
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.value_columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.values[j]).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn to_csv(&self, path: &Path) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = self
            .key_columns
            .iter()
            .chain(&self.value_columns)
            .map(String::as_str)
            .collect();
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for r in &self.rows {
            let rec: Vec<String> = r
                .keys
                .iter()
                .cloned()
                .chain(r.values.iter().map(|x| format!("{x:?}")))
                .collect();
            w.write_record(&rec).map_err(|e| csv_io(path, e))?;
        }
        w.into_inner().map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e.into_error(),
        })
    }
}

/// Top-level report. The config echo plus the seed reproduce the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub config: RunConfig,
    pub seed: u64,
    pub metrics: Table,
    pub snapshots: Table,
    pub series: Table,
}

fn sub(p: usize, prefix: &str) -> Vec<String> {
    (1..=p).map(|i| format!("{prefix}{i}")).collect()
}

/// `V̂` entries in vech order, named `v11, v12, v22, …` (row ≤ column).
fn vech_names(p: usize) -> Vec<String> {
    let mut out = Vec::new();
    for j in 0..p {
        for i in j..p {
            out.push(format!("v{}{}", j + 1, i + 1));
        }
    }
    out
}

/// Per-step filter output: `t`, `f`, `e`, `e*`, the `V̂` entries and the
/// correlations `V̂ij/√(V̂ii V̂jj)`.
pub fn series_table(reports: &[StepReport], times: Option<&[String]>) -> Table {
    let p = reports.first().map_or(0, |r| r.e.len());
    let mut cols = vec!["t".to_string()];
    cols.extend(sub(p, "f"));
    cols.extend(sub(p, "e"));
    cols.extend(sub(p, "e_std"));
    cols.extend(vech_names(p));
    for i in 0..p {
        for j in i + 1..p {
            cols.push(format!("rho{}{}", i + 1, j + 1));
        }
    }
    let keys: &[&str] = if times.is_some() { &["time"] } else { &[] };
    let mut table = Table::new(keys, cols);
    for (k, r) in reports.iter().enumerate() {
        let mut v = vec![r.t as f64];
        v.extend(r.f.iter());
        v.extend(r.e.iter());
        v.extend(r.e_std.iter());
        for j in 0..p {
            for i in j..p {
                v.push(r.v_hat[(i, j)]);
            }
        }
        for i in 0..p {
            for j in i + 1..p {
                v.push(r.v_hat[(i, j)] / (r.v_hat[(i, i)] * r.v_hat[(j, j)]).sqrt());
            }
        }
        let key = times.map(|t| vec![t[k].clone()]).unwrap_or_default();
        table.push(key, v);
    }
    table
}

fn metric_values(m: &ForecastMetrics) -> Vec<f64> {
    m.msse
        .iter()
        .chain(m.mse.iter())
        .chain(m.mae.iter())
        .chain(m.me.iter())
        .copied()
        .collect()
}

fn metric_columns(p: usize) -> Vec<String> {
    ["msse", "mse", "mae", "me"]
        .iter()
        .flat_map(|m| sub(p, m))
        .collect()
}

/// One row per labelled metrics set, plus the step count.
pub fn metrics_table(key_columns: &[&str], rows: &[(Vec<String>, &ForecastMetrics)]) -> Table {
    let p = rows.first().map_or(0, |r| r.1.msse.len());
    let mut cols = metric_columns(p);
    cols.push("steps".into());
    let mut t = Table::new(key_columns, cols);
    for (keys, m) in rows {
        let mut v = metric_values(m);
        v.push(m.steps as f64);
        t.push(keys.clone(), v);
    }
    t
}

/// Metrics and variance-snapshot tables from aggregated experiment results.
pub fn experiment_tables(tables: &Tables, results: &[ExperimentResult]) -> (Table, Table) {
    let mut cols = metric_columns(2);
    cols.extend(["replications".to_string(), "failures".to_string()]);
    let mut metrics = Table::new(&["family", "model"], cols);
    for r in &tables.metrics {
        let mut v: Vec<f64> = [r.msse, r.mse, r.mae, r.me].iter().flatten().copied().collect();
        v.extend([r.replications as f64, r.failures as f64]);
        metrics.push(vec![r.family.to_string(), r.model.to_string()], v);
    }

    let times: Vec<usize> = results
        .iter()
        .find(|r| !r.snapshots.is_empty())
        .map(|r| r.snapshots.iter().map(|s| s.t).collect())
        .unwrap_or_default();
    let mut cols: Vec<String> = times.iter().map(|t| format!("mean_t{t}")).collect();
    cols.extend(times.iter().map(|t| format!("sd_t{t}")));
    let mut snaps = Table::new(&["family", "entry"], cols);
    for row in &tables.snapshots {
        let j = ["V11", "V12", "V22"].iter().position(|e| *e == row.entry).unwrap_or(0);
        let mut v: Vec<f64> = row.values.iter().map(|x| x.1).collect();
        if let Some(r) = results.iter().find(|r| r.family == row.family) {
            v.extend(r.snapshots.iter().map(|s| s.sd[j]));
        }
        snaps.push(vec![row.family.to_string(), row.entry.to_string()], v);
    }
    (metrics, snaps)
}

/// Files written for `path`: the path itself for JSON, and
/// `<stem>_metrics.csv`, `<stem>_snapshots.csv`, `<stem>_series.csv` for CSV.
pub fn report_paths(path: &Path, format: Format) -> Vec<PathBuf> {
    match format {
        Format::Json => vec![path.to_path_buf()],
        Format::Csv => {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            ["metrics", "snapshots", "series"]
                .iter()
                .map(|part| path.with_file_name(format!("{stem}_{part}.csv")))
                .collect()
        }
    }
}

pub fn report_json(report: &Report) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(report).map_err(|e| Error::Io {
        path: PathBuf::new(),
        source: e.into(),
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes the report atomically and returns the files written.
pub fn emit_report(report: &Report, path: &Path, format: Format) -> Result<Vec<PathBuf>> {
    let paths = report_paths(path, format);
    match format {
        Format::Json => write_atomic(path, &report_json(report)?)?,
        Format::Csv => {
            for (p, t) in paths.iter().zip([&report.metrics, &report.snapshots, &report.series]) {
                write_atomic(p, &t.to_csv(p)?)?;
            }
        }
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dlm::{forecast_metrics, run_filter};
    use crate::io::data::{read_csv, CsvSchema};
    use crate::sim::{model_setup, simulate_series, Dlm1Priors, Family, ModelKind, SimSpec};

    fn sample_report() -> Report {
        let spec = SimSpec::new(Family::LT, 1, 40, 3).unwrap();
        let ys = simulate_series(&spec, 0).unwrap();
        let (model, state) = model_setup(ModelKind::Dlm1, &spec, &Dlm1Priors::default()).unwrap();
        let (_, reps) = run_filter(&state, &model, &ys).unwrap();
        let m = forecast_metrics(&reps, 0).unwrap();
        Report {
            config: RunConfig::default(),
            seed: 3,
            metrics: metrics_table(&["model"], &[(vec!["DLM1".into()], &m)]),
            snapshots: Table::default(),
            series: series_table(&reps, None),
        }
    }

    #[test]
    fn json_top_level_keys_in_order() {
        let bytes = report_json(&sample_report()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        for k in ["config", "seed", "metrics", "snapshots", "series"] {
            assert!(keys.iter().any(|x| *x == k));
        }
        let pos = |k: &str| text.find(&format!("\n  \"{k}\"")).unwrap();
        assert!(pos("config") < pos("seed") && pos("seed") < pos("metrics"));
        assert!(pos("metrics") < pos("snapshots") && pos("snapshots") < pos("series"));
    }

    #[test]
    fn correlation_column_recomputes_from_v_columns() {
        let s = sample_report().series;
        let (v11, v12, v22, rho) = (
            s.column("v11").unwrap(),
            s.column("v12").unwrap(),
            s.column("v22").unwrap(),
            s.column("rho12").unwrap(),
        );
        for i in 0..rho.len() {
            assert!((rho[i] - v12[i] / (v11[i] * v22[i]).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn same_report_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        emit_report(&sample_report(), &a, Format::Json).unwrap();
        emit_report(&sample_report(), &b, Format::Json).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn json_and_csv_carry_the_same_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample_report();
        let json = dir.path().join("r.json");
        emit_report(&r, &json, Format::Json).unwrap();
        let files = emit_report(&r, &dir.path().join("r.csv"), Format::Csv).unwrap();
        assert!(files[2].ends_with("r_series.csv"));

        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
        let rows = v["series"]["rows"].as_array().unwrap();
        let csv = read_csv(std::fs::File::open(&files[2]).unwrap(), &CsvSchema::default()).unwrap();
        assert_eq!(rows.len(), csv.len());
        for (jr, cr) in rows.iter().zip(&csv.values) {
            let jv: Vec<f64> = jr["values"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
            assert_eq!(jv.len(), cr.len());
            for (a, b) in jv.iter().zip(cr.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
