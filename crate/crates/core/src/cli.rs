//! Command-line front end. The binary only parses arguments and maps errors
//! to exit codes; everything else lives here so it can be tested.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dlm::{forecast_metrics, run_filter};
use crate::error::{Error, Result};
use crate::io::config::{read_config, Format, RunConfig};
use crate::io::data::{export_csv, ingest_csv, CsvSchema};
use crate::io::report::{emit_report, experiment_tables, metrics_table, series_table, Report, Table};
use crate::postulate::{
    factor_check, mc_second_order_check, wishart_partition_moments, ConditionalLaw, GaussianJoint,
    StudentTJoint, TJointSpec, WishartSpec,
};
use crate::pspp::linearity_check;
use crate::random::{random_discrete_joint, random_joint_moments, random_spd, JointKind};
use crate::sim::{aggregate_tables, run_experiment, simulate_series, Family, ModelKind};
use crate::sop::{compare_with_conjugate, ConjugateSOPPrior};

#[derive(Debug, Parser)]
#[command(name = "pspp", version, about = "Moment-based Bayesian filtering with unknown observation covariance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

/// Flags shared by every subcommand. Flags override the config file.
#[derive(Debug, Args, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file. Reports go to stdout only as a summary when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Args, Default)]
pub struct PriorArgs {
    #[arg(long)]
    pub eta0: Option<f64>,
    #[arg(long)]
    pub k0_scale: Option<f64>,
    #[arg(long)]
    pub p0_scale: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one simulated bivariate series as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        family: Option<Family>,
        #[arg(long)]
        length: Option<usize>,
        /// Replication index within the seed's streams.
        #[arg(long)]
        index: Option<usize>,
    },
    /// Run the matrix-variance filter over a CSV series.
    Filter {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        priors: PriorArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        time_column: Option<String>,
        /// Comma-separated value columns.
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
        /// Comma-separated discount factors, one per state component.
        #[arg(long, value_delimiter = ',')]
        discounts: Option<Vec<f64>>,
        #[arg(long)]
        burn_in: Option<usize>,
    },
    /// Replicated simulation study: forecast accuracy per family and model,
    /// and the spread of the variance estimates over time.
    ReproduceTables {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        priors: PriorArgs,
        /// Comma-separated subset of LL, LT, LS.
        #[arg(long, value_delimiter = ',')]
        families: Option<Vec<Family>>,
        #[arg(long)]
        n_series: Option<usize>,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        snapshots: Option<Vec<usize>>,
    },
    /// Exact and Monte Carlo checks of the second-order independence postulate.
    PostulateCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        dof: Option<f64>,
        #[arg(long)]
        cases: Option<usize>,
    },
    /// Compare the scaled-precision update with the conjugate normal/gamma
    /// posterior on random cases.
    SopCompare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cases: Option<usize>,
    },
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => read_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    if let Some(p) = &common.out {
        cfg.output.path = Some(p.clone());
    }
    if let Some(f) = common.format {
        cfg.output.format = match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        };
    }
    Ok(cfg)
}

fn apply_priors(cfg: &mut RunConfig, p: &PriorArgs) {
    if let Some(x) = p.eta0 {
        cfg.priors.eta0 = x;
    }
    if let Some(x) = p.k0_scale {
        cfg.priors.k0_scale = x;
    }
    if let Some(x) = p.p0_scale {
        cfg.priors.p0_scale = x;
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

fn write_report(cfg: &RunConfig, report: &Report, out: &mut dyn Write) -> Result<()> {
    if let Some(path) = &cfg.output.path {
        for p in emit_report(report, path, cfg.output.format)? {
            writeln!(out, "wrote {}", p.display()).map_err(io_err)?;
        }
    }
    Ok(())
}

fn print_table(t: &Table, out: &mut dyn Write) -> Result<()> {
    let mut line: Vec<String> = t.key_columns.clone();
    line.extend(t.value_columns.iter().cloned());
    writeln!(out, "{}", line.iter().map(|c| format!(" {c:>10}")).collect::<String>()).map_err(io_err)?;
    for r in &t.rows {
        let mut s: String = r.keys.iter().map(|k| format!(" {k:>10}")).collect();
        s.extend(r.values.iter().map(|v| format!(" {:>10}", format_value(*v))));
        writeln!(out, "{s}").map_err(io_err)?;
    }
    Ok(())
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{v:.0}")
    } else if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e6) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Simulate {
            common,
            family,
            length,
            index,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(f) = family {
                cfg.model.family = f;
            }
            if let Some(l) = length {
                cfg.run.length = l;
                cfg.run.snapshots.retain(|&t| t <= l);
                cfg.run.burn_in = cfg.run.burn_in.min(l - 1);
            }
            if let Some(i) = index {
                cfg.run.index = i;
                cfg.run.n_series = cfg.run.n_series.max(i + 1);
            }
            cfg.validate()?;
            simulate(&cfg, out)
        }
        Command::Filter {
            common,
            priors,
            data,
            time_column,
            columns,
            discounts,
            burn_in,
        } => {
            let mut cfg = base_config(&common)?;
            apply_priors(&mut cfg, &priors);
            if data.is_some() {
                cfg.model.data = data;
            }
            if time_column.is_some() {
                cfg.model.time_column = time_column;
            }
            if columns.is_some() {
                cfg.model.columns = columns;
            }
            if discounts.is_some() {
                cfg.model.discounts = discounts;
                cfg.model.w = None;
            }
            if let Some(b) = burn_in {
                cfg.run.burn_in = b;
            }
            cfg.validate()?;
            filter(&cfg, out)
        }
        Command::ReproduceTables {
            common,
            priors,
            families,
            n_series,
            length,
            burn_in,
            snapshots,
        } => {
            let mut cfg = base_config(&common)?;
            apply_priors(&mut cfg, &priors);
            if let Some(n) = n_series {
                cfg.run.n_series = n;
            }
            if let Some(l) = length {
                cfg.run.length = l;
                if snapshots.is_none() {
                    cfg.run.snapshots.retain(|&t| t <= l);
                }
            }
            if let Some(b) = burn_in {
                cfg.run.burn_in = b;
            }
            if let Some(s) = snapshots {
                cfg.run.snapshots = s;
            }
            cfg.validate()?;
            let families = families.unwrap_or_else(|| Family::ALL.to_vec());
            reproduce_tables(&cfg, &families, out)
        }
        Command::PostulateCheck {
            common,
            draws,
            bins,
            dof,
            cases,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(d) = draws {
                cfg.run.draws = d;
            }
            if let Some(b) = bins {
                cfg.run.bins = b;
            }
            if let Some(n) = dof {
                cfg.run.dof = n;
            }
            if let Some(c) = cases {
                cfg.run.cases = c;
            }
            cfg.validate()?;
            postulate_check(&cfg, out)
        }
        Command::SopCompare { common, cases } => {
            let mut cfg = base_config(&common)?;
            if let Some(c) = cases {
                cfg.run.cases = c;
            }
            cfg.validate()?;
            sop_compare(&cfg, out)
        }
    }
}

pub fn simulate(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let spec = cfg.sim_spec(cfg.model.family)?;
    let ys = simulate_series(&spec, cfg.run.index)?;
    let names = vec!["y1".to_string(), "y2".to_string()];
    match &cfg.output.path {
        Some(path) => {
            export_csv(path, &names, &ys)?;
            writeln!(out, "wrote {} ({} rows)", path.display(), ys.len()).map_err(io_err)?;
        }
        None => {
            writeln!(out, "t,y1,y2").map_err(io_err)?;
            for (t, y) in ys.iter().enumerate() {
                writeln!(out, "{},{:?},{:?}", t + 1, y[0], y[1]).map_err(io_err)?;
            }
        }
    }
    Ok(())
}

pub fn filter(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let path = cfg.model.data.as_ref().ok_or_else(|| Error::ConfigField {
        field: "model.data".into(),
        reason: "required by filter".into(),
    })?;
    let schema = CsvSchema {
        time_column: cfg.model.time_column.clone(),
        value_columns: cfg.model.columns.clone(),
    };
    let data = ingest_csv(path, &schema)?;
    if cfg.run.burn_in >= data.len() {
        return Err(Error::ConfigField {
            field: "run.burn_in".into(),
            reason: format!("series has only {} rows", data.len()),
        });
    }
    let (spec, state) = cfg.filter_setup(data.dim())?;
    let (_, reports) = run_filter(&state, &spec, &data.values)?;
    let m = forecast_metrics(&reports, cfg.run.burn_in)?;

    let metrics = metrics_table(&["model"], &[(vec![ModelKind::Dlm1.to_string()], &m)]);
    let p = data.dim();
    let d = crate::linalg::vech_len(p);
    let mut snap_cols: Vec<String> = Vec::new();
    for j in 0..p {
        for i in j..p {
            snap_cols.push(format!("v{}{}", j + 1, i + 1));
        }
    }
    let mut snapshots = Table::new(&["t"], snap_cols);
    let mut times: Vec<usize> = cfg.run.snapshots.iter().copied().filter(|&t| t <= reports.len()).collect();
    times.push(reports.len());
    times.dedup();
    for t in times {
        let v = &reports[t - 1].v_hat;
        let mut vals = Vec::with_capacity(d);
        for j in 0..p {
            for i in j..p {
                vals.push(v[(i, j)]);
            }
        }
        snapshots.push(vec![t.to_string()], vals);
    }
    let series = if cfg.output.series {
        series_table(&reports, data.times.as_deref())
    } else {
        Table::default()
    };
    writeln!(
        out,
        "{} steps, {} columns ({}), burn-in {}",
        data.len(),
        p,
        data.names.join(", "),
        cfg.run.burn_in
    )
    .map_err(io_err)?;
    print_table(&metrics, out)?;
    let projected = reports.iter().filter(|r| r.projected).count();
    if projected > 0 {
        writeln!(out, "V-hat projected at {projected} steps").map_err(io_err)?;
    }
    let report = Report {
        config: cfg.clone(),
        seed: cfg.run.seed,
        metrics,
        snapshots,
        series,
    };
    write_report(cfg, &report, out)
}

pub fn reproduce_tables(cfg: &RunConfig, families: &[Family], out: &mut dyn Write) -> Result<()> {
    let opts = cfg.experiment_options()?;
    let mut results = Vec::new();
    for &f in families {
        let spec = cfg.sim_spec(f)?;
        results.push(run_experiment(&spec, &cfg.run.models, &cfg.run.snapshots, &opts)?);
    }
    let tables = aggregate_tables(&results);
    let (metrics, snapshots) = experiment_tables(&tables, &results);
    writeln!(
        out,
        "{} replications of length {}, seed {}",
        cfg.run.n_series, cfg.run.length, cfg.run.seed
    )
    .map_err(io_err)?;
    print_table(&metrics, out)?;
    if !snapshots.is_empty() {
        writeln!(out).map_err(io_err)?;
        print_table(&snapshots, out)?;
    }
    if !tables.missing.is_empty() {
        let names: Vec<String> = tables.missing.iter().map(|f| f.to_string()).collect();
        writeln!(out, "not run: {}", names.join(", ")).map_err(io_err)?;
    }
    for r in &results {
        for m in &r.models {
            if let Some(f) = m.failures.first() {
                writeln!(
                    out,
                    "{} {}: {} failed replications (first: #{}: {})",
                    r.family,
                    m.model,
                    m.failures.len(),
                    f.index,
                    f.message
                )
                .map_err(io_err)?;
            }
        }
    }
    let report = Report {
        config: cfg.clone(),
        seed: cfg.run.seed,
        metrics,
        snapshots,
        series: Table::default(),
    };
    write_report(cfg, &report, out)
}

fn check_table() -> Table {
    Table::new(&["check"], vec!["value".into(), "tolerance".into(), "pass".into()])
}

fn push_check(t: &mut Table, name: &str, value: f64, tol: f64, pass: bool) {
    t.push(vec![name.to_string()], vec![value, tol, if pass { 1.0 } else { 0.0 }]);
}

fn print_checks(t: &Table, out: &mut dyn Write) -> Result<()> {
    for r in &t.rows {
        let status = if r.values[2] == 1.0 { "PASS" } else { "FAIL" };
        writeln!(
            out,
            "{status} {:<34} value {:<12} tolerance {}",
            r.keys[0],
            format_value(r.values[0]),
            format_value(r.values[1])
        )
        .map_err(io_err)?;
    }
    Ok(())
}

pub fn postulate_check(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut t = check_table();

    let kinds = [
        JointKind::Product,
        JointKind::AdditiveNoise,
        JointKind::Heteroscedastic,
        JointKind::Arbitrary,
    ];
    let mut agree = 0;
    for i in 0..cfg.run.cases {
        let joint = random_discrete_joint(&mut rng, kinds[i % kinds.len()], 6);
        if linearity_check(&joint)?.equivalent() {
            agree += 1;
        }
    }
    let frac = agree as f64 / cfg.run.cases as f64;
    push_check(&mut t, "linear-mean iff independence", frac, 1.0, agree == cfg.run.cases);

    let n = cfg.run.dof;
    let spec = TJointSpec::new(
        n,
        DVector::zeros(1),
        DVector::zeros(2),
        nalgebra::DMatrix::from_element(1, 1, 2.0),
        random_spd(&mut rng, 2, 0.5),
        nalgebra::DMatrix::from_row_slice(1, 2, &[0.4, -0.3]),
    )?;
    for (law, name) in [
        (ConditionalLaw::StudentT, "t factor"),
        (ConditionalLaw::InvertedT, "inverted t factor"),
    ] {
        let bins = factor_check(&spec, law, cfg.run.bins, cfg.run.draws, &mut rng)?;
        let worst = bins.iter().map(|b| b.rel_error()).fold(0.0, f64::max);
        push_check(&mut t, name, worst, 0.05, worst <= 0.05);
    }

    let w = WishartSpec::new(n, 2.0, 0.7, 1.5)?;
    let at = wishart_partition_moments(&w, n * w.s22)?;
    let gap = (at.cond_var - at.resid_var).abs() / at.resid_var;
    push_check(&mut t, "wishart conditional variance", gap, 1e-12, gap <= 1e-12);

    let draws = cfg.run.draws.min(200_000).max(1000 * cfg.run.bins);
    let j = random_joint_moments(&mut rng, 1, 2);
    let gauss = GaussianJoint::new(
        1,
        DVector::from_iterator(3, j.mu_x.iter().chain(j.mu_y.iter()).copied()),
        &j.stacked_cov(),
    )?;
    let rep = mc_second_order_check(&gauss, &j.regression_matrix()?, cfg.run.bins, draws, &mut rng)?;
    let z = rep.adjusted_z();
    push_check(&mut t, "gaussian within 3 MC errors", z, 3.0, z <= 3.0);

    let heavy = TJointSpec::new(5.0, spec.mu_x.clone(), spec.mu_y.clone(), spec.c11.clone(), spec.c22.clone(), spec.c12.clone())?;
    let rep = mc_second_order_check(&StudentTJoint::new(&heavy)?, &heavy.regression_matrix()?, cfg.run.bins, draws, &mut rng)?;
    push_check(&mut t, "t(5) variance flagged", rep.max_cov_dev, 0.1, rep.cov_flag(0.1));

    print_checks(&t, out)?;
    let report = Report {
        config: cfg.clone(),
        seed: cfg.run.seed,
        metrics: t,
        snapshots: Table::default(),
        series: Table::default(),
    };
    write_report(cfg, &report, out)
}

pub fn sop_compare(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut series = Table::new(
        &[],
        ["case", "nu", "s", "p", "mean_rel", "cov_rel", "discrepancy_rel", "variance_rel"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    let mut worst = [0.0f64; 4];
    for case in 0..cfg.run.cases {
        let p = rng.random_range(1..=4);
        let m = rng.random_range(1..=3);
        let nu = rng.random_range(3.5..30.0);
        let s = rng.random_range(0.2..5.0);
        let prior = ConjugateSOPPrior::new(nu, s)?;
        let j = random_joint_moments(&mut rng, m, p);
        let y = DVector::from_fn(p, |_, _| rng.random_range(-4.0..4.0));
        let c = compare_with_conjugate(&prior, &j, &y)?;
        let row = [
            c.mean_rel,
            c.cov_rel,
            c.discrepancy_rel.unwrap_or(f64::NAN),
            c.variance_rel.unwrap_or(f64::NAN),
        ];
        for (w, x) in worst.iter_mut().zip(row) {
            if x.is_finite() {
                *w = w.max(x);
            }
        }
        let mut v = vec![case as f64, nu, s, p as f64];
        v.extend(row);
        series.push(vec![], v);
    }
    let mut t = check_table();
    for (name, w) in ["posterior mean", "posterior covariance", "V mean discrepancy", "V variance with matched K"]
        .iter()
        .zip(worst)
    {
        push_check(&mut t, name, w, 1e-12, w <= 1e-12);
    }
    writeln!(out, "{} random cases", cfg.run.cases).map_err(io_err)?;
    print_checks(&t, out)?;
    let report = Report {
        config: cfg.clone(),
        seed: cfg.run.seed,
        metrics: t,
        snapshots: Table::default(),
        series,
    };
    write_report(cfg, &report, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (Result<()>, String) {
        let cli = Cli::try_parse_from(std::iter::once("pspp").chain(args.iter().copied())).unwrap();
        let mut buf = Vec::new();
        let r = run(cli, &mut buf);
        (r, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn simulate_then_filter() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("lt.csv");
        let csv_s = csv.to_str().unwrap();
        let (r, _) = run_args(&["simulate", "--family", "LT", "--length", "120", "--seed", "5", "--out", csv_s]);
        r.unwrap();
        let report = dir.path().join("f.json");
        let cfg = dir.path().join("lt.toml");
        std::fs::write(&cfg, "[model]\ndata = \"lt.csv\"\ntime_column = \"t\"\nc = [[1.0, 1.0], [0.0, 1.0]]\n").unwrap();
        let (r, text) = run_args(&["filter", "--config", cfg.to_str().unwrap(), "--out", report.to_str().unwrap()]);
        r.unwrap();
        assert!(text.contains("msse1"), "{text}");
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
        assert_eq!(v["series"]["rows"].as_array().unwrap().len(), 120);
    }

    #[test]
    fn exit_codes() {
        let (r, _) = run_args(&["filter", "--discounts", "1.3,0.5"]);
        let e = r.unwrap_err();
        assert!(e.to_string().contains("discount out of (0,1]"));
        assert_eq!(e.exit_code(), 2);

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "a,b\n1,2\n3,x\n").unwrap();
        let (r, _) = run_args(&["filter", "--data", bad.to_str().unwrap()]);
        assert_eq!(r.unwrap_err().exit_code(), 3);

        // diverging priors on a short series end in a numerical failure
        let good = dir.path().join("good.csv");
        let (r, _) = run_args(&["simulate", "--length", "200", "--out", good.to_str().unwrap()]);
        r.unwrap();
        let (r, _) = run_args(&["filter", "--data", good.to_str().unwrap(), "--eta0", "1", "--k0-scale", "1"]);
        assert_eq!(r.unwrap_err().exit_code(), 4);
    }

    #[test]
    fn sop_compare_passes() {
        let (r, text) = run_args(&["sop-compare", "--cases", "50"]);
        r.unwrap();
        assert_eq!(text.matches("PASS").count(), 4, "{text}");
    }

    #[test]
    fn reproduce_tables_small() {
        let (r, text) = run_args(&["reproduce-tables", "--families", "LL,LS", "--n-series", "4", "--length", "60"]);
        r.unwrap();
        assert!(text.contains("not run: LT"), "{text}");
    }

    #[test]
    fn postulate_check_small() {
        let (r, text) = run_args(&["postulate-check", "--draws", "40000", "--bins", "4", "--cases", "40"]);
        r.unwrap();
        assert!(text.contains("linear-mean iff independence"));
        assert!(text.lines().next().unwrap().starts_with("PASS"), "{text}");
    }
}
