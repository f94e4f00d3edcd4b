//! Builds a run configuration from TOML, filters a simulated series and
//! writes the report as JSON and as CSV into a temporary directory.

use pspp::dlm::{forecast_metrics, run_filter};
use pspp::io::config::{parse_config, Format};
use pspp::io::report::{emit_report, metrics_table, series_table, Report, Table};
use pspp::sim::simulate_series;

const CONFIG: &str = r#"
[model]
family = "LL"

[run]
seed = 9
length = 200
snapshots = [50, 100, 200]
"#;

fn main() -> pspp::Result<()> {
    let cfg = parse_config(CONFIG)?;
    let spec = cfg.sim_spec(cfg.model.family)?;
    let ys = simulate_series(&spec, 0)?;
    let (model, state) = cfg.filter_setup(2)?;
    let (_, reps) = run_filter(&state, &model, &ys)?;
    let m = forecast_metrics(&reps, 0)?;
    let report = Report {
        config: cfg.clone(),
        seed: cfg.run.seed,
        metrics: metrics_table(&["model"], &[(vec!["DLM1".into()], &m)]),
        snapshots: Table::default(),
        series: series_table(&reps, None),
    };
    let dir = std::env::temp_dir().join("pspp_report_example");
    std::fs::create_dir_all(&dir).map_err(|source| pspp::Error::Io { path: dir.clone(), source })?;
    for (name, format) in [("run.json", Format::Json), ("run.csv", Format::Csv)] {
        for p in emit_report(&report, &dir.join(name), format)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}
