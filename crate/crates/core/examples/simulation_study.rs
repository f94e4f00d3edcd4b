//! A reduced simulation study over the three model families. Pass the number
//! of replications as the first argument (default 20).

use pspp::sim::{aggregate_tables, run_experiment, ExperimentOptions, Family, ModelKind, SimSpec};

fn main() -> pspp::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let opts = ExperimentOptions::default();
    let mut results = Vec::new();
    for f in Family::ALL {
        let spec = SimSpec::new(f, n, 500, 2024)?;
        results.push(run_experiment(&spec, &[ModelKind::Dlm1, ModelKind::Dlm3], &[100, 200, 500], &opts)?);
    }
    let tables = aggregate_tables(&results);
    println!("family model   MSSE1  MSSE2  failures");
    for r in &tables.metrics {
        println!("{:6} {:6} {:6.3} {:6.3} {}", r.family, r.model, r.msse[0], r.msse[1], r.failures);
    }
    for row in &tables.snapshots {
        let vals: Vec<String> = row.values.iter().map(|(t, v)| format!("t={t}: {v:.3}")).collect();
        println!("{} {}  {}", row.family, row.entry, vals.join("  "));
    }
    Ok(())
}
