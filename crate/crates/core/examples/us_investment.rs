//! Filters the quarterly US investment and inventory series with the settings
//! in `us_investment.toml`. Usage: `us_investment <data.csv> [time column]`.

use std::path::PathBuf;

use pspp::dlm::{forecast_metrics, run_filter};
use pspp::io::config::parse_config;
use pspp::io::data::{ingest_csv, CsvSchema};

fn main() -> pspp::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(path) = args.next().map(PathBuf::from) else {
        eprintln!("usage: us_investment <data.csv> [time column]");
        std::process::exit(2);
    };
    let cfg = parse_config(include_str!("us_investment.toml"))?;
    let data = ingest_csv(&path, &CsvSchema { time_column: args.next(), value_columns: None })?;
    let (spec, state) = cfg.filter_setup(data.dim())?;
    let (_, reps) = run_filter(&state, &spec, &data.values)?;
    let m = forecast_metrics(&reps, 0)?;
    println!("{} quarters of {:?}", data.len(), data.names);
    println!("MSSE {:.3?}", m.msse.as_slice());
    if let Some(r) = reps.last() {
        println!("final V-hat {:.3?}, correlation {:.3}", r.v_hat.as_slice(), r.correlation().unwrap_or(f64::NAN));
    }
    Ok(())
}
