//! Simulates one local linear trend series and runs the matrix-variance
//! filter on it, printing the final variance estimate and forecast metrics.

use pspp::dlm::{forecast_metrics, run_filter};
use pspp::sim::{model_setup, simulate_series, Dlm1Priors, Family, ModelKind, SimSpec};

fn main() -> pspp::Result<()> {
    let spec = SimSpec::new(Family::LT, 1, 500, 42)?;
    let ys = simulate_series(&spec, 0)?;
    let (model, state) = model_setup(ModelKind::Dlm1, &spec, &Dlm1Priors::default())?;
    let (_, reports) = run_filter(&state, &model, &ys)?;
    let last = reports.last().expect("non-empty series");
    println!("true V = {:.3?}", spec.v_true.as_slice());
    println!("V-hat at t = {}: {:.3?}", last.t, last.v_hat.as_slice());
    let m = forecast_metrics(&reports, 0)?;
    println!("MSSE {:.3?}  MSE {:.3?}  MAE {:.3?}", m.msse.as_slice(), m.mse.as_slice(), m.mae.as_slice());
    Ok(())
}
