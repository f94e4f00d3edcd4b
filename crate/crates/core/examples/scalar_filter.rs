//! Filter with a scalar observation variance `V = vZ`, learning `v` online.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use pspp::dlm::{run_filter, Evolution, FilterState, ObsMode, StateSpaceSpec, VarBelief};
use pspp::sop::ScalarVarBelief;

fn main() -> pspp::Result<()> {
    let spec = StateSpaceSpec::new(
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
        Evolution::Fixed(DMatrix::from_element(1, 1, 0.25)),
        ObsMode::Scaled { z: DMatrix::identity(1, 1) },
    )?;
    let belief = ScalarVarBelief::new(1.0, 1.0, 2.0, 1.0)?;
    let state = FilterState::new(DVector::zeros(1), DMatrix::identity(1, 1) * 10.0, VarBelief::Scalar(belief))?;

    // level noise variance 0.25v, observation variance v = 4
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut level = 0.0;
    let ys: Vec<DVector<f64>> = (0..400)
        .map(|_| {
            level += 1.0 * rng.sample::<f64, _>(StandardNormal);
            DVector::from_element(1, level + 2.0 * rng.sample::<f64, _>(StandardNormal))
        })
        .collect();
    let (_, reports) = run_filter(&state, &spec, &ys)?;
    for r in reports.iter().filter(|r| r.t % 100 == 0) {
        println!("t = {:3}  v-hat = {:.3}", r.t, r.v_scale.unwrap_or(f64::NAN));
    }
    Ok(())
}
