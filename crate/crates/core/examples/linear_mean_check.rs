//! Exhaustive check, on finite joint laws, that a linear posterior mean with
//! constant variance goes with second-order independence of `X - AY` and `Y`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pspp::pspp::linearity_check;
use pspp::random::{random_discrete_joint, JointKind};

fn main() -> pspp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for kind in [
        JointKind::Product,
        JointKind::AdditiveNoise,
        JointKind::Heteroscedastic,
        JointKind::Arbitrary,
    ] {
        let r = linearity_check(&random_discrete_joint(&mut rng, kind, 5))?;
        println!(
            "{kind:?}: linear mean {}, second-order independent {}, A = {:.4}, max deviations {:.1e}/{:.1e}/{:.1e}",
            r.linear_mean, r.so_independent, r.a_xy, r.max_linear_dev, r.max_resid_mean_dev, r.max_var_dev
        );
    }
    Ok(())
}
