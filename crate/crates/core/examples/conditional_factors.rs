//! How the conditional spread of `X - AY` changes with `y` under a joint
//! Student t and an inverted t law, against the closed forms.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pspp::postulate::{factor_check, ConditionalLaw, TJointSpec};

fn main() -> pspp::Result<()> {
    let spec = TJointSpec::new(
        8.0,
        DVector::from_vec(vec![0.0]),
        DVector::from_vec(vec![0.0, 0.0]),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]),
        DMatrix::from_row_slice(1, 2, &[0.4, 0.2]),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for law in [ConditionalLaw::StudentT, ConditionalLaw::InvertedT] {
        println!("{law:?}");
        for b in factor_check(&spec, law, 6, 200_000, &mut rng)? {
            println!(
                "  q = {:8.3}  closed form {:.4}  Monte Carlo {:.4}",
                b.mean_q, b.closed_form, b.monte_carlo
            );
        }
    }
    Ok(())
}
