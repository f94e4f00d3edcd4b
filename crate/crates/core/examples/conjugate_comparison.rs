//! Scaled-precision moment update against the conjugate normal/inverse-gamma
//! posterior on one random problem.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pspp::random::random_joint_moments;
use pspp::sop::{compare_with_conjugate, conjugate_match_params, sop_posterior_x, sop_tau, ConjugateSOPPrior};

fn main() -> pspp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let j = random_joint_moments(&mut rng, 2, 3);
    let y = DVector::from_vec(vec![1.0, -0.5, 2.0]);
    let prior = ConjugateSOPPrior::new(6.0, 1.5)?;

    let matched = conjugate_match_params(&prior, 3)?;
    let post = sop_posterior_x(&j, &y, &matched.belief(1.0)?)?;
    println!("tau = {:.6}", sop_tau(&j, &y)?);
    println!("E(X|y) = {:.6?}", post.mean.as_slice());
    println!("Var(X|y) = {:.6?} (column-major)", post.cov.as_slice());

    let c = compare_with_conjugate(&prior, &j, &y)?;
    println!("largest relative gap to the conjugate answer: {:.2e}", c.max_rel());
    Ok(())
}
