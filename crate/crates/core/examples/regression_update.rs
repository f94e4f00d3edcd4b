//! One regression update with an unknown observation covariance, including
//! the Kronecker correction for uncertainty in the precision.

use nalgebra::{DMatrix, DVector};

use pspp::gsop::{gsop_regression_posterior, gsop_tau, kronecker_correction, vtilde_pair, MatrixVarBelief, RegressionSpec};

fn main() -> pspp::Result<()> {
    let model = RegressionSpec::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
        DVector::from_vec(vec![1.0, -1.0]),
        DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
    )?;
    let mu_y = &model.b * &model.mu_x;
    let sigma_y = model.sigma_y();
    let belief = MatrixVarBelief::new(DMatrix::identity(2, 2), DMatrix::identity(3, 3) * 0.05, 5.0, 1.0)?;
    let y = DVector::from_vec(vec![2.5, 0.3]);

    let tau = gsop_tau(&mu_y, &sigma_y, &y)?;
    let vt = vtilde_pair(&sigma_y, &belief, &tau)?;
    let post = gsop_regression_posterior(&model, &y, &vt, &mu_y)?;
    let h = &model.sigma_x * model.b.transpose() * &vt.v_tilde;
    let correction = kronecker_correction(&h, &(&y - &mu_y), &vt.v_tilde2)?;
    println!("E(X|y) = {:.5?}", post.mean.as_slice());
    println!("Var(X|y) = {:.5?}", post.cov.as_slice());
    println!("of which the Kronecker correction = {:.5?}", correction.as_slice());
    Ok(())
}
