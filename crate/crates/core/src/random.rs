//! Random problem instances used by the property checks, the command-line
//! checks and the acceptance suite.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg;
use crate::pspp::{Atom, DiscreteJoint, JointMoments};

/// `AA' + ridge·I` with `A` uniform on `(-1, 1)`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    linalg::symmetrize(&(&a * a.transpose() + DMatrix::identity(n, n) * ridge))
}

/// Joint moments of `(X, Y)` with `dim X = m`, `dim Y = p` and a positive
/// definite stacked covariance.
pub fn random_joint_moments<R: Rng + ?Sized>(rng: &mut R, m: usize, p: usize) -> JointMoments {
    let s = random_spd(rng, m + p, 0.5);
    JointMoments::new(
        DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0)),
        DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0)),
        s.view((0, 0), (m, m)).into_owned(),
        s.view((m, m), (p, p)).into_owned(),
        s.view((0, m), (m, p)).into_owned(),
    )
    .expect("stacked covariance is positive definite")
}

fn probabilities<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn distinct<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    // integers plus a jitter keep the support points apart
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 1.5 + rng.random_range(0.0..1.0)).collect();
    let shift = rng.random_range(-3.0..3.0);
    v.iter_mut().for_each(|x| *x += shift);
    v
}

/// Shape of a generated discrete joint law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    /// `X` and `Y` independent.
    Product,
    /// `X = a + bY + E` with `E` independent of `Y`.
    AdditiveNoise,
    /// `X = a + bY + s(Y)E`: linear mean, non-constant variance.
    Heteroscedastic,
    /// Unstructured probabilities on a grid.
    Arbitrary,
}

/// A finite joint law on at most `max_support × max_support` points.
pub fn random_discrete_joint<R: Rng + ?Sized>(
    rng: &mut R,
    kind: JointKind,
    max_support: usize,
) -> DiscreteJoint {
    let max_support = max_support.max(2);
    let ny = rng.random_range(2..=max_support);
    let nx = rng.random_range(2..=max_support);
    let ys = distinct(rng, ny);
    let py = probabilities(rng, ny);
    let mut atoms = Vec::with_capacity(nx * ny);
    match kind {
        JointKind::Product => {
            let xs = distinct(rng, nx);
            let px = probabilities(rng, nx);
            for (y, wy) in ys.iter().zip(&py) {
                for (x, wx) in xs.iter().zip(&px) {
                    atoms.push(Atom { x: *x, y: *y, prob: wx * wy });
                }
            }
        }
        JointKind::AdditiveNoise | JointKind::Heteroscedastic => {
            let es = distinct(rng, nx);
            let pe = probabilities(rng, nx);
            let mean: f64 = es.iter().zip(&pe).map(|(e, w)| e * w).sum();
            let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            for (i, (y, wy)) in ys.iter().zip(&py).enumerate() {
                let s = if kind == JointKind::Heteroscedastic { 1.0 + i as f64 } else { 1.0 };
                for (e, we) in es.iter().zip(&pe) {
                    atoms.push(Atom {
                        x: a + b * y + s * (e - mean),
                        y: *y,
                        prob: wy * we,
                    });
                }
            }
        }
        JointKind::Arbitrary => {
            let xs = distinct(rng, nx);
            let p = probabilities(rng, nx * ny);
            for (i, y) in ys.iter().enumerate() {
                for (k, x) in xs.iter().enumerate() {
                    atoms.push(Atom { x: *x, y: *y, prob: p[i * nx + k] });
                }
            }
        }
    }
    // renormalise against rounding in the products
    let total: f64 = atoms.iter().map(|a| a.prob).sum();
    atoms.iter_mut().for_each(|a| a.prob /= total);
    DiscreteJoint::new(atoms).expect("valid probabilities")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pspp::linearity_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kinds_have_the_expected_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let r = linearity_check(&random_discrete_joint(&mut rng, JointKind::AdditiveNoise, 6)).unwrap();
            assert!(r.linear_mean && r.so_independent);
            let r = linearity_check(&random_discrete_joint(&mut rng, JointKind::Product, 6)).unwrap();
            assert!(r.linear_mean && r.so_independent);
            let r = linearity_check(&random_discrete_joint(&mut rng, JointKind::Heteroscedastic, 6)).unwrap();
            assert!(!r.linear_mean && !r.so_independent);
        }
    }

    #[test]
    fn support_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let j = random_discrete_joint(&mut rng, JointKind::Arbitrary, 6);
            assert!(j.atoms().len() <= 36);
        }
    }
}
