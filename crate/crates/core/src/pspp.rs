//! First-order partially specified conditioning and the Bayes linear rules it
//! is equivalent to.
//!
//! Under the postulate that `X - A_xy Y` is second-order independent of `Y`,
//! the posterior mean and covariance of `X | Y = y` follow from the first two
//! joint moments alone:
//!
//! ```text
//! E(X | y)   = μx + A_xy (y - μy)
//! Var(X | y) = Σx - A_xy Σy A_xy'
//! ```

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// First two moments of a partially specified joint law of `(X, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMoments {
    pub mu_x: DVector<f64>,
    pub mu_y: DVector<f64>,
    pub sigma_x: DMatrix<f64>,
    pub sigma_y: DMatrix<f64>,
    pub cov_xy: DMatrix<f64>,
}

impl JointMoments {
    /// Checks dimensions, symmetry and that the stacked covariance is PSD.
    pub fn new(
        mu_x: DVector<f64>,
        mu_y: DVector<f64>,
        sigma_x: DMatrix<f64>,
        sigma_y: DMatrix<f64>,
        cov_xy: DMatrix<f64>,
    ) -> Result<Self> {
        let j = JointMoments {
            mu_x,
            mu_y,
            sigma_x,
            sigma_y,
            cov_xy,
        };
        j.validate()?;
        Ok(j)
    }

    pub fn dim_x(&self) -> usize {
        self.mu_x.len()
    }

    pub fn dim_y(&self) -> usize {
        self.mu_y.len()
    }

    /// The `(m+p) × (m+p)` joint covariance `[[Σx, Cxy], [Cxy', Σy]]`.
    pub fn stacked_cov(&self) -> DMatrix<f64> {
        let (m, p) = (self.dim_x(), self.dim_y());
        let mut s = DMatrix::zeros(m + p, m + p);
        s.view_mut((0, 0), (m, m)).copy_from(&self.sigma_x);
        s.view_mut((m, m), (p, p)).copy_from(&self.sigma_y);
        s.view_mut((0, m), (m, p)).copy_from(&self.cov_xy);
        s.view_mut((m, 0), (p, m)).copy_from(&self.cov_xy.transpose());
        s
    }

    fn validate(&self) -> Result<()> {
        let m = linalg::check_symmetric(&self.sigma_x, "sigma_x")?;
        let p = linalg::check_symmetric(&self.sigma_y, "sigma_y")?;
        if self.mu_x.len() != m || self.mu_y.len() != p {
            return Err(Error::dim(format!(
                "means have lengths {}/{}, covariances are {m}x{m}/{p}x{p}",
                self.mu_x.len(),
                self.mu_y.len()
            )));
        }
        if self.cov_xy.shape() != (m, p) {
            return Err(Error::dim(format!(
                "cov_xy must be {m}x{p}, got {:?}",
                self.cov_xy.shape()
            )));
        }
        linalg::check_finite(&self.cov_xy, "cov_xy")?;
        linalg::psd_repair(&self.stacked_cov()).map(|_| ())
    }

    /// `A_xy = Cov(X, Y) Σy⁻¹`.
    pub fn regression_matrix(&self) -> Result<DMatrix<f64>> {
        linalg::regression_matrix(&self.cov_xy, &self.sigma_y)
    }

    /// `Σx - A Σy A'` with rounding-level negative eigenvalues clipped.
    pub fn residual_cov(&self) -> Result<DMatrix<f64>> {
        let a = self.regression_matrix()?;
        let cov = &self.sigma_x - &a * &self.sigma_y * a.transpose();
        linalg::psd_repair(&cov)
    }

    pub(crate) fn check_obs(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.dim_y() {
            return Err(Error::dim(format!(
                "observation has length {}, expected {}",
                y.len(),
                self.dim_y()
            )));
        }
        Ok(())
    }
}

/// A partially specified law `{mean, cov}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPair {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl MomentPair {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let p = linalg::check_symmetric(&cov, "cov")?;
        if mean.len() != p {
            return Err(Error::dim(format!(
                "mean has length {}, cov is {p}x{p}",
                mean.len()
            )));
        }
        let cov = linalg::psd_repair(&cov)?;
        Ok(MomentPair { mean, cov })
    }
}

/// Mean and variance of a scalar quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMoments {
    pub mean: f64,
    pub var: f64,
}

impl ScalarMoments {
    pub fn new(mean: f64, var: f64) -> Self {
        ScalarMoments { mean, var }
    }
}

/// PSPP(1) posterior moments of `X | Y = y`.
pub fn pspp1_condition(j: &JointMoments, y: &DVector<f64>) -> Result<MomentPair> {
    j.check_obs(y)?;
    let a = j.regression_matrix()?;
    let mean = &j.mu_x + &a * (y - &j.mu_y);
    let cov = linalg::psd_repair(&(&j.sigma_x - &a * &j.sigma_y * a.transpose()))?;
    Ok(MomentPair { mean, cov })
}

/// Bayes linear rule for `Y | X, V ~ (X, V)` with known `V`.
///
/// Returns the posterior mean `{E(X) V + y Var(X)} / {V + Var(X)}` and its
/// expected risk `Var(X) V / {Var(X) + V}`.
pub fn bayes_linear_scalar(prior: ScalarMoments, v: f64, y: f64) -> Result<(f64, f64)> {
    if !(prior.var > 0.0) {
        return Err(Error::invalid("Var(X)", "must be positive"));
    }
    if !(v > 0.0) {
        return Err(Error::invalid("V", "must be positive"));
    }
    let gain = prior.var / (prior.var + v);
    let mu = prior.mean + gain * (y - prior.mean);
    let risk = prior.var * v / (prior.var + v);
    Ok((mu, risk))
}

/// Variance-modified Bayes linear rule.
///
/// `V` is first estimated by a Bayes linear rule from a statistic `Y*` with
/// observed value `ystar`, then plugged into [`bayes_linear_scalar`]. The
/// statistic is opaque to this function: callers supply `ystar` and its prior
/// variance directly. Returns `(V*, μ*)`.
pub fn goldstein_variance_modified(
    prior_x: ScalarMoments,
    prior_v: ScalarMoments,
    var_ystar: f64,
    ystar: f64,
    y: f64,
) -> Result<(f64, f64)> {
    if !(prior_x.var > 0.0) {
        return Err(Error::invalid("Var(X)", "must be positive"));
    }
    if !(var_ystar > 0.0) {
        return Err(Error::invalid("Var(Y*)", "must be positive"));
    }
    if !(prior_v.var >= 0.0) {
        return Err(Error::invalid("Var(V)", "must be non-negative"));
    }
    let v_star =
        (prior_v.mean * var_ystar + ystar * prior_v.var) / (var_ystar + prior_v.var);
    if !(v_star > -prior_x.var) {
        return Err(Error::invalid("V*", "Var(X) + V* must be positive"));
    }
    let gain = prior_x.var / (prior_x.var + v_star);
    Ok((v_star, prior_x.mean + gain * (y - prior_x.mean)))
}

/// One atom of a finite discrete joint law of scalar `(X, Y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub x: f64,
    pub y: f64,
    pub prob: f64,
}

/// A finite discrete joint distribution of scalar `(X, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    atoms: Vec<Atom>,
}

impl DiscreteJoint {
    /// Probabilities must be non-negative and sum to one (to 1e-9).
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("atoms", "empty support"));
        }
        if atoms
            .iter()
            .any(|a| !(a.prob >= 0.0) || !a.x.is_finite() || !a.y.is_finite())
        {
            return Err(Error::invalid(
                "atoms",
                "probabilities must be non-negative and values finite",
            ));
        }
        let total: f64 = atoms.iter().map(|a| a.prob).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "atoms",
                format!("probabilities sum to {total}, expected 1"),
            ));
        }
        Ok(DiscreteJoint { atoms })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Conditional slices keyed by the distinct `y` values with positive mass.
    fn by_y(&self) -> BTreeMap<u64, Vec<Atom>> {
        let mut groups: BTreeMap<u64, Vec<Atom>> = BTreeMap::new();
        for a in self.atoms.iter().filter(|a| a.prob > 0.0) {
            // +0.0 and -0.0 are the same support point
            let key = (a.y + 0.0).to_bits();
            groups.entry(key).or_default().push(*a);
        }
        groups
    }
}

/// Outcome of [`linearity_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearityReport {
    /// `E(X|y) = μx + A(y - μy)` on the support and `Var(X|y)` constant.
    pub linear_mean: bool,
    /// `E` and `Var` of `X - A Y` given `Y = y` constant over the support.
    pub so_independent: bool,
    pub a_xy: f64,
    pub max_linear_dev: f64,
    pub max_resid_mean_dev: f64,
    pub max_var_dev: f64,
}

impl LinearityReport {
    /// The two characterisations must agree.
    pub fn equivalent(&self) -> bool {
        self.linear_mean == self.so_independent
    }
}

/// Exhaustive check of the Bayes linear / second-order independence
/// equivalence on a finite joint law.
///
/// Deviations are compared against `1e-9` times the scale of the support
/// (`1 + max|x|` for means, its square for variances).
pub fn linearity_check(joint: &DiscreteJoint) -> Result<LinearityReport> {
    let groups = joint.by_y();
    if groups.len() < 2 {
        return Err(Error::invalid(
            "joint",
            "Y is degenerate (fewer than two support points)",
        ));
    }
    let atoms = joint.atoms();
    let mu_x: f64 = atoms.iter().map(|a| a.prob * a.x).sum();
    let mu_y: f64 = atoms.iter().map(|a| a.prob * a.y).sum();
    let var_y: f64 = atoms.iter().map(|a| a.prob * (a.y - mu_y).powi(2)).sum();
    let cov: f64 = atoms
        .iter()
        .map(|a| a.prob * (a.x - mu_x) * (a.y - mu_y))
        .sum();
    let a_xy = cov / var_y;

    let x_scale = 1.0 + atoms.iter().fold(0.0_f64, |m, a| m.max(a.x.abs()));
    let mean_tol = 1e-9 * x_scale;
    let var_tol = 1e-9 * x_scale * x_scale;

    let mut cond = Vec::with_capacity(groups.len());
    for slice in groups.values() {
        let y = slice[0].y;
        let mass: f64 = slice.iter().map(|a| a.prob).sum();
        let mean = slice.iter().map(|a| a.prob * a.x).sum::<f64>() / mass;
        let var = slice
            .iter()
            .map(|a| a.prob * (a.x - mean).powi(2))
            .sum::<f64>()
            / mass;
        cond.push((y, mean, var));
    }

    let spread = |vals: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        hi - lo
    };

    let max_linear_dev = cond
        .iter()
        .map(|&(y, mean, _)| (mean - mu_x - a_xy * (y - mu_y)).abs())
        .fold(0.0, f64::max);
    let max_resid_mean_dev = spread(&mut cond.iter().map(|&(y, mean, _)| mean - a_xy * y));
    // Var(X - A Y | y) = Var(X | y)
    let max_var_dev = spread(&mut cond.iter().map(|c| c.2));

    let var_const = max_var_dev <= var_tol;
    Ok(LinearityReport {
        linear_mean: max_linear_dev <= mean_tol && var_const,
        so_independent: max_resid_mean_dev <= mean_tol && var_const,
        a_xy,
        max_linear_dev,
        max_resid_mean_dev,
        max_var_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn scalar_gaussian_conditioning() {
        let j = JointMoments::new(v(&[0.0]), v(&[0.0]), m1(1.0), m1(1.0), m1(0.5)).unwrap();
        let post = pspp1_condition(&j, &v(&[2.0])).unwrap();
        assert!((post.mean[0] - 1.0).abs() < 1e-15);
        assert!((post.cov[(0, 0)] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn uncorrelated_is_no_update() {
        let j = JointMoments::new(
            v(&[1.0, -2.0]),
            v(&[3.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            m1(4.0),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        let post = pspp1_condition(&j, &v(&[10.0])).unwrap();
        assert_eq!(post.mean, j.mu_x);
        assert_eq!(post.cov, j.sigma_x);
    }

    fn random_joint(rng: &mut impl Rng, m: usize, p: usize) -> JointMoments {
        let n = m + p;
        let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let s = linalg::symmetrize(&(&l * l.transpose() + DMatrix::identity(n, n) * 0.2));
        JointMoments::new(
            DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)),
            DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0)),
            s.view((0, 0), (m, m)).into_owned(),
            s.view((m, m), (p, p)).into_owned(),
            s.view((0, m), (m, p)).into_owned(),
        )
        .unwrap()
    }

    #[test]
    fn matches_gaussian_conditioning_via_precision() {
        // Gaussian oracle: X | y has precision block Λxx of the joint precision
        // and mean μx - Λxx⁻¹ Λxy (y - μy).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let j = random_joint(&mut rng, 2, 3);
            let y = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let post = pspp1_condition(&j, &y).unwrap();
            let prec = j.stacked_cov().try_inverse().unwrap();
            let lxx = prec.view((0, 0), (2, 2)).into_owned();
            let lxy = prec.view((0, 2), (2, 3)).into_owned();
            let cov = lxx.clone().try_inverse().unwrap();
            let mean = &j.mu_x - &cov * lxy * (&y - &j.mu_y);
            assert!((post.mean - mean).amax() < 1e-10);
            assert!((post.cov - cov).amax() < 1e-10);
        }
    }

    #[test]
    fn posterior_cov_bounds_and_y_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let j = random_joint(&mut rng, 3, 2);
            let y1 = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
            let y2 = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
            let a = pspp1_condition(&j, &y1).unwrap();
            let b = pspp1_condition(&j, &y2).unwrap();
            assert_eq!(a.cov, b.cov);
            let shrink = &j.sigma_x - &a.cov;
            assert!(linalg::min_eigenvalue(&shrink) > -1e-12);
        }
    }

    #[test]
    fn singular_sigma_y_errors() {
        let j = JointMoments {
            mu_x: v(&[0.0]),
            mu_y: v(&[0.0, 0.0]),
            sigma_x: m1(1.0),
            sigma_y: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            cov_xy: DMatrix::zeros(1, 2),
        };
        assert!(pspp1_condition(&j, &v(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn bayes_linear_examples() {
        let (mu, risk) = bayes_linear_scalar(ScalarMoments::new(0.0, 1.0), 1.0, 2.0).unwrap();
        assert_eq!((mu, risk), (1.0, 0.5));
        let (mu, _) = bayes_linear_scalar(ScalarMoments::new(3.0, 2.0), 0.7, 3.0).unwrap();
        assert_eq!(mu, 3.0);
        let (mu, risk) = bayes_linear_scalar(ScalarMoments::new(1.0, 2.0), 1e12, 50.0).unwrap();
        assert!((mu - 1.0).abs() < 1e-9);
        assert!((risk - 2.0).abs() < 1e-9);
        assert!(bayes_linear_scalar(ScalarMoments::new(0.0, 0.0), 1.0, 1.0).is_err());
        assert!(bayes_linear_scalar(ScalarMoments::new(0.0, 1.0), -1.0, 1.0).is_err());
    }

    #[test]
    fn bayes_linear_agrees_with_pspp1() {
        let prior = ScalarMoments::new(0.4, 1.7);
        let vv = 0.6;
        let (mu, risk) = bayes_linear_scalar(prior, vv, 2.3).unwrap();
        let j = JointMoments::new(
            v(&[prior.mean]),
            v(&[prior.mean]),
            m1(prior.var),
            m1(prior.var + vv),
            m1(prior.var),
        )
        .unwrap();
        let post = pspp1_condition(&j, &v(&[2.3])).unwrap();
        assert!((post.mean[0] - mu).abs() < 1e-14);
        assert!((post.cov[(0, 0)] - risk).abs() < 1e-14);
        assert!(risk <= prior.var.min(vv));
    }

    #[test]
    fn goldstein_examples() {
        let x = ScalarMoments::new(0.0, 1.0);
        let (vs, _) = goldstein_variance_modified(x, ScalarMoments::new(1.0, 1.0), 1.0, 3.0, 0.0)
            .unwrap();
        assert_eq!(vs, 2.0);
        let (vs, _) = goldstein_variance_modified(x, ScalarMoments::new(1.5, 0.4), 2.0, 1.5, 0.0)
            .unwrap();
        assert_eq!(vs, 1.5);
        let (vs, mu) =
            goldstein_variance_modified(x, ScalarMoments::new(0.8, 0.0), 2.0, 9.0, 1.3).unwrap();
        assert_eq!(vs, 0.8);
        assert_eq!(mu, bayes_linear_scalar(x, 0.8, 1.3).unwrap().0);
        assert!(goldstein_variance_modified(x, ScalarMoments::new(1.0, 1.0), 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn goldstein_gain_matches_expanded_form() {
        let (ex, vx, ev, vv, vys, ys, y) = (0.3, 1.2, 0.9, 0.5, 2.0, 1.7, -0.4);
        let (_, mu) = goldstein_variance_modified(
            ScalarMoments::new(ex, vx),
            ScalarMoments::new(ev, vv),
            vys,
            ys,
            y,
        )
        .unwrap();
        let gain = (vx * vys + vx * vv) / (vx * vys + vx * vv + ev * vys + ys * vv);
        assert!((mu - (ex + gain * (y - ex))).abs() < 1e-14);
    }

    /// Probabilists' Gauss–Hermite rule with five nodes.
    fn hermite5() -> [(f64, f64); 5] {
        let a = 1.355_626_179_974_265_9;
        let b = 2.856_970_013_872_805_7;
        let wa = 0.222_075_922_005_612_65;
        let wb = 0.011_257_411_327_720_69;
        [(-b, wb), (-a, wa), (0.0, 8.0 / 15.0), (a, wa), (b, wb)]
    }

    #[test]
    fn discretized_gaussian_both_flags() {
        let rho: f64 = 0.6;
        let mut atoms = Vec::new();
        for (y, wy) in hermite5() {
            for (e, we) in hermite5() {
                atoms.push(Atom {
                    x: rho * y + (1.0 - rho * rho).sqrt() * e,
                    y,
                    prob: wy * we,
                });
            }
        }
        let r = linearity_check(&DiscreteJoint::new(atoms).unwrap()).unwrap();
        assert!(r.linear_mean && r.so_independent);
        assert!((r.a_xy - rho).abs() < 1e-12);
    }

    #[test]
    fn nonlinear_mean_both_false() {
        // E(X | y) = (1, 0, 1) on y = (-1, 0, 1)
        let mut atoms = Vec::new();
        for (y, cm) in [(-1.0, 1.0), (0.0, 0.0), (1.0, 1.0)] {
            for e in [-0.5, 0.5] {
                atoms.push(Atom {
                    x: cm + e,
                    y,
                    prob: 1.0 / 6.0,
                });
            }
        }
        let r = linearity_check(&DiscreteJoint::new(atoms).unwrap()).unwrap();
        assert!(!r.linear_mean && !r.so_independent);
    }

    #[test]
    fn product_law_both_true() {
        let xs = [(-1.0, 0.2), (0.5, 0.5), (2.0, 0.3)];
        let ys = [(0.0, 0.4), (1.0, 0.1), (3.0, 0.5)];
        let atoms = xs
            .iter()
            .flat_map(|&(x, px)| ys.iter().map(move |&(y, py)| Atom { x, y, prob: px * py }))
            .collect();
        let r = linearity_check(&DiscreteJoint::new(atoms).unwrap()).unwrap();
        assert!(r.linear_mean && r.so_independent);
        assert!(r.a_xy.abs() < 1e-15);
    }

    #[test]
    fn degenerate_y_rejected() {
        let atoms = vec![
            Atom { x: 0.0, y: 1.0, prob: 0.5 },
            Atom { x: 1.0, y: 1.0, prob: 0.5 },
        ];
        assert!(linearity_check(&DiscreteJoint::new(atoms).unwrap()).is_err());
        assert!(DiscreteJoint::new(vec![Atom { x: 0.0, y: 0.0, prob: 0.7 }]).is_err());
    }
}
