//! Beliefs about a full `p × p` observation covariance `V` held on `vech(V)`,
//! the fixed-`A` posterior, the `Ṽ`/`Ṽ̃` approximation to the moments of
//! `(Σy + V)⁻¹`, and the regression posterior built from them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::pspp::MomentPair;

/// `vech(V) | K ~ {vech(V̂), K/η}` together with the observation weight `α`.
///
/// `v_hat` is required to be symmetric but not PSD: the update below can
/// legitimately produce an indefinite mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixVarBelief {
    pub v_hat: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub eta: f64,
    pub alpha: f64,
}

impl MatrixVarBelief {
    pub fn new(v_hat: DMatrix<f64>, k: DMatrix<f64>, eta: f64, alpha: f64) -> Result<Self> {
        let p = linalg::check_symmetric(&v_hat, "v_hat")?;
        let d = linalg::check_symmetric(&k, "K")?;
        if d != linalg::vech_len(p) {
            return Err(Error::dim(format!(
                "K is {d}x{d}, expected {0}x{0} for p = {p}",
                linalg::vech_len(p)
            )));
        }
        let k = linalg::psd_repair(&k)?;
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::invalid("eta", "must be positive"));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid("alpha", "must be positive"));
        }
        Ok(MatrixVarBelief {
            v_hat: linalg::symmetrize(&v_hat),
            k,
            eta,
            alpha,
        })
    }

    pub fn dim(&self) -> usize {
        self.v_hat.nrows()
    }

    /// `Var{vech(V)} = K/η`.
    pub fn cov_vech(&self) -> DMatrix<f64> {
        &self.k / self.eta
    }

    /// Regression coefficient of `vech(V)` on `vech(T)`, `α/(η+α)`.
    pub fn regression_coefficient(&self) -> f64 {
        self.alpha / (self.eta + self.alpha)
    }

    /// Mean of `V` with eigenvalues clipped at `floor`
    /// (default `1e-8 · trace / p`).
    pub fn projected_v_hat(&self, floor: Option<f64>) -> DMatrix<f64> {
        linalg::psd_project(&self.v_hat, floor)
    }

    fn check_tau(&self, tau: &DMatrix<f64>) -> Result<()> {
        let p = linalg::check_symmetric(tau, "tau")?;
        if p != self.dim() {
            return Err(Error::dim(format!("tau is {p}x{p}, V̂ is {0}x{0}", self.dim())));
        }
        Ok(())
    }
}

/// `τ = (y - μy)(y - μy)' - Σy`.
pub fn gsop_tau(mu_y: &DVector<f64>, sigma_y: &DMatrix<f64>, y: &DVector<f64>) -> Result<DMatrix<f64>> {
    let p = linalg::check_symmetric(sigma_y, "sigma_y")?;
    if mu_y.len() != p || y.len() != p {
        return Err(Error::dim(format!(
            "mu_y/y have lengths {}/{}, sigma_y is {p}x{p}",
            mu_y.len(),
            y.len()
        )));
    }
    let d = y - mu_y;
    Ok(linalg::symmetrize(&(&d * d.transpose() - sigma_y)))
}

/// Posterior belief after observing `T = τ`: mean `(ηV̂ + ατ)/(η+α)`,
/// `η ← η + α`, `K` unchanged, so that the vech covariance becomes
/// `K/(η+α)`.
pub fn gsop_v_update(b: &MatrixVarBelief, tau: &DMatrix<f64>) -> Result<MatrixVarBelief> {
    b.check_tau(tau)?;
    let eta = b.eta + b.alpha;
    Ok(MatrixVarBelief {
        v_hat: linalg::symmetrize(&((&b.v_hat * b.eta + tau * b.alpha) / eta)),
        k: b.k.clone(),
        eta,
        alpha: b.alpha,
    })
}

/// Joint moments in which `Cov(X, Y | V) = A Var(Y | V)` with `A` free of `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedAJoint {
    pub mu_x: DVector<f64>,
    pub mu_y: DVector<f64>,
    pub sigma_x: DMatrix<f64>,
    pub sigma_y: DMatrix<f64>,
    pub a: DMatrix<f64>,
}

impl FixedAJoint {
    pub fn new(
        mu_x: DVector<f64>,
        mu_y: DVector<f64>,
        sigma_x: DMatrix<f64>,
        sigma_y: DMatrix<f64>,
        a: DMatrix<f64>,
    ) -> Result<Self> {
        let m = linalg::check_symmetric(&sigma_x, "sigma_x")?;
        let p = linalg::check_symmetric(&sigma_y, "sigma_y")?;
        if mu_x.len() != m || mu_y.len() != p || a.shape() != (m, p) {
            return Err(Error::dim("fixed-A joint has inconsistent dimensions"));
        }
        Ok(FixedAJoint {
            mu_x,
            mu_y,
            sigma_x,
            sigma_y,
            a,
        })
    }
}

fn fixed_a_inputs(
    j: &FixedAJoint,
    y: &DVector<f64>,
    b: &MatrixVarBelief,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if b.dim() != j.mu_y.len() {
        return Err(Error::dim("belief and joint disagree on p"));
    }
    let tau = gsop_tau(&j.mu_y, &j.sigma_y, y)?;
    let mean = &j.mu_x + &j.a * (y - &j.mu_y);
    Ok((mean, tau))
}

/// Fixed-`A` posterior `{μx + A(y-μy), Σx - A(Σy + ηV̂ + ατ)A'/(η+α)}`.
pub fn gsop_posterior_fixed_a(
    j: &FixedAJoint,
    y: &DVector<f64>,
    b: &MatrixVarBelief,
) -> Result<MomentPair> {
    let (mean, tau) = fixed_a_inputs(j, y, b)?;
    let inner = (&j.sigma_y + &b.v_hat * b.eta + tau * b.alpha) / (b.eta + b.alpha);
    MomentPair::new(mean, &j.sigma_x - &j.a * inner * j.a.transpose())
}

/// Fixed-`A` posterior with `Var(X | V, y) = Σx - A(Σy + V)A'` averaged over
/// the updated belief: `Σx - A{Σy + (ηV̂ + ατ)/(η+α)}A'`.
///
/// Unlike [`gsop_posterior_fixed_a`], this reduces to first-order
/// conditioning with `Var(Y) = Σy + V₀` when the belief is concentrated at
/// `V₀`.
pub fn gsop_posterior_fixed_a_iterated(
    j: &FixedAJoint,
    y: &DVector<f64>,
    b: &MatrixVarBelief,
) -> Result<MomentPair> {
    let (mean, tau) = fixed_a_inputs(j, y, b)?;
    let v_mean = (&b.v_hat * b.eta + tau * b.alpha) / (b.eta + b.alpha);
    MomentPair::new(mean, &j.sigma_x - &j.a * (&j.sigma_y + v_mean) * j.a.transpose())
}

/// Approximate mean `Ṽ` and vech covariance `Ṽ̃` of `(Σy + V)⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct VtildePair {
    pub v_tilde: DMatrix<f64>,
    pub v_tilde2: DMatrix<f64>,
}

/// `Ṽ = (η+α){(η+α)Σy + ηV̂ + ατ}⁻¹`, `Ṽ̃ = K/(η+α)`.
pub fn vtilde_pair(
    sigma_y: &DMatrix<f64>,
    b: &MatrixVarBelief,
    tau: &DMatrix<f64>,
) -> Result<VtildePair> {
    b.check_tau(tau)?;
    if sigma_y.shape() != tau.shape() {
        return Err(Error::dim("sigma_y and tau differ in shape"));
    }
    let w = b.eta + b.alpha;
    let inner = sigma_y * w + &b.v_hat * b.eta + tau * b.alpha;
    Ok(VtildePair {
        v_tilde: linalg::spd_inverse(&inner)? * w,
        v_tilde2: &b.k / w,
    })
}

/// `Y = BX + ε`, `X ~ (μx, Σx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSpec {
    pub b: DMatrix<f64>,
    pub mu_x: DVector<f64>,
    pub sigma_x: DMatrix<f64>,
}

impl RegressionSpec {
    pub fn new(b: DMatrix<f64>, mu_x: DVector<f64>, sigma_x: DMatrix<f64>) -> Result<Self> {
        let m = linalg::check_symmetric(&sigma_x, "sigma_x")?;
        if mu_x.len() != m || b.ncols() != m {
            return Err(Error::dim(format!(
                "B is {}x{}, mu_x has length {}, sigma_x is {m}x{m}",
                b.nrows(),
                b.ncols(),
                mu_x.len()
            )));
        }
        Ok(RegressionSpec { b, mu_x, sigma_x })
    }

    /// `Σy = B Σx B'`.
    pub fn sigma_y(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.b * &self.sigma_x * self.b.transpose()))
    }
}

/// `{d' ⊗ H} G_p Ṽ̃ G_p' {d ⊗ H'}` for an `m × p` matrix `H`.
pub fn kronecker_correction(
    h: &DMatrix<f64>,
    d: &DVector<f64>,
    v_tilde2: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = d.len();
    if h.ncols() != p || v_tilde2.shape() != (linalg::vech_len(p), linalg::vech_len(p)) {
        return Err(Error::dim("Kronecker correction operands disagree"));
    }
    let g = linalg::duplication_matrix(p)?;
    let dt = DMatrix::from_row_slice(1, p, d.as_slice());
    let left = dt.kronecker(h) * &g;
    Ok(linalg::symmetrize(&(&left * v_tilde2 * left.transpose())))
}

/// Regression posterior of `X | Y = y` given estimates `Ṽ`, `Ṽ̃`:
/// mean `μx + ΣxB'Ṽ(y-μy)`, covariance `Σx - ΣxB'ṼBΣx` plus the
/// Kronecker correction for the uncertainty in `(Σy + V)⁻¹`.
pub fn gsop_regression_posterior(
    model: &RegressionSpec,
    y: &DVector<f64>,
    vt: &VtildePair,
    mu_y: &DVector<f64>,
) -> Result<MomentPair> {
    let p = model.b.nrows();
    if y.len() != p || mu_y.len() != p || vt.v_tilde.shape() != (p, p) {
        return Err(Error::dim(format!("expected p = {p} for y, mu_y and Ṽ")));
    }
    let d = y - mu_y;
    let h = &model.sigma_x * model.b.transpose();
    let mean = &model.mu_x + &h * &vt.v_tilde * &d;
    let cov = &model.sigma_x - &h * &vt.v_tilde * h.transpose()
        + kronecker_correction(&h, &d, &vt.v_tilde2)?;
    Ok(MomentPair {
        mean,
        cov: linalg::symmetrize(&cov),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postulate::WishartSampler;
    use crate::pspp::{pspp1_condition, JointMoments};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    fn random_pd(rng: &mut impl Rng, p: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        linalg::symmetrize(&(&a * a.transpose() + DMatrix::identity(p, p) * 0.3))
    }

    #[test]
    fn tau_examples() {
        let mu = DVector::from_vec(vec![1.0, 2.0]);
        let s = m2(2.0, 0.5, 0.5, 1.0);
        assert_eq!(gsop_tau(&mu, &s, &mu).unwrap(), -s.clone());
        let t = gsop_tau(&DVector::zeros(2), &DMatrix::zeros(2, 2), &DVector::from_vec(vec![1.0, 2.0]))
            .unwrap();
        assert_eq!(t, m2(1.0, 2.0, 2.0, 4.0));
    }

    #[test]
    fn tau_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let sigma_y = m2(1.0, 0.3, 0.3, 2.0);
        let v = m2(0.5, -0.2, -0.2, 0.8);
        let root = linalg::sym_sqrt(&(&sigma_y + &v)).unwrap();
        let mu = DVector::from_vec(vec![1.0, -1.0]);
        let n = 200_000;
        let mut mean = DMatrix::zeros(2, 2);
        let mut sq = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let z = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let y = &mu + &root * z;
            let t = gsop_tau(&mu, &sigma_y, &y).unwrap();
            sq += t.component_mul(&t);
            mean += t;
        }
        let mean = mean / n as f64;
        let se = (sq / n as f64 - mean.component_mul(&mean)).map(|x| (x / n as f64).sqrt());
        for i in 0..2 {
            for j in 0..2 {
                assert!((mean[(i, j)] - v[(i, j)]).abs() < 4.0 * se[(i, j)]);
            }
        }
    }

    #[test]
    fn v_update_examples() {
        let b = MatrixVarBelief::new(DMatrix::identity(2, 2), DMatrix::identity(3, 3), 1.0, 1.0)
            .unwrap();
        let post = gsop_v_update(&b, &m2(3.0, 2.0, 2.0, 7.0)).unwrap();
        assert_eq!(post.v_hat, m2(2.0, 1.0, 1.0, 4.0));
        assert_eq!(post.cov_vech(), DMatrix::identity(3, 3) / 2.0);
        let fixed = gsop_v_update(&b, &b.v_hat).unwrap();
        assert_eq!(fixed.v_hat, b.v_hat);
    }

    #[test]
    fn v_update_linear_in_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let b = MatrixVarBelief::new(random_pd(&mut rng, 3), random_pd(&mut rng, 6), 2.5, 0.7)
            .unwrap();
        let t1 = linalg::symmetrize(&DMatrix::from_fn(3, 3, |_, _| rng.random_range(-3.0..3.0)));
        let t2 = linalg::symmetrize(&DMatrix::from_fn(3, 3, |_, _| rng.random_range(-3.0..3.0)));
        let p1 = gsop_v_update(&b, &t1).unwrap();
        let p2 = gsop_v_update(&b, &t2).unwrap();
        let slope = (&p1.v_hat - &p2.v_hat) - (&t1 - &t2) * b.regression_coefficient();
        assert!(slope.amax() < 1e-12);
        assert_eq!(p1.cov_vech(), p2.cov_vech());
    }

    #[test]
    fn repeated_updates_concentrate() {
        let target = m2(2.0, 0.7, 0.7, 3.0);
        let mut b =
            MatrixVarBelief::new(DMatrix::identity(2, 2), DMatrix::identity(3, 3), 1.0, 1.0).unwrap();
        for t in 1..=1000 {
            b = gsop_v_update(&b, &target).unwrap();
            // closed form after t updates: V̂ₜ = (V̂₀ + t T*)/(1 + t)
            let closed = (DMatrix::identity(2, 2) + &target * t as f64) / (1.0 + t as f64);
            assert!((&b.v_hat - closed).amax() < 1e-12);
        }
        assert!((&b.v_hat - &target).amax() < 2e-3);
        assert!(b.cov_vech().amax() < 1e-3);
    }

    #[test]
    fn fixed_a_examples() {
        let b = MatrixVarBelief::new(DMatrix::from_element(1, 1, 1.0), DMatrix::identity(1, 1), 3.0, 1.0)
            .unwrap();
        let j = FixedAJoint::new(
            DVector::from_element(1, 0.5),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 3.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let post = gsop_posterior_fixed_a(&j, &DVector::from_element(1, 2.0), &b).unwrap();
        assert!((post.cov[(0, 0)] - 1.25).abs() < 1e-15);
        assert!((post.mean[0] - 2.5).abs() < 1e-15);

        let zero = FixedAJoint { a: DMatrix::zeros(1, 1), ..j };
        let post = gsop_posterior_fixed_a(&zero, &DVector::from_element(1, 2.0), &b).unwrap();
        assert_eq!((post.mean[0], post.cov[(0, 0)]), (0.5, 3.0));
    }

    #[test]
    fn iterated_fixed_a_matches_first_order_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let sigma_y = random_pd(&mut rng, 2);
        let v0 = random_pd(&mut rng, 2);
        let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.4..0.4));
        let var_y = &sigma_y + &v0;
        let sigma_x = &a * &var_y * a.transpose() + random_pd(&mut rng, 2);
        let mu_x = DVector::from_vec(vec![0.3, -0.2]);
        let mu_y = DVector::from_vec(vec![1.0, 2.0]);
        let y = DVector::from_vec(vec![1.7, 0.4]);
        let j = FixedAJoint::new(mu_x.clone(), mu_y.clone(), sigma_x.clone(), sigma_y, a.clone())
            .unwrap();
        let b = MatrixVarBelief::new(v0, DMatrix::zeros(3, 3), 1e9, 1.0).unwrap();
        let got = gsop_posterior_fixed_a_iterated(&j, &y, &b).unwrap();
        let reference = pspp1_condition(
            &JointMoments::new(mu_x, mu_y, sigma_x, var_y.clone(), &a * &var_y).unwrap(),
            &y,
        )
        .unwrap();
        assert!((&got.mean - &reference.mean).amax() < 1e-6);
        assert!((&got.cov - &reference.cov).amax() < 1e-6);
    }

    #[test]
    fn vtilde_examples() {
        let b = MatrixVarBelief::new(DMatrix::identity(2, 2), DMatrix::identity(3, 3), 4.0, 1.0)
            .unwrap();
        let vt = vtilde_pair(&DMatrix::identity(2, 2), &b, &DMatrix::identity(2, 2)).unwrap();
        assert!((&vt.v_tilde - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);
        assert_eq!(vt.v_tilde2, DMatrix::identity(3, 3) / 5.0);

        let bad = MatrixVarBelief::new(m2(-5.0, 0.0, 0.0, 1.0), DMatrix::identity(3, 3), 1.0, 1.0)
            .unwrap();
        assert!(matches!(
            vtilde_pair(&DMatrix::identity(2, 2), &bad, &DMatrix::zeros(2, 2)),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn vtilde_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let sigma_y = random_pd(&mut rng, 3);
        let tau = linalg::symmetrize(&DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.5..0.5)));
        let b = MatrixVarBelief::new(random_pd(&mut rng, 3), DMatrix::identity(6, 6), 2.0, 1.0)
            .unwrap();
        let vt = vtilde_pair(&sigma_y, &b, &tau).unwrap();
        let post = gsop_v_update(&b, &tau).unwrap();
        let direct = linalg::spd_inverse(&(&sigma_y + &post.v_hat)).unwrap();
        assert!((&vt.v_tilde - direct).amax() < 1e-12);

        let large = MatrixVarBelief { eta: 1e10, ..b.clone() };
        let vt = vtilde_pair(&sigma_y, &large, &tau).unwrap();
        let limit = linalg::spd_inverse(&(&sigma_y + &b.v_hat)).unwrap();
        assert!((&vt.v_tilde - limit).amax() < 1e-8);
        assert!(vt.v_tilde2.amax() < 1e-9);
    }

    #[test]
    fn wishart_inverse_mean_gap() {
        let (n, p) = (100.0, 2usize);
        let s = m2(1.0, 0.4, 0.4, 2.0);
        let sampler = WishartSampler::new(n, &s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let draws = 40_000;
        let mean_inv = (0..draws).fold(DMatrix::zeros(2, 2), |acc, _| {
            acc + linalg::spd_inverse(&sampler.sample(&mut rng)).unwrap()
        }) / draws as f64;
        let inv_mean = linalg::spd_inverse(&(&s * n)).unwrap();
        let gap = (mean_inv.trace() / inv_mean.trace()) - 1.0;
        let expected = n / (n - p as f64 - 1.0) - 1.0;
        assert!((gap - expected).abs() < 0.004, "{gap} vs {expected}");
    }

    #[test]
    fn regression_posterior_examples() {
        let model = RegressionSpec::new(DMatrix::identity(2, 2), DVector::zeros(2), DMatrix::identity(2, 2))
            .unwrap();
        let vt = VtildePair {
            v_tilde: DMatrix::identity(2, 2) * 0.5,
            v_tilde2: DMatrix::zeros(3, 3),
        };
        let post = gsop_regression_posterior(&model, &DVector::from_element(2, 1.0), &vt, &DVector::zeros(2))
            .unwrap();
        assert_eq!(post.mean, DVector::from_element(2, 0.5));
        assert_eq!(post.cov, DMatrix::identity(2, 2) * 0.5);

        let vt = VtildePair {
            v_tilde2: DMatrix::identity(3, 3),
            ..vt
        };
        let post = gsop_regression_posterior(&model, &DVector::zeros(2), &vt, &DVector::zeros(2)).unwrap();
        assert_eq!(post.cov, DMatrix::identity(2, 2) * 0.5);
    }

    #[test]
    fn kronecker_correction_matches_index_loop_and_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let (p, m) = (2, 3);
        let h = DMatrix::from_fn(m, p, |_, _| rng.random_range(-1.0..1.0));
        let d = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
        let vt2 = random_pd(&mut rng, 3);
        let got = kronecker_correction(&h, &d, &vt2).unwrap();
        let idx = |i: usize, j: usize| linalg::vech_index(i.max(j), i.min(j), p);
        let mut want = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                for j in 0..p {
                    for k in 0..p {
                        for l in 0..p {
                            for r in 0..p {
                                want[(a, b)] +=
                                    h[(a, j)] * d[k] * h[(b, l)] * d[r] * vt2[(idx(j, k), idx(l, r))];
                            }
                        }
                    }
                }
            }
        }
        assert!((&got - want).amax() < 1e-10);
        assert!(linalg::min_eigenvalue(&got) > -1e-12);
    }
}
