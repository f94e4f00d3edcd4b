//! Closed-form conditional moments for the multivariate Student t, inverted
//! Student t and Wishart laws, their samplers, and a Monte Carlo checker for
//! the postulate `X - A_xy Y ⊥₂ Y`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg;

/// Joint Student t (or inverted t) law of `(X, Y)` with `n` degrees of freedom
/// and partitioned scale matrix `[[C11, C12], [C12', C22]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TJointSpec {
    pub n: f64,
    pub mu_x: DVector<f64>,
    pub mu_y: DVector<f64>,
    pub c11: DMatrix<f64>,
    pub c22: DMatrix<f64>,
    pub c12: DMatrix<f64>,
}

impl TJointSpec {
    pub fn new(
        n: f64,
        mu_x: DVector<f64>,
        mu_y: DVector<f64>,
        c11: DMatrix<f64>,
        c22: DMatrix<f64>,
        c12: DMatrix<f64>,
    ) -> Result<Self> {
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::DegreesOfFreedom {
                dof: n,
                reason: "must be positive".into(),
            });
        }
        let m = linalg::check_symmetric(&c11, "C11")?;
        let p = linalg::check_symmetric(&c22, "C22")?;
        if mu_x.len() != m || mu_y.len() != p || c12.shape() != (m, p) {
            return Err(Error::dim("inconsistent partition of the t scale matrix"));
        }
        let spec = TJointSpec {
            n,
            mu_x,
            mu_y,
            c11,
            c22,
            c12,
        };
        linalg::psd_repair(&spec.scale())?;
        Ok(spec)
    }

    pub fn dim_x(&self) -> usize {
        self.mu_x.len()
    }

    pub fn dim_y(&self) -> usize {
        self.mu_y.len()
    }

    /// Stacked scale matrix `C`.
    pub fn scale(&self) -> DMatrix<f64> {
        let (m, p) = (self.dim_x(), self.dim_y());
        let mut c = DMatrix::zeros(m + p, m + p);
        c.view_mut((0, 0), (m, m)).copy_from(&self.c11);
        c.view_mut((m, m), (p, p)).copy_from(&self.c22);
        c.view_mut((0, m), (m, p)).copy_from(&self.c12);
        c.view_mut((m, 0), (p, m)).copy_from(&self.c12.transpose());
        c
    }

    pub fn location(&self) -> DVector<f64> {
        let mut mu = DVector::zeros(self.dim_x() + self.dim_y());
        mu.rows_mut(0, self.dim_x()).copy_from(&self.mu_x);
        mu.rows_mut(self.dim_x(), self.dim_y()).copy_from(&self.mu_y);
        mu
    }

    /// `A = C12 C22⁻¹`.
    pub fn regression_matrix(&self) -> Result<DMatrix<f64>> {
        linalg::regression_matrix(&self.c12, &self.c22)
    }

    /// `C11 - A C22 A'`.
    pub fn residual_scale(&self) -> Result<DMatrix<f64>> {
        let a = self.regression_matrix()?;
        linalg::psd_repair(&(&self.c11 - &a * &self.c22 * a.transpose()))
    }

    /// `(y - μy)' C22⁻¹ (y - μy)`.
    pub fn quad_form(&self, y: &DVector<f64>) -> Result<f64> {
        if y.len() != self.dim_y() {
            return Err(Error::dim(format!(
                "y has length {}, expected {}",
                y.len(),
                self.dim_y()
            )));
        }
        linalg::inv_quad_form(&self.c22, &(y - &self.mu_y))
    }
}

/// Moments of `(X - A Y) | Y = y` under the joint Student t law.
#[derive(Debug, Clone, PartialEq)]
pub struct TConditional {
    /// `μx - A μy`, free of `y`.
    pub mean: DVector<f64>,
    /// `(n+p)/(n+p-2) · (C11 - A C22 A') · factor`.
    pub cov: DMatrix<f64>,
    /// `1 + (y-μy)' C22⁻¹ (y-μy) / n`.
    pub factor: f64,
    /// Degrees of freedom of the conditional law, `n + p`.
    pub dof: f64,
    pub quad_form: f64,
    residual_scale: DMatrix<f64>,
    n: f64,
    p: f64,
}

impl TConditional {
    /// Exact conditional covariance `(n + q)/(n + p - 2) · (C11 - A C22 A')`.
    ///
    /// This differs from [`TConditional::cov`] by the constant `n / (n + p)`;
    /// the dependence on `y` (through `factor`) is the same.
    pub fn exact_cov(&self) -> DMatrix<f64> {
        &self.residual_scale * ((self.n + self.quad_form) / (self.n + self.p - 2.0))
    }
}

pub fn student_t_conditional_moments(spec: &TJointSpec, y: &DVector<f64>) -> Result<TConditional> {
    if !(spec.n > 2.0) {
        return Err(Error::DegreesOfFreedom {
            dof: spec.n,
            reason: "variances require n > 2".into(),
        });
    }
    let a = spec.regression_matrix()?;
    let resid = spec.residual_scale()?;
    let q = spec.quad_form(y)?;
    let p = spec.dim_y() as f64;
    let n = spec.n;
    let factor = 1.0 + q / n;
    Ok(TConditional {
        mean: &spec.mu_x - &a * &spec.mu_y,
        cov: &resid * ((n + p) / (n + p - 2.0) * factor),
        factor,
        dof: n + p,
        quad_form: q,
        residual_scale: resid,
        n,
        p,
    })
}

/// Location and scale of `(X - A Y) | Y = y` under the joint inverted t law.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedTConditional {
    pub location: DVector<f64>,
    /// `(C11 - A C22 A') · factor`.
    pub scale: DMatrix<f64>,
    /// `1 - (y-μy)' C22⁻¹ (y-μy) / n`, in `(0, 1]`.
    pub factor: f64,
    pub dof: f64,
    pub quad_form: f64,
}

impl InvertedTConditional {
    /// Covariance of an `m`-variate inverted t with this scale: `n/(n+m) · scale`.
    pub fn cov(&self) -> DMatrix<f64> {
        let m = self.location.len() as f64;
        &self.scale * (self.dof / (self.dof + m))
    }
}

pub fn inverted_t_conditional_moments(
    spec: &TJointSpec,
    y: &DVector<f64>,
) -> Result<InvertedTConditional> {
    let q = spec.quad_form(y)?;
    if q >= spec.n {
        return Err(Error::Domain(format!(
            "(y-μy)'C22⁻¹(y-μy) = {q} must be below n = {}",
            spec.n
        )));
    }
    let a = spec.regression_matrix()?;
    let factor = 1.0 - q / spec.n;
    Ok(InvertedTConditional {
        location: &spec.mu_x - &a * &spec.mu_y,
        scale: spec.residual_scale()? * factor,
        factor,
        dof: spec.n,
        quad_form: q,
    })
}

fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Wishart `W_p(dof, S)` sampler using the Bartlett decomposition.
#[derive(Debug, Clone)]
pub struct WishartSampler {
    dof: f64,
    chol: DMatrix<f64>,
    chi: Vec<ChiSquared<f64>>,
}

impl WishartSampler {
    pub fn new(dof: f64, scale: &DMatrix<f64>) -> Result<Self> {
        let p = linalg::check_symmetric(scale, "Wishart scale")?;
        if !(dof > (p as f64) - 1.0) {
            return Err(Error::DegreesOfFreedom {
                dof,
                reason: format!("Wishart needs dof > p - 1 = {}", p - 1),
            });
        }
        let chol = nalgebra::Cholesky::new(linalg::symmetrize(scale))
            .ok_or(Error::NotPositiveDefinite {
                min_eigenvalue: linalg::min_eigenvalue(scale),
            })?
            .unpack();
        let chi = (0..p)
            .map(|i| ChiSquared::new(dof - i as f64).expect("dof checked above"))
            .collect();
        Ok(WishartSampler { dof, chol, chi })
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let p = self.chi.len();
        let mut l = DMatrix::zeros(p, p);
        for i in 0..p {
            l[(i, i)] = self.chi[i].sample(rng).sqrt();
            for j in 0..i {
                l[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let al = &self.chol * l;
        linalg::symmetrize(&(&al * al.transpose()))
    }
}

/// Multivariate Student t via the Gaussian / chi-square ratio.
#[derive(Debug, Clone)]
pub struct StudentTSampler {
    n: f64,
    mu: DVector<f64>,
    root: DMatrix<f64>,
    chi: ChiSquared<f64>,
}

impl StudentTSampler {
    pub fn new(n: f64, mu: DVector<f64>, scale: &DMatrix<f64>) -> Result<Self> {
        let root = linalg::sym_sqrt(scale)?;
        if root.nrows() != mu.len() {
            return Err(Error::dim("t location and scale disagree"));
        }
        let chi = ChiSquared::new(n).map_err(|_| Error::DegreesOfFreedom {
            dof: n,
            reason: "must be positive".into(),
        })?;
        Ok(StudentTSampler { n, mu, root, chi })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let g = standard_normal_vec(rng, self.mu.len());
        let w = (self.chi.sample(rng) / self.n).sqrt();
        &self.mu + &self.root * g / w
    }
}

/// Inverted multivariate t:
/// `X = √n C^{1/2} (Σ + X* X*')^{-1/2} X* + μ` with `X* ~ N(0, I)` and
/// `Σ ~ W_p(n + p - 1, I)`.
#[derive(Debug, Clone)]
pub struct InvertedTSampler {
    n: f64,
    mu: DVector<f64>,
    root: DMatrix<f64>,
    wishart: WishartSampler,
}

impl InvertedTSampler {
    pub fn new(n: f64, mu: DVector<f64>, scale: &DMatrix<f64>) -> Result<Self> {
        if !(n > 0.0) {
            return Err(Error::DegreesOfFreedom {
                dof: n,
                reason: "must be positive".into(),
            });
        }
        linalg::check_spd(scale, "inverted t scale")?;
        let p = mu.len();
        if scale.nrows() != p {
            return Err(Error::dim("inverted t location and scale disagree"));
        }
        let root = linalg::sym_sqrt(scale)?;
        let wishart = WishartSampler::new(n + p as f64 - 1.0, &DMatrix::identity(p, p))?;
        Ok(InvertedTSampler {
            n,
            mu,
            root,
            wishart,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let p = self.mu.len();
        let xs = standard_normal_vec(rng, p);
        let m = self.wishart.sample(rng) + &xs * xs.transpose();
        let m_inv_half =
            linalg::sym_sqrt_inv(&m).expect("Wishart plus outer product is positive definite");
        &self.mu + &self.root * (m_inv_half * xs) * self.n.sqrt()
    }
}

/// One draw from `IT_p(n, μ, C)`.
pub fn sample_inverted_t<R: Rng + ?Sized>(
    p: usize,
    n: f64,
    mu: &DVector<f64>,
    c: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if mu.len() != p {
        return Err(Error::dim(format!("mu has length {}, expected {p}", mu.len())));
    }
    Ok(InvertedTSampler::new(n, mu.clone(), c)?.sample(rng))
}

/// Two-by-two Wishart law used to check the postulate with
/// `X = Σ12`, `Y = Σ22`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WishartSpec {
    pub n: f64,
    pub s11: f64,
    pub s12: f64,
    pub s22: f64,
}

impl WishartSpec {
    pub fn new(n: f64, s11: f64, s12: f64, s22: f64) -> Result<Self> {
        if !(n > 0.0) {
            return Err(Error::DegreesOfFreedom {
                dof: n,
                reason: "must be positive".into(),
            });
        }
        if !(s11 > 0.0 && s22 > 0.0 && s11 * s22 - s12 * s12 > 0.0) {
            return Err(Error::invalid("S", "must be positive definite"));
        }
        Ok(WishartSpec { n, s11, s12, s22 })
    }

    pub fn scale(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[self.s11, self.s12, self.s12, self.s22])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WishartPartition {
    /// `n [S12, S22]'`.
    pub prior_mean: [f64; 2],
    /// `n [[S11 S22 + S12², 2 S12 S22], [2 S12 S22, 2 S22²]]`.
    pub prior_cov: [[f64; 2]; 2],
    pub a_xy: f64,
    pub resid_mean: f64,
    pub resid_var: f64,
    pub cond_mean: f64,
    pub cond_var: f64,
}

pub fn wishart_partition_moments(spec: &WishartSpec, y: f64) -> Result<WishartPartition> {
    if !(y > 0.0) {
        return Err(Error::Domain(format!("Σ22 = {y} must be positive")));
    }
    let WishartSpec { n, s11, s12, s22 } = *spec;
    let a_xy = s12 / s22;
    Ok(WishartPartition {
        prior_mean: [n * s12, n * s22],
        prior_cov: [
            [n * (s11 * s22 + s12 * s12), n * 2.0 * s12 * s22],
            [n * 2.0 * s12 * s22, n * 2.0 * s22 * s22],
        ],
        a_xy,
        resid_mean: 0.0,
        resid_var: n * (s11 * s22 - s12 * s12),
        cond_mean: s12 * y / s22,
        cond_var: (s11 - s12 * s12 / s22) * y,
    })
}

/// Anything that produces joint `(X, Y)` draws.
pub trait JointSampler {
    fn dims(&self) -> (usize, usize);
    fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DVector<f64>);
}

fn split(z: DVector<f64>, m: usize) -> (DVector<f64>, DVector<f64>) {
    let p = z.len() - m;
    (z.rows(0, m).into_owned(), z.rows(m, p).into_owned())
}

/// Jointly Gaussian `(X, Y)`.
#[derive(Debug, Clone)]
pub struct GaussianJoint {
    m: usize,
    mu: DVector<f64>,
    root: DMatrix<f64>,
}

impl GaussianJoint {
    pub fn new(m: usize, mu: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let root = linalg::sym_sqrt(cov)?;
        if root.nrows() != mu.len() || m == 0 || m >= mu.len() {
            return Err(Error::dim("bad Gaussian joint partition"));
        }
        Ok(GaussianJoint { m, mu, root })
    }
}

impl JointSampler for GaussianJoint {
    fn dims(&self) -> (usize, usize) {
        (self.m, self.mu.len() - self.m)
    }

    fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        let z = &self.mu + &self.root * standard_normal_vec(rng, self.mu.len());
        split(z, self.m)
    }
}

/// Joint Student t `(X, Y)` drawn from a [`TJointSpec`].
#[derive(Debug, Clone)]
pub struct StudentTJoint {
    m: usize,
    p: usize,
    inner: StudentTSampler,
}

impl StudentTJoint {
    pub fn new(spec: &TJointSpec) -> Result<Self> {
        Ok(StudentTJoint {
            m: spec.dim_x(),
            p: spec.dim_y(),
            inner: StudentTSampler::new(spec.n, spec.location(), &spec.scale())?,
        })
    }
}

impl JointSampler for StudentTJoint {
    fn dims(&self) -> (usize, usize) {
        (self.m, self.p)
    }

    fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        split(self.inner.sample(rng), self.m)
    }
}

/// Joint inverted t `(X, Y)` drawn from a [`TJointSpec`].
#[derive(Debug, Clone)]
pub struct InvertedTJoint {
    m: usize,
    p: usize,
    inner: InvertedTSampler,
}

impl InvertedTJoint {
    pub fn new(spec: &TJointSpec) -> Result<Self> {
        Ok(InvertedTJoint {
            m: spec.dim_x(),
            p: spec.dim_y(),
            inner: InvertedTSampler::new(spec.n, spec.location(), &spec.scale())?,
        })
    }
}

impl JointSampler for InvertedTJoint {
    fn dims(&self) -> (usize, usize) {
        (self.m, self.p)
    }

    fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        split(self.inner.sample(rng), self.m)
    }
}

/// Per-bin summary of `X - A Y` from [`mc_second_order_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct IndependenceReport {
    pub bin_counts: Vec<usize>,
    pub bin_means: Vec<DVector<f64>>,
    pub bin_covs: Vec<DMatrix<f64>>,
    /// Largest `|bin mean - pooled mean|`, in pooled standard deviations.
    pub max_mean_dev: f64,
    /// Largest `|bin cov - pooled cov|`, normalised by `√(σᵢᵢ σⱼⱼ)`.
    pub max_cov_dev: f64,
    /// Largest mean deviation in Monte Carlo standard errors.
    pub max_mean_z: f64,
    /// Largest covariance deviation in Monte Carlo standard errors.
    pub max_cov_z: f64,
    /// Number of bin-by-entry comparisons behind `max_mean_z` and `max_cov_z`.
    pub comparisons: usize,
}

impl IndependenceReport {
    /// The larger of `max_mean_z` and `max_cov_z`, mapped back to the scale of
    /// a single standard normal deviate after a Šidák correction for the
    /// number of comparisons.
    pub fn adjusted_z(&self) -> f64 {
        let z = self.max_mean_z.max(self.max_cov_z);
        let normal = Normal::standard();
        let p_single = 2.0 * normal.sf(z);
        let p_family = -(self.comparisons as f64 * (-p_single).ln_1p()).exp_m1();
        if p_family >= 1.0 {
            return 0.0;
        }
        normal.inverse_cdf(1.0 - p_family / 2.0)
    }

    /// The bins agree with the pooled moments to within `k` Monte Carlo
    /// standard errors, judged on [`IndependenceReport::adjusted_z`].
    pub fn within_mc_error(&self, k: f64) -> bool {
        self.adjusted_z() <= k
    }

    /// Raised when some bin's covariance departs from the pooled one by more
    /// than `rel_tol` in relative terms.
    pub fn cov_flag(&self, rel_tol: f64) -> bool {
        self.max_cov_dev > rel_tol
    }
}

struct BinStats {
    count: usize,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    mean_se: DVector<f64>,
    cov_se: DMatrix<f64>,
}

fn bin_stats(rows: &[&DVector<f64>]) -> BinStats {
    let k = rows.len() as f64;
    let m = rows[0].len();
    let mean = rows.iter().fold(DVector::zeros(m), |acc, r| acc + *r) / k;
    let mut cov = DMatrix::zeros(m, m);
    let mut sq = DMatrix::zeros(m, m);
    for r in rows {
        let d = *r - &mean;
        let outer = &d * d.transpose();
        sq += outer.component_mul(&outer);
        cov += outer;
    }
    let cov = cov / k;
    // variance of each product (r_i - m_i)(r_j - m_j) about its mean
    let prod_var = sq / k - cov.component_mul(&cov);
    BinStats {
        count: rows.len(),
        mean_se: cov.diagonal().map(|v| (v / k).sqrt()),
        cov_se: prod_var.map(|v| (v.max(0.0) / k).sqrt()),
        mean,
        cov,
    }
}

/// Bins draws of `(X, Y)` into equal-probability classes of the Mahalanobis
/// norm of `Y - μy` (sample moments) and compares the moments of `X - A Y`
/// in each class with the pooled moments.
pub fn mc_second_order_check<S: JointSampler, R: Rng + ?Sized>(
    sampler: &S,
    a_xy: &DMatrix<f64>,
    bins: usize,
    draws: usize,
    rng: &mut R,
) -> Result<IndependenceReport> {
    if bins < 2 {
        return Err(Error::invalid("bins", "need at least two bins"));
    }
    if draws < 1000 * bins {
        return Err(Error::invalid("draws", "need at least 1000 draws per bin"));
    }
    let (m, p) = sampler.dims();
    if a_xy.shape() != (m, p) {
        return Err(Error::dim(format!("a_xy must be {m}x{p}")));
    }

    let mut ys = Vec::with_capacity(draws);
    let mut resid = Vec::with_capacity(draws);
    for _ in 0..draws {
        let (x, y) = sampler.sample_pair(rng);
        resid.push(x - a_xy * &y);
        ys.push(y);
    }

    let n = draws as f64;
    let mu_y = ys.iter().fold(DVector::zeros(p), |acc, y| acc + y) / n;
    let sigma_y = ys.iter().fold(DMatrix::zeros(p, p), |acc, y| {
        let d = y - &mu_y;
        acc + &d * d.transpose()
    }) / n;
    let prec = linalg::spd_inverse(&sigma_y)?;
    let mut order: Vec<(f64, usize)> = ys
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let d = y - &mu_y;
            ((d.transpose() * &prec * &d)[(0, 0)], i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    let all: Vec<&DVector<f64>> = resid.iter().collect();
    let pooled = bin_stats(&all);

    let mut report = IndependenceReport {
        bin_counts: Vec::with_capacity(bins),
        bin_means: Vec::with_capacity(bins),
        bin_covs: Vec::with_capacity(bins),
        max_mean_dev: 0.0,
        max_cov_dev: 0.0,
        max_mean_z: 0.0,
        max_cov_z: 0.0,
        comparisons: bins * (m + m * (m + 1) / 2),
    };
    let mut start = 0;
    for b in 0..bins {
        let len = draws / bins + usize::from(b < draws % bins);
        let rows: Vec<&DVector<f64>> = order[start..start + len]
            .iter()
            .map(|&(_, i)| &resid[i])
            .collect();
        start += len;
        let st = bin_stats(&rows);
        // a bin is part of the pooled sample, so its deviation from the pool
        // has variance shrunk by (1 - n_b / N)
        let shrink = (1.0 - st.count as f64 / n).sqrt();
        for i in 0..m {
            let dev = (st.mean[i] - pooled.mean[i]).abs();
            report.max_mean_dev = report.max_mean_dev.max(dev / pooled.cov[(i, i)].sqrt());
            report.max_mean_z = report.max_mean_z.max(dev / (st.mean_se[i] * shrink));
            for j in 0..=i {
                let dev = (st.cov[(i, j)] - pooled.cov[(i, j)]).abs();
                let scale = (pooled.cov[(i, i)] * pooled.cov[(j, j)]).sqrt();
                report.max_cov_dev = report.max_cov_dev.max(dev / scale);
                report.max_cov_z = report.max_cov_z.max(dev / (st.cov_se[(i, j)] * shrink));
            }
        }
        report.bin_counts.push(st.count);
        report.bin_means.push(st.mean);
        report.bin_covs.push(st.cov);
    }
    if report.bin_counts.iter().any(|&c| c == 0) {
        return Err(Error::invalid("draws", "empty bin"));
    }
    Ok(report)
}

/// Which closed-form factor [`factor_check`] compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionalLaw {
    StudentT,
    InvertedT,
}

/// One equal-probability class of the quadratic form `q` in [`factor_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct FactorBin {
    pub count: usize,
    pub mean_q: f64,
    /// Closed-form factor averaged over the draws in the bin, relative to the
    /// innermost bin.
    pub closed_form: f64,
    /// Monte Carlo `tr Var(X - A Y | bin)`, relative to the innermost bin.
    pub monte_carlo: f64,
}

impl FactorBin {
    pub fn rel_error(&self) -> f64 {
        (self.monte_carlo - self.closed_form).abs() / self.closed_form
    }
}

/// Compares the `y`-dependence of the closed-form conditional scale factor
/// with binned Monte Carlo conditional variances of `X - A Y`.
///
/// Bins are equal-probability classes of `q = (y-μy)' C22⁻¹ (y-μy)`. Both
/// sides are normalised by the innermost bin, so the comparison is about how
/// the conditional spread changes with `y`.
pub fn factor_check<R: Rng + ?Sized>(
    spec: &TJointSpec,
    law: ConditionalLaw,
    bins: usize,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<FactorBin>> {
    if bins < 2 || draws < 1000 * bins {
        return Err(Error::invalid("bins", "need >= 2 bins and 1000 draws per bin"));
    }
    let a = spec.regression_matrix()?;
    let c22_inv = linalg::spd_inverse(&spec.c22)?;
    let m = spec.dim_x();
    let mut rows: Vec<(f64, DVector<f64>)> = Vec::with_capacity(draws);
    let student;
    let inverted;
    let sampler: &dyn Fn(&mut R) -> (DVector<f64>, DVector<f64>) = match law {
        ConditionalLaw::StudentT => {
            student = StudentTJoint::new(spec)?;
            &|r: &mut R| student.sample_pair(r)
        }
        ConditionalLaw::InvertedT => {
            inverted = InvertedTJoint::new(spec)?;
            &|r: &mut R| inverted.sample_pair(r)
        }
    };
    for _ in 0..draws {
        let (x, y) = sampler(rng);
        let d = &y - &spec.mu_y;
        let q = (d.transpose() * &c22_inv * &d)[(0, 0)];
        rows.push((q, x - &a * y));
    }
    rows.sort_by(|l, r| l.0.total_cmp(&r.0));

    let n = spec.n;
    let factor = |q: f64| match law {
        ConditionalLaw::StudentT => 1.0 + q / n,
        ConditionalLaw::InvertedT => 1.0 - q / n,
    };
    let mut raw = Vec::with_capacity(bins);
    let mut start = 0;
    for b in 0..bins {
        let len = draws / bins + usize::from(b < draws % bins);
        let slice = &rows[start..start + len];
        start += len;
        let refs: Vec<&DVector<f64>> = slice.iter().map(|(_, r)| r).collect();
        let st = bin_stats(&refs);
        let k = len as f64;
        let mean_q = slice.iter().map(|(q, _)| q).sum::<f64>() / k;
        let mean_factor = slice.iter().map(|(q, _)| factor(*q)).sum::<f64>() / k;
        raw.push((len, mean_q, mean_factor, st.cov.trace() / m as f64));
    }
    let (f0, v0) = (raw[0].2, raw[0].3);
    Ok(raw
        .into_iter()
        .map(|(count, mean_q, f, v)| FactorBin {
            count,
            mean_q,
            closed_form: f / f0,
            monte_carlo: v / v0,
        })
        .collect())
}
