//! The scaled observational precision (SOP) model: every covariance is
//! scaled by an unknown scalar `V`, beliefs about `V` are updated through
//! `T = (Y - μy)' Σy⁻¹ (Y - μy)`, and the posterior of `X` follows by
//! conditional expectation. Also the conjugate normal/gamma counterpart,
//! the map that makes the two agree, and the scalar-`V` filter.

use nalgebra::{DMatrix, DVector};

use crate::dlm::{kalman_update, FilterState, ObsMode, StateSpaceSpec, StepReport, VarBelief};
use crate::error::{Error, Result};
use crate::linalg;
use crate::pspp::{JointMoments, MomentPair};

/// `V | K ~ {V̂, K/η}` with observation weight `α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarVarBelief {
    pub v_hat: f64,
    pub k: f64,
    pub eta: f64,
    pub alpha: f64,
}

fn positive(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be positive and finite, got {x}")))
    }
}

impl ScalarVarBelief {
    pub fn new(v_hat: f64, k: f64, eta: f64, alpha: f64) -> Result<Self> {
        positive("v_hat", v_hat)?;
        positive("k", k)?;
        positive("eta", eta)?;
        positive("alpha", alpha)?;
        Ok(ScalarVarBelief {
            v_hat,
            k,
            eta,
            alpha,
        })
    }

    /// `Var(V) = K/η`.
    pub fn variance(&self) -> f64 {
        self.k / self.eta
    }
}

/// `τ = (y - μy)' Σy⁻¹ (y - μy)`.
pub fn sop_tau(j: &JointMoments, y: &DVector<f64>) -> Result<f64> {
    j.check_obs(y)?;
    Ok(linalg::inv_quad_form(&j.sigma_y, &(y - &j.mu_y))?.max(0.0))
}

/// Posterior belief after `T = τ`: mean `(ηV̂ + ατ)/(η+α)`, `η ← η + α`,
/// so the variance becomes `K/(η+α)`.
pub fn sop_v_update(b: &ScalarVarBelief, tau: f64) -> Result<ScalarVarBelief> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::invalid("tau", format!("must be a finite non-negative value, got {tau}")));
    }
    let eta = b.eta + b.alpha;
    Ok(ScalarVarBelief {
        v_hat: (b.eta * b.v_hat + b.alpha * tau) / eta,
        eta,
        ..*b
    })
}

/// Posterior moments of `X | Y = y` in the scaled model:
/// `{μx + A(y-μy), E(V | τ)·(Σx - AΣyA')}`.
pub fn sop_posterior_x(j: &JointMoments, y: &DVector<f64>, b: &ScalarVarBelief) -> Result<MomentPair> {
    let tau = sop_tau(j, y)?;
    let a = j.regression_matrix()?;
    let v_mean = sop_v_update(b, tau)?.v_hat;
    Ok(MomentPair {
        mean: &j.mu_x + &a * (y - &j.mu_y),
        cov: j.residual_cov()? * v_mean,
    })
}

/// `νs/V ~ χ²_ν`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateSOPPrior {
    pub nu: f64,
    pub s: f64,
}

impl ConjugateSOPPrior {
    pub fn new(nu: f64, s: f64) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::DegreesOfFreedom {
                dof: nu,
                reason: "must be positive".into(),
            });
        }
        positive("s", s)?;
        Ok(ConjugateSOPPrior { nu, s })
    }
}

/// Conjugate posterior: `X | y` is Student t and `V | y` inverse gamma.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugatePosterior {
    pub t_dof: f64,
    pub t_location: DVector<f64>,
    pub t_scale: DMatrix<f64>,
    pub tau: f64,
    nu_s: f64,
}

impl ConjugatePosterior {
    /// `E(V | y) = (νs + τ)/(ν + p - 2)`.
    pub fn v_mean(&self) -> Result<f64> {
        if !(self.t_dof > 2.0) {
            return Err(Error::DegreesOfFreedom {
                dof: self.t_dof,
                reason: "E(V | y) needs ν + p > 2".into(),
            });
        }
        Ok((self.nu_s + self.tau) / (self.t_dof - 2.0))
    }

    /// `Var(V | y) = 2(τ + νs)² / {(ν+p-2)²(ν+p-4)}`.
    pub fn v_variance(&self) -> Result<f64> {
        if !(self.t_dof > 4.0) {
            return Err(Error::DegreesOfFreedom {
                dof: self.t_dof,
                reason: "Var(V | y) needs ν + p > 4".into(),
            });
        }
        let d = self.t_dof - 2.0;
        Ok(2.0 * (self.tau + self.nu_s).powi(2) / (d * d * (self.t_dof - 4.0)))
    }

    /// Covariance of the t posterior, `dof/(dof-2) · scale`.
    pub fn t_cov(&self) -> Result<DMatrix<f64>> {
        if !(self.t_dof > 2.0) {
            return Err(Error::DegreesOfFreedom {
                dof: self.t_dof,
                reason: "t covariance needs ν + p > 2".into(),
            });
        }
        Ok(&self.t_scale * (self.t_dof / (self.t_dof - 2.0)))
    }
}

pub fn conjugate_posterior(
    prior: &ConjugateSOPPrior,
    j: &JointMoments,
    y: &DVector<f64>,
) -> Result<ConjugatePosterior> {
    let tau = sop_tau(j, y)?;
    let p = j.dim_y() as f64;
    let a = j.regression_matrix()?;
    let nu_s = prior.nu * prior.s;
    let t_dof = prior.nu + p;
    Ok(ConjugatePosterior {
        t_dof,
        t_location: &j.mu_x + &a * (y - &j.mu_y),
        t_scale: j.residual_cov()? * ((nu_s + tau) / t_dof),
        tau,
        nu_s,
    })
}

/// SOP settings that reproduce the conjugate posterior moments of `X`:
/// `V̂ = νs/(ν+p-3)`, `η = ν+p-3`, `α = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedParams {
    pub v_hat: f64,
    pub eta: f64,
    pub alpha: f64,
    prior: ConjugateSOPPrior,
    p: usize,
}

impl MatchedParams {
    /// Belief with the matched `V̂`, `η`, `α` and the supplied `K`.
    pub fn belief(&self, k: f64) -> Result<ScalarVarBelief> {
        ScalarVarBelief::new(self.v_hat, k, self.eta, self.alpha)
    }

    /// Same `η` and `α`, but `V̂` set to the prior mean `νs/(ν-2)`.
    pub fn prior_mean_belief(&self, k: f64) -> Result<ScalarVarBelief> {
        let nu = self.prior.nu;
        if !(nu > 2.0) {
            return Err(Error::DegreesOfFreedom {
                dof: nu,
                reason: "prior mean of V needs ν > 2".into(),
            });
        }
        ScalarVarBelief::new(nu * self.prior.s / (nu - 2.0), k, self.eta, self.alpha)
    }

    /// Posterior mean of `V` under [`MatchedParams::prior_mean_belief`] minus
    /// the conjugate posterior mean: `(p-1)νs / {(ν-2)(ν+p-2)}`.
    pub fn discrepancy(&self) -> Result<f64> {
        let ConjugateSOPPrior { nu, s } = self.prior;
        if !(nu > 2.0) {
            return Err(Error::DegreesOfFreedom {
                dof: nu,
                reason: "discrepancy needs ν > 2".into(),
            });
        }
        let p = self.p as f64;
        Ok((p - 1.0) * nu * s / ((nu - 2.0) * (nu + p - 2.0)))
    }

    /// `K` for which the SOP variance of `V` equals the conjugate one:
    /// `2(τ + νs)² / {(ν+p-2)(ν+p-4)}`.
    pub fn matching_k(&self, tau: f64) -> Result<f64> {
        let ConjugateSOPPrior { nu, s } = self.prior;
        let p = self.p as f64;
        if !(nu + p > 4.0) {
            return Err(Error::DegreesOfFreedom {
                dof: nu + p,
                reason: "matching K needs ν + p > 4".into(),
            });
        }
        Ok(2.0 * (tau + nu * s).powi(2) / ((nu + p - 2.0) * (nu + p - 4.0)))
    }
}

pub fn conjugate_match_params(prior: &ConjugateSOPPrior, p: usize) -> Result<MatchedParams> {
    let eta = prior.nu + p as f64 - 3.0;
    if !(eta > 0.0) {
        return Err(Error::DegreesOfFreedom {
            dof: prior.nu + p as f64,
            reason: "matching needs ν + p > 3".into(),
        });
    }
    Ok(MatchedParams {
        v_hat: prior.nu * prior.s / eta,
        eta,
        alpha: 1.0,
        prior: *prior,
        p,
    })
}

/// Relative gaps between the matched SOP posterior and the conjugate one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateComparison {
    pub mean_rel: f64,
    pub cov_rel: f64,
    /// Prior-mean convention: direct gap in `E(V | y)` against the closed form.
    /// `None` when `ν ≤ 2`.
    pub discrepancy_rel: Option<f64>,
    /// SOP `Var(V | y)` with the matching `K` against the conjugate one.
    /// `None` when `ν + p ≤ 4`.
    pub variance_rel: Option<f64>,
}

impl ConjugateComparison {
    pub fn max_rel(&self) -> f64 {
        [
            self.mean_rel,
            self.cov_rel,
            self.discrepancy_rel.unwrap_or(0.0),
            self.variance_rel.unwrap_or(0.0),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn rel_gap(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

/// Runs the SOP update with the matched parameters and compares it with the
/// conjugate posterior for the same `(ν, s)`, moments and observation.
pub fn compare_with_conjugate(
    prior: &ConjugateSOPPrior,
    j: &JointMoments,
    y: &DVector<f64>,
) -> Result<ConjugateComparison> {
    let matched = conjugate_match_params(prior, j.dim_y())?;
    let conj = conjugate_posterior(prior, j, y)?;
    let sop = sop_posterior_x(j, y, &matched.belief(1.0)?)?;
    let cov = conj.t_cov()?;
    let mean_rel = rel_gap(0.0, (&sop.mean - &conj.t_location).amax(), conj.t_location.amax().max(1.0));
    let cov_rel = rel_gap(0.0, (&sop.cov - &cov).amax(), cov.amax());
    let tau = conj.tau;
    let discrepancy_rel = if prior.nu > 2.0 {
        let direct = sop_v_update(&matched.prior_mean_belief(1.0)?, tau)?.v_hat - conj.v_mean()?;
        let formula = matched.discrepancy()?;
        Some(rel_gap(direct, formula, formula.abs().max(direct.abs()).max(1.0)))
    } else {
        None
    };
    let variance_rel = if conj.t_dof > 4.0 {
        let k = matched.matching_k(tau)?;
        let sop_var = sop_v_update(&matched.belief(k)?, tau)?.variance();
        let conj_var = conj.v_variance()?;
        Some(rel_gap(sop_var, conj_var, conj_var))
    } else {
        None
    };
    Ok(ConjugateComparison {
        mean_rel,
        cov_rel,
        discrepancy_rel,
        variance_rel,
    })
}

/// Scalar-`V` filter step (`α = 1`).
///
/// With `V = v Z`, the scale-free forecast covariance is `Q = BRB' + Z` and
/// `τ = e'Q⁻¹e`. The belief is updated as `η_t = η_{t-1} + 1`,
/// `η_t v̂_t = η_{t-1} v̂_{t-1} + τ`, and the state moments follow the
/// Kalman recursion on the scale-free covariances.
pub fn sop_filter_step(
    state: &FilterState,
    spec: &StateSpaceSpec,
    y: &DVector<f64>,
) -> Result<(FilterState, StepReport)> {
    let z = match &spec.obs {
        ObsMode::Scaled { z } => z,
        _ => return Err(Error::invalid("obs", "scalar filter needs ObsMode::Scaled")),
    };
    let b = match &state.belief {
        VarBelief::Scalar(b) => b,
        _ => return Err(Error::invalid("belief", "scalar filter needs a scalar belief")),
    };
    let (m, p_mat, f, q, e) = kalman_update(state, spec, y, z)?;
    let tau = linalg::inv_quad_form(&q, &e)?.max(0.0);
    let e_std = linalg::sym_sqrt_inv(&(&q * b.v_hat))? * &e;
    let eta = b.eta + 1.0;
    let next_b = ScalarVarBelief {
        v_hat: (b.eta * b.v_hat + tau) / eta,
        eta,
        ..*b
    };
    let next = FilterState {
        m: m.clone(),
        p_mat: p_mat.clone(),
        belief: VarBelief::Scalar(next_b),
        t: state.t + 1,
    };
    let report = StepReport {
        t: next.t,
        f,
        q,
        e,
        e_std,
        m,
        state_cov: &p_mat * next_b.v_hat,
        p_mat,
        v_hat: z * next_b.v_hat,
        v_scale: Some(next_b.v_hat),
        eta: Some(eta),
        projected: false,
    };
    Ok((next, report))
}
