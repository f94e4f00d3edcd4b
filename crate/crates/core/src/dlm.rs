//! State-space filtering with an unknown observation covariance.
//!
//! The model is
//!
//! ```text
//! Y_t = B X_t + ε_t,   X_t = C X_{t-1} + ω_t,   ε_t ~ (0, V),   ω_t ~ (0, W)
//! ```
//!
//! and three observation modes are supported: `V` known (a plain Kalman
//! filter), `V = v·Z` with a scalar belief on `v` (see
//! [`crate::sop::sop_filter_step`]), and a full matrix belief on `V`
//! ([`pspp_dlm_step`]).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gsop::{kronecker_correction, MatrixVarBelief};
use crate::linalg;
use crate::sop::{sop_filter_step, ScalarVarBelief};

/// How the state covariance is carried forward.
#[derive(Debug, Clone, PartialEq)]
pub enum Evolution {
    /// `R = C P C' + W`.
    Fixed(DMatrix<f64>),
    /// `R = Δ^{-1/2} C P C' Δ^{-1/2}` with `Δ = diag(δ)`, `δᵢ ∈ (0, 1]`.
    Discount(DVector<f64>),
}

/// What is assumed about the observation covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum ObsMode {
    KnownV(DMatrix<f64>),
    /// `V = v Z` with a scalar belief on `v`; `W` and `P` are scaled by `v` too.
    Scaled { z: DMatrix<f64> },
    MatrixBelief,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceSpec {
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub evolution: Evolution,
    pub obs: ObsMode,
}

impl StateSpaceSpec {
    pub fn new(b: DMatrix<f64>, c: DMatrix<f64>, evolution: Evolution, obs: ObsMode) -> Result<Self> {
        let m = linalg::check_square(&c, "C")?;
        let p = b.nrows();
        if b.ncols() != m || p == 0 {
            return Err(Error::dim(format!(
                "B is {}x{}, C is {m}x{m}",
                b.nrows(),
                b.ncols()
            )));
        }
        linalg::check_finite(&b, "B")?;
        linalg::check_finite(&c, "C")?;
        match &evolution {
            Evolution::Fixed(w) => {
                if linalg::check_symmetric(w, "W")? != m {
                    return Err(Error::dim(format!("W must be {m}x{m}")));
                }
                linalg::psd_repair(w)?;
            }
            Evolution::Discount(d) => {
                if d.len() != m {
                    return Err(Error::dim(format!("need {m} discount factors, got {}", d.len())));
                }
                check_discounts(d.as_slice())?;
            }
        }
        match &obs {
            ObsMode::KnownV(v) | ObsMode::Scaled { z: v } => {
                if linalg::check_symmetric(v, "observation covariance")? != p {
                    return Err(Error::dim(format!("observation covariance must be {p}x{p}")));
                }
                linalg::psd_repair(v)?;
            }
            ObsMode::MatrixBelief => {}
        }
        Ok(StateSpaceSpec {
            b,
            c,
            evolution,
            obs,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.b.nrows()
    }
}

pub fn check_discounts(deltas: &[f64]) -> Result<()> {
    for &d in deltas {
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::invalid("discount", format!("discount out of (0,1]: {d}")));
        }
    }
    Ok(())
}

/// Belief about the observation covariance carried by the filter.
#[derive(Debug, Clone, PartialEq)]
pub enum VarBelief {
    Known,
    Scalar(ScalarVarBelief),
    Matrix(MatrixVarBelief),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub m: DVector<f64>,
    pub p_mat: DMatrix<f64>,
    pub belief: VarBelief,
    pub t: usize,
}

impl FilterState {
    pub fn new(m: DVector<f64>, p_mat: DMatrix<f64>, belief: VarBelief) -> Result<Self> {
        if linalg::check_symmetric(&p_mat, "P")? != m.len() {
            return Err(Error::dim("m and P disagree"));
        }
        let p_mat = linalg::psd_repair(&p_mat)?;
        Ok(FilterState {
            m,
            p_mat,
            belief,
            t: 0,
        })
    }

    fn check_against(&self, spec: &StateSpaceSpec, y: &DVector<f64>) -> Result<()> {
        if self.m.len() != spec.state_dim() {
            return Err(Error::dim(format!(
                "state has length {}, model has {}",
                self.m.len(),
                spec.state_dim()
            )));
        }
        if y.len() != spec.obs_dim() {
            return Err(Error::dim(format!(
                "observation has length {}, model has {}",
                y.len(),
                spec.obs_dim()
            )));
        }
        if let VarBelief::Matrix(b) = &self.belief {
            if b.dim() != spec.obs_dim() {
                return Err(Error::dim("matrix belief has the wrong dimension"));
            }
        }
        Ok(())
    }
}

/// One-step summary of a filter update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Index of the observation just processed, starting at 1.
    pub t: usize,
    pub f: DVector<f64>,
    /// Forecast covariance of `Y_t`. In scaled mode this is the scale-free
    /// `BRB' + Z`; the forecast covariance is `v̂_{t-1}` times it.
    pub q: DMatrix<f64>,
    pub e: DVector<f64>,
    /// `e*` = (forecast covariance)^{-1/2} `e` with the symmetric root.
    pub e_std: DVector<f64>,
    pub m: DVector<f64>,
    pub p_mat: DMatrix<f64>,
    /// Posterior covariance of `X_t`. Equals `p_mat` except in scaled mode,
    /// where it is `v̂_t P_t`.
    pub state_cov: DMatrix<f64>,
    /// Current estimate of the observation covariance `V`.
    pub v_hat: DMatrix<f64>,
    /// Scalar `v̂_t` in scaled mode.
    pub v_scale: Option<f64>,
    pub eta: Option<f64>,
    /// Set when `BRB' + V̂_t` had to be built from an eigenvalue-clipped
    /// copy of `V̂_t`.
    pub projected: bool,
}

impl StepReport {
    /// `V̂₁₂ / √(V̂₁₁ V̂₂₂)` for bivariate observations.
    pub fn correlation(&self) -> Option<f64> {
        if self.v_hat.nrows() < 2 {
            return None;
        }
        let v = &self.v_hat;
        Some(v[(0, 1)] / (v[(0, 0)] * v[(1, 1)]).sqrt())
    }
}

/// `W_t = Δ^{-1/2} C P C' Δ^{-1/2} - C P C'`.
pub fn discount_w(c: &DMatrix<f64>, p_mat: &DMatrix<f64>, deltas: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_discounts(deltas.as_slice())?;
    let cpc = c * p_mat * c.transpose();
    let s = DMatrix::from_diagonal(&deltas.map(|d| 1.0 / d.sqrt()));
    Ok(linalg::symmetrize(&(&s * &cpc * &s - cpc)))
}

/// `R_t`.
pub fn evolve_cov(state: &FilterState, spec: &StateSpaceSpec) -> Result<DMatrix<f64>> {
    let cpc = &spec.c * &state.p_mat * spec.c.transpose();
    let r = match &spec.evolution {
        Evolution::Fixed(w) => cpc + w,
        Evolution::Discount(d) => {
            check_discounts(d.as_slice())?;
            let s = DMatrix::from_diagonal(&d.map(|x| 1.0 / x.sqrt()));
            &s * cpc * &s
        }
    };
    Ok(linalg::symmetrize(&r))
}

/// `Q^{-1/2} e` with the symmetric square root.
pub fn standardized_error(e: &DVector<f64>, q: &DMatrix<f64>) -> Result<DVector<f64>> {
    if q.nrows() != e.len() {
        return Err(Error::dim("e and Q disagree"));
    }
    Ok(linalg::sym_sqrt_inv(q)? * e)
}

struct Prior {
    a: DVector<f64>,
    r: DMatrix<f64>,
    f: DVector<f64>,
    brb: DMatrix<f64>,
    e: DVector<f64>,
}

fn predict(state: &FilterState, spec: &StateSpaceSpec, y: &DVector<f64>) -> Result<Prior> {
    state.check_against(spec, y)?;
    let r = evolve_cov(state, spec)?;
    let a = &spec.c * &state.m;
    let f = &spec.b * &a;
    let brb = linalg::symmetrize(&(&spec.b * &r * spec.b.transpose()));
    let e = y - &f;
    Ok(Prior { a, r, f, brb, e })
}

pub(crate) fn kalman_update(
    state: &FilterState,
    spec: &StateSpaceSpec,
    y: &DVector<f64>,
    obs_cov: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>)> {
    let pr = predict(state, spec, y)?;
    let q = linalg::symmetrize(&(&pr.brb + obs_cov));
    // A' = Q⁻¹ B R
    let gain_t = linalg::spd_solve(&q, &(&spec.b * &pr.r))?;
    let m = &pr.a + gain_t.transpose() * &pr.e;
    let p_mat = linalg::symmetrize(&(&pr.r - (&spec.b * &pr.r).transpose() * &gain_t));
    Ok((m, p_mat, pr.f, q, pr.e))
}

/// Kalman filter step with known observation covariance.
pub fn kalman_step_known_v(
    state: &FilterState,
    spec: &StateSpaceSpec,
    y: &DVector<f64>,
) -> Result<(FilterState, StepReport)> {
    let v = match &spec.obs {
        ObsMode::KnownV(v) => v,
        _ => return Err(Error::invalid("obs", "known-V step needs ObsMode::KnownV")),
    };
    let (m, p_mat, f, q, e) = kalman_update(state, spec, y, v)?;
    let e_std = standardized_error(&e, &q)?;
    let next = FilterState {
        m: m.clone(),
        p_mat: p_mat.clone(),
        belief: VarBelief::Known,
        t: state.t + 1,
    };
    let report = StepReport {
        t: next.t,
        f,
        q,
        e,
        e_std,
        m,
        state_cov: p_mat.clone(),
        p_mat,
        v_hat: v.clone(),
        v_scale: None,
        eta: None,
        projected: false,
    };
    Ok((next, report))
}

/// PSPP filter step with a matrix belief on `V` and `α = 1`.
///
/// The forecast covariance uses the prior estimate, `Q = BRB' + V̂_{t-1}`,
/// while the gain uses the updated one through `Ṽ = (BRB' + V̂_t)⁻¹`. The
/// belief keeps the raw `V̂_t` even when it is indefinite; if `BRB' + V̂_t`
/// is not positive definite, `Ṽ` is formed from an eigenvalue-clipped `V̂_t`
/// and the report is flagged.
pub fn pspp_dlm_step(
    state: &FilterState,
    spec: &StateSpaceSpec,
    y: &DVector<f64>,
) -> Result<(FilterState, StepReport)> {
    if spec.obs != ObsMode::MatrixBelief {
        return Err(Error::invalid("obs", "PSPP step needs ObsMode::MatrixBelief"));
    }
    let belief = match &state.belief {
        VarBelief::Matrix(b) => b,
        _ => return Err(Error::invalid("belief", "PSPP step needs a matrix belief")),
    };
    let pr = predict(state, spec, y)?;
    let q = linalg::symmetrize(&(&pr.brb + &belief.v_hat));
    let e_std = standardized_error(&pr.e, &q)?;

    let eta = belief.eta + 1.0;
    let v_hat = linalg::symmetrize(
        &((&belief.v_hat * belief.eta + &pr.e * pr.e.transpose() - &pr.brb) / eta),
    );
    let (v_tilde, projected) = match linalg::spd_inverse(&(&pr.brb + &v_hat)) {
        Ok(inv) => (inv, false),
        Err(_) => {
            let clipped = linalg::psd_project(&v_hat, None);
            (linalg::spd_inverse(&(&pr.brb + clipped))?, true)
        }
    };
    let v_tilde2 = &belief.k / eta;

    let h = &pr.r * spec.b.transpose();
    let m = &pr.a + &h * &v_tilde * &pr.e;
    let p_mat = linalg::symmetrize(
        &(&pr.r - &h * &v_tilde * h.transpose() + kronecker_correction(&h, &pr.e, &v_tilde2)?),
    );
    let next = FilterState {
        m: m.clone(),
        p_mat: p_mat.clone(),
        belief: VarBelief::Matrix(MatrixVarBelief {
            v_hat: v_hat.clone(),
            k: belief.k.clone(),
            eta,
            alpha: belief.alpha,
        }),
        t: state.t + 1,
    };
    let report = StepReport {
        t: next.t,
        f: pr.f,
        q,
        e: pr.e,
        e_std,
        m,
        state_cov: p_mat.clone(),
        p_mat,
        v_hat,
        v_scale: None,
        eta: Some(eta),
        projected,
    };
    Ok((next, report))
}

/// Dispatches on the observation mode.
pub fn filter_step(
    state: &FilterState,
    spec: &StateSpaceSpec,
    y: &DVector<f64>,
) -> Result<(FilterState, StepReport)> {
    match spec.obs {
        ObsMode::KnownV(_) => kalman_step_known_v(state, spec, y),
        ObsMode::Scaled { .. } => sop_filter_step(state, spec, y),
        ObsMode::MatrixBelief => pspp_dlm_step(state, spec, y),
    }
}

/// Runs [`filter_step`] over a whole series.
pub fn run_filter(
    initial: &FilterState,
    spec: &StateSpaceSpec,
    ys: &[DVector<f64>],
) -> Result<(FilterState, Vec<StepReport>)> {
    let mut state = initial.clone();
    let mut reports = Vec::with_capacity(ys.len());
    for y in ys {
        let (next, report) = filter_step(&state, spec, y)?;
        state = next;
        reports.push(report);
    }
    Ok((state, reports))
}

/// Componentwise one-step forecast accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastMetrics {
    pub msse: DVector<f64>,
    pub mse: DVector<f64>,
    pub mae: DVector<f64>,
    pub me: DVector<f64>,
    pub steps: usize,
}

/// Averages over the reports after the first `burn_in`.
pub fn forecast_metrics(reports: &[StepReport], burn_in: usize) -> Result<ForecastMetrics> {
    let window = reports
        .get(burn_in..)
        .filter(|w| !w.is_empty())
        .ok_or_else(|| Error::invalid("burn_in", "no steps left after burn-in"))?;
    let p = window[0].e.len();
    let mut out = ForecastMetrics {
        msse: DVector::zeros(p),
        mse: DVector::zeros(p),
        mae: DVector::zeros(p),
        me: DVector::zeros(p),
        steps: window.len(),
    };
    for r in window {
        out.msse += r.e_std.component_mul(&r.e_std);
        out.mse += r.e.component_mul(&r.e);
        out.mae += r.e.abs();
        out.me += &r.e;
    }
    let k = window.len() as f64;
    out.msse /= k;
    out.mse /= k;
    out.mae /= k;
    out.me /= k;
    Ok(out)
}
