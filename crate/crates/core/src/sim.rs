//! Synthetic bivariate series from three state-space families and a
//! replication harness comparing the PSPP filter (DLM1) with the Kalman
//! filter that knows the true `V` (DLM3).
//!
//! Replication `i` draws from its own ChaCha stream, seeded with the
//! experiment seed and selected by `set_stream(i)`, so any replication can be
//! rerun alone and results do not depend on thread scheduling.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dlm::{
    forecast_metrics, run_filter, Evolution, FilterState, ForecastMetrics, ObsMode, StateSpaceSpec,
    StepReport, VarBelief,
};
use crate::error::{Error, Result};
use crate::gsop::MatrixVarBelief;
use crate::linalg;

/// Local level (LL), local level plus linear trend (LT), local level plus
/// seasonal rotation (LS).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    LL,
    LT,
    LS,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::LL, Family::LT, Family::LS];

    pub fn state_dim(self) -> usize {
        match self {
            Family::LS => 3,
            _ => 2,
        }
    }

    pub fn design(self) -> DMatrix<f64> {
        match self {
            Family::LS => DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            _ => DMatrix::identity(2, 2),
        }
    }

    pub fn transition(self) -> DMatrix<f64> {
        match self {
            Family::LL => DMatrix::identity(2, 2),
            Family::LT => DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            Family::LS => {
                let (s, c) = (std::f64::consts::PI / 6.0).sin_cos();
                DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c])
            }
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::LL => "LL",
            Family::LT => "LT",
            Family::LS => "LS",
        };
        f.write_str(s)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LL" => Ok(Family::LL),
            "LT" => Ok(Family::LT),
            "LS" => Ok(Family::LS),
            _ => Err(Error::invalid("family", format!("unknown family `{s}` (LL, LT or LS)"))),
        }
    }
}

/// The true observation covariance used in every family, `[[1, 2], [2, 5]]`.
pub fn default_v_true() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub family: Family,
    pub v_true: DMatrix<f64>,
    pub w_true: DMatrix<f64>,
    pub n_series: usize,
    pub length: usize,
    pub seed: u64,
}

impl SimSpec {
    /// `V = [[1, 2], [2, 5]]` and `W = I`.
    pub fn new(family: Family, n_series: usize, length: usize, seed: u64) -> Result<Self> {
        let m = family.state_dim();
        Self::with_covariances(family, default_v_true(), DMatrix::identity(m, m), n_series, length, seed)
    }

    pub fn with_covariances(
        family: Family,
        v_true: DMatrix<f64>,
        w_true: DMatrix<f64>,
        n_series: usize,
        length: usize,
        seed: u64,
    ) -> Result<Self> {
        if linalg::check_symmetric(&v_true, "v_true")? != 2 {
            return Err(Error::dim("v_true must be 2x2"));
        }
        linalg::check_spd(&v_true, "v_true")?;
        if linalg::check_symmetric(&w_true, "w_true")? != family.state_dim() {
            return Err(Error::dim(format!("w_true must be {0}x{0}", family.state_dim())));
        }
        linalg::psd_repair(&w_true)?;
        if n_series == 0 {
            return Err(Error::invalid("n_series", "need at least one series"));
        }
        if length == 0 {
            return Err(Error::invalid("length", "need at least one step"));
        }
        Ok(SimSpec {
            family,
            v_true,
            w_true,
            n_series,
            length,
            seed,
        })
    }
}

/// Generator for replication `index`.
pub fn replication_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSeries {
    /// `X_0, X_1, …, X_T`.
    pub states: Vec<DVector<f64>>,
    /// `Y_1, …, Y_T`.
    pub obs: Vec<DVector<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, root: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(root.ncols(), |_, _| StandardNormal.sample(rng));
    root * z
}

pub fn simulate_with_states(spec: &SimSpec, index: usize) -> Result<SimulatedSeries> {
    let mut rng = replication_rng(spec.seed, index);
    let b = spec.family.design();
    let c = spec.family.transition();
    let m = spec.family.state_dim();
    let v_root = linalg::sym_sqrt(&spec.v_true)?;
    let w_root = linalg::sym_sqrt(&spec.w_true)?;
    let mut x = gaussian(&mut rng, &DMatrix::identity(m, m));
    let mut states = Vec::with_capacity(spec.length + 1);
    let mut obs = Vec::with_capacity(spec.length);
    states.push(x.clone());
    for _ in 0..spec.length {
        x = &c * x + gaussian(&mut rng, &w_root);
        obs.push(&b * &x + gaussian(&mut rng, &v_root));
        states.push(x.clone());
    }
    Ok(SimulatedSeries { states, obs })
}

pub fn simulate_series(spec: &SimSpec, index: usize) -> Result<Vec<DVector<f64>>> {
    Ok(simulate_with_states(spec, index)?.obs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    /// PSPP filter with a matrix belief on `V`.
    #[serde(rename = "DLM1")]
    Dlm1,
    /// Kalman filter with the true `V` and `W`.
    #[serde(rename = "DLM3")]
    Dlm3,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Dlm1 => "DLM1",
            ModelKind::Dlm3 => "DLM3",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DLM1" => Ok(ModelKind::Dlm1),
            "DLM3" => Ok(ModelKind::Dlm3),
            _ => Err(Error::invalid("model", format!("unknown model `{s}` (DLM1 or DLM3)"))),
        }
    }
}

/// Priors for DLM1: `m₀ = 0`, `P₀ = p0_scale·I`, `V̂₀`, `η₀`, `K₀ = k0_scale·I`.
/// DLM3 uses `m₀ = 0`, `P₀ = p0_scale·I` and the true `V`, `W`.
///
/// The default puts ten pseudo-observations on `V̂₀ = I` and scales `K₀`
/// down to `10⁻³·I`. With `η₀ = 1` the first update already gives an
/// indefinite `V̂₁` because `R₁ = 2I` exceeds `V̂₀`, and with `K₀ = I` the
/// Kronecker term grows with `R²` and feeds back through `R`. [`Dlm1Priors::vague`]
/// keeps that setting for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dlm1Priors {
    pub p0_scale: f64,
    pub v0: DMatrix<f64>,
    pub eta0: f64,
    pub k0_scale: f64,
}

impl Default for Dlm1Priors {
    fn default() -> Self {
        Dlm1Priors {
            p0_scale: 1.0,
            v0: DMatrix::identity(2, 2),
            eta0: 10.0,
            k0_scale: 1e-3,
        }
    }
}

impl Dlm1Priors {
    /// `η₀ = 1`, `K₀ = I`. Most replications diverge under this prior.
    pub fn vague() -> Self {
        Dlm1Priors {
            eta0: 1.0,
            k0_scale: 1.0,
            ..Self::default()
        }
    }
}

/// Model and initial state for one filter applied to a family.
pub fn model_setup(
    kind: ModelKind,
    spec: &SimSpec,
    priors: &Dlm1Priors,
) -> Result<(StateSpaceSpec, FilterState)> {
    let m = spec.family.state_dim();
    let evolution = Evolution::Fixed(spec.w_true.clone());
    let (obs, belief) = match kind {
        ModelKind::Dlm1 => {
            let b = MatrixVarBelief::new(
                priors.v0.clone(),
                DMatrix::identity(3, 3) * priors.k0_scale,
                priors.eta0,
                1.0,
            )?;
            (ObsMode::MatrixBelief, VarBelief::Matrix(b))
        }
        ModelKind::Dlm3 => (ObsMode::KnownV(spec.v_true.clone()), VarBelief::Known),
    };
    let model = StateSpaceSpec::new(spec.family.design(), spec.family.transition(), evolution, obs)?;
    let state = FilterState::new(DVector::zeros(m), DMatrix::identity(m, m) * priors.p0_scale, belief)?;
    Ok((model, state))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    pub priors: Dlm1Priors,
    pub burn_in: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            priors: Dlm1Priors::default(),
            burn_in: 0,
        }
    }
}

/// Replications of one model whose filter failed, with the error text.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub model: ModelKind,
    /// Metrics averaged over the successful replications.
    pub metrics: ForecastMetrics,
    pub succeeded: usize,
    pub failures: Vec<Failure>,
    /// Steps at which `V̂` had to be eigenvalue-clipped, summed over replications.
    pub projections: usize,
}

/// Mean and standard deviation across replications of `(V̂₁₁, V̂₁₂, V̂₂₂)`
/// at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: usize,
    pub mean: [f64; 3],
    pub sd: [f64; 3],
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub family: Family,
    pub seed: u64,
    pub n_series: usize,
    pub length: usize,
    pub burn_in: usize,
    pub models: Vec<ModelSummary>,
    /// DLM1 only.
    pub snapshots: Vec<Snapshot>,
}

impl ExperimentResult {
    pub fn model(&self, kind: ModelKind) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.model == kind)
    }
}

struct RunOutcome {
    metrics: ForecastMetrics,
    projections: usize,
    v_at: Vec<[f64; 3]>,
}

fn run_one(
    kind: ModelKind,
    spec: &SimSpec,
    ys: &[DVector<f64>],
    snapshot_times: &[usize],
    options: &ExperimentOptions,
) -> Result<RunOutcome> {
    let (model, state) = model_setup(kind, spec, &options.priors)?;
    let (_, reports) = run_filter(&state, &model, ys)?;
    let metrics = forecast_metrics(&reports, options.burn_in)?;
    let v_at = snapshot_times
        .iter()
        .map(|&t| v_entries(&reports[t - 1]))
        .collect();
    Ok(RunOutcome {
        metrics,
        projections: reports.iter().filter(|r| r.projected).count(),
        v_at,
    })
}

fn v_entries(r: &StepReport) -> [f64; 3] {
    [r.v_hat[(0, 0)], r.v_hat[(1, 0)], r.v_hat[(1, 1)]]
}

fn zero_metrics(p: usize) -> ForecastMetrics {
    ForecastMetrics {
        msse: DVector::zeros(p),
        mse: DVector::zeros(p),
        mae: DVector::zeros(p),
        me: DVector::zeros(p),
        steps: 0,
    }
}

/// Runs the requested models on `n_series` simulated series.
///
/// Failed replications are counted per model and left out of the averages.
pub fn run_experiment(
    spec: &SimSpec,
    models: &[ModelKind],
    snapshot_times: &[usize],
    options: &ExperimentOptions,
) -> Result<ExperimentResult> {
    if models.is_empty() {
        return Err(Error::invalid("models", "need at least one model"));
    }
    if let Some(&t) = snapshot_times.iter().find(|&&t| t == 0 || t > spec.length) {
        return Err(Error::invalid(
            "snapshot_times",
            format!("time {t} outside 1..={}", spec.length),
        ));
    }
    if options.burn_in >= spec.length {
        return Err(Error::invalid("burn_in", "must be shorter than the series"));
    }

    let per_rep: Vec<Vec<Result<RunOutcome>>> = (0..spec.n_series)
        .into_par_iter()
        .map(|i| match simulate_series(spec, i) {
            Ok(ys) => models
                .iter()
                .map(|&k| run_one(k, spec, &ys, snapshot_times, options))
                .collect(),
            Err(e) => {
                let msg = e.to_string();
                models
                    .iter()
                    .map(|_| Err(Error::Domain(format!("simulation failed: {msg}"))))
                    .collect()
            }
        })
        .collect();

    let mut summaries = Vec::with_capacity(models.len());
    let mut snapshots = Vec::new();
    for (mi, &kind) in models.iter().enumerate() {
        let mut sum = zero_metrics(2);
        let mut failures = Vec::new();
        let mut projections = 0;
        let mut v_samples: Vec<Vec<[f64; 3]>> = vec![Vec::new(); snapshot_times.len()];
        for (i, outcomes) in per_rep.iter().enumerate() {
            match &outcomes[mi] {
                Ok(o) => {
                    sum.msse += &o.metrics.msse;
                    sum.mse += &o.metrics.mse;
                    sum.mae += &o.metrics.mae;
                    sum.me += &o.metrics.me;
                    sum.steps = o.metrics.steps;
                    projections += o.projections;
                    for (slot, v) in v_samples.iter_mut().zip(&o.v_at) {
                        slot.push(*v);
                    }
                }
                Err(e) => failures.push(Failure {
                    index: i,
                    message: e.to_string(),
                }),
            }
        }
        let succeeded = spec.n_series - failures.len();
        if succeeded > 0 {
            let k = succeeded as f64;
            sum.msse /= k;
            sum.mse /= k;
            sum.mae /= k;
            sum.me /= k;
        }
        if kind == ModelKind::Dlm1 {
            snapshots = snapshot_times
                .iter()
                .zip(&v_samples)
                .map(|(&t, vs)| snapshot(t, vs))
                .collect();
        }
        summaries.push(ModelSummary {
            model: kind,
            metrics: sum,
            succeeded,
            failures,
            projections,
        });
    }
    Ok(ExperimentResult {
        family: spec.family,
        seed: spec.seed,
        n_series: spec.n_series,
        length: spec.length,
        burn_in: options.burn_in,
        models: summaries,
        snapshots,
    })
}

fn snapshot(t: usize, vs: &[[f64; 3]]) -> Snapshot {
    let n = vs.len() as f64;
    let mut mean = [0.0; 3];
    let mut sd = [0.0; 3];
    for j in 0..3 {
        mean[j] = vs.iter().map(|v| v[j]).sum::<f64>() / n;
        let ss: f64 = vs.iter().map(|v| (v[j] - mean[j]).powi(2)).sum();
        sd[j] = if vs.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    }
    Snapshot {
        t,
        mean,
        sd,
        count: vs.len(),
    }
}

/// One row of the forecast-accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub family: Family,
    pub model: ModelKind,
    pub msse: [f64; 2],
    pub mse: [f64; 2],
    pub mae: [f64; 2],
    pub me: [f64; 2],
    pub replications: usize,
    pub failures: usize,
}

/// One row of the `V̂` snapshot table: entry name and its mean at each time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotRow {
    pub family: Family,
    pub entry: &'static str,
    pub values: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tables {
    pub metrics: Vec<MetricRow>,
    pub snapshots: Vec<SnapshotRow>,
    /// Families with no result; their rows are absent.
    pub missing: Vec<Family>,
}

fn pair(v: &DVector<f64>) -> [f64; 2] {
    [v[0], v[1]]
}

/// Lays results out as the metric table (family × model) and the snapshot
/// table (family × `V̂` entry). Values are copied, not recomputed.
pub fn aggregate_tables(results: &[ExperimentResult]) -> Tables {
    let mut metrics = Vec::new();
    let mut snapshots = Vec::new();
    let mut missing = Vec::new();
    for family in Family::ALL {
        let Some(r) = results.iter().find(|r| r.family == family) else {
            missing.push(family);
            continue;
        };
        for s in &r.models {
            metrics.push(MetricRow {
                family,
                model: s.model,
                msse: pair(&s.metrics.msse),
                mse: pair(&s.metrics.mse),
                mae: pair(&s.metrics.mae),
                me: pair(&s.metrics.me),
                replications: s.succeeded,
                failures: s.failures.len(),
            });
        }
        if !r.snapshots.is_empty() {
            for (j, entry) in ["V11", "V12", "V22"].into_iter().enumerate() {
                snapshots.push(SnapshotRow {
                    family,
                    entry,
                    values: r.snapshots.iter().map(|s| (s.t, s.mean[j])).collect(),
                });
            }
        }
    }
    Tables {
        metrics,
        snapshots,
        missing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulation_is_deterministic() {
        let spec = SimSpec::new(Family::LT, 3, 50, 9).unwrap();
        assert_eq!(simulate_series(&spec, 2).unwrap(), simulate_series(&spec, 2).unwrap());
        assert_ne!(simulate_series(&spec, 1).unwrap(), simulate_series(&spec, 2).unwrap());
        assert_eq!(simulate_series(&spec, 0).unwrap().len(), 50);
    }

    #[test]
    fn ll_state_increments_have_unit_covariance() {
        let spec = SimSpec::new(Family::LL, 1, 100_000, 3).unwrap();
        let s = simulate_with_states(&spec, 0).unwrap();
        let n = (s.states.len() - 1) as f64;
        let mut cov = DMatrix::zeros(2, 2);
        for w in s.states.windows(2) {
            let d = &w[1] - &w[0];
            cov += &d * d.transpose();
        }
        let cov = cov / n;
        // each entry has standard error about sqrt(2/n) or less
        assert!((cov - DMatrix::identity(2, 2)).amax() < 4.0 * (2.0 / n).sqrt());
    }

    #[test]
    fn ls_rotation_preserves_modulus_without_noise() {
        let spec = SimSpec::with_covariances(
            Family::LS,
            default_v_true(),
            DMatrix::zeros(3, 3),
            1,
            60,
            4,
        )
        .unwrap();
        let s = simulate_with_states(&spec, 0).unwrap();
        let modulus = |x: &DVector<f64>| x[1].hypot(x[2]);
        let r0 = modulus(&s.states[0]);
        for x in &s.states {
            assert!((modulus(x) - r0).abs() < 1e-12);
            assert_eq!(x[0], s.states[0][0]);
        }
    }

    #[test]
    fn single_replication_average_is_the_replication() {
        let spec = SimSpec::new(Family::LL, 1, 80, 5).unwrap();
        let opts = ExperimentOptions::default();
        let r = run_experiment(&spec, &[ModelKind::Dlm3], &[], &opts).unwrap();
        let ys = simulate_series(&spec, 0).unwrap();
        let (model, state) = model_setup(ModelKind::Dlm3, &spec, &opts.priors).unwrap();
        let (_, reports) = run_filter(&state, &model, &ys).unwrap();
        let direct = forecast_metrics(&reports, 0).unwrap();
        assert_eq!(r.models[0].metrics, direct);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let spec = SimSpec::new(Family::LS, 8, 60, 6).unwrap();
        let opts = ExperimentOptions::default();
        let models = [ModelKind::Dlm1, ModelKind::Dlm3];
        let a = run_experiment(&spec, &models, &[30, 60], &opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_experiment(&spec, &models, &[30, 60], &opts).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn argument_checks() {
        let spec = SimSpec::new(Family::LL, 2, 10, 1).unwrap();
        let opts = ExperimentOptions::default();
        assert!(run_experiment(&spec, &[], &[], &opts).is_err());
        assert!(run_experiment(&spec, &[ModelKind::Dlm1], &[11], &opts).is_err());
        assert!(SimSpec::new(Family::LL, 0, 10, 1).is_err());
        assert!("lx".parse::<Family>().is_err());
        assert_eq!("ls".parse::<Family>().unwrap(), Family::LS);
    }

    #[test]
    fn table_layout() {
        let opts = ExperimentOptions::default();
        let models = [ModelKind::Dlm1, ModelKind::Dlm3];
        let results: Vec<_> = Family::ALL
            .iter()
            .map(|&f| run_experiment(&SimSpec::new(f, 2, 30, 7).unwrap(), &models, &[10, 20, 30], &opts).unwrap())
            .collect();
        let t = aggregate_tables(&results);
        assert_eq!((t.metrics.len(), t.snapshots.len()), (6, 9));
        assert!(t.missing.is_empty());
        let r = &results[0];
        assert_eq!(t.metrics[0].msse, pair(&r.models[0].metrics.msse));
        assert_eq!(t.snapshots[1].values[2].1, r.snapshots[2].mean[1]);

        let t = aggregate_tables(&results[..1]);
        assert_eq!(t.metrics.len(), 2);
        assert_eq!(t.missing, vec![Family::LT, Family::LS]);
    }
}
