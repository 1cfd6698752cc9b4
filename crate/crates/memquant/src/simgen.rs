//! Data generators and the Monte-Carlo coverage harness.
//!
//! Covariates are marginally Uniform(0,1) with correlation decaying in
//! the index distance: a latent AR(1) Gaussian vector is mapped through
//! the normal CDF (a Gaussian copula). The latent lag-one correlation
//! `2 sin(pi/12)` makes the lag-one Pearson correlation of the uniforms
//! exactly 0.5; higher lags come out within about 0.01 of `0.5^k`, a
//! deviation the downstream statistics cannot see.
//!
//! Responses follow `y = x'beta + eps` with `beta` the all-ones vector
//! and one of three noise laws: standard normal, normal with standard
//! deviation `1 + 0.3 x_1`, or unit exponential. For each quantile level
//! the implied coefficient vector shifts the intercept (and, for the
//! heteroscedastic law, the first slope) by the corresponding noise
//! quantile.

use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::baselines::{naive_dc, qr_all};
use crate::error::{Error, Result};
use crate::inference::{build_variance_estimate, confidence_interval, covariate_second_moment};
use crate::leqr::{dc_leqr, required_rounds, DcConfig};
use crate::online::OnlineState;
use crate::rng::Rng;
use crate::stats::{exp_quantile, normal_cdf, normal_quantile};
use crate::types::{dot, unit_direction, Coefficients, Observation, QuantileLevel};

/// Latent AR(1) correlation that yields a lag-one Pearson correlation of
/// exactly one half after the copula map: `2 sin(pi / 12)`.
pub const LATENT_AR1_CORRELATION: f64 = 0.5176380902050415;

/// Noise law attached to the linear model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseModel {
    HomoscedasticNormal,
    HeteroscedasticNormal,
    Exponential,
}

impl NoiseModel {
    pub fn name(self) -> &'static str {
        match self {
            NoiseModel::HomoscedasticNormal => "homoscedastic",
            NoiseModel::HeteroscedasticNormal => "heteroscedastic",
            NoiseModel::Exponential => "exponential",
        }
    }
}

impl FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homoscedastic" | "homoscedastic_normal" => Ok(NoiseModel::HomoscedasticNormal),
            "heteroscedastic" | "heteroscedastic_normal" => Ok(NoiseModel::HeteroscedasticNormal),
            "exponential" => Ok(NoiseModel::Exponential),
            other => Err(Error::InvalidConfig(format!("unknown noise model {other:?}"))),
        }
    }
}

impl std::fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One covariate row: latent AR(1) normals mapped through the normal CDF.
fn gen_covariate_row(p: usize, rng: &mut Rng) -> Vec<f64> {
    let mut row = Vec::with_capacity(p);
    let mut z = 0.0;
    let innovation = (1.0 - LATENT_AR1_CORRELATION * LATENT_AR1_CORRELATION).sqrt();
    for j in 0..p {
        z = if j == 0 {
            rng.normal()
        } else {
            LATENT_AR1_CORRELATION * z + innovation * rng.normal()
        };
        row.push(normal_cdf(z));
    }
    row
}

/// Covariate matrix with i.i.d. rows; same seed gives identical output.
pub fn gen_covariates(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| gen_covariate_row(p, &mut rng)).collect()
}

/// Raw (unshifted) noise draw for one row.
pub fn gen_noise(model: NoiseModel, x_row: &[f64], rng: &mut Rng) -> f64 {
    match model {
        NoiseModel::HomoscedasticNormal => rng.normal(),
        NoiseModel::HeteroscedasticNormal => {
            let sd = 1.0 + 0.3 * x_row.first().copied().unwrap_or(0.0);
            sd * rng.normal()
        }
        NoiseModel::Exponential => rng.exponential(),
    }
}

/// Draw `n` observations from the linear model with all-ones
/// coefficients. Per row the generator consumes the covariates first,
/// then the noise, so streams replay identically.
pub fn gen_observations(
    n: usize,
    p: usize,
    model: NoiseModel,
    rng: &mut Rng,
) -> Vec<Observation> {
    (0..n)
        .map(|_| {
            let x = gen_covariate_row(p, rng);
            let eps = gen_noise(model, &x, rng);
            let y = 1.0 + x.iter().sum::<f64>() + eps;
            Observation::new(y, x).expect("generated values are finite")
        })
        .collect()
}

/// True quantile-regression coefficients of the generator at level
/// `tau`: all ones, with the intercept shifted by the noise quantile and,
/// for heteroscedastic noise, the first slope shifted by 0.3 times it.
pub fn true_beta_tau(model: NoiseModel, tau: QuantileLevel, p: usize) -> Coefficients {
    let mut beta = vec![1.0; p + 1];
    let t = tau.value();
    match model {
        NoiseModel::HomoscedasticNormal => beta[0] += normal_quantile(t),
        NoiseModel::HeteroscedasticNormal => {
            beta[0] += normal_quantile(t);
            if p >= 1 {
                beta[1] += 0.3 * normal_quantile(t);
            }
        }
        NoiseModel::Exponential => beta[0] += exp_quantile(t),
    }
    Coefficients::from_raw(beta)
}

/// Estimator under test in a coverage experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    DcLeqr,
    NaiveDc,
    QrAll,
    Online,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::DcLeqr => "dc_leqr",
            Method::NaiveDc => "naive_dc",
            Method::QrAll => "qr_all",
            Method::Online => "online",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dc_leqr" | "dc" => Ok(Method::DcLeqr),
            "naive_dc" | "naive" => Ok(Method::NaiveDc),
            "qr_all" | "all" => Ok(Method::QrAll),
            "online" => Ok(Method::Online),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Full description of one coverage experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub p: usize,
    pub m: usize,
    pub n: usize,
    pub tau: QuantileLevel,
    pub model: NoiseModel,
    pub method: Method,
    /// Aggregation rounds; defaults to the schedule-derived count.
    pub q: Option<u32>,
    pub reps: u64,
    pub base_seed: u64,
    pub alpha: f64,
    pub scale_c: f64,
    pub adaptive_grid: Option<Vec<f64>>,
    /// Keep each replication's record in the summary.
    pub keep_trials: bool,
}

impl ExperimentSpec {
    pub fn new(p: usize, m: usize, n: usize, tau: QuantileLevel, model: NoiseModel, method: Method) -> Self {
        ExperimentSpec {
            p,
            m,
            n,
            tau,
            model,
            method,
            q: None,
            reps: 500,
            base_seed: 0,
            alpha: 0.05,
            scale_c: 1.0,
            adaptive_grid: None,
            keep_trials: false,
        }
    }

    /// Rounds actually used: the explicit `q` or the schedule default.
    pub fn resolved_q(&self) -> Result<u32> {
        match self.q {
            Some(q) if q >= 1 => Ok(q),
            Some(q) => Err(Error::InvalidConfig(format!("q must be >= 1, got {q}"))),
            None => required_rounds(self.p, self.m, self.n),
        }
    }
}

/// Outcome of a single replication.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub estimate: Coefficients,
    pub ci: (f64, f64),
    /// `v0' beta(tau)` of the generator.
    pub truth: f64,
    pub covered: bool,
    pub seed: u64,
    /// For the baseline methods, the paired divide-and-conquer estimate
    /// (in the `v0` direction) whose curvature fed the interval.
    pub companion_v0: Option<f64>,
}

/// Aggregated results of a coverage experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub method: Method,
    pub q: u32,
    pub tau: f64,
    pub log_m_n: f64,
    pub reps: u64,
    pub failures: u64,
    pub coverage: f64,
    /// Mean of `v0'(estimate) - v0'(truth)` across replications.
    pub mean_bias: f64,
    /// Sample variance of `v0'(estimate)`; absent below two replications.
    pub variance: Option<f64>,
    pub seconds: f64,
    pub trials: Vec<TrialResult>,
}

fn run_one_rep(spec: &ExperimentSpec, q: u32, rep: u64) -> Result<TrialResult> {
    let seed = spec.base_seed.wrapping_add(rep);
    let mut rng = Rng::new(seed);
    let data = gen_observations(spec.n, spec.p, spec.model, &mut rng);
    let v0 = unit_direction(spec.p + 1);
    let truth = dot(&v0, &true_beta_tau(spec.model, spec.tau, spec.p));

    let (estimate, ci, companion_v0) = match spec.method {
        Method::Online => {
            if spec.n <= spec.m {
                return Err(Error::InvalidConfig(
                    "online method needs n > m for a nonempty stream".into(),
                ));
            }
            let mut state = OnlineState::init(&data[..spec.m], spec.tau)?;
            state.set_solve_stride(u64::MAX);
            for obs in &data[spec.m..] {
                state.ingest(obs.clone())?;
            }
            let beta = state.solve_now()?;
            let ci = state.confidence_interval(&v0, spec.alpha)?;
            (beta, ci, None)
        }
        method => {
            let partitions: Vec<&[Observation]> = data.chunks(spec.m).collect();
            let mut cfg = DcConfig::new(spec.tau, spec.m, q);
            cfg.scale_c = spec.scale_c;
            cfg.adaptive_grid = spec.adaptive_grid.clone();
            let (beta_dc, diag) = dc_leqr(&partitions, &cfg)?;

            let xx = covariate_second_moment(&partitions);
            let ve = build_variance_estimate(&diag.final_stats, &xx, spec.n as u64)?;

            let (estimate, companion) = match method {
                Method::DcLeqr => (beta_dc, None),
                Method::NaiveDc => {
                    let est = naive_dc(&partitions, spec.tau)?;
                    (est, Some(dot(&v0, &beta_dc)))
                }
                Method::QrAll => {
                    let est = qr_all(&data, spec.tau)?;
                    (est, Some(dot(&v0, &beta_dc)))
                }
                Method::Online => unreachable!(),
            };
            let ci = confidence_interval(&estimate, &v0, &ve, spec.tau, spec.alpha)?;
            (estimate, ci, companion)
        }
    };

    let covered = ci.0 <= truth && truth <= ci.1;
    Ok(TrialResult {
        estimate,
        ci,
        truth,
        covered,
        seed,
        companion_v0,
    })
}

/// Run the replications of one experiment and fold them into a summary.
///
/// Replications run in parallel on independent seed streams
/// (`seed = base_seed + rep`) and are folded in replication order, so a
/// given spec and seed produce an identical summary regardless of
/// scheduling. Failed replications are counted, not fatal.
pub fn run_coverage_experiment(spec: &ExperimentSpec) -> Result<ExperimentSummary> {
    if spec.reps < 1 {
        return Err(Error::InvalidConfig("reps must be >= 1".into()));
    }
    if spec.m == 0 || spec.n == 0 || spec.m > spec.n {
        return Err(Error::InvalidDimensions(format!(
            "need 0 < m <= n, got m={}, n={}",
            spec.m, spec.n
        )));
    }
    let q = match spec.method {
        Method::Online => 0,
        _ => spec.resolved_q()?,
    };
    let started = Instant::now();
    let outcomes: Vec<Result<TrialResult>> = (0..spec.reps)
        .into_par_iter()
        .map(|rep| run_one_rep(spec, q.max(1), rep))
        .collect();
    let seconds = started.elapsed().as_secs_f64();

    let v0 = unit_direction(spec.p + 1);
    let mut ok = 0u64;
    let mut failures = 0u64;
    let mut covered = 0u64;
    let mut sum_est = 0.0;
    let mut sum_est_sq = 0.0;
    let mut sum_bias = 0.0;
    let mut trials = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(trial) => {
                ok += 1;
                if trial.covered {
                    covered += 1;
                }
                let est = dot(&v0, &trial.estimate);
                sum_est += est;
                sum_est_sq += est * est;
                sum_bias += est - trial.truth;
                if spec.keep_trials {
                    trials.push(trial);
                }
            }
            Err(_) => failures += 1,
        }
    }
    if ok == 0 {
        return Err(Error::InvalidConfig(
            "every replication failed; nothing to summarize".into(),
        ));
    }
    let okf = ok as f64;
    let variance = if ok >= 2 {
        Some((sum_est_sq - sum_est * sum_est / okf) / (okf - 1.0))
    } else {
        None
    };
    Ok(ExperimentSummary {
        method: spec.method,
        q,
        tau: spec.tau.value(),
        log_m_n: (spec.n as f64).ln() / (spec.m as f64).ln(),
        reps: spec.reps,
        failures,
        coverage: covered as f64 / okf,
        mean_bias: sum_bias / okf,
        variance,
        seconds,
        trials,
    })
}
