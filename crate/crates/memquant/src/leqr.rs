//! Linear estimator for quantile regression (LEQR) and its
//! divide-and-conquer driver.
//!
//! Given an initial estimate `beta0` and a bandwidth `h`, every batch of
//! data is summarized by a score-like vector `U` and a curvature-like
//! matrix `V`:
//!
//! ```text
//! U = sum_i z_i { H((y_i - z_i'beta0)/h) + tau - 1 + (y_i/h) H'((y_i - z_i'beta0)/h) }
//! V = sum_i z_i z_i' (1/h) H'((y_i - z_i'beta0)/h)
//! ```
//!
//! with `z_i = (1, x_i)` the intercepted covariate row. Note the `y_i/h`
//! factor in `U` uses the raw response, not the residual; it is what
//! makes the refined estimate `V^{-1} U` contract the initial error
//! quadratically. The pairs `(U, V)` add across any partitioning of the
//! data, so one aggregation round costs a single pass per batch plus an
//! `O(p^2)` merge, and the refined estimate solves `V beta = U`.
//!
//! The driver repeats this for `q` rounds with a bandwidth schedule that
//! contracts quadratically from `sqrt(p/m)` down to the `sqrt(p/n)`
//! floor, starting from a classical quantile regression fit on the first
//! partition.

use rayon::prelude::*;

use crate::batch_qr::{solve_qr, QrOptions};
use crate::error::{Error, Result};
use crate::inference::{adaptive_bandwidth, score_norm, RoundContext};
use crate::kernel::{smooth_h, smooth_h_prime};
use crate::linsolve::{cg_solve, CgSolution, DEFAULT_TOL};
use crate::matrix::Mat;
use crate::types::{Bandwidth, Coefficients, Observation, QuantileLevel};

/// Batch-level sufficient statistics `(U, V, count)`.
///
/// Merging is elementwise addition, so any reduction tree over any
/// partitioning of the same observations yields the same aggregate up to
/// floating-point reassociation.
#[derive(Debug, Clone)]
pub struct LocalStats {
    u: Vec<f64>,
    v: Mat,
    count: u64,
    /// Observations whose residual fell inside the smoothing window and
    /// therefore contributed curvature.
    in_window: u64,
}

impl LocalStats {
    /// All-zero statistics for dimension `p' = p + 1`.
    pub fn zeros(p_prime: usize) -> Self {
        LocalStats {
            u: vec![0.0; p_prime],
            v: Mat::zeros(p_prime, p_prime),
            count: 0,
            in_window: 0,
        }
    }

    #[inline]
    pub fn p_prime(&self) -> usize {
        self.u.len()
    }

    #[inline]
    pub fn u(&self) -> &[f64] {
        &self.u
    }

    #[inline]
    pub fn v(&self) -> &Mat {
        &self.v
    }

    #[inline]
    pub fn count(&self) -> u64 {
        self.count
    }

    /// Observations that contributed curvature (residual inside the
    /// smoothing window).
    #[inline]
    pub fn in_window(&self) -> u64 {
        self.in_window
    }

    /// Number of `f64` slots held; used by the streaming memory audit.
    pub fn stored_scalars(&self) -> usize {
        self.u.len() + self.v.data().len() + 2
    }

    /// Elementwise sum of two statistics of equal dimension.
    pub fn merge(&self, other: &LocalStats) -> Result<LocalStats> {
        let mut out = self.clone();
        out.merge_into(other)?;
        Ok(out)
    }

    /// Fold one observation into the statistics given its precomputed
    /// score weight `wu` and curvature weight `wv = H'(arg)/h`. This is
    /// the streaming-friendly form of [`compute_local_stats`].
    pub fn add_observation(&mut self, x: &[f64], wu: f64, wv: f64) {
        debug_assert_eq!(x.len() + 1, self.p_prime());
        self.u[0] += wu;
        for (acc, v) in self.u[1..].iter_mut().zip(x) {
            *acc += wu * v;
        }
        if wv != 0.0 {
            self.v.add_outer_intercepted_upper(x, wv);
            self.v.mirror_upper();
            self.in_window += 1;
        }
        self.count += 1;
    }

    /// In-place version of [`LocalStats::merge`].
    pub fn merge_into(&mut self, other: &LocalStats) -> Result<()> {
        if self.p_prime() != other.p_prime() {
            return Err(Error::DimensionMismatch {
                expected: self.p_prime(),
                got: other.p_prime(),
            });
        }
        for (a, b) in self.u.iter_mut().zip(&other.u) {
            *a += b;
        }
        self.v.add_assign(&other.v)?;
        self.count += other.count;
        self.in_window += other.in_window;
        Ok(())
    }
}

/// One pass over a batch: the `(U, V, count)` of the header formula at
/// bandwidth `h` around the initial estimate `beta0`.
///
/// An empty batch yields zero statistics with the dimension taken from
/// `beta0`. Observations whose residual falls outside the smoothing
/// window contribute to `U` only, which keeps late rounds (tiny `h`)
/// cheap.
pub fn compute_local_stats(
    batch: &[Observation],
    beta0: &Coefficients,
    h: Bandwidth,
    tau: QuantileLevel,
) -> LocalStats {
    let p_prime = beta0.dim();
    let h = h.value();
    let t = tau.value();
    let mut stats = LocalStats::zeros(p_prime);
    for obs in batch {
        debug_assert_eq!(obs.dim() + 1, p_prime);
        let y = obs.y();
        let x = obs.x();
        let arg = (y - beta0.predict(x)) / h;
        let hp = smooth_h_prime(arg);
        let wu = smooth_h(arg) + t - 1.0 + (y / h) * hp;
        stats.u[0] += wu;
        for (acc, v) in stats.u[1..].iter_mut().zip(x) {
            *acc += wu * v;
        }
        if hp != 0.0 {
            stats.v.add_outer_intercepted_upper(x, hp / h);
            stats.in_window += 1;
        }
    }
    stats.v.mirror_upper();
    stats.count = batch.len() as u64;
    stats
}

/// Per-batch statistics in parallel, merged in partition order so the
/// result does not depend on scheduling.
pub fn aggregate_local_stats(
    partitions: &[&[Observation]],
    beta0: &Coefficients,
    h: Bandwidth,
    tau: QuantileLevel,
) -> LocalStats {
    let per_batch: Vec<LocalStats> = partitions
        .par_iter()
        .map(|batch| compute_local_stats(batch, beta0, h, tau))
        .collect();
    let mut agg = LocalStats::zeros(beta0.dim());
    for s in &per_batch {
        agg.merge_into(s).expect("dimensions fixed by beta0");
    }
    agg
}

/// Refined estimate from aggregated statistics: solve `V beta = U`.
pub fn solve_step(agg: &LocalStats) -> Result<Coefficients> {
    solve_step_warm(agg, None)
}

/// [`solve_step`] with an optional warm start for the inner solver.
pub fn solve_step_warm(agg: &LocalStats, x0: Option<&Coefficients>) -> Result<Coefficients> {
    let sol = solve_step_cg(agg, x0)?;
    Ok(Coefficients::from_raw(sol.x))
}

pub(crate) fn solve_step_cg(agg: &LocalStats, x0: Option<&Coefficients>) -> Result<CgSolution> {
    // Solve well below the contract tolerance first: the round estimate
    // must depend on the aggregate alone, not on how the partition sums
    // were associated, and the solver tolerance is what bounds that
    // dependence. Fall back to the contract tolerance when the tight
    // solve hits the floating-point floor of an ill-conditioned system.
    let x0 = x0.map(Coefficients::as_slice);
    cg_solve(&agg.v, &agg.u, 1e-13, 40 * agg.p_prime(), x0)
        .or_else(|_| cg_solve(&agg.v, &agg.u, DEFAULT_TOL, 10 * agg.p_prime(), x0))
        .map_err(|e| match e {
            Error::NoConvergence { .. } => Error::SingularSystem,
            other => other,
        })
}

/// Effective dimension used inside the bandwidth formulas: at least one,
/// so the intercept-only case `p = 0` still gets a positive bandwidth.
fn p_eff(p: usize) -> f64 {
    p.max(1) as f64
}

/// Bandwidth for aggregation round `g >= 1`:
/// `c * max(sqrt(p/n), (p/m)^(2^(g-2)))`.
///
/// Nonincreasing in `g` until it reaches the `sqrt(p/n)` floor, then
/// constant.
pub fn bandwidth_schedule(g: u32, p: usize, m: usize, n: usize, c: f64) -> Result<Bandwidth> {
    if g < 1 {
        return Err(Error::InvalidConfig("round index must be >= 1".into()));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "scaling constant must be positive, got {c}"
        )));
    }
    let pe = p_eff(p);
    if pe >= m as f64 || m > n {
        return Err(Error::InvalidDimensions(format!(
            "need p < m <= n, got p={p}, m={m}, n={n}"
        )));
    }
    let floor = (pe / n as f64).sqrt();
    let ratio = pe / m as f64;
    let exponent = (g as f64 - 2.0).exp2();
    Bandwidth::new(c * floor.max(ratio.powf(exponent)))
}

/// Smallest round count that drives the schedule to its `sqrt(p/n)`
/// floor: the ceiling of `2 + log2(log sqrt(p/n) / log(p/m))`, clamped
/// to at least one.
///
/// The formula can evaluate below one for nearly-single-batch shapes
/// (e.g. `m = n`); one round is the sensible minimum there and callers
/// may always override the round count upward.
pub fn required_rounds(p: usize, m: usize, n: usize) -> Result<u32> {
    let pe = p_eff(p);
    if pe >= m as f64 || m > n {
        return Err(Error::InvalidDimensions(format!(
            "need p < m <= n, got p={p}, m={m}, n={n}"
        )));
    }
    let num = (pe / n as f64).sqrt().ln();
    let den = (pe / m as f64).ln();
    let raw = 2.0 + (num / den).log2();
    // Guard against representation error pushing an exact integer up.
    let q = (raw - 1e-9).ceil();
    Ok(q.max(1.0) as u32)
}

/// Configuration of the divide-and-conquer driver.
#[derive(Debug, Clone)]
pub struct DcConfig {
    pub tau: QuantileLevel,
    /// Nominal batch size entering the bandwidth schedule.
    pub m: usize,
    /// Number of aggregation rounds, at least one.
    pub q: u32,
    /// Scaling constant applied to every scheduled bandwidth.
    pub scale_c: f64,
    /// Explicit per-round bandwidths overriding the schedule.
    pub bandwidths: Option<Vec<f64>>,
    /// Candidate scaling constants; when set, each round picks the one
    /// minimizing the indicator score norm.
    pub adaptive_grid: Option<Vec<f64>>,
    /// Partition whose classical fit seeds the first round.
    pub init_partition: usize,
    /// Explicit initial estimate, bypassing the classical fit.
    pub initial: Option<Coefficients>,
}

impl DcConfig {
    pub fn new(tau: QuantileLevel, m: usize, q: u32) -> Self {
        DcConfig {
            tau,
            m,
            q,
            scale_c: 1.0,
            bandwidths: None,
            adaptive_grid: None,
            init_partition: 0,
            initial: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.q < 1 {
            return Err(Error::InvalidConfig("round count q must be >= 1".into()));
        }
        if !(self.scale_c.is_finite() && self.scale_c > 0.0) {
            return Err(Error::InvalidConfig(
                "bandwidth scaling constant must be positive".into(),
            ));
        }
        if let Some(hs) = &self.bandwidths {
            if hs.len() != self.q as usize {
                return Err(Error::InvalidConfig(format!(
                    "expected {} explicit bandwidths, got {}",
                    self.q,
                    hs.len()
                )));
            }
            if hs.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
                return Err(Error::InvalidConfig(
                    "explicit bandwidths must be positive".into(),
                ));
            }
        }
        if let Some(grid) = &self.adaptive_grid {
            if grid.is_empty() {
                return Err(Error::InvalidConfig(
                    "adaptive grid must not be empty".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Per-round record kept by the driver.
#[derive(Debug, Clone)]
pub struct RoundDiagnostics {
    pub round: u32,
    pub bandwidth: f64,
    /// Scaling constant actually used (selected one when adaptive).
    pub scale: f64,
    /// Indicator score norm at the refined estimate.
    pub score_norm: f64,
    pub cg_iterations: usize,
    pub solve_residual: f64,
    /// Adaptive candidates skipped because their solve failed.
    pub skipped_candidates: usize,
    /// Bandwidth doublings the stability fallback had to take.
    pub bandwidth_retries: u32,
}

/// Fit-level diagnostics of a divide-and-conquer run.
#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    pub n: u64,
    pub p_prime: usize,
    pub partitions: usize,
    pub rounds: Vec<RoundDiagnostics>,
    /// Would-be uplink payload of a tree execution, in scalars:
    /// `q * (N - 1) * (p'(p'+1)/2 + p' + 1)`.
    pub uplink_scalars: u64,
    /// Aggregated statistics of the final round; `V / n` is the
    /// curvature estimate the confidence intervals need, so keeping it
    /// spares callers a second pass over the data.
    pub final_stats: LocalStats,
}

/// Scalars one node sends its parent per round: packed symmetric `V`,
/// the vector `U`, and the count.
pub fn uplink_payload_scalars(p_prime: usize) -> u64 {
    let p = p_prime as u64;
    p * (p + 1) / 2 + p + 1
}

/// Outcome of one guarded aggregation round.
pub(crate) struct RoundOutcome {
    pub beta: Coefficients,
    pub stats: LocalStats,
    pub bandwidth: f64,
    pub score: f64,
    pub cg_iterations: usize,
    pub solve_residual: f64,
    pub retries: u32,
}

/// One aggregation round with a stability fallback.
///
/// A scheduled bandwidth is only adequate when the incoming estimate is
/// within its contraction basin; a rare wild initial fit lands outside
/// it, the smoothing window then misses the data, and the refined
/// estimate explodes. The fallback is a lazy form of the data-adaptive
/// scaling grid: a candidate at the scheduled bandwidth is accepted
/// outright when its window saw enough observations and the indicator
/// score norm did not degrade (beyond its own sampling noise, bounded
/// by `score_floor`); otherwise the round retries with doubled
/// bandwidths up to 32x and keeps the score-minimizing valid candidate.
/// The healthy path computes exactly one candidate and is bit-for-bit
/// the unguarded round.
pub(crate) fn guarded_round<F>(
    mut aggregate: F,
    score: impl Fn(&Coefficients) -> f64,
    beta_prev: &Coefficients,
    prev_score: f64,
    score_floor: f64,
    base_h: f64,
    tau: QuantileLevel,
) -> Result<RoundOutcome>
where
    F: FnMut(Bandwidth, QuantileLevel) -> Result<LocalStats>,
{
    const MAX_DOUBLINGS: u32 = 5;
    let min_window = 2 * beta_prev.dim() as u64;
    let mut best: Option<RoundOutcome> = None;
    let mut last_err = None;
    for retry in 0..=MAX_DOUBLINGS {
        let h = Bandwidth::new(base_h * (retry as f64).exp2())?;
        let stats = aggregate(h, tau)?;
        if stats.in_window() < min_window.min(stats.count()) {
            // The window missed the data; curvature is untrustworthy.
            last_err = Some(Error::SingularSystem);
            continue;
        }
        match solve_step_cg(&stats, Some(beta_prev)) {
            Ok(sol) => {
                let beta = Coefficients::from_raw(sol.x);
                let s = score(&beta);
                let better = best.as_ref().is_none_or(|b| s < b.score);
                if better {
                    best = Some(RoundOutcome {
                        beta,
                        stats,
                        bandwidth: h.value(),
                        score: s,
                        cg_iterations: sol.iterations,
                        solve_residual: sol.residual_norm,
                        retries: retry,
                    });
                }
                if s <= (1.5 * prev_score).max(score_floor) {
                    break;
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::SingularSystem))
}

/// Sampling-noise scale of the indicator score norm at a consistent
/// estimate: four times the root-mean-square of an average of `n`
/// independent score terms.
pub(crate) fn score_noise_floor(partitions: &[&[Observation]], tau: QuantileLevel) -> f64 {
    let mut sum_norm_sq = 0.0;
    let mut n = 0u64;
    for batch in partitions {
        for obs in *batch {
            sum_norm_sq += 1.0 + obs.x().iter().map(|v| v * v).sum::<f64>();
            n += 1;
        }
    }
    if n == 0 {
        return 0.0;
    }
    let t = tau.value();
    4.0 * (t * (1.0 - t) * sum_norm_sq / (n as f64 * n as f64)).sqrt()
}

fn check_partitions(partitions: &[&[Observation]]) -> Result<(usize, u64)> {
    if partitions.is_empty() {
        return Err(Error::InvalidConfig("no partitions supplied".into()));
    }
    let mut p: Option<usize> = None;
    let mut n = 0u64;
    for batch in partitions {
        if batch.is_empty() {
            return Err(Error::InvalidConfig("empty partition".into()));
        }
        for obs in *batch {
            match p {
                None => p = Some(obs.dim()),
                Some(d) if d != obs.dim() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: obs.dim(),
                    })
                }
                _ => {}
            }
        }
        n += batch.len() as u64;
    }
    Ok((p.unwrap(), n))
}

/// Multi-round divide-and-conquer LEQR.
///
/// Round one seeds from a classical quantile regression fit on
/// `cfg.init_partition` (or `cfg.initial` when supplied); every round
/// recomputes per-batch statistics at the scheduled bandwidth around the
/// previous estimate, merges them, and solves the aggregated system.
/// The result is invariant to how the observations are partitioned, up
/// to floating-point reassociation.
pub fn dc_leqr(
    partitions: &[&[Observation]],
    cfg: &DcConfig,
) -> Result<(Coefficients, FitDiagnostics)> {
    cfg.validate()?;
    let (p, n) = check_partitions(partitions)?;
    let p_prime = p + 1;

    let mut beta = match &cfg.initial {
        Some(b) => {
            if b.dim() != p_prime {
                return Err(Error::DimensionMismatch {
                    expected: p_prime,
                    got: b.dim(),
                });
            }
            b.clone()
        }
        None => {
            let Some(init_batch) = partitions.get(cfg.init_partition) else {
                return Err(Error::InvalidConfig(format!(
                    "init partition {} out of range ({} partitions)",
                    cfg.init_partition,
                    partitions.len()
                )));
            };
            solve_qr(init_batch, cfg.tau, &QrOptions::default())?
        }
    };

    let mut rounds = Vec::with_capacity(cfg.q as usize);
    let mut final_stats = LocalStats::zeros(p_prime);
    let mut prev_score = score_norm(partitions, &beta, cfg.tau);
    let score_floor = score_noise_floor(partitions, cfg.tau);
    for g in 1..=cfg.q {
        let base_h = match &cfg.bandwidths {
            Some(hs) => hs[(g - 1) as usize],
            None => bandwidth_schedule(g, p, cfg.m, n as usize, 1.0)?.value(),
        };
        let diag = if let Some(grid) = &cfg.adaptive_grid {
            let ctx = RoundContext {
                partitions,
                beta_prev: &beta,
                base_bandwidth: base_h,
                tau: cfg.tau,
            };
            let choice = adaptive_bandwidth(grid, &ctx).map_err(|e| e.at_round(g))?;
            let diag = RoundDiagnostics {
                round: g,
                bandwidth: choice.c * base_h,
                scale: choice.c,
                score_norm: choice.score,
                cg_iterations: choice.cg_iterations,
                solve_residual: choice.solve_residual,
                skipped_candidates: choice.skipped,
                bandwidth_retries: 0,
            };
            beta = choice.beta;
            prev_score = choice.score;
            final_stats = choice.stats;
            diag
        } else {
            let outcome = guarded_round(
                |h, t| Ok(aggregate_local_stats(partitions, &beta, h, t)),
                |candidate| score_norm(partitions, candidate, cfg.tau),
                &beta,
                prev_score,
                score_floor,
                cfg.scale_c * base_h,
                cfg.tau,
            )
            .map_err(|e| e.at_round(g))?;
            let diag = RoundDiagnostics {
                round: g,
                bandwidth: outcome.bandwidth,
                scale: cfg.scale_c,
                score_norm: outcome.score,
                cg_iterations: outcome.cg_iterations,
                solve_residual: outcome.solve_residual,
                skipped_candidates: 0,
                bandwidth_retries: outcome.retries,
            };
            beta = outcome.beta;
            prev_score = outcome.score;
            final_stats = outcome.stats;
            diag
        };
        rounds.push(diag);
    }

    let diagnostics = FitDiagnostics {
        n,
        p_prime,
        partitions: partitions.len(),
        rounds,
        uplink_scalars: cfg.q as u64
            * (partitions.len() as u64 - 1)
            * uplink_payload_scalars(p_prime),
        final_stats,
    };
    Ok((beta, diagnostics))
}
