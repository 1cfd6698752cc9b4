//! Sandwich-variance confidence intervals and the score-norm bandwidth
//! selector.
//!
//! The limiting variance of a linear functional `v' beta` is
//! `tau (1 - tau) v' D^{-1} E[XX'] D^{-1} v / n`, where `D` is the
//! curvature matrix `E[XX' f(0|X)]`. Both factors have natural sample
//! counterparts that fall out of the aggregation pass for free: `D` is
//! estimated by the aggregated `V / n` and `E[XX']` by the plain second
//! moment of the intercepted covariates. `D^{-1}` is always applied via
//! conjugate gradient solves, never an explicit inverse.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::leqr::{aggregate_local_stats, solve_step_cg, LocalStats};
use crate::linsolve::{cg_solve, DEFAULT_TOL};
use crate::matrix::Mat;
use crate::stats::normal_quantile;
use crate::types::{dot, Bandwidth, Coefficients, Observation, QuantileLevel};

/// Sample estimates of the two sandwich factors.
#[derive(Debug, Clone)]
pub struct VarianceEstimate {
    d_hat: Mat,
    sigma_hat: Mat,
    n: u64,
}

impl VarianceEstimate {
    /// Assemble from already-normalized factors.
    pub fn new(d_hat: Mat, sigma_hat: Mat, n: u64) -> Result<Self> {
        if d_hat.n_rows() != sigma_hat.n_rows() || d_hat.n_cols() != sigma_hat.n_cols() {
            return Err(Error::DimensionMismatch {
                expected: d_hat.n_rows(),
                got: sigma_hat.n_rows(),
            });
        }
        if d_hat.asymmetry() > 1e-10 || sigma_hat.asymmetry() > 1e-10 {
            return Err(Error::NotSymmetric);
        }
        Ok(VarianceEstimate {
            d_hat,
            sigma_hat,
            n,
        })
    }

    pub fn d_hat(&self) -> &Mat {
        &self.d_hat
    }

    pub fn sigma_hat(&self) -> &Mat {
        &self.sigma_hat
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// `v' D^{-1} Sigma D^{-1} v` via two conjugate gradient solves.
    pub fn sandwich_quadratic(&self, v: &[f64]) -> Result<f64> {
        let dim = self.d_hat.n_rows();
        let max_iter = 20 * dim;
        let w1 = cg_solve(&self.d_hat, v, DEFAULT_TOL, max_iter, None)
            .map_err(|_| Error::SingularSystem)?;
        let t = self.sigma_hat.matvec(&w1.x);
        let w2 = cg_solve(&self.d_hat, &t, DEFAULT_TOL, max_iter, None)
            .map_err(|_| Error::SingularSystem)?;
        // Exact arithmetic gives a nonnegative quadratic form; round-off
        // may leave a tiny negative.
        Ok(v.iter().zip(&w2.x).map(|(a, b)| a * b).sum::<f64>().max(0.0))
    }
}

/// Build the variance estimate from the aggregated round statistics and
/// the raw second-moment sum of the intercepted covariates.
///
/// `n` must equal both the statistics count and the number of rows
/// summed into `xx_sum`.
pub fn build_variance_estimate(agg: &LocalStats, xx_sum: &Mat, n: u64) -> Result<VarianceEstimate> {
    if agg.count() != n {
        return Err(Error::CountMismatch {
            stats: agg.count(),
            given: n,
        });
    }
    if n == 0 {
        return Err(Error::InvalidConfig("variance estimate needs n > 0".into()));
    }
    let inv = 1.0 / n as f64;
    VarianceEstimate::new(agg.v().scaled(inv), xx_sum.scaled(inv), n)
}

/// Second-moment sum of the intercepted covariate rows across all
/// partitions (not normalized).
pub fn covariate_second_moment(partitions: &[&[Observation]]) -> Mat {
    let p_prime = partitions
        .iter()
        .flat_map(|b| b.first())
        .map(|o| o.dim() + 1)
        .next()
        .unwrap_or(1);
    let partial: Vec<Mat> = partitions
        .par_iter()
        .map(|batch| {
            let mut acc = Mat::zeros(p_prime, p_prime);
            for obs in *batch {
                acc.add_outer_intercepted_upper(obs.x(), 1.0);
            }
            acc.mirror_upper();
            acc
        })
        .collect();
    let mut total = Mat::zeros(p_prime, p_prime);
    for m in &partial {
        total.add_assign(m).expect("uniform dimensions");
    }
    total
}

/// Two-sided confidence interval for `v' beta` at level `1 - alpha`.
pub fn confidence_interval(
    beta: &Coefficients,
    v: &[f64],
    ve: &VarianceEstimate,
    tau: QuantileLevel,
    alpha: f64,
) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if v.len() != beta.dim() || v.iter().all(|a| *a == 0.0) {
        return Err(Error::InvalidConfig(
            "direction must be nonzero and match the coefficient dimension".into(),
        ));
    }
    let t = tau.value();
    let z = normal_quantile(1.0 - alpha / 2.0);
    let quad = ve.sandwich_quadratic(v)?;
    let half = z * (t * (1.0 - t) * quad).sqrt() / (ve.n() as f64).sqrt();
    let center = dot(v, beta);
    Ok((center - half, center + half))
}

/// Norm of the averaged indicator score
/// `(1/n) || sum_i z_i (1{y_i - z_i'beta >= 0} + tau - 1) ||_2`.
///
/// Each batch contributes an `O(p')` partial sum, so in a distributed
/// run this costs one short vector per machine.
pub fn score_norm(partitions: &[&[Observation]], beta: &Coefficients, tau: QuantileLevel) -> f64 {
    let p_prime = beta.dim();
    let t = tau.value();
    let (partials, n): (Vec<Vec<f64>>, u64) = (
        partitions
            .par_iter()
            .map(|batch| {
                let mut acc = vec![0.0; p_prime];
                for obs in *batch {
                    let r = obs.y() - beta.predict(obs.x());
                    let w = if r >= 0.0 { t } else { t - 1.0 };
                    acc[0] += w;
                    for (a, v) in acc[1..].iter_mut().zip(obs.x()) {
                        *a += w * v;
                    }
                }
                acc
            })
            .collect(),
        partitions.iter().map(|b| b.len() as u64).sum(),
    );
    if n == 0 {
        return 0.0;
    }
    let mut total = vec![0.0; p_prime];
    for part in &partials {
        for (a, b) in total.iter_mut().zip(part) {
            *a += b;
        }
    }
    total.iter().map(|a| a * a).sum::<f64>().sqrt() / n as f64
}

/// Inputs an adaptive round selection needs.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub partitions: &'a [&'a [Observation]],
    pub beta_prev: &'a Coefficients,
    /// Unscaled bandwidth from the schedule; candidates multiply this.
    pub base_bandwidth: f64,
    pub tau: QuantileLevel,
}

/// Outcome of an adaptive scaling-constant selection.
#[derive(Debug, Clone)]
pub struct AdaptiveChoice {
    pub c: f64,
    pub beta: Coefficients,
    pub stats: LocalStats,
    pub score: f64,
    pub cg_iterations: usize,
    pub solve_residual: f64,
    /// Candidates whose solve failed and were skipped.
    pub skipped: usize,
}

/// Run one aggregation round per candidate scaling constant and keep the
/// one minimizing the indicator score norm. Ties prefer the smaller
/// constant; duplicate candidates resolve to the first occurrence.
/// Candidates whose solve fails are skipped; if all fail, the last
/// failure is returned.
pub fn adaptive_bandwidth(candidates: &[f64], ctx: &RoundContext) -> Result<AdaptiveChoice> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("empty candidate list".into()));
    }
    let mut best: Option<AdaptiveChoice> = None;
    let mut skipped = 0usize;
    let mut last_err: Option<Error> = None;
    for &c in candidates {
        let Ok(h) = Bandwidth::new(c * ctx.base_bandwidth) else {
            skipped += 1;
            last_err = Some(Error::InvalidBandwidth(c * ctx.base_bandwidth));
            continue;
        };
        let stats = aggregate_local_stats(ctx.partitions, ctx.beta_prev, h, ctx.tau);
        let min_window = (2 * ctx.beta_prev.dim() as u64).min(stats.count());
        if stats.in_window() < min_window {
            skipped += 1;
            last_err = Some(Error::SingularSystem);
            continue;
        }
        match solve_step_cg(&stats, Some(ctx.beta_prev)) {
            Ok(sol) => {
                let beta = Coefficients::from_raw(sol.x);
                let score = score_norm(ctx.partitions, &beta, ctx.tau);
                let replace = match &best {
                    None => true,
                    Some(b) => score < b.score || (score == b.score && c < b.c),
                };
                if replace {
                    best = Some(AdaptiveChoice {
                        c,
                        beta,
                        stats,
                        score,
                        cg_iterations: sol.iterations,
                        solve_residual: sol.residual_norm,
                        skipped: 0,
                    });
                }
            }
            Err(e) => {
                skipped += 1;
                last_err = Some(e);
            }
        }
    }
    match best {
        Some(mut choice) => {
            choice.skipped = skipped;
            Ok(choice)
        }
        None => Err(last_err.unwrap_or(Error::SingularSystem)),
    }
}

/// Square root of the ratio between the estimated sandwich variance in
/// direction `v` and a reference limiting variance.
pub fn variance_ratio(ve: &VarianceEstimate, v: &[f64], true_variance: f64) -> Result<f64> {
    if !(true_variance > 0.0 && true_variance.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "true variance must be positive, got {true_variance}"
        )));
    }
    Ok((ve.sandwich_quadratic(v)? / true_variance).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch_qr::sample_quantile;
    use crate::leqr::compute_local_stats;
    use crate::rng::Rng;
    use crate::simgen::{gen_observations, NoiseModel};
    use crate::stats::normal_pdf;
    use crate::types::{unit_direction, Observation};

    fn tau(v: f64) -> QuantileLevel {
        QuantileLevel::new(v).unwrap()
    }

    #[test]
    fn variance_estimate_single_row() {
        let obs = Observation::new(1.0, vec![2.0, -1.0]).unwrap();
        let beta0 = Coefficients::zeros(3);
        let stats = compute_local_stats(
            std::slice::from_ref(&obs),
            &beta0,
            Bandwidth::new(5.0).unwrap(),
            tau(0.5),
        );
        let xx = covariate_second_moment(&[std::slice::from_ref(&obs)]);
        let ve = build_variance_estimate(&stats, &xx, 1).unwrap();
        // sigma_hat is exactly z z' with z = (1, 2, -1).
        let z = [1.0, 2.0, -1.0];
        for i in 0..3 {
            for j in 0..3 {
                assert!((ve.sigma_hat().get(i, j) - z[i] * z[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let stats = LocalStats::zeros(2);
        let xx = Mat::zeros(2, 2);
        assert!(matches!(
            build_variance_estimate(&stats, &xx, 5),
            Err(Error::CountMismatch { .. })
        ));
    }

    #[test]
    fn sigma_scaling_is_quadratic() {
        let mut rng = Rng::new(40);
        let rows: Vec<Observation> = (0..50)
            .map(|_| Observation::new(0.0, vec![rng.normal(), rng.normal()]).unwrap())
            .collect();
        let doubled: Vec<Observation> = rows
            .iter()
            .map(|o| Observation::new(0.0, o.x().iter().map(|v| 2.0 * v).collect()).unwrap())
            .collect();
        let xx1 = covariate_second_moment(&[&rows]);
        let xx2 = covariate_second_moment(&[&doubled]);
        // Non-intercept block scales by four.
        for i in 1..3 {
            for j in 1..3 {
                assert!((xx2.get(i, j) - 4.0 * xx1.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn d_hat_close_to_density_times_sigma_on_homoscedastic_data() {
        // At beta0 = beta(tau) and moderate h, D_hat converges to
        // f(0) * E[XX'] entrywise; f(0) = phi(Phi^{-1}(0.5)) = phi(0).
        let mut rng = Rng::new(41);
        let n = 100_000;
        let data = gen_observations(n, 3, NoiseModel::HomoscedasticNormal, &mut rng);
        let t = tau(0.5);
        let truth = crate::simgen::true_beta_tau(NoiseModel::HomoscedasticNormal, t, 3);
        let parts: Vec<&[Observation]> = vec![&data];
        let stats = compute_local_stats(&data, &truth, Bandwidth::new(0.1).unwrap(), t);
        let xx = covariate_second_moment(&parts);
        let ve = build_variance_estimate(&stats, &xx, n as u64).unwrap();
        let f0 = normal_pdf(0.0);
        for i in 0..4 {
            for j in 0..4 {
                let want = f0 * ve.sigma_hat().get(i, j);
                let got = ve.d_hat().get(i, j);
                assert!(
                    (got - want).abs() <= 0.05 * want.abs().max(0.05),
                    "entry ({i},{j}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn interval_degenerates_as_alpha_approaches_one() {
        let ve = VarianceEstimate::new(Mat::identity(2), Mat::identity(2), 100).unwrap();
        let beta = Coefficients::new(vec![1.0, 2.0]).unwrap();
        let v = [1.0, 1.0];
        let (lo, hi) = confidence_interval(&beta, &v, &ve, tau(0.5), 1.0 - 1e-12).unwrap();
        assert!((hi - lo).abs() < 1e-8);
        assert!((lo - 3.0).abs() < 1e-8);
    }

    #[test]
    fn interval_width_follows_root_n_law() {
        let ve_small = VarianceEstimate::new(Mat::identity(2), Mat::identity(2), 100).unwrap();
        let ve_large = VarianceEstimate::new(Mat::identity(2), Mat::identity(2), 400).unwrap();
        let beta = Coefficients::new(vec![0.0, 0.0]).unwrap();
        let v = [1.0, 0.0];
        let (lo_s, hi_s) = confidence_interval(&beta, &v, &ve_small, tau(0.3), 0.05).unwrap();
        let (lo_l, hi_l) = confidence_interval(&beta, &v, &ve_large, tau(0.3), 0.05).unwrap();
        assert!(((hi_s - lo_s) / (hi_l - lo_l) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn interval_direction_scaling() {
        // The interval for (s v)' beta is s times the interval for v' beta.
        let mut d = Mat::identity(3);
        d.set(0, 0, 2.0);
        let ve = VarianceEstimate::new(d, Mat::identity(3), 50).unwrap();
        let beta = Coefficients::new(vec![1.0, -1.0, 0.5]).unwrap();
        let v = [0.3, 0.4, -0.2];
        let sv: Vec<f64> = v.iter().map(|a| 4.0 * a).collect();
        let (lo, hi) = confidence_interval(&beta, &v, &ve, tau(0.2), 0.05).unwrap();
        let (slo, shi) = confidence_interval(&beta, &sv, &ve, tau(0.2), 0.05).unwrap();
        assert!((slo - 4.0 * lo).abs() < 1e-10);
        assert!((shi - 4.0 * hi).abs() < 1e-10);
    }

    #[test]
    fn intercept_only_interval_matches_closed_form() {
        // p = 0, tau = 0.5, standard normal noise: asymptotic variance is
        // tau(1-tau)/f(0)^2 = pi/2, so the half-width approaches
        // z * sqrt(pi/2) / sqrt(n).
        let mut rng = Rng::new(42);
        let n = 200_000usize;
        let data = gen_observations(n, 0, NoiseModel::HomoscedasticNormal, &mut rng);
        let t = tau(0.5);
        let parts: Vec<&[Observation]> = data.chunks(10_000).collect();
        let truth = crate::simgen::true_beta_tau(NoiseModel::HomoscedasticNormal, t, 0);
        let stats = crate::leqr::aggregate_local_stats(
            &parts,
            &truth,
            Bandwidth::new(0.05).unwrap(),
            t,
        );
        let xx = covariate_second_moment(&parts);
        let ve = build_variance_estimate(&stats, &xx, n as u64).unwrap();
        let beta = crate::leqr::solve_step(&stats).unwrap();
        let (lo, hi) = confidence_interval(&beta, &[1.0], &ve, t, 0.05).unwrap();
        let half = (hi - lo) / 2.0;
        let want = 1.959963984540054 * (std::f64::consts::PI / 2.0).sqrt() / (n as f64).sqrt();
        assert!(
            (half - want).abs() < 0.05 * want,
            "half width {half} vs asymptotic {want}"
        );
    }

    #[test]
    fn score_norm_all_residuals_positive() {
        let data: Vec<Observation> = (0..10)
            .map(|i| Observation::new(1.0 + i as f64, vec![]).unwrap())
            .collect();
        let parts: Vec<&[Observation]> = vec![&data];
        let beta = Coefficients::zeros(1);
        let s = score_norm(&parts, &beta, tau(0.5));
        assert!((s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn score_norm_at_empirical_quantile_is_small() {
        let mut rng = Rng::new(43);
        let n = 501usize;
        let values: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let data: Vec<Observation> = values
            .iter()
            .map(|&y| Observation::new(y, vec![]).unwrap())
            .collect();
        let t = tau(0.3);
        let q = sample_quantile(&values, t).unwrap();
        let beta = Coefficients::new(vec![q]).unwrap();
        let parts: Vec<&[Observation]> = vec![&data];
        let s = score_norm(&parts, &beta, t);
        // Counting bound for a no-ties sample with fractional n * tau:
        // the indicator flips exactly at the interpolated quantile.
        assert!(s <= 1.0 / n as f64, "score {s}");
    }

    #[test]
    fn score_norm_invariant_under_partitioning_and_order() {
        let mut rng = Rng::new(44);
        let data = gen_observations(300, 2, NoiseModel::HomoscedasticNormal, &mut rng);
        let beta = Coefficients::from_raw(vec![1.0, 0.9, 1.1]);
        let t = tau(0.7);
        let whole: Vec<&[Observation]> = vec![&data];
        let chunks: Vec<&[Observation]> = data.chunks(37).collect();
        let mut shuffled = data.clone();
        shuffled.reverse();
        let rev: Vec<&[Observation]> = vec![&shuffled];
        let a = score_norm(&whole, &beta, t);
        let b = score_norm(&chunks, &beta, t);
        let c = score_norm(&rev, &beta, t);
        assert!((a - b).abs() < 1e-14);
        assert!((a - c).abs() < 1e-14);
    }

    #[test]
    fn variance_ratio_identity() {
        let ve = VarianceEstimate::new(Mat::identity(2), Mat::identity(2), 10).unwrap();
        let v = unit_direction(2);
        // Quadratic form is exactly 1; ratio against itself is 1.
        let r = variance_ratio(&ve, &v, 1.0).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        // Doubling sigma multiplies the ratio by sqrt(2).
        let ve2 = VarianceEstimate::new(Mat::identity(2), Mat::identity(2).scaled(2.0), 10).unwrap();
        let r2 = variance_ratio(&ve2, &v, 1.0).unwrap();
        assert!((r2 - 2.0f64.sqrt()).abs() < 1e-12);
        assert!(variance_ratio(&ve, &v, 0.0).is_err());
    }
}
