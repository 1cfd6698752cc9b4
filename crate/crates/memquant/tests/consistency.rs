//! Cross-module statistical consistency checks at reduced Monte-Carlo
//! scale: properties that tie the fitter, the variance machinery, and
//! the generators together.

use rayon::prelude::*;

use memquant::inference::{build_variance_estimate, covariate_second_moment, variance_ratio};
use memquant::leqr::{dc_leqr, DcConfig};
use memquant::matrix::{lu_solve, Mat};
use memquant::rng::Rng;
use memquant::simgen::{
    gen_covariates, gen_observations, run_coverage_experiment, ExperimentSpec, Method, NoiseModel,
};
use memquant::stats::{normal_pdf, normal_quantile};
use memquant::types::{dot, unit_direction, Coefficients, Observation, QuantileLevel};

fn tau(v: f64) -> QuantileLevel {
    QuantileLevel::new(v).unwrap()
}

/// The indicator score norm at the refined estimate is (weakly) falling
/// across aggregation rounds: the median over replications of each
/// round's score never rises by more than Monte-Carlo wiggle.
#[test]
fn score_norm_median_nonincreasing_across_rounds() {
    let t = tau(0.1);
    let q = 4u32;
    let reps = 40u64;
    let per_round: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = Rng::stream(50_000, rep);
            let data = gen_observations(10_000, 5, NoiseModel::HomoscedasticNormal, &mut rng);
            let partitions: Vec<&[Observation]> = data.chunks(100).collect();
            let (_, diag) = dc_leqr(&partitions, &DcConfig::new(t, 100, q)).unwrap();
            diag.rounds.iter().map(|r| r.score_norm).collect()
        })
        .collect();
    let mut medians = Vec::new();
    for g in 0..q as usize {
        let mut column: Vec<f64> = per_round.iter().map(|r| r[g]).collect();
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push(column[column.len() / 2]);
    }
    for g in 1..medians.len() {
        assert!(
            medians[g] <= medians[g - 1] * 1.05 + 1e-12,
            "median score rose at round {}: {:?}",
            g + 1,
            medians
        );
    }
    // And the refinement is substantial, not a plateau from the start.
    assert!(
        medians[q as usize - 1] < 0.5 * medians[0],
        "refinement too weak: {medians:?}"
    );
}

/// Sandwich-variance consistency: at n = 10^5 the estimated variance of
/// the equal-weight direction lands within ten percent of the limiting
/// variance computed from the generator's law (dense-solve oracle).
#[test]
fn variance_estimate_consistent_at_moderate_scale() {
    let p = 15usize;
    let t = tau(0.1);
    let v0 = unit_direction(p + 1);

    // Limiting variance oracle: D = f(q) * E[XX'], second moment from a
    // large Monte-Carlo average, inverted densely.
    let mut xx = Mat::zeros(p + 1, p + 1);
    let chunks = 40u64;
    let rows_per_chunk = 50_000usize;
    let partials: Vec<Mat> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut acc = Mat::zeros(p + 1, p + 1);
            for row in gen_covariates(rows_per_chunk, p, 0xFEED ^ chunk.wrapping_mul(0x9E37)) {
                acc.add_outer_intercepted_upper(&row, 1.0);
            }
            acc.mirror_upper();
            acc
        })
        .collect();
    for part in &partials {
        xx.add_assign(part).unwrap();
    }
    xx.scale(1.0 / (chunks as f64 * rows_per_chunk as f64));
    let f0 = normal_pdf(normal_quantile(0.1));
    let w = lu_solve(&xx, &v0).unwrap();
    let true_var = dot(&v0, &Coefficients::new(w).unwrap()) / (f0 * f0);

    let reps = 24u64;
    let total: f64 = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = Rng::stream(60_000, rep);
            let data = gen_observations(100_000, p, NoiseModel::HomoscedasticNormal, &mut rng);
            let partitions: Vec<&[Observation]> = data.chunks(100).collect();
            let (_, diag) = dc_leqr(&partitions, &DcConfig::new(t, 100, 4)).unwrap();
            let xx = covariate_second_moment(&partitions);
            let ve = build_variance_estimate(&diag.final_stats, &xx, 100_000).unwrap();
            variance_ratio(&ve, &v0, true_var).unwrap()
        })
        .sum();
    let mean_ratio = total / reps as f64;
    assert!(
        (0.9..=1.1).contains(&mean_ratio),
        "mean variance ratio {mean_ratio}"
    );
}

/// The refined estimator's variance decays like 1/n: rescaled variances
/// across a 10x range of n agree within a factor of 1.3.
#[test]
fn variance_decays_at_the_parametric_rate() {
    let mut scaled = Vec::new();
    for (n, seed) in [(4_000usize, 70_000u64), (10_000, 71_000), (40_000, 72_000)] {
        let mut spec = ExperimentSpec::new(
            3,
            100,
            n,
            tau(0.5),
            NoiseModel::HomoscedasticNormal,
            Method::DcLeqr,
        );
        spec.q = Some(4);
        spec.reps = 200;
        spec.base_seed = seed;
        let summary = run_coverage_experiment(&spec).unwrap();
        assert_eq!(summary.failures, 0);
        scaled.push(summary.variance.unwrap() * n as f64);
    }
    for pair in scaled.windows(2) {
        let ratio = pair[1] / pair[0];
        assert!(
            (1.0 / 1.3..=1.3).contains(&ratio),
            "scaled variances {scaled:?}"
        );
    }
}
