//! Baseline estimators: naive divide-and-conquer averaging, the pooled
//! fit, and the sample-quantile special case with its bias law.
//!
//! Averaging per-batch quantile regression fits reduces variance but
//! cannot reduce the O(1/m) bias each local fit carries, so the average
//! stops improving once n is of order m^2. `averaged_quantile_bias` gives the
//! leading bias term `b / m` with `b = -tau(1-tau) f'(q) / (2 f(q)^3)`
//! for the p = 0 case, which the experiments verify empirically.

use rayon::prelude::*;

use crate::batch_qr::{sample_quantile, solve_qr, QrOptions};
use crate::error::{Error, Result};
use crate::types::{Coefficients, Observation, QuantileLevel};

/// Unweighted average of per-batch quantile regression fits.
pub fn naive_dc(partitions: &[&[Observation]], tau: QuantileLevel) -> Result<Coefficients> {
    if partitions.is_empty() {
        return Err(Error::InvalidConfig("no partitions supplied".into()));
    }
    let fits: Vec<Result<Coefficients>> = partitions
        .par_iter()
        .map(|batch| solve_qr(batch, tau, &QrOptions::default()))
        .collect();
    let mut avg: Option<Vec<f64>> = None;
    for (k, fit) in fits.into_iter().enumerate() {
        let beta = fit.map_err(|e| e.at_batch(k))?;
        match &mut avg {
            None => avg = Some(beta.as_slice().to_vec()),
            Some(acc) => {
                if acc.len() != beta.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: acc.len(),
                        got: beta.dim(),
                    });
                }
                for (a, b) in acc.iter_mut().zip(beta.as_slice()) {
                    *a += b;
                }
            }
        }
    }
    let mut acc = avg.expect("at least one partition");
    let inv = 1.0 / partitions.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(Coefficients::from_raw(acc))
}

/// Quantile regression on the pooled data, ignoring the memory budget.
/// Same code path as the per-batch solver.
pub fn qr_all(all_data: &[Observation], tau: QuantileLevel) -> Result<Coefficients> {
    solve_qr(all_data, tau, &QrOptions::default())
}

/// Average of per-batch interpolated sample quantiles.
pub fn naive_dc_quantile(batches: &[&[f64]], tau: QuantileLevel) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::InvalidConfig("no batches supplied".into()));
    }
    let mut sum = 0.0;
    for (k, batch) in batches.iter().enumerate() {
        sum += sample_quantile(batch, tau).map_err(|e| e.at_batch(k))?;
    }
    Ok(sum / batches.len() as f64)
}

/// Leading bias of the averaged sample quantile at batch size `m`:
/// `b / m` with `b = -tau(1-tau) f'(q) / (2 f(q)^3)`, where `f` and `f'`
/// are the density and its derivative at the true quantile.
///
/// Callers must supply `f_at_beta > 0` and `m >= 1`.
pub fn averaged_quantile_bias(f_at_beta: f64, f_prime_at_beta: f64, tau: QuantileLevel, m: usize) -> f64 {
    debug_assert!(f_at_beta > 0.0);
    debug_assert!(m >= 1);
    let t = tau.value();
    let b = -t * (1.0 - t) * f_prime_at_beta / (2.0 * f_at_beta.powi(3));
    b / m as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch_qr::qr_objective;
    use crate::rng::Rng;
    use crate::stats::{normal_pdf, normal_quantile};

    fn tau(v: f64) -> QuantileLevel {
        QuantileLevel::new(v).unwrap()
    }

    fn random_batch(n: usize, p: usize, rng: &mut Rng) -> Vec<Observation> {
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..p).map(|_| rng.uniform()).collect();
                let y = 1.0 + x.iter().sum::<f64>() + rng.normal();
                Observation::new(y, x).unwrap()
            })
            .collect()
    }

    #[test]
    fn single_partition_equals_solve_qr() {
        let mut rng = Rng::new(3);
        let batch = random_batch(60, 2, &mut rng);
        let parts: Vec<&[Observation]> = vec![&batch];
        let avg = naive_dc(&parts, tau(0.4)).unwrap();
        let direct = solve_qr(&batch, tau(0.4), &QrOptions::default()).unwrap();
        assert_eq!(avg.as_slice(), direct.as_slice());
    }

    #[test]
    fn permuting_batches_leaves_average_unchanged() {
        let mut rng = Rng::new(4);
        let data = random_batch(300, 2, &mut rng);
        let parts: Vec<&[Observation]> = data.chunks(50).collect();
        let mut reversed = parts.clone();
        reversed.reverse();
        let a = naive_dc(&parts, tau(0.3)).unwrap();
        let b = naive_dc(&reversed, tau(0.3)).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn qr_all_is_same_code_path() {
        let mut rng = Rng::new(5);
        let data = random_batch(80, 1, &mut rng);
        let a = qr_all(&data, tau(0.6)).unwrap();
        let b = solve_qr(&data, tau(0.6), &QrOptions::default()).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn qr_all_intercept_only_brackets_marginal_quantile() {
        // Pooled p = 0 fit lands between adjacent order statistics of
        // the interpolated marginal quantile.
        let mut rng = Rng::new(6);
        let mut ys: Vec<f64> = (0..101).map(|_| rng.normal()).collect();
        let data: Vec<Observation> = ys
            .iter()
            .map(|&y| Observation::new(y, vec![]).unwrap())
            .collect();
        let t = tau(0.25);
        let fit = qr_all(&data, t).unwrap();
        let q = sample_quantile(&ys, t).unwrap();
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let gap = ys
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0f64, f64::max);
        assert!(
            (fit.intercept() - q).abs() <= gap + 1e-12,
            "fit {} vs quantile {q}, max gap {gap}",
            fit.intercept()
        );
        // Both must also have equal objective up to the interpolation
        // convention difference.
        let o_fit = qr_objective(&data, t, &fit);
        let o_q = qr_objective(&data, t, &Coefficients::new(vec![q]).unwrap());
        assert!(o_fit <= o_q + 1e-9);
    }

    #[test]
    fn naive_dc_quantile_identical_batches() {
        let batch: Vec<f64> = (1..=9).map(|i| i as f64).collect();
        let batches: Vec<&[f64]> = vec![&batch, &batch, &batch];
        let avg = naive_dc_quantile(&batches, tau(0.5)).unwrap();
        let single = sample_quantile(&batch, tau(0.5)).unwrap();
        assert_eq!(avg, single);
    }

    #[test]
    fn naive_dc_quantile_propagates_error_with_batch_index() {
        let good: Vec<f64> = (1..=9).map(|i| i as f64).collect();
        let bad: Vec<f64> = vec![1.0];
        let batches: Vec<&[f64]> = vec![&good, &bad];
        let err = naive_dc_quantile(&batches, tau(0.1)).unwrap_err();
        match err {
            Error::AtBatch { batch, .. } => assert_eq!(batch, 1),
            other => panic!("expected batch context, got {other:?}"),
        }
    }

    #[test]
    fn averaged_quantile_bias_reference_values() {
        // Symmetric density at its median: zero bias.
        assert_eq!(averaged_quantile_bias(0.39894, 0.0, tau(0.5), 100), 0.0);

        // Standard normal at tau = 0.9, m = 100.
        let q = normal_quantile(0.9);
        let f = normal_pdf(q);
        let fp = -q * normal_pdf(q);
        let bias = averaged_quantile_bias(f, fp, tau(0.9), 100);
        assert!((bias - 0.01872).abs() < 2e-5, "bias {bias}");

        // Halves when m doubles.
        let bias200 = averaged_quantile_bias(f, fp, tau(0.9), 200);
        assert!((bias - 2.0 * bias200).abs() < 1e-15);
    }

    #[test]
    fn naive_bias_dwarfs_refined_bias() {
        // On the n = m^2 grid the averaged estimator's bias exceeds the
        // refined divide-and-conquer bias by at least a factor of five.
        use crate::leqr::{dc_leqr, DcConfig};
        use crate::simgen::{gen_observations, true_beta_tau, NoiseModel};
        use crate::types::{dot, unit_direction};
        use rayon::prelude::*;

        let t = tau(0.1);
        let p = 15usize;
        let v0 = unit_direction(p + 1);
        let truth = dot(&v0, &true_beta_tau(NoiseModel::HomoscedasticNormal, t, p));
        let reps = 120u64;
        let (naive_sum, dc_sum): (f64, f64) = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = Rng::stream(7_000, rep);
                let data = gen_observations(10_000, p, NoiseModel::HomoscedasticNormal, &mut rng);
                let parts: Vec<&[Observation]> = data.chunks(100).collect();
                let naive = naive_dc(&parts, t).unwrap();
                let (dc, _) = dc_leqr(&parts, &DcConfig::new(t, 100, 4)).unwrap();
                (dot(&v0, &naive) - truth, dot(&v0, &dc) - truth)
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let naive_bias = naive_sum / reps as f64;
        let dc_bias = dc_sum / reps as f64;
        assert!(
            naive_bias.abs() >= 5.0 * dc_bias.abs(),
            "naive bias {naive_bias} vs refined bias {dc_bias}"
        );
    }

    #[test]
    fn averaged_quantile_bias_matches_prediction() {
        // Monte-Carlo oracle for the bias plateau: N batches of size
        // m = 100 from the standard normal at tau = 0.9.
        let t = tau(0.9);
        let m = 100;
        let n_batches = 50;
        let reps = 200;
        let q_true = normal_quantile(0.9);
        let predicted = averaged_quantile_bias(normal_pdf(q_true), -q_true * normal_pdf(q_true), t, m);

        let mut total = 0.0;
        for rep in 0..reps {
            let mut rng = Rng::stream(500, rep);
            let batches: Vec<Vec<f64>> = (0..n_batches)
                .map(|_| (0..m).map(|_| rng.normal()).collect())
                .collect();
            let views: Vec<&[f64]> = batches.iter().map(Vec::as_slice).collect();
            total += naive_dc_quantile(&views, t).unwrap() - q_true;
        }
        let mean_err = total / reps as f64;
        assert!(
            (mean_err - predicted).abs() < 0.004,
            "mean error {mean_err} vs predicted {predicted}"
        );
    }
}
