//! One-pass streaming estimator with constant memory.
//!
//! The stream is cut into growing intervals whose endpoints follow the
//! exponent sequence `a_{2k-1} = 2^{k-1} + 1/2`, `a_{2k} = 2^{k-1} + 3/4`
//! (interval `l` covers samples `floor(m^{a_{l-1}}) + 1 ..= floor(m^{a_l})`),
//! chosen so each interval is roughly the square of the one two steps
//! back. Within interval `l` every sample updates running `(U, V)`
//! statistics anchored at the estimate frozen at the end of interval
//! `l - 1`, with bandwidth `sqrt(p / m^{a_{l-1}})`; the current estimate
//! solves the system formed by the carried previous-interval block plus
//! the live block. At an interval boundary the live block replaces the
//! carried one and everything older is dropped, so the state holds a
//! bounded number of scalars no matter how long the stream runs.

use crate::batch_qr::{solve_qr, QrOptions};
use crate::error::{Error, Result};
use crate::inference::{confidence_interval, VarianceEstimate};
use crate::kernel::{smooth_h, smooth_h_prime};
use crate::leqr::{solve_step_warm, LocalStats};
use crate::matrix::Mat;
use crate::types::{Bandwidth, Coefficients, Observation, QuantileLevel};

/// Largest value whose floor is still exact in an f64.
const EXACT_INT_LIMIT: f64 = 9.0e15;

/// Exponent `a_l` of the interval schedule; `None` encodes `a_0 = -inf`.
fn interval_exponent(l: u32) -> Option<f64> {
    if l == 0 {
        return None;
    }
    let k = l.div_ceil(2);
    let base = (k as f64 - 1.0).exp2();
    if l % 2 == 1 {
        Some(base + 0.5)
    } else {
        Some(base + 0.75)
    }
}

/// Floor of `m^a` guarded against representation error just below an
/// exact integer (`100^{1.5}` must floor to 1000, not 999).
fn floor_power(m: u64, a: f64) -> Result<u64> {
    let v = (m as f64).powf(a);
    if v.is_nan() || v >= EXACT_INT_LIMIT {
        return Err(Error::Overflow);
    }
    Ok((v * (1.0 + 1e-12)).floor() as u64)
}

/// First and last stream index of interval `l >= 1` for init size `m`.
pub fn interval_bounds(l: u32, m: u64) -> Result<(u64, u64)> {
    if l < 1 || m < 2 {
        return Err(Error::InvalidDimensions(format!(
            "need l >= 1 and m >= 2, got l={l}, m={m}"
        )));
    }
    let s = match interval_exponent(l - 1) {
        None => 1,
        Some(a) => floor_power(m, a)? + 1,
    };
    let r = floor_power(m, interval_exponent(l).expect("l >= 1"))?;
    Ok((s, r))
}

/// Bandwidth of interval `l`: `sqrt(p / m)` for the first interval and
/// `sqrt(p / m^{a_{l-1}})` afterwards. The dimension counts as at least
/// one so the intercept-only stream keeps a positive bandwidth.
pub fn online_bandwidth(l: u32, m: u64, p: usize) -> Result<Bandwidth> {
    let pe = p.max(1) as f64;
    if l < 1 || pe >= m as f64 {
        return Err(Error::InvalidDimensions(format!(
            "need l >= 1 and p < m, got l={l}, p={p}, m={m}"
        )));
    }
    let denom = match l {
        1 => m as f64,
        _ => {
            let a = interval_exponent(l - 1).expect("l >= 2");
            let v = (m as f64).powf(a);
            if !v.is_finite() {
                return Err(Error::Overflow);
            }
            v
        }
    };
    Bandwidth::new((pe / denom).sqrt())
}

/// State of the streaming estimator: two statistic blocks, two anchor
/// estimates, and the covariate second moment, all `O(p^2)` scalars
/// regardless of how many samples have been ingested.
///
/// ```
/// use memquant::online::OnlineState;
/// use memquant::rng::Rng;
/// use memquant::simgen::{gen_observations, NoiseModel};
/// use memquant::QuantileLevel;
///
/// let tau = QuantileLevel::new(0.5)?;
/// let mut rng = Rng::new(3);
/// let data = gen_observations(2_000, 2, NoiseModel::HomoscedasticNormal, &mut rng);
///
/// let mut state = OnlineState::init(&data[..200], tau)?;
/// let footprint = state.stored_scalars();
/// for obs in &data[200..] {
///     state.ingest(obs.clone())?;
/// }
/// assert_eq!(state.stored_scalars(), footprint);
/// assert_eq!(state.samples_seen(), 1_800);
/// # Ok::<(), memquant::Error>(())
/// ```
#[derive(Debug, Clone)]
pub struct OnlineState {
    p: usize,
    p_prime: usize,
    m: u64,
    tau: QuantileLevel,
    /// Current interval index, starting at 1.
    l: u32,
    /// Samples ingested since initialization.
    j: u64,
    /// Last index of the current interval.
    r_l: u64,
    /// Statistics of the previous interval (the initialization block
    /// while inside interval 1).
    carried: LocalStats,
    /// Statistics of the current interval prefix.
    live: LocalStats,
    /// Estimate frozen at the end of the previous interval; the anchor
    /// for the live statistics.
    beta_prev: Coefficients,
    /// Most recently solved estimate.
    beta_current: Coefficients,
    h_current: f64,
    /// Second-moment sum of every intercepted covariate row seen.
    xx_sum: Mat,
    /// Solve every this-many samples (boundaries always solve).
    solve_stride: u64,
    solve_failures: u64,
    /// An interval boundary was just crossed; the blocks roll at the
    /// start of the next ingest so boundary states stay observable.
    pending_roll: bool,
}

impl OnlineState {
    /// Initialize from the first `m` samples: classical fit, then the
    /// initial statistics block at bandwidth `sqrt(p/m)`.
    pub fn init(first_batch: &[Observation], tau: QuantileLevel) -> Result<Self> {
        let m = first_batch.len() as u64;
        if m < 2 {
            return Err(Error::BatchTooSmall {
                need: 2,
                got: first_batch.len(),
            });
        }
        let p = first_batch[0].dim();
        let p_prime = p + 1;
        let beta0 = solve_qr(first_batch, tau, &QrOptions::default())?;
        let h = online_bandwidth(1, m, p)?;
        let carried = crate::leqr::compute_local_stats(first_batch, &beta0, h, tau);
        let mut xx_sum = Mat::zeros(p_prime, p_prime);
        for obs in first_batch {
            xx_sum.add_outer_intercepted_upper(obs.x(), 1.0);
        }
        xx_sum.mirror_upper();
        let (_, r_l) = interval_bounds(1, m)?;
        Ok(OnlineState {
            p,
            p_prime,
            m,
            tau,
            l: 1,
            j: 0,
            r_l,
            beta_current: beta0.clone(),
            beta_prev: beta0,
            carried,
            live: LocalStats::zeros(p_prime),
            h_current: h.value(),
            xx_sum,
            solve_stride: 1,
            solve_failures: 0,
            pending_roll: false,
        })
    }

    /// Recompute the estimate only every `stride` samples (interval
    /// boundaries always solve). The statistics are updated exactly
    /// either way; this only changes how often the linear system is
    /// solved. `u64::MAX` means boundaries only.
    pub fn set_solve_stride(&mut self, stride: u64) {
        self.solve_stride = stride.max(1);
    }

    /// Consume one observation and return the current estimate.
    ///
    /// A failed solve away from an interval boundary keeps the previous
    /// estimate and bumps the failure counter rather than poisoning the
    /// stream; early in interval 1 the combined system is dominated by
    /// the initialization block, so this stays rare.
    pub fn ingest(&mut self, obs: Observation) -> Result<Coefficients> {
        if obs.dim() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: obs.dim(),
            });
        }
        if self.pending_roll {
            self.roll_interval()?;
            self.pending_roll = false;
        }
        self.j += 1;
        self.accumulate(&obs);

        let at_boundary = self.j == self.r_l;
        if at_boundary || self.j.is_multiple_of(self.solve_stride) {
            match self.solve_combined() {
                Ok(beta) => self.beta_current = beta,
                Err(_) => self.solve_failures += 1,
            }
        }
        if at_boundary {
            self.pending_roll = true;
        }
        Ok(self.beta_current.clone())
    }

    fn accumulate(&mut self, obs: &Observation) {
        let y = obs.y();
        let x = obs.x();
        let arg = (y - self.beta_prev.predict(x)) / self.h_current;
        let hp = smooth_h_prime(arg);
        let wu = smooth_h(arg) + self.tau.value() - 1.0 + (y / self.h_current) * hp;
        self.live.add_observation(x, wu, hp / self.h_current);
        self.xx_sum.add_outer_intercepted_upper(x, 1.0);
        self.xx_sum.mirror_upper();
    }

    fn solve_combined(&self) -> Result<Coefficients> {
        let merged = self.carried.merge(&self.live)?;
        solve_step_warm(&merged, Some(&self.beta_current))
    }

    /// Force a solve with the statistics accumulated so far.
    pub fn solve_now(&mut self) -> Result<Coefficients> {
        let beta = self.solve_combined()?;
        self.beta_current = beta.clone();
        Ok(beta)
    }

    fn roll_interval(&mut self) -> Result<()> {
        self.carried = std::mem::replace(&mut self.live, LocalStats::zeros(self.p_prime));
        self.beta_prev = self.beta_current.clone();
        self.l += 1;
        let (_, r_l) = interval_bounds(self.l, self.m)?;
        self.r_l = r_l;
        self.h_current = online_bandwidth(self.l, self.m, self.p)?.value();
        Ok(())
    }

    /// Confidence interval for `v' beta` from the carried-plus-live
    /// curvature and the full-stream covariate second moment.
    ///
    /// The interval scales by the carried-plus-live sample count rather
    /// than the full stream length: the rolling estimate averages
    /// influence terms over exactly that window (everything older
    /// reaches it only through the frozen anchor), and the two counts
    /// agree asymptotically while the window count keeps the coverage
    /// nominal at realistic stream lengths.
    pub fn confidence_interval(&self, v: &[f64], alpha: f64) -> Result<(f64, f64)> {
        let merged = self.carried.merge(&self.live)?;
        let d_count = merged.count();
        if d_count == 0 {
            return Err(Error::InvalidConfig("no samples accumulated".into()));
        }
        let total = self.total_count();
        let ve = VarianceEstimate::new(
            merged.v().scaled(1.0 / d_count as f64),
            self.xx_sum.scaled(1.0 / total as f64),
            d_count,
        )?;
        confidence_interval(&self.beta_current, v, &ve, self.tau, alpha)
    }

    /// Samples ingested since initialization.
    pub fn samples_seen(&self) -> u64 {
        self.j
    }

    /// Total samples used so far, initialization included.
    pub fn total_count(&self) -> u64 {
        self.m + self.j
    }

    /// Current interval index.
    pub fn interval(&self) -> u32 {
        self.l
    }

    /// Last stream index of the current interval.
    pub fn interval_end(&self) -> u64 {
        self.r_l
    }

    pub fn bandwidth(&self) -> f64 {
        self.h_current
    }

    pub fn estimate(&self) -> &Coefficients {
        &self.beta_current
    }

    pub fn solve_failures(&self) -> u64 {
        self.solve_failures
    }

    /// The estimate has seen fewer live samples than parameters and the
    /// solve still leans almost entirely on the initialization block.
    pub fn is_warmup(&self) -> bool {
        self.l == 1 && self.j < self.p_prime as u64 + 1
    }

    /// Number of `f64` slots the state holds; independent of the number
    /// of ingested samples.
    pub fn stored_scalars(&self) -> usize {
        self.carried.stored_scalars()
            + self.live.stored_scalars()
            + self.beta_prev.dim()
            + self.beta_current.dim()
            + self.xx_sum.data().len()
            + 8 // counters, bandwidth, stride
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leqr::{compute_local_stats, solve_step};
    use crate::rng::Rng;
    use crate::simgen::{gen_observations, NoiseModel};

    fn tau(v: f64) -> QuantileLevel {
        QuantileLevel::new(v).unwrap()
    }

    #[test]
    fn interval_bounds_reference_values() {
        assert_eq!(interval_bounds(1, 100).unwrap(), (1, 1000));
        assert_eq!(interval_bounds(2, 100).unwrap(), (1001, 3162));
        assert_eq!(interval_bounds(3, 100).unwrap(), (3163, 100_000));
    }

    #[test]
    fn interval_bounds_are_contiguous() {
        for l in 1..6u32 {
            let (_, r) = interval_bounds(l, 50).unwrap();
            let (s_next, r_next) = interval_bounds(l + 1, 50).unwrap();
            assert_eq!(s_next, r + 1);
            assert!(r_next > r);
        }
    }

    #[test]
    fn interval_bounds_overflow_guard() {
        assert!(matches!(interval_bounds(40, 100), Err(Error::Overflow)));
    }

    #[test]
    fn online_bandwidth_reference_values() {
        let h1 = online_bandwidth(1, 100, 15).unwrap().value();
        assert!((h1 - 0.15f64.sqrt()).abs() < 1e-12);
        let h2 = online_bandwidth(2, 100, 15).unwrap().value();
        assert!((h2 - (15.0f64 / 1000.0).sqrt()).abs() < 1e-12);
        let h3 = online_bandwidth(3, 100, 15).unwrap().value();
        let want = (15.0f64 / 100.0f64.powf(1.75)).sqrt();
        assert!((h3 - want).abs() < 1e-12, "h3 {h3} vs {want}");
        // Nonincreasing across intervals.
        let mut prev = f64::INFINITY;
        for l in 1..8 {
            let h = online_bandwidth(l, 100, 15).unwrap().value();
            assert!(h <= prev);
            prev = h;
        }
    }

    #[test]
    fn init_median_and_carried_stats() {
        let batch: Vec<Observation> = [1.0, 2.0, 3.0, 4.0, 5.0]
            .iter()
            .map(|&y| Observation::new(y, vec![]).unwrap())
            .collect();
        let state = OnlineState::init(&batch, tau(0.5)).unwrap();
        assert!((state.estimate()[0] - 3.0).abs() < 1e-9);

        // Carried statistics equal a direct batch computation exactly.
        let h = online_bandwidth(1, 5, 0).unwrap();
        let direct = compute_local_stats(&batch, state.estimate(), h, tau(0.5));
        assert_eq!(state.carried.u(), direct.u());
        assert_eq!(state.carried.v().data(), direct.v().data());

        // Memory contract.
        let p_prime = 1;
        assert!(state.stored_scalars() <= 4 * (p_prime * p_prime + p_prime) + 16);
    }

    #[test]
    fn memory_is_constant_across_stream() {
        let mut rng = Rng::new(17);
        let data = gen_observations(2_100, 2, NoiseModel::HomoscedasticNormal, &mut rng);
        let mut state = OnlineState::init(&data[..100], tau(0.5)).unwrap();
        let footprint = state.stored_scalars();
        let p_prime = 3;
        assert!(footprint <= 4 * (p_prime * p_prime + p_prime) + 16);
        for obs in &data[100..] {
            state.ingest(obs.clone()).unwrap();
            assert_eq!(state.stored_scalars(), footprint);
        }
        assert_eq!(state.samples_seen(), 2_000);
        // m = 100 rolls intervals at j = 1000; we crossed one boundary.
        assert_eq!(state.interval(), 2);
    }

    #[test]
    fn boundary_solution_matches_solve_step_on_merged_stats() {
        let mut rng = Rng::new(18);
        let data = gen_observations(1_150, 1, NoiseModel::HomoscedasticNormal, &mut rng);
        let mut state = OnlineState::init(&data[..100], tau(0.3)).unwrap();
        let mut at_boundary: Option<(LocalStats, Coefficients, Coefficients)> = None;
        for (i, obs) in data[100..].iter().enumerate() {
            let j = (i + 1) as u64;
            if j == 1000 {
                let warm = state.beta_current.clone();
                let beta = state.ingest(obs.clone()).unwrap();
                // The roll is lazy; one more ingest swaps the blocks so
                // the carried block becomes exactly the full first
                // interval the boundary estimate was solved from (the
                // initialization block is dropped at the roll).
                state.ingest(data[100 + i + 1].clone()).unwrap();
                at_boundary = Some((state.carried.clone(), warm, beta));
                break;
            }
            state.ingest(obs.clone()).unwrap();
        }
        let (carried_after, warm, beta_at_boundary) = at_boundary.expect("hit boundary");
        // The boundary solve used init-block + live; re-solving the
        // rolled state's system must land within solver tolerance.
        let init_h = online_bandwidth(1, 100, 1).unwrap();
        let init_stats = compute_local_stats(&data[..100], {
            // Recover the initialization anchor by refitting; init is
            // deterministic so this reproduces it exactly.
            &crate::batch_qr::solve_qr(&data[..100], tau(0.3), &crate::batch_qr::QrOptions::default())
                .unwrap()
        }, init_h, tau(0.3));
        let merged = init_stats.merge(&carried_after).unwrap();
        let sol = crate::leqr::solve_step_warm(&merged, Some(&warm)).unwrap();
        assert!(
            sol.distance(&beta_at_boundary) < 1e-9,
            "distance {}",
            sol.distance(&beta_at_boundary)
        );
        let sol2 = solve_step(&merged).unwrap();
        assert!(sol2.distance(&beta_at_boundary) < 1e-8);
    }

    #[test]
    fn out_of_window_samples_touch_only_u() {
        // Residuals far above the bandwidth: live V stays zero and the
        // estimate moves only through live U.
        let base: Vec<Observation> = (0..60)
            .map(|i| Observation::new((i as f64) * 0.01, vec![]).unwrap())
            .collect();
        let mut state = OnlineState::init(&base, tau(0.5)).unwrap();
        for _ in 0..10 {
            state
                .ingest(Observation::new(1e6, vec![]).unwrap())
                .unwrap();
        }
        assert_eq!(state.live.v().max_abs(), 0.0);
        assert!(state.live.u()[0] != 0.0);
    }

    #[test]
    fn median_stream_concentrates_at_clt_rate() {
        // p = 0 standard-normal stream at tau = 0.5: the estimate stays
        // within 3 sigma of zero, sigma^2 = (pi/2) / (m + j), in at
        // least 99% of seeded replications.
        let t = tau(0.5);
        let m = 500usize;
        let stream = 100_000u64;
        let reps = 200u64;
        let mut within = 0u64;
        for rep in 0..reps {
            let mut rng = Rng::stream(900, rep);
            let data = gen_observations(m + stream as usize, 0, NoiseModel::HomoscedasticNormal, &mut rng);
            // Center at the true median: beta(0.5) intercept is 1.
            let mut state = OnlineState::init(&data[..m], t).unwrap();
            state.set_solve_stride(u64::MAX);
            for obs in &data[m..] {
                state.ingest(obs.clone()).unwrap();
            }
            let beta = state.solve_now().unwrap();
            let total = (m as u64 + stream) as f64;
            let bound = 3.0 * (std::f64::consts::PI / 2.0 / total).sqrt();
            if (beta[0] - 1.0).abs() <= bound {
                within += 1;
            }
        }
        assert!(within * 100 >= reps * 99, "within bound in {within}/{reps}");
    }

    #[test]
    fn deterministic_replay_bitwise() {
        let mut rng = Rng::new(19);
        let data = gen_observations(600, 2, NoiseModel::Exponential, &mut rng);
        let run = |data: &[Observation]| -> Vec<f64> {
            let mut state = OnlineState::init(&data[..100], tau(0.7)).unwrap();
            let mut out = Vec::new();
            for obs in &data[100..] {
                let beta = state.ingest(obs.clone()).unwrap();
                out.extend_from_slice(beta.as_slice());
            }
            out
        };
        assert_eq!(run(&data), run(&data));
    }

    #[test]
    fn warmup_flag_clears() {
        let mut rng = Rng::new(20);
        let data = gen_observations(200, 3, NoiseModel::HomoscedasticNormal, &mut rng);
        let mut state = OnlineState::init(&data[..50], tau(0.5)).unwrap();
        assert!(state.is_warmup());
        for obs in &data[50..60] {
            state.ingest(obs.clone()).unwrap();
        }
        assert!(!state.is_warmup());
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let mut rng = Rng::new(21);
        let data = gen_observations(50, 2, NoiseModel::HomoscedasticNormal, &mut rng);
        let mut state = OnlineState::init(&data, tau(0.5)).unwrap();
        let bad = Observation::new(1.0, vec![0.5]).unwrap();
        assert!(matches!(
            state.ingest(bad),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
