//! Classical quantile regression on a single batch.
//!
//! The check-loss objective is convex and piecewise linear, and its
//! minimizer interpolates `p + 1` observations. `solve_qr` exploits both
//! facts in two phases. A smoothed continuation phase minimizes the
//! kernel-smoothed objective over a decreasing bandwidth ladder with
//! damped fixed-point steps reusing the same `(U, V)` algebra as the
//! aggregation rounds; this lands near the optimum cheaply. An exact
//! pivoting phase then walks interpolation bases simplex-style: at each
//! vertex it evaluates the one-sided directional derivative along every
//! edge (relaxing one active observation in either direction), follows
//! the steepest descending edge to the weighted-median breakpoint of the
//! residual ratios, and stops when no edge descends, which certifies
//! global optimality.
//!
//! `qr_vertex_oracle` is the brute-force counterpart used for
//! validation: it enumerates every possible interpolation subset on
//! small instances and is therefore exact.

use crate::error::{Error, Result};
use crate::kernel::check_loss;
use crate::leqr::{compute_local_stats, solve_step_cg, LocalStats};
use crate::matrix::{lu_solve, Mat};
use crate::types::{Bandwidth, Coefficients, Observation, QuantileLevel};

/// Tuning knobs for [`solve_qr`]. The defaults are sized for batches up
/// to a few hundred thousand rows.
#[derive(Debug, Clone)]
pub struct QrOptions {
    /// Fixed-point steps allowed per bandwidth stage.
    pub max_stage_steps: usize,
    /// Step halvings tried before a stage gives up on descent.
    pub max_backtracks: usize,
    /// Stage stops once the smoothed score norm falls below
    /// `score_tol * n`.
    pub score_tol: f64,
    /// Stage stops once the iterate moves less than
    /// `step_tol * (1 + ||beta||)`.
    pub step_tol: f64,
    /// Basis exchanges allowed in the exact pivoting phase. The
    /// continuation start keeps the realized count at a few dozen; the
    /// cap only guards degenerate cycling.
    pub max_pivots: usize,
}

impl Default for QrOptions {
    fn default() -> Self {
        QrOptions {
            max_stage_steps: 12,
            max_backtracks: 6,
            score_tol: 1e-8,
            step_tol: 1e-10,
            max_pivots: 500,
        }
    }
}

/// Check-loss objective of the batch at `beta`.
pub fn qr_objective(batch: &[Observation], tau: QuantileLevel, beta: &Coefficients) -> f64 {
    batch
        .iter()
        .map(|obs| check_loss(obs.y() - beta.predict(obs.x()), tau))
        .sum()
}

/// Smoothed score `U - V beta`; zero exactly at the smoothed optimum.
fn smoothed_score_norm(stats: &LocalStats, beta: &Coefficients) -> f64 {
    let vb = stats.v().matvec(beta.as_slice());
    stats
        .u()
        .iter()
        .zip(&vb)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Sample quantile with clamped index, used only to seed the solver.
fn seed_quantile(values: &mut [f64], tau: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = values.len();
    let t = tau * (m + 1) as f64;
    let j = (t.floor() as usize).clamp(1, m);
    let gamma = (t - j as f64).clamp(0.0, 1.0);
    if j >= m {
        values[m - 1]
    } else {
        (1.0 - gamma) * values[j - 1] + gamma * values[j]
    }
}

fn full_rank_design(batch: &[Observation], p_prime: usize) -> Result<()> {
    let mut gram = Mat::zeros(p_prime, p_prime);
    for obs in batch {
        gram.add_outer_intercepted_upper(obs.x(), 1.0);
    }
    gram.mirror_upper();
    gram.scale(1.0 / batch.len() as f64);
    match lu_solve(&gram, &vec![0.0; p_prime]) {
        Ok(_) => Ok(()),
        Err(Error::RankDeficient) => Err(Error::RankDeficient),
        Err(e) => Err(e),
    }
}

/// Count of observations whose residual falls inside the smoothing
/// window at bandwidth `h`.
fn window_count(batch: &[Observation], beta: &Coefficients, h: f64) -> usize {
    batch
        .iter()
        .filter(|obs| ((obs.y() - beta.predict(obs.x())) / h).abs() < 1.0)
        .count()
}

/// Enumerate `k`-subsets of `0..n` in lexicographic order.
struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            idx: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        if k == 0 {
            self.done = true;
            return Some(out);
        }
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - (k - i) {
                self.idx[i] += 1;
                for j in (i + 1)..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

fn interpolate_subset(batch: &[Observation], subset: &[usize]) -> Result<Coefficients> {
    let p_prime = subset.len();
    let mut a = Mat::zeros(p_prime, p_prime);
    let mut b = vec![0.0; p_prime];
    for (row, &i) in subset.iter().enumerate() {
        a.set(row, 0, 1.0);
        for (col, v) in batch[i].x().iter().enumerate() {
            a.set(row, col + 1, *v);
        }
        b[row] = batch[i].y();
    }
    lu_solve(&a, &b).map(Coefficients::from_raw)
}

fn residual_order(batch: &[Observation], beta: &Coefficients) -> Vec<usize> {
    let resid: Vec<f64> = batch
        .iter()
        .map(|obs| (obs.y() - beta.predict(obs.x())).abs())
        .collect();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|&a, &b| resid[a].partial_cmp(&resid[b]).unwrap());
    order
}

/// Pick an interpolation basis by Gaussian elimination over rows taken
/// in the given preference order; rows that do not add a new pivot are
/// skipped. Returns `None` only for rank-deficient designs.
fn select_seed_basis(batch: &[Observation], order: &[usize], p_prime: usize) -> Option<Vec<usize>> {
    let mut basis = Vec::with_capacity(p_prime);
    let mut reducers: Vec<(usize, Vec<f64>)> = Vec::with_capacity(p_prime);
    for &i in order {
        let mut row = vec![0.0; p_prime];
        row[0] = 1.0;
        row[1..].copy_from_slice(batch[i].x());
        let scale = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (col, red) in &reducers {
            let factor = row[*col];
            if factor != 0.0 {
                for (r, v) in row.iter_mut().zip(red) {
                    *r -= factor * v;
                }
            }
        }
        let mut pivot_col = None;
        let mut pivot_val = 1e-10 * scale.max(1.0);
        for (c, v) in row.iter().enumerate() {
            if reducers.iter().all(|(rc, _)| *rc != c) && v.abs() > pivot_val {
                pivot_val = v.abs();
                pivot_col = Some(c);
            }
        }
        if let Some(c) = pivot_col {
            let inv = 1.0 / row[c];
            for v in &mut row {
                *v *= inv;
            }
            reducers.push((c, row));
            basis.push(i);
            if basis.len() == p_prime {
                return Some(basis);
            }
        }
    }
    None
}

/// One-sided slope of the check loss at residual `r` when the residual
/// moves at rate `-s` (active observations sit exactly at zero).
fn directional_rate(r: f64, s: f64, tau: f64, zero_tol: f64) -> f64 {
    if r > zero_tol {
        -s * tau
    } else if r < -zero_tol {
        s * (1.0 - tau)
    } else {
        (s * (1.0 - tau)).max(-s * tau)
    }
}

/// How the pivot walk ended.
enum PivotEnd {
    /// No descending edge remained: global optimality certified.
    Certified,
    /// A degenerate basis stopped the walk; the best vertex found
    /// stands (ties on exactly collinear data).
    Degenerate,
    /// The pivot budget ran out before the certificate.
    Exhausted,
}

/// Exact finish of a continuation solution by simplex pivoting over
/// interpolation bases.
///
/// At the current basis the `2 p'` edge directions each free one active
/// observation in one sign while keeping the rest interpolated. The
/// steepest descending edge is followed to the breakpoint where the
/// accumulated slope of the piecewise-linear objective turns
/// nonnegative (a weighted median of residual ratios); the breakpoint
/// observation enters the basis. No descending edge means no improving
/// edge of the underlying linear program, which certifies the vertex is
/// a global minimizer.
fn pivot_to_vertex(
    batch: &[Observation],
    tau: QuantileLevel,
    start: Coefficients,
    start_obj: f64,
    opts: &QrOptions,
) -> (Coefficients, f64, PivotEnd) {
    let p_prime = start.dim();
    let t = tau.value();

    let order = residual_order(batch, &start);
    let Some(mut active) = select_seed_basis(batch, &order, p_prime) else {
        return (start, start_obj, PivotEnd::Degenerate);
    };
    let Ok(mut beta) = interpolate_subset(batch, &active) else {
        return (start, start_obj, PivotEnd::Degenerate);
    };

    let y_scale = batch
        .iter()
        .map(|o| o.y().abs())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let zero_tol = 1e-9 * y_scale;

    let mut end = PivotEnd::Exhausted;
    for _pivot in 0..opts.max_pivots {
        let resid: Vec<f64> = batch
            .iter()
            .map(|obs| obs.y() - beta.predict(obs.x()))
            .collect();

        // Edge directions: columns of the inverse of the active design.
        let mut active_design = Mat::zeros(p_prime, p_prime);
        for (row, &i) in active.iter().enumerate() {
            active_design.set(row, 0, 1.0);
            for (col, v) in batch[i].x().iter().enumerate() {
                active_design.set(row, col + 1, *v);
            }
        }
        let mut directions: Vec<Vec<f64>> = Vec::with_capacity(p_prime);
        let mut rhs = vec![0.0; p_prime];
        let mut singular = false;
        for k in 0..p_prime {
            rhs[k] = 1.0;
            match lu_solve(&active_design, &rhs) {
                Ok(d) => directions.push(d),
                Err(_) => {
                    singular = true;
                    break;
                }
            }
            rhs[k] = 0.0;
        }
        if singular {
            end = PivotEnd::Degenerate;
            break;
        }

        // Steepest one-sided derivative over the 2 p' edges.
        let mut best: Option<(f64, usize, f64)> = None; // (normalized slope, slot, sign)
        let mut sensitivities: Vec<Vec<f64>> = Vec::with_capacity(p_prime);
        for d in &directions {
            let s: Vec<f64> = batch
                .iter()
                .map(|obs| {
                    let mut acc = d[0];
                    for (dv, xv) in d[1..].iter().zip(obs.x()) {
                        acc += dv * xv;
                    }
                    acc
                })
                .collect();
            sensitivities.push(s);
        }
        for (slot, s) in sensitivities.iter().enumerate() {
            let mut slope_pos = 0.0;
            let mut slope_neg = 0.0;
            let mut mass = 0.0;
            for (i, &si) in s.iter().enumerate() {
                slope_pos += directional_rate(resid[i], si, t, zero_tol);
                slope_neg += directional_rate(resid[i], -si, t, zero_tol);
                mass += si.abs();
            }
            let scale = mass.max(1e-300);
            for (slope, sign) in [(slope_pos, 1.0), (slope_neg, -1.0)] {
                let normalized = slope / scale;
                if normalized < -1e-10 && best.as_ref().is_none_or(|(b, _, _)| normalized < *b) {
                    best = Some((normalized, slot, sign));
                }
            }
        }
        let Some((_, slot, sign)) = best else {
            end = PivotEnd::Certified;
            break;
        };

        // Weighted-median line search along the chosen edge.
        let s = &sensitivities[slot];
        let mut slope: f64 = s
            .iter()
            .zip(&resid)
            .map(|(&si, &r)| directional_rate(r, sign * si, t, zero_tol))
            .sum();
        let mut breakpoints: Vec<(f64, f64, usize)> = Vec::new();
        for (i, &si) in s.iter().enumerate() {
            let si = sign * si;
            if si.abs() <= 1e-13 || resid[i].abs() <= zero_tol {
                continue;
            }
            let step = resid[i] / si;
            if step > 0.0 && step.is_finite() {
                breakpoints.push((step, si.abs(), i));
            }
        }
        breakpoints.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut entering = None;
        for (_, jump, i) in &breakpoints {
            slope += jump;
            if slope >= 0.0 {
                entering = Some(*i);
                break;
            }
        }
        let Some(entering) = entering else {
            end = PivotEnd::Degenerate;
            break;
        };
        if active.contains(&entering) {
            end = PivotEnd::Degenerate;
            break;
        }
        active[slot] = entering;
        match interpolate_subset(batch, &active) {
            Ok(next) => beta = next,
            Err(_) => {
                end = PivotEnd::Degenerate;
                break;
            }
        }
    }

    let obj = qr_objective(batch, tau, &beta);
    if obj < start_obj {
        (beta, obj, end)
    } else {
        (start, start_obj, end)
    }
}

/// Minimize the check-loss objective on one batch.
///
/// Requires at least `p + 2` observations and a full-column-rank design.
/// The achieved objective matches the exhaustive vertex oracle within
/// 1e-6 relative on instances small enough for the oracle to run.
pub fn solve_qr(
    batch: &[Observation],
    tau: QuantileLevel,
    opts: &QrOptions,
) -> Result<Coefficients> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::BatchTooSmall { need: 2, got: 0 });
    }
    let p = batch[0].dim();
    let p_prime = p + 1;
    for obs in batch {
        if obs.dim() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: obs.dim(),
            });
        }
    }
    if n < p_prime + 1 {
        return Err(Error::BatchTooSmall {
            need: p_prime + 1,
            got: n,
        });
    }
    full_rank_design(batch, p_prime)?;

    // Seed: marginal quantile intercept, zero slopes.
    let mut ys: Vec<f64> = batch.iter().map(Observation::y).collect();
    let seed = seed_quantile(&mut ys, tau.value());
    let mut beta = Coefficients::from_raw(
        std::iter::once(seed)
            .chain(std::iter::repeat_n(0.0, p))
            .collect(),
    );
    let mut best_obj = qr_objective(batch, tau, &beta);

    // Bandwidth ladder, halving from twice the mean absolute residual
    // down to a floor that shrinks like n^{-3/4} of the data scale.
    let mean_abs_resid = batch
        .iter()
        .map(|obs| (obs.y() - beta.predict(obs.x())).abs())
        .sum::<f64>()
        / n as f64;
    let scale = mean_abs_resid.max(1e-8 * (1.0 + seed.abs()));
    let mut h = 2.0 * scale;
    let h_min = h * (n as f64).powf(-0.75).max(1e-3);

    loop {
        if window_count(batch, &beta, h) < p_prime + 2 {
            break;
        }
        for _step in 0..opts.max_stage_steps {
            let stats = compute_local_stats(batch, &beta, Bandwidth::new(h)?, tau);
            if smoothed_score_norm(&stats, &beta) <= opts.score_tol * n as f64 {
                break;
            }
            let Ok(sol) = solve_step_cg(&stats, Some(&beta)) else {
                break;
            };
            let direction: Vec<f64> = sol
                .x
                .iter()
                .zip(beta.as_slice())
                .map(|(new, old)| new - old)
                .collect();
            let mut accepted = false;
            let mut step = 1.0;
            for _bt in 0..=opts.max_backtracks {
                let cand = Coefficients::from_raw(
                    beta.as_slice()
                        .iter()
                        .zip(&direction)
                        .map(|(b, d)| b + step * d)
                        .collect(),
                );
                let obj = qr_objective(batch, tau, &cand);
                if obj < best_obj {
                    let moved = step * norm(&direction);
                    beta = cand;
                    best_obj = obj;
                    accepted = true;
                    if moved <= opts.step_tol * (1.0 + norm(beta.as_slice())) {
                        // Converged at this bandwidth.
                        break;
                    }
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if h <= h_min {
            break;
        }
        h *= 0.5;
    }

    let (beta, obj, end) = pivot_to_vertex(batch, tau, beta, best_obj, opts);
    match end {
        PivotEnd::Exhausted => Err(Error::NoConvergence {
            iterations: opts.max_pivots,
            residual: obj,
        }),
        _ => Ok(beta),
    }
}

/// Exhaustive quantile regression oracle.
///
/// Enumerates every size-`p + 1` interpolation subset and returns the
/// interpolant with the smallest check-loss objective. Guarded to
/// `n <= 30`, `p <= 3` because of the combinatorial cost.
pub fn qr_vertex_oracle(batch: &[Observation], tau: QuantileLevel) -> Result<Coefficients> {
    const MAX_N: usize = 30;
    const MAX_P: usize = 3;
    let n = batch.len();
    if n == 0 {
        return Err(Error::BatchTooSmall { need: 1, got: 0 });
    }
    let p = batch[0].dim();
    if n > MAX_N || p > MAX_P {
        return Err(Error::TooLarge {
            max_n: MAX_N,
            max_p: MAX_P,
        });
    }
    let p_prime = p + 1;
    let mut best: Option<(f64, Coefficients)> = None;
    for subset in Combinations::new(n, p_prime) {
        let Ok(cand) = interpolate_subset(batch, &subset) else {
            continue;
        };
        let obj = qr_objective(batch, tau, &cand);
        let better = match &best {
            None => true,
            Some((b, _)) => obj < *b,
        };
        if better {
            best = Some((obj, cand));
        }
    }
    best.map(|(_, beta)| beta).ok_or(Error::RankDeficient)
}

/// Interpolated sample quantile with index rule `j = floor(tau (m + 1))`
/// and weight `gamma = tau (m + 1) - j`.
///
/// When `tau (m + 1)` is an integer the weight is exactly zero and no
/// interpolation happens. Rejects quantile levels whose index rule
/// leaves `[1, m]`.
pub fn sample_quantile(values: &[f64], tau: QuantileLevel) -> Result<f64> {
    let m = values.len();
    if m == 0 {
        return Err(Error::QuantileOutOfRange {
            tau: tau.value(),
            m: 0,
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObservation);
    }
    let t = tau.value() * (m + 1) as f64;
    // Representation error of tau * (m + 1) must not flip the integer
    // case into an interpolation (or vice versa).
    let nearest = t.round();
    let (j, gamma) = if (t - nearest).abs() < 1e-9 * t.max(1.0) {
        (nearest as i64, 0.0)
    } else {
        (t.floor() as i64, t - t.floor())
    };
    if j < 1 || j as usize > m || (gamma > 0.0 && (j as usize) + 1 > m) {
        return Err(Error::QuantileOutOfRange {
            tau: tau.value(),
            m,
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let j = j as usize;
    if gamma == 0.0 {
        Ok(sorted[j - 1])
    } else {
        Ok((1.0 - gamma) * sorted[j - 1] + gamma * sorted[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn tau(v: f64) -> QuantileLevel {
        QuantileLevel::new(v).unwrap()
    }

    fn obs(y: f64, x: &[f64]) -> Observation {
        Observation::new(y, x.to_vec()).unwrap()
    }

    fn random_batch(n: usize, p: usize, rng: &mut Rng) -> Vec<Observation> {
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..p).map(|_| rng.uniform() * 4.0 - 2.0).collect();
                let y = 1.0 + x.iter().sum::<f64>() + rng.normal();
                Observation::new(y, x).unwrap()
            })
            .collect()
    }

    #[test]
    fn intercept_only_median() {
        let batch = vec![obs(1.0, &[]), obs(2.0, &[]), obs(3.0, &[])];
        let beta = solve_qr(&batch, tau(0.5), &QrOptions::default()).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn zero_noise_recovers_exact_plane() {
        let mut rng = Rng::new(4);
        let truth = [0.5, -1.0, 2.0];
        let batch: Vec<Observation> = (0..25)
            .map(|_| {
                let x: Vec<f64> = (0..2).map(|_| rng.normal()).collect();
                let y = truth[0] + truth[1] * x[0] + truth[2] * x[1];
                Observation::new(y, x).unwrap()
            })
            .collect();
        for t in [0.3, 0.5, 0.7] {
            let beta = solve_qr(&batch, tau(t), &QrOptions::default()).unwrap();
            for (b, t) in beta.as_slice().iter().zip(&truth) {
                assert!((b - t).abs() < 1e-8, "beta {b} vs {t}");
            }
        }
    }

    #[test]
    fn matches_vertex_oracle_on_small_instances() {
        for seed in 0..20u64 {
            let mut rng = Rng::new(seed);
            let batch = random_batch(20, 2, &mut rng);
            for &t in &[0.3, 0.5, 0.7] {
                let solved = solve_qr(&batch, tau(t), &QrOptions::default()).unwrap();
                let oracle = qr_vertex_oracle(&batch, tau(t)).unwrap();
                let o_solved = qr_objective(&batch, tau(t), &solved);
                let o_oracle = qr_objective(&batch, tau(t), &oracle);
                assert!(o_oracle <= o_solved + 1e-9);
                assert!(
                    (o_solved - o_oracle).abs() <= 1e-6 * o_oracle.max(1e-12),
                    "seed {seed} tau {t}: solver {o_solved} vs oracle {o_oracle}"
                );
            }
        }
    }

    #[test]
    fn oracle_interpolates_general_position_points() {
        // n = p' + 1 points in general position: the optimum must
        // interpolate p' of them.
        let mut rng = Rng::new(31);
        let batch = random_batch(4, 2, &mut rng);
        let beta = qr_vertex_oracle(&batch, tau(0.5)).unwrap();
        let interpolated = batch
            .iter()
            .filter(|o| (o.y() - beta.predict(o.x())).abs() < 1e-9)
            .count();
        assert!(interpolated >= 3, "only {interpolated} interpolated");
    }

    #[test]
    fn oracle_handles_duplicates() {
        let base = obs(1.0, &[0.5]);
        let batch = vec![base.clone(), base.clone(), obs(2.0, &[1.5]), obs(0.0, &[-0.5])];
        let beta = qr_vertex_oracle(&batch, tau(0.5)).unwrap();
        let dedup = vec![base, obs(2.0, &[1.5]), obs(0.0, &[-0.5])];
        let beta2 = qr_vertex_oracle(&dedup, tau(0.5)).unwrap();
        // Same objective surface on distinct points; duplicate rows only
        // reweight the loss, and here both land on the same line.
        let o1 = qr_objective(&batch, tau(0.5), &beta);
        let o2 = qr_objective(&batch, tau(0.5), &beta2);
        assert!((o1 - o2).abs() < 1e-12);
    }

    #[test]
    fn oracle_guards_large_instances() {
        let mut rng = Rng::new(8);
        let batch = random_batch(31, 1, &mut rng);
        assert!(matches!(
            qr_vertex_oracle(&batch, tau(0.5)),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn solver_rejects_rank_deficient_design() {
        // Second covariate is a copy of the first.
        let mut rng = Rng::new(14);
        let batch: Vec<Observation> = (0..20)
            .map(|_| {
                let v = rng.normal();
                Observation::new(rng.normal(), vec![v, v]).unwrap()
            })
            .collect();
        assert!(matches!(
            solve_qr(&batch, tau(0.5), &QrOptions::default()),
            Err(Error::RankDeficient)
        ));
    }

    #[test]
    fn solver_rejects_tiny_batches() {
        let batch = vec![obs(1.0, &[1.0]), obs(2.0, &[2.0])];
        assert!(matches!(
            solve_qr(&batch, tau(0.5), &QrOptions::default()),
            Err(Error::BatchTooSmall { .. })
        ));
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = Rng::new(21);
        let batch = random_batch(40, 2, &mut rng);
        let mut reversed = batch.clone();
        reversed.reverse();
        let a = solve_qr(&batch, tau(0.3), &QrOptions::default()).unwrap();
        let b = solve_qr(&reversed, tau(0.3), &QrOptions::default()).unwrap();
        assert!(a.distance(&b) < 1e-8, "distance {}", a.distance(&b));
    }

    #[test]
    fn scale_and_shift_equivariance() {
        let mut rng = Rng::new(22);
        let batch = random_batch(40, 2, &mut rng);
        let beta = solve_qr(&batch, tau(0.3), &QrOptions::default()).unwrap();

        let scaled: Vec<Observation> = batch
            .iter()
            .map(|o| Observation::new(3.0 * o.y(), o.x().to_vec()).unwrap())
            .collect();
        let beta_scaled = solve_qr(&scaled, tau(0.3), &QrOptions::default()).unwrap();
        for (a, b) in beta_scaled.as_slice().iter().zip(beta.as_slice()) {
            assert!((a - 3.0 * b).abs() < 1e-8, "{a} vs 3 * {b}");
        }

        let shifted: Vec<Observation> = batch
            .iter()
            .map(|o| Observation::new(o.y() + 5.0, o.x().to_vec()).unwrap())
            .collect();
        let beta_shifted = solve_qr(&shifted, tau(0.3), &QrOptions::default()).unwrap();
        assert!((beta_shifted[0] - (beta[0] + 5.0)).abs() < 1e-8);
        for i in 1..3 {
            assert!((beta_shifted[i] - beta[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn sample_quantile_reference_cases() {
        let t5 = tau(0.5);
        assert_eq!(
            sample_quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], t5).unwrap(),
            3.0
        );
        assert_eq!(sample_quantile(&[7.0], t5).unwrap(), 7.0);

        // m = 100, tau = 0.1: j = 10, gamma = 0.1.
        let values: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let q = sample_quantile(&values, tau(0.1)).unwrap();
        assert!((q - (0.9 * 10.0 + 0.1 * 11.0)).abs() < 1e-12);
    }

    #[test]
    fn sample_quantile_integer_index_no_interpolation() {
        // tau (m + 1) = 3 exactly despite 0.3 not being representable.
        let values = [9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0];
        let q = sample_quantile(&values, tau(0.3)).unwrap();
        assert_eq!(q, 3.0);
    }

    #[test]
    fn dual_certificate_on_moderate_instances() {
        // Global optimality via linear programming duality: points off
        // the vertex carry dual weight tau (positive residual) or
        // tau - 1 (negative); the active points' weights must solve the
        // balance equation and land inside [tau - 1, tau]. This check is
        // independent of how the solver found the vertex.
        let tau_v = 0.1;
        let t = tau(tau_v);
        for rep in 0..20u64 {
            let mut rng = Rng::new(31_337 + rep);
            let batch: Vec<Observation> = (0..100)
                .map(|_| {
                    let x: Vec<f64> = (0..15).map(|_| rng.uniform()).collect();
                    let y = 1.0 + x.iter().sum::<f64>() + rng.normal();
                    Observation::new(y, x).unwrap()
                })
                .collect();
            let beta = solve_qr(&batch, t, &QrOptions::default()).unwrap();
            let mut active = Vec::new();
            let mut rhs = vec![0.0; 16];
            for (i, obs) in batch.iter().enumerate() {
                let r = obs.y() - beta.predict(obs.x());
                if r.abs() < 1e-8 {
                    active.push(i);
                } else {
                    let a = if r > 0.0 { tau_v } else { tau_v - 1.0 };
                    rhs[0] -= a;
                    for (j, x) in obs.x().iter().enumerate() {
                        rhs[j + 1] -= a * x;
                    }
                }
            }
            assert_eq!(active.len(), 16, "rep {rep}: vertex interpolates p + 1 points");
            let mut za = Mat::zeros(16, 16);
            for (col, &i) in active.iter().enumerate() {
                za.set(0, col, 1.0);
                for (row, x) in batch[i].x().iter().enumerate() {
                    za.set(row + 1, col, *x);
                }
            }
            let weights = lu_solve(&za, &rhs).unwrap();
            for w in &weights {
                assert!(
                    *w >= tau_v - 1.0 - 1e-7 && *w <= tau_v + 1e-7,
                    "rep {rep}: dual weight {w} outside [tau-1, tau]"
                );
            }
        }
    }

    #[test]
    fn sample_quantile_rejects_extreme_levels() {
        let values = [1.0, 2.0, 3.0];
        assert!(matches!(
            sample_quantile(&values, tau(0.01)),
            Err(Error::QuantileOutOfRange { .. })
        ));
        assert!(matches!(
            sample_quantile(&values, tau(0.99)),
            Err(Error::QuantileOutOfRange { .. })
        ));
        assert!(matches!(
            sample_quantile(&[], tau(0.5)),
            Err(Error::QuantileOutOfRange { .. })
        ));
    }
}
