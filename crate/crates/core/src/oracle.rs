//! Ground truth for the reward-tilted target
//! `q*(x) ∝ N(x; 0, I) exp(R(x) / alpha)` and a two-sample test for
//! checking sampler output against it.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::metrics;
use crate::reward::PullbackReward;
use crate::rng::{self, streams};

/// Proposals drawn per requested point by [`sample_q_star`].
pub const DEFAULT_PROPOSALS_PER_SAMPLE: usize = 20;
/// Importance resampling fails below this fraction of the proposal count.
pub const MIN_ESS_FRACTION: f64 = 0.01;
/// Rejection sampling gives up after this many proposals per requested point.
pub const MAX_REJECTION_PROPOSALS_PER_SAMPLE: usize = 10_000;
/// Relative step of the central differences used for score checks.
pub const FD_RELATIVE_STEP: f64 = 1e-4;
/// Coordinates smaller than this use it in place of `|x_i|` when sizing the step.
pub const FD_MAGNITUDE_FLOOR: f64 = 1e-3;
pub const PERMUTATIONS: usize = 200;
pub const SIGNIFICANCE: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct TargetDensity {
    pub alpha: f64,
    pub pullback: PullbackReward,
}

impl TargetDensity {
    pub fn new(alpha: f64, pullback: PullbackReward) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { alpha, pullback })
    }

    pub fn dim(&self) -> usize {
        self.pullback.dim()
    }
}

/// `-|x|^2 / 2 + R(x) / alpha`, dropping the normalizer.
pub fn log_q_star_unnorm(td: &TargetDensity, x: &[f64]) -> Result<f64> {
    let r = td.pullback.value(x)?;
    Ok(-0.5 * x.iter().map(|v| v * v).sum::<f64>() + r / td.alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    ImportanceResampled,
    Rejection,
}

#[derive(Debug, Clone)]
pub struct OracleSamples {
    pub points: Array2<f64>,
    pub method: OracleMethod,
    /// Effective size of the returned set, at most its length.
    pub effective_sample_size: f64,
    /// Kish effective size of the proposal weights (importance resampling) or
    /// the number of accepted draws (rejection).
    pub proposal_ess: f64,
    pub proposals: usize,
}

/// Self-normalized importance resampling with `20 n` prior proposals.
pub fn sample_q_star(td: &TargetDensity, seed: u64, n: usize) -> Result<OracleSamples> {
    sample_q_star_importance(td, seed, n, DEFAULT_PROPOSALS_PER_SAMPLE * n.max(1))
}

/// Draw `n_proposals` prior points, weight them by `exp(R / alpha)` and
/// resample `n` of them multinomially.
pub fn sample_q_star_importance(td: &TargetDensity, seed: u64, n: usize, n_proposals: usize) -> Result<OracleSamples> {
    if n_proposals == 0 {
        return Err(Error::Config("importance resampling needs at least one proposal".into()));
    }
    let mut rng = rng::stream(seed, streams::ORACLE);
    let proposals = rng::standard_normal_matrix(&mut rng, n_proposals, td.dim());
    let rewards = td.pullback.value_batch(proposals.view())?;
    let logw: Vec<f64> = rewards.iter().map(|r| r / td.alpha).collect();
    if logw.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numerical("non-finite importance weight".into()));
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    let ess = sum * sum / w.iter().map(|w| w * w).sum::<f64>();
    let required = MIN_ESS_FRACTION * n_proposals as f64;
    if ess < required {
        return Err(Error::OracleDegenerate { ess, required, proposals: n_proposals });
    }
    let mut cumulative = Vec::with_capacity(w.len());
    let mut acc = 0.0;
    for wi in &w {
        acc += wi / sum;
        cumulative.push(acc);
    }
    let picks: Vec<usize> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            cumulative.partition_point(|c| *c <= u).min(n_proposals - 1)
        })
        .collect();
    Ok(OracleSamples {
        points: proposals.select(Axis(0), &picks),
        method: OracleMethod::ImportanceResampled,
        effective_sample_size: ess.min(n as f64),
        proposal_ess: ess,
        proposals: n_proposals,
    })
}

/// Exact draws by rejection from the prior, accepting with probability
/// `exp((R(x) - bound) / alpha)`. `bound` must dominate the reward.
pub fn sample_q_star_rejection(td: &TargetDensity, seed: u64, n: usize, bound: f64) -> Result<OracleSamples> {
    let d = td.dim();
    let mut rng = rng::stream(seed, streams::ORACLE);
    let batch = n.clamp(256, 1 << 16);
    let limit = MAX_REJECTION_PROPOSALS_PER_SAMPLE * n.max(1);
    let mut accepted: Vec<f64> = Vec::with_capacity(n * d);
    let mut proposals = 0usize;
    while accepted.len() < n * d {
        if proposals >= limit {
            let got = accepted.len() / d;
            return Err(Error::OracleDegenerate { ess: got as f64, required: n as f64, proposals });
        }
        let xs = rng::standard_normal_matrix(&mut rng, batch, d);
        let rewards = td.pullback.value_batch(xs.view())?;
        for (x, r) in xs.rows().into_iter().zip(rewards) {
            proposals += 1;
            if !r.is_finite() {
                return Err(Error::Numerical(format!("non-finite reward {r} at proposal {proposals}")));
            }
            if r > bound {
                return Err(Error::Numerical(format!("reward {r} exceeds the declared bound {bound}")));
            }
            let u: f64 = rng.random();
            if u < ((r - bound) / td.alpha).exp() && accepted.len() < n * d {
                accepted.extend(x.iter());
            }
        }
    }
    Ok(OracleSamples {
        points: Array2::from_shape_vec((n, d), accepted).expect("n rows of d"),
        method: OracleMethod::Rejection,
        effective_sample_size: n as f64,
        proposal_ess: n as f64,
        proposals,
    })
}

/// Exact rejection sampling when the reward declares an upper bound,
/// importance resampling otherwise.
pub fn sample_q_star_best(td: &TargetDensity, seed: u64, n: usize) -> Result<OracleSamples> {
    match td.pullback.reward().upper_bound() {
        Some(b) => sample_q_star_rejection(td, seed, n, b),
        None => sample_q_star(td, seed, n),
    }
}

/// Central-difference gradient with per-coordinate step
/// `FD_RELATIVE_STEP * max(|x_i|, FD_MAGNITUDE_FLOOR)`.
pub fn central_difference<F>(f: F, x: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = FD_RELATIVE_STEP * x[i].abs().max(FD_MAGNITUDE_FLOOR);
            probe[i] = x[i] + h;
            let up = f(&probe)?;
            probe[i] = x[i] - h;
            let down = f(&probe)?;
            probe[i] = x[i];
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Finite-difference score of `q*`.
pub fn score_fd(td: &TargetDensity, x: &[f64]) -> Result<Vec<f64>> {
    central_difference(|p| log_q_star_unnorm(td, p), x)
}

/// `|score/2 - (-x/2 + grad R / (2 alpha))|` with the score from finite
/// differences and the drift from the analytic reward gradient.
pub fn drift_identity_residual(td: &TargetDensity, x: &[f64]) -> Result<f64> {
    let score = score_fd(td, x)?;
    let g = td.pullback.gradient(x)?;
    let r2: f64 = score
        .iter()
        .zip(&g)
        .zip(x)
        .map(|((s, g), x)| {
            let diff = 0.5 * s - (-0.5 * x + g / (2.0 * td.alpha));
            diff * diff
        })
        .sum();
    Ok(r2.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoSampleResult {
    /// Scaled energy statistic `nm/(n+m) * E`.
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
    pub passed: bool,
}

/// Energy distance `2 E|X-Y| - E|X-X'| - E|Y-Y'|` (V-statistic form).
pub fn energy_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    let n = a.nrows();
    let d = pairwise_distances(a, b)?;
    let labels: Vec<bool> = (0..d.nrows()).map(|i| i < n).collect();
    let row_sums: Vec<f64> = d.rows().into_iter().map(|r| r.sum()).collect();
    Ok(energy_from_labels(&d, &row_sums, &labels, n))
}

fn pairwise_distances(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Usage("two-sample test needs non-empty sets".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Usage(format!("sample dimensions differ: {} vs {}", a.ncols(), b.ncols())));
    }
    let mut d = metrics::pairwise_sq_distances(metrics::pooled(a, b).view());
    d.mapv_inplace(f64::sqrt);
    Ok(d)
}

fn energy_from_labels(d: &Array2<f64>, row_sums: &[f64], in_a: &[bool], n: usize) -> f64 {
    let total = d.nrows();
    let m = total - n;
    let mut s_aa = 0.0;
    let mut s_a_all = 0.0;
    for (i, row) in d.rows().into_iter().enumerate() {
        if !in_a[i] {
            continue;
        }
        s_a_all += row_sums[i];
        s_aa += row.iter().zip(in_a).filter(|(_, a)| **a).map(|(v, _)| v).sum::<f64>();
    }
    let s_total: f64 = row_sums.iter().sum();
    let s_ab = s_a_all - s_aa;
    let s_bb = s_total - 2.0 * s_ab - s_aa;
    let (nf, mf) = (n as f64, m as f64);
    2.0 * s_ab / (nf * mf) - s_aa / (nf * nf) - s_bb / (mf * mf)
}

/// Energy-distance permutation test with [`PERMUTATIONS`] relabelings;
/// passes when `p > SIGNIFICANCE`.
pub fn stationarity_test(a: ArrayView2<f64>, b: ArrayView2<f64>, seed: u64) -> Result<TwoSampleResult> {
    let d = pairwise_distances(a, b)?;
    let (n, m) = (a.nrows(), b.nrows());
    let row_sums: Vec<f64> = d.rows().into_iter().map(|r| r.sum()).collect();
    let scale = (n * m) as f64 / (n + m) as f64;
    let mut labels: Vec<bool> = (0..n + m).map(|i| i < n).collect();
    let observed = scale * energy_from_labels(&d, &row_sums, &labels, n);
    let mut rng = rng::stream(seed, streams::PERMUTATION);
    let mut exceed = 0usize;
    for _ in 0..PERMUTATIONS {
        labels.shuffle(&mut rng);
        if scale * energy_from_labels(&d, &row_sums, &labels, n) >= observed {
            exceed += 1;
        }
    }
    let p_value = (1 + exceed) as f64 / (1 + PERMUTATIONS) as f64;
    Ok(TwoSampleResult { statistic: observed, p_value, permutations: PERMUTATIONS, passed: p_value > SIGNIFICANCE })
}
