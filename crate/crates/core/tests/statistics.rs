use std::sync::Arc;

use latent_langevin::flow::{self, MixtureSpec};
use latent_langevin::metrics;
use latent_langevin::oracle::{self, OracleMethod, TargetDensity};
use latent_langevin::reward::{DifferentiableReward, Generator, PullbackReward, RewardSpec};
use latent_langevin::sampler::{Ensemble, SamplerConfig};
use ndarray::{Array2, Axis};

struct Zero;

impl DifferentiableReward for Zero {
    fn value(&self, _: &[f64]) -> f64 {
        0.0
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }
}

fn zero_reward() -> PullbackReward {
    PullbackReward::new(RewardSpec::Custom(Arc::new(Zero)), Generator::Identity { dim: 2 }).unwrap()
}

fn quadratic(c: f64) -> PullbackReward {
    PullbackReward::new(RewardSpec::Quadratic { c }, Generator::Identity { dim: 2 }).unwrap()
}

fn coordinate_variances(points: &Array2<f64>) -> Vec<f64> {
    points.var_axis(Axis(0), 0.0).to_vec()
}

fn shifted_normal(seed: u64, n: usize, shift: f64) -> Array2<f64> {
    let mut x = flow::sample_prior(seed, n, 2);
    x.column_mut(0).mapv_inplace(|v| v + shift);
    x
}

#[test]
fn importance_oracle_matches_closed_form_variance() {
    for (alpha, c) in [(1.0, 1.0), (2.0, 1.0), (1.0, 4.0)] {
        let td = TargetDensity::new(alpha, quadratic(c)).unwrap();
        let s = oracle::sample_q_star(&td, 11, 10_000).unwrap();
        assert_eq!(s.method, OracleMethod::ImportanceResampled);
        assert!(s.effective_sample_size <= s.points.nrows() as f64);
        let target = alpha / (alpha + c);
        for v in coordinate_variances(&s.points) {
            assert!((v - target).abs() <= 0.05 * target, "alpha {alpha}, c {c}: variance {v} vs {target}");
        }
        if (alpha, c) == (1.0, 1.0) {
            assert!(coordinate_variances(&s.points).iter().all(|v| (v - 0.5).abs() <= 0.03));
        }
    }
}

#[test]
fn rejection_oracle_matches_closed_form_variance() {
    let td = TargetDensity::new(1.0, quadratic(4.0)).unwrap();
    let s = oracle::sample_q_star_rejection(&td, 12, 10_000, 0.0).unwrap();
    for v in coordinate_variances(&s.points) {
        assert!((v - 0.2).abs() <= 0.01, "{v}");
    }
}

#[test]
fn degenerate_weights_raise_the_ess_error() {
    let td = TargetDensity::new(1e-3, quadratic(1.0)).unwrap();
    let err = oracle::sample_q_star(&td, 0, 100).unwrap_err();
    assert!(err.is_numerical(), "{err}");
}

#[test]
fn zero_reward_oracle_is_the_prior() {
    let td = TargetDensity::new(1.0, zero_reward()).unwrap();
    let s = oracle::sample_q_star(&td, 3, 1000).unwrap();
    let prior = flow::sample_prior(4, 1000, 2);
    assert!(oracle::stationarity_test(s.points.view(), prior.view(), 5).unwrap().passed);
    for x in [[0.0, 0.0], [1.5, -2.0], [-3.0, 0.25]] {
        assert!(oracle::drift_identity_residual(&td, &x).unwrap() <= 1e-6);
        assert_eq!(oracle::log_q_star_unnorm(&td, &x).unwrap(), -0.5 * (x[0] * x[0] + x[1] * x[1]));
    }
}

#[test]
fn large_alpha_approaches_the_prior_density() {
    let pr = PullbackReward::new(RewardSpec::ToyMixture, Generator::Identity { dim: 2 }).unwrap();
    for alpha in [10.0, 1e3, 1e6] {
        let td = TargetDensity::new(alpha, pr.clone()).unwrap();
        for x in [[0.0, 0.0], [4.0, 0.0], [-2.0, 1.0]] {
            let prior = -0.5 * (x[0] * x[0] + x[1] * x[1]);
            let gap = (oracle::log_q_star_unnorm(&td, &x).unwrap() - prior).abs();
            assert!(gap <= pr.value(&x).unwrap().abs() / alpha + 1e-15);
        }
    }
}

#[test]
fn two_sample_test_is_calibrated_under_the_null() {
    let trials = 100;
    let passes = (0..trials)
        .filter(|&i| {
            let a = flow::sample_prior(1000 + i, 100, 2);
            let b = flow::sample_prior(5000 + i, 100, 2);
            oracle::stationarity_test(a.view(), b.view(), i).unwrap().passed
        })
        .count();
    // Expected 99 passes; 95 is below the binomial 0.5% quantile.
    assert!(passes >= 95, "{passes} of {trials} null trials passed");
}

#[test]
fn two_sample_test_detects_a_shift() {
    let a = flow::sample_prior(1, 2000, 2);
    let b = shifted_normal(2, 2000, 3.0);
    let r = oracle::stationarity_test(a.view(), b.view(), 3).unwrap();
    assert!(!r.passed);
    assert!(r.p_value <= 0.01);
}

#[test]
fn mmd_null_and_power() {
    let n = 2000;
    let null: Vec<f64> = (0..8)
        .map(|i| {
            let a = flow::sample_prior(100 + 2 * i, n, 2);
            let b = flow::sample_prior(101 + 2 * i, n, 2);
            metrics::mmd_rbf(a.view(), b.view(), None).unwrap().raw
        })
        .collect();
    let mean = null.iter().sum::<f64>() / null.len() as f64;
    let se = (null.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (null.len() - 1) as f64).sqrt();
    let a = flow::sample_prior(7, n, 2);
    let b = flow::sample_prior(8, n, 2);
    let fresh = metrics::mmd_rbf(a.view(), b.view(), None).unwrap();
    assert!(fresh.raw.abs() <= 3.0 * se, "null estimate {} vs se {se}", fresh.raw);
    let shifted = shifted_normal(9, n, 3.0);
    let far = metrics::mmd_rbf(a.view(), shifted.view(), None).unwrap();
    assert!(far.value > 10.0 * se, "{} vs se {se}", far.value);
}

#[test]
fn mixture_mass_lies_within_three_sigma() {
    let spec = MixtureSpec::default();
    let x = flow::sample_mixture(&spec, 5, 10_000).unwrap();
    let radii: Vec<f64> = spec.stddevs.iter().map(|s| 3.0 * s).collect();
    let p = metrics::mode_proportions(x.view(), &spec.means, &radii).unwrap();
    // A 2D Gaussian leaves exp(-4.5) = 0.0111 of its mass beyond 3 sigma.
    let tail = (-4.5f64).exp();
    assert!(p.leftover <= tail + 3.0 * (tail / 10_000.0).sqrt(), "{p:?}");
    assert!((p.fractions[0] - 0.5).abs() < 0.02);
}

/// With `R = -c|x|^2/2` each coordinate follows the AR(1) recursion
/// `x' = a x + sqrt(gamma) e` with `a = sqrt(1 - gamma) - gamma eta c`, whose
/// stationary variance is `gamma / (1 - a^2)`.
#[test]
fn discrete_langevin_matches_its_ar1_variance() {
    let (gamma, eta, c) = (0.3, 0.5, 1.0);
    let a = (1.0f64 - gamma).sqrt() - gamma * eta * c;
    let exact = gamma / (1.0 - a * a);
    assert!((exact - 0.567_646_4).abs() < 1e-7);
    let pr = quadratic(c);
    let cfg = SamplerConfig { gamma, eta, seed: 21, ..SamplerConfig::default() };
    let mut ens = Ensemble::new(&pr, &cfg, 2000).unwrap();
    let (mut acc, mut count) = (0.0, 0usize);
    for step in 0..400 {
        ens.step().unwrap();
        if step >= 100 {
            acc += ens.positions().mapv(|v| v * v).sum();
            count += ens.positions().len();
        }
    }
    let var = acc / count as f64;
    assert!((var - exact).abs() <= 0.02 * exact, "{var} vs {exact}");
}

#[test]
fn injected_noise_is_fresh_each_iteration() {
    let gamma: f64 = 0.3;
    let cfg = SamplerConfig { gamma, seed: 8, ..SamplerConfig::default() };
    let pr = zero_reward();
    let mut ens = Ensemble::new(&pr, &cfg, 1).unwrap();
    let steps = 4000;
    let mut noise = Vec::with_capacity(steps);
    for _ in 0..steps {
        let before = ens.positions().row(0)[0];
        ens.step().unwrap();
        let after = ens.positions().row(0)[0];
        noise.push((after - (1.0 - gamma).sqrt() * before) / gamma.sqrt());
    }
    let mean = noise.iter().sum::<f64>() / steps as f64;
    let var = noise.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / steps as f64;
    let lag1 = noise.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / ((steps - 1) as f64 * var);
    assert!(lag1.abs() <= 3.0 / (steps as f64).sqrt(), "lag-1 autocorrelation {lag1}");
    assert!((var - 1.0).abs() < 0.1);
}
