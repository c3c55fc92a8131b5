//! Self-contained correctness suite: gradient oracles, monitor values,
//! degenerate-case equivalence, the drift identity, the closed-form target
//! and Langevin stationarity on a quadratic reward.
//!
//! Nothing here needs a trained model; pullback checks run through a freshly
//! initialized velocity network.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use ndarray::Array2;

use crate::diffnet::{self, Architecture, NetworkParams};
use crate::error::Result;
use crate::flow::{self, FlowModel, MixtureSpec};
use crate::oracle::{self, TargetDensity};
use crate::reward::{
    self, Angle, CategoricalAngleDist, Generator, ObjectOrientation, OrientationTarget, PullbackReward, RewardSpec,
};
use crate::rng::{self, streams};
use crate::sampler::{self, Ensemble, MonitorParams, SamplerConfig, SamplerMode};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ValidateOptions {
    /// Replace the Langevin update with one whose noise is inflated by
    /// `sqrt(2)`. The stationarity check must then fail.
    pub corrupt_update: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One `PASS`/`FAIL` line per check.
    pub fn lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| format!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail))
            .collect()
    }
}

pub const CHECK_NAMES: [&str; 9] = [
    "reward_gradient",
    "pullback_gradient",
    "network_parameter_gradient",
    "monitor_values",
    "degenerate_equivalence",
    "drift_identity",
    "oracle_closed_form",
    "langevin_stationarity",
    "orientation_reward",
];

const SEED: u64 = 20_250_101;
const PROBES: usize = 100;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / scale.max(f64::MIN_POSITIVE)
}

fn probes(n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut r = rng::stream(SEED, streams::EVAL);
    (0..n).map(|_| rng::standard_normal_vec(&mut r, d)).collect()
}

fn random_flow() -> Result<FlowModel> {
    Ok(FlowModel::from_params(NetworkParams::init(Architecture::default(), SEED, 1.0)?))
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

/// Largest relative error of the analytic toy-reward gradient against
/// central differences over 100 probes drawn from the toy data mixture.
/// Far from both bumps the reward is `-1` up to `1e-10`, where differences
/// measure only cancellation.
pub fn reward_gradient_error() -> Result<f64> {
    let spec = RewardSpec::ToyMixture;
    let xs = flow::sample_mixture(&MixtureSpec::default(), SEED, PROBES)?;
    xs.rows().into_iter().map(|r| r.to_vec()).try_fold(0.0f64, |worst, x| {
        let fd = oracle::central_difference(|p| Ok(spec.value(p)), &x)?;
        Ok(worst.max(rel_err(&fd, &spec.gradient(&x))))
    })
}

/// Largest relative error of the pullback gradient against central
/// differences over 100 probes.
pub fn pullback_gradient_error(pr: &PullbackReward) -> Result<f64> {
    probes(PROBES, pr.dim()).iter().try_fold(0.0f64, |worst, x| {
        let fd = oracle::central_difference(|p| pr.value(p), x)?;
        Ok(worst.max(rel_err(&fd, &pr.gradient(x)?)))
    })
}

fn network_parameter_gradient() -> Result<CheckResult> {
    let arch = Architecture::velocity(2, 16, 2);
    let params = NetworkParams::init(arch, SEED, 1.0)?;
    let x = [0.3, -0.7];
    let t = 0.4;
    let cot = [1.0, -2.0];
    let objective = |p: &NetworkParams| -> Result<f64> {
        let (v, _) = diffnet::forward(p, &x, t)?;
        Ok(v.iter().zip(&cot).map(|(v, c)| v * c).sum())
    };
    let (_, tape) = diffnet::forward(&params, &x, t)?;
    let analytic: Vec<f64> = diffnet::vjp_params(&params, &tape, &cot)?.values().collect();
    let flat: Vec<f64> = params.values().collect();
    let rebuild = |vals: &[f64]| {
        let mut p = params.clone();
        p.values_mut().zip(vals).for_each(|(d, s)| *d = *s);
        p
    };
    let fd = oracle::central_difference(|vals| objective(&rebuild(vals)), &flat)?;
    let err = rel_err(&fd, &analytic);
    Ok(check("network_parameter_gradient", err <= 1e-6, format!("relative error {err:.3e} over {} parameters", flat.len())))
}

fn monitor_values() -> CheckResult {
    let mp = MonitorParams::default();
    let g0 = mp.value(0.0);
    let g2 = mp.value(-2.0);
    let mut r = rng::stream(SEED, streams::EVAL);
    let clamped = (0..1000).all(|_| {
        let v = 10.0 * rng::standard_normal_vec(&mut r, 1)[0];
        let g = mp.value(v);
        (mp.s_min..=mp.s_max).contains(&g)
    });
    let passed = g0 == 1.0 / 3.0 && (g2 - 0.870).abs() <= 1e-3 && clamped;
    check("monitor_values", passed, format!("G(0) = {g0}, G(-2) = {g2:.6}, clamped on 1000 draws: {clamped}"))
}

fn degenerate_equivalence() -> Result<CheckResult> {
    let pr = PullbackReward::new(RewardSpec::ToyMixture, Generator::Identity { dim: 2 })?;
    let base = SamplerConfig { iterations: 30, seed: SEED, ..SamplerConfig::default() };
    let lang = sampler::run_chains(&pr, &base, 20, None)?;
    let adap_cfg = SamplerConfig { mode: SamplerMode::AdaptiveLangevin, monitor: MonitorParams::constant_one(), ..base };
    let adap = sampler::run_chains(&pr, &adap_cfg, 20, None)?;
    let same = lang == adap;
    Ok(check("degenerate_equivalence", same, format!("20 chains x 30 steps bitwise identical: {same}")))
}

fn drift_identity() -> Result<CheckResult> {
    let quad = TargetDensity::new(1.0, PullbackReward::new(RewardSpec::Quadratic { c: 1.0 }, Generator::Identity { dim: 2 })?)?;
    let toy = TargetDensity::new(0.625, PullbackReward::new(RewardSpec::ToyMixture, random_flow()?.into())?)?;
    let mut worst = oracle::drift_identity_residual(&quad, &[1.0, 1.0])?;
    for x in probes(PROBES, 2) {
        worst = worst.max(oracle::drift_identity_residual(&toy, &x)?);
    }
    Ok(check("drift_identity", worst <= 1e-4, format!("max residual {worst:.3e}")))
}

fn oracle_closed_form() -> Result<CheckResult> {
    let td = TargetDensity::new(1.0, PullbackReward::new(RewardSpec::Quadratic { c: 1.0 }, Generator::Identity { dim: 2 })?)?;
    let s = oracle::sample_q_star(&td, SEED, 10_000)?;
    let vars: Vec<f64> = (0..2).map(|k| s.points.column(k).mapv(|v| v * v).mean().unwrap_or(f64::NAN)).collect();
    let passed = vars.iter().all(|v| (v - 0.5).abs() <= 0.03);
    Ok(check("oracle_closed_form", passed, format!("per-coordinate variance {vars:.4?}, expected 0.5")))
}

/// Langevin on `R = -|x|^2/2` with `alpha = 1` and small steps: the long-run
/// variance must match `alpha / (alpha + c) = 1/2` and the final states must
/// pass the two-sample test against exact Gaussian draws.
fn langevin_stationarity(opts: ValidateOptions) -> Result<CheckResult> {
    const CHAINS: usize = 2000;
    const STEPS: usize = 1500;
    const BURN_IN: usize = 1000;
    let pr = PullbackReward::new(RewardSpec::Quadratic { c: 1.0 }, Generator::Identity { dim: 2 })?;
    let cfg = SamplerConfig { gamma: 0.01, eta: 0.5, iterations: STEPS, seed: SEED, ..SamplerConfig::default() };
    let mut xs = {
        let ens = Ensemble::new(&pr, &cfg, CHAINS)?;
        ens.positions().clone()
    };
    let mut noise_rng = rng::stream(SEED, streams::CHAIN_BASE);
    let mut second_moment = 0.0;
    let mut count = 0usize;
    for step in 0..STEPS {
        let (rewards, grads) = pr.value_and_gradient_batch(xs.view())?;
        for (c, mut row) in xs.rows_mut().into_iter().enumerate() {
            let mut noise = rng::standard_normal_vec(&mut noise_rng, 2);
            if opts.corrupt_update {
                noise.iter_mut().for_each(|e| *e *= SQRT_2);
            }
            let x = row.to_vec();
            let g = grads.row(c).to_vec();
            let next = sampler::apply_update(&cfg, &x, rewards[c], &g, &noise)?;
            row.assign(&ndarray::aview1(&next));
        }
        if step >= BURN_IN {
            second_moment += xs.mapv(|v| v * v).sum();
            count += xs.len();
        }
    }
    let var = second_moment / count as f64;
    let mut exact_rng = rng::stream(SEED, streams::ORACLE);
    let exact: Array2<f64> = rng::standard_normal_matrix(&mut exact_rng, CHAINS, 2).mapv(|v| v * 0.5f64.sqrt());
    let test = oracle::stationarity_test(xs.view(), exact.view(), SEED)?;
    let var_ok = (var - 0.5).abs() <= 0.05 * 0.5;
    Ok(check(
        "langevin_stationarity",
        var_ok && test.passed,
        format!("variance {var:.4} (target 0.5, 5%), two-sample p = {:.4}", test.p_value),
    ))
}

fn orientation_reward_suite() -> Result<CheckResult> {
    let targets = [OrientationTarget::new(30.0, 80.0, 350.0), OrientationTarget::new(200.0, 10.0, 5.0)];
    let exact: Vec<ObjectOrientation> = targets.iter().map(|t| t.distributions()).collect::<Result<_>>()?;
    let zero = reward::orientation_reward(&exact, &targets, &Angle::ALL)?;
    let mut shifted = exact.clone();
    shifted[1].insert(Angle::Azimuth, reward::discretize_gaussian(210.0, 20.0, 360, true)?);
    let negative = reward::orientation_reward(&shifted, &targets, &Angle::ALL)?;
    let hand = two_object_reward()?;
    let passed = zero == 0.0 && negative < 0.0 && (hand + 0.3).abs() <= 1e-9;
    Ok(check(
        "orientation_reward",
        passed,
        format!("matched {zero}, mismatched {negative:.4}, two-object hand case {hand:.12}"),
    ))
}

/// Two objects whose KL terms total 0.4 and 0.2, so the reward is -0.3.
/// With `p = (1, 0)` and `q = (e^-k, 1 - e^-k)`, `KL(p || q) = k`.
pub fn two_object_reward() -> Result<f64> {
    let point = || CategoricalAngleDist::new(vec![1.0, 0.0], false);
    let tilted = |k: f64| CategoricalAngleDist::new(vec![(-k).exp(), 1.0 - (-k).exp()], false);
    let mut p1 = ObjectOrientation::default();
    let mut q1 = ObjectOrientation::default();
    p1.insert(Angle::Azimuth, point()?);
    q1.insert(Angle::Azimuth, tilted(0.25)?);
    p1.insert(Angle::Polar, point()?);
    q1.insert(Angle::Polar, tilted(0.15)?);
    let mut p2 = ObjectOrientation::default();
    let mut q2 = ObjectOrientation::default();
    p2.insert(Angle::Azimuth, point()?);
    q2.insert(Angle::Azimuth, tilted(0.2)?);
    p2.insert(Angle::Polar, point()?);
    q2.insert(Angle::Polar, point()?);
    reward::orientation_reward_against(&[p1, p2], &[q1, q2], &[Angle::Azimuth, Angle::Polar])
}

pub fn run(opts: ValidateOptions) -> Result<ValidationReport> {
    let toy_flow = PullbackReward::new(RewardSpec::ToyMixture, Generator::Flow(Arc::new(random_flow()?)))?;
    let reward_err = reward_gradient_error()?;
    let pullback_err = pullback_gradient_error(&toy_flow)?;
    let checks = vec![
        check("reward_gradient", reward_err <= 1e-6, format!("max relative error {reward_err:.3e} over {PROBES} probes")),
        check(
            "pullback_gradient",
            pullback_err <= 1e-4,
            format!("max relative error {pullback_err:.3e} over {PROBES} probes"),
        ),
        network_parameter_gradient()?,
        monitor_values(),
        degenerate_equivalence()?,
        drift_identity()?,
        oracle_closed_form()?,
        langevin_stationarity(opts)?,
        orientation_reward_suite()?,
    ];
    debug_assert_eq!(checks.iter().map(|c| c.name).collect::<Vec<_>>(), CHECK_NAMES);
    Ok(ValidationReport { checks })
}
