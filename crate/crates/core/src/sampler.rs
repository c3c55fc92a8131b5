//! Latent-space search procedures.
//!
//! Every procedure repeatedly evaluates the pullback reward `R(x)` and its
//! gradient at the current latent, records the value, and moves the latent:
//!
//! | mode               | update                                                               |
//! |--------------------|----------------------------------------------------------------------|
//! | `GradientAscent`   | `x + eta g`                                                          |
//! | `NormRegAscent`    | `x + eta g + eta2 ((d-1)/|x|^2 - 1) x`                               |
//! | `Langevin`         | `sqrt(1-gamma) x + gamma eta g + sqrt(gamma) eps`                    |
//! | `AdaptiveLangevin` | as `Langevin` with `gamma_x = G(R) gamma`, plus `gamma_x/2 grad log G` |
//! | `NaiveAdaptive`    | `AdaptiveLangevin` without the `grad log G` correction                |
//!
//! `G` is the reward-adaptive monitor ([`MonitorParams`]). The correction term
//! reuses the reward gradient: `grad log G = G'(R) / G(R) * g`.
//!
//! The chain driver ([`run_chain`]) tracks the best reward seen and its latent,
//! and scores the final iterate after the loop so every produced latent is a
//! candidate. One reward-and-gradient evaluation counts as one NFE.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::reward::PullbackReward;
use crate::rng::{self, streams, Rng};

/// Reward-adaptive step-size monitor
/// `G(R) = s_min - tanh(k R) (s_max - s_min)`, clamped to `[s_min, s_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorParams {
    pub s_min: f64,
    pub s_max: f64,
    pub k: f64,
}

impl Default for MonitorParams {
    fn default() -> Self {
        Self { s_min: 1.0 / 3.0, s_max: 4.0 / 3.0, k: 0.3 }
    }
}

impl MonitorParams {
    /// A monitor that is identically one; adaptive Langevin then coincides
    /// with plain Langevin.
    pub fn constant_one() -> Self {
        Self { s_min: 1.0, s_max: 1.0, k: 0.3 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.s_min > 0.0 && self.s_min <= self.s_max && self.s_max.is_finite() && self.k > 0.0 && self.k.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("monitor needs 0 < s_min <= s_max and k > 0, got {self:?}")))
        }
    }

    pub fn value(&self, reward: f64) -> f64 {
        let raw = self.s_min - (self.k * reward).tanh() * (self.s_max - self.s_min);
        raw.clamp(self.s_min, self.s_max)
    }

    /// `d log G / dR`; zero where the clamp is active (positive rewards).
    pub fn log_derivative(&self, reward: f64) -> f64 {
        if reward > 0.0 {
            return 0.0;
        }
        let th = (self.k * reward).tanh();
        let dg = -self.k * (1.0 - th * th) * (self.s_max - self.s_min);
        dg / self.value(reward)
    }
}

pub fn monitor_value(mp: &MonitorParams, reward: f64) -> f64 {
    mp.value(reward)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplerMode {
    GradientAscent,
    NormRegAscent,
    Langevin,
    AdaptiveLangevin,
    NaiveAdaptive,
}

impl SamplerMode {
    pub const ALL: [SamplerMode; 5] = [
        SamplerMode::GradientAscent,
        SamplerMode::NormRegAscent,
        SamplerMode::Langevin,
        SamplerMode::AdaptiveLangevin,
        SamplerMode::NaiveAdaptive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerMode::GradientAscent => "gradient_ascent",
            SamplerMode::NormRegAscent => "norm_reg_ascent",
            SamplerMode::Langevin => "langevin",
            SamplerMode::AdaptiveLangevin => "adaptive_langevin",
            SamplerMode::NaiveAdaptive => "naive_adaptive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, SamplerMode::Langevin | SamplerMode::AdaptiveLangevin | SamplerMode::NaiveAdaptive)
    }

    fn is_rescaled(self) -> bool {
        matches!(self, SamplerMode::AdaptiveLangevin | SamplerMode::NaiveAdaptive)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    /// Number of updates `M`. The chain scores `M + 1` latents.
    pub iterations: usize,
    pub gamma: f64,
    /// Reward scale; equals `1 / (2 alpha)` for a target with regularization `alpha`.
    pub eta: f64,
    pub monitor: MonitorParams,
    /// Weight of the chi-radius regularizer (norm-regularized ascent only).
    pub eta2: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: SamplerMode::Langevin,
            iterations: 50,
            gamma: 0.3,
            eta: 0.8,
            monitor: MonitorParams::default(),
            eta2: 0.1,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.eta2 >= 0.0 && self.eta2.is_finite()) {
            return Err(Error::Config(format!("eta2 must be non-negative, got {}", self.eta2)));
        }
        self.monitor.validate()?;
        if self.mode.is_rescaled() && self.gamma * self.monitor.s_max >= 1.0 {
            return Err(Error::Config(format!(
                "gamma * s_max = {} must stay below 1 for rescaled Langevin",
                self.gamma * self.monitor.s_max
            )));
        }
        Ok(())
    }

    /// The regularization strength `alpha = 1 / (2 eta)` this config targets.
    pub fn alpha(&self) -> f64 {
        1.0 / (2.0 * self.eta)
    }
}

fn require_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite {what}: {values:?}")))
    }
}

/// Apply one update of `cfg.mode` at `x`, given the reward and its gradient
/// evaluated at `x`. `noise` is ignored by the deterministic modes.
pub fn apply_update(cfg: &SamplerConfig, x: &[f64], reward: f64, grad: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    require_finite(grad, "reward gradient")?;
    let out = match cfg.mode {
        SamplerMode::GradientAscent => x.iter().zip(grad).map(|(x, g)| x + cfg.eta * g).collect(),
        SamplerMode::NormRegAscent => norm_reg_update(x, grad, cfg.eta, cfg.eta2)?,
        SamplerMode::Langevin => langevin_update(x, grad, cfg.gamma, cfg.eta, noise),
        SamplerMode::AdaptiveLangevin => adaptive_update(x, reward, grad, cfg.gamma, cfg.eta, &cfg.monitor, noise, true),
        SamplerMode::NaiveAdaptive => adaptive_update(x, reward, grad, cfg.gamma, cfg.eta, &cfg.monitor, noise, false),
    };
    require_finite(&out, "latent after update")?;
    Ok(out)
}

fn norm_reg_update(x: &[f64], grad: &[f64], eta1: f64, eta2: f64) -> Result<Vec<f64>> {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if !(r2 > 0.0) {
        return Err(Error::Numerical("norm regularizer is singular at the origin".into()));
    }
    let radial = (x.len() as f64 - 1.0) / r2 - 1.0;
    Ok(x.iter().zip(grad).map(|(x, g)| x + eta1 * g + eta2 * radial * x).collect())
}

fn langevin_update(x: &[f64], grad: &[f64], gamma: f64, eta: f64, noise: &[f64]) -> Vec<f64> {
    let contraction = (1.0 - gamma).sqrt();
    let diffusion = gamma.sqrt();
    x.iter()
        .zip(grad)
        .zip(noise)
        .map(|((x, g), e)| contraction * x + gamma * eta * g + diffusion * e)
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn adaptive_update(
    x: &[f64],
    reward: f64,
    grad: &[f64],
    gamma: f64,
    eta: f64,
    mp: &MonitorParams,
    noise: &[f64],
    corrected: bool,
) -> Vec<f64> {
    let local_gamma = mp.value(reward) * gamma;
    let contraction = (1.0 - local_gamma).sqrt();
    let diffusion = local_gamma.sqrt();
    let dlog = mp.log_derivative(reward);
    x.iter()
        .zip(grad)
        .zip(noise)
        .map(|((x, g), e)| {
            let drift = contraction * x + local_gamma * eta * g;
            if corrected {
                drift + 0.5 * local_gamma * dlog * g + diffusion * e
            } else {
                drift + diffusion * e
            }
        })
        .collect()
}

/// `x + eta grad R(x)`.
pub fn step_gradient_ascent(x: &[f64], pr: &PullbackReward, eta: f64) -> Result<Vec<f64>> {
    let cfg = SamplerConfig { mode: SamplerMode::GradientAscent, eta, ..SamplerConfig::default() };
    let (r, g) = pr.value_and_gradient(x)?;
    apply_update(&cfg, x, r, &g, &[])
}

/// Gradient ascent plus `eta2` times the gradient of the chi-distribution
/// log-density of the radius, `(d-1) log|x| - |x|^2/2`.
pub fn step_norm_reg(x: &[f64], pr: &PullbackReward, eta1: f64, eta2: f64) -> Result<Vec<f64>> {
    let (_, g) = pr.value_and_gradient(x)?;
    require_finite(&g, "reward gradient")?;
    norm_reg_update(x, &g, eta1, eta2)
}

/// `sqrt(1-gamma) x + gamma eta grad R(x) + sqrt(gamma) noise`. `gamma = 0`
/// is accepted here as a degenerate probe.
pub fn step_langevin(x: &[f64], pr: &PullbackReward, gamma: f64, eta: f64, noise: &[f64]) -> Result<Vec<f64>> {
    check_step_gamma(gamma)?;
    let (_, g) = pr.value_and_gradient(x)?;
    require_finite(&g, "reward gradient")?;
    Ok(langevin_update(x, &g, gamma, eta, noise))
}

/// Time-rescaled Langevin step with the `gamma_x/2 grad log G` correction.
pub fn step_adaptive(
    x: &[f64],
    pr: &PullbackReward,
    gamma: f64,
    eta: f64,
    mp: &MonitorParams,
    noise: &[f64],
) -> Result<Vec<f64>> {
    rescaled_step(x, pr, gamma, eta, mp, noise, true)
}

/// Time-rescaled Langevin step without the correction drift.
pub fn step_naive_adaptive(
    x: &[f64],
    pr: &PullbackReward,
    gamma: f64,
    eta: f64,
    mp: &MonitorParams,
    noise: &[f64],
) -> Result<Vec<f64>> {
    rescaled_step(x, pr, gamma, eta, mp, noise, false)
}

fn rescaled_step(
    x: &[f64],
    pr: &PullbackReward,
    gamma: f64,
    eta: f64,
    mp: &MonitorParams,
    noise: &[f64],
    corrected: bool,
) -> Result<Vec<f64>> {
    mp.validate()?;
    check_step_gamma(gamma * mp.s_max)?;
    let (r, g) = pr.value_and_gradient(x)?;
    require_finite(&g, "reward gradient")?;
    Ok(adaptive_update(x, r, &g, gamma, eta, mp, noise, corrected))
}

fn check_step_gamma(gamma: f64) -> Result<()> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::Config(format!("effective step {gamma} outside [0, 1)")))
    }
}

/// Evolving state of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    /// Current latent (after the last update).
    pub x: Vec<f64>,
    /// Updates applied so far.
    pub iteration: usize,
    pub best_reward: f64,
    pub best_latent: Vec<f64>,
    /// Reward of every scored latent, in order.
    pub reward_history: Vec<f64>,
}

impl ChainState {
    fn new(x0: Vec<f64>) -> Self {
        Self {
            best_latent: x0.clone(),
            x: x0,
            iteration: 0,
            best_reward: f64::NEG_INFINITY,
            reward_history: Vec::new(),
        }
    }

    fn record(&mut self, reward: f64, x: &[f64]) {
        self.reward_history.push(reward);
        if reward > self.best_reward {
            self.best_reward = reward;
            self.best_latent = x.to_vec();
        }
    }

    /// NFE at which the history first reaches `threshold`.
    pub fn first_hit(&self, threshold: f64) -> Option<usize> {
        self.reward_history.iter().position(|&r| r >= threshold).map(|i| i + 1)
    }
}

/// Result of one chain: the generated sample for the best latent.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// `F(best_latent)` in data space.
    pub final_output: Vec<f64>,
    pub chain: ChainState,
    pub nfe_to_threshold: Option<usize>,
}

impl RunRecord {
    fn finish(pr: &PullbackReward, chain: ChainState, threshold: Option<f64>) -> Result<Self> {
        let final_output = pr.generator().push_forward(&chain.best_latent)?;
        let nfe_to_threshold = threshold.and_then(|t| chain.first_hit(t));
        Ok(Self { final_output, chain, nfe_to_threshold })
    }

    /// Number of reward evaluations spent.
    pub fn nfe(&self) -> usize {
        self.chain.reward_history.len()
    }
}

/// A chain that stopped early. `partial` holds everything recorded before the
/// failing step.
#[derive(Debug, thiserror::Error)]
#[error("chain aborted at iteration {}: {error}", partial.chain.iteration)]
pub struct ChainFailure {
    pub error: Error,
    pub partial: Box<RunRecord>,
}

fn chain_rng(seed: u64, chain: usize) -> Rng {
    rng::stream(seed, streams::CHAIN_BASE + chain as u64)
}

/// Run one chain from `x0 ~ N(0, I)` drawn from `cfg.seed`.
pub fn run_chain(pr: &PullbackReward, cfg: &SamplerConfig, threshold: Option<f64>) -> Result<RunRecord, ChainFailure> {
    let fail = |error: Error, chain: ChainState| {
        let partial = RunRecord::finish(pr, chain.clone(), threshold).unwrap_or_else(|_| RunRecord {
            final_output: chain.best_latent.clone(),
            chain,
            nfe_to_threshold: None,
        });
        ChainFailure { error, partial: Box::new(partial) }
    };
    let d = pr.dim();
    let mut rng = chain_rng(cfg.seed, 0);
    let x0 = rng::standard_normal_vec(&mut rng, d);
    let mut chain = ChainState::new(x0);
    if let Err(e) = cfg.validate() {
        return Err(fail(e, chain));
    }
    for _ in 0..cfg.iterations {
        let (r, g) = match pr.value_and_gradient(&chain.x) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, chain)),
        };
        let x = chain.x.clone();
        chain.record(r, &x);
        let noise = rng::standard_normal_vec(&mut rng, d);
        match apply_update(cfg, &x, r, &g, &noise) {
            Ok(next) => chain.x = next,
            Err(e) => return Err(fail(e, chain)),
        }
        chain.iteration += 1;
    }
    match pr.value(&chain.x) {
        Ok(r) => {
            let x = chain.x.clone();
            chain.record(r, &x);
        }
        Err(e) => return Err(fail(e, chain)),
    }
    RunRecord::finish(pr, chain.clone(), threshold).map_err(|e| fail(e, chain))
}

/// Many chains advanced in lockstep with batched reward evaluation.
///
/// Chain `c` draws its start and noise from stream `c` of `cfg.seed`; chain 0
/// follows the same random sequence as [`run_chain`].
pub struct Ensemble<'a> {
    pr: &'a PullbackReward,
    cfg: SamplerConfig,
    xs: Array2<f64>,
    rngs: Vec<Rng>,
    iteration: usize,
}

impl<'a> Ensemble<'a> {
    pub fn new(pr: &'a PullbackReward, cfg: &SamplerConfig, n_chains: usize) -> Result<Self> {
        cfg.validate()?;
        let d = pr.dim();
        let mut rngs: Vec<Rng> = (0..n_chains).map(|c| chain_rng(cfg.seed, c)).collect();
        let mut xs = Array2::zeros((n_chains, d));
        for (mut row, rng) in xs.rows_mut().into_iter().zip(rngs.iter_mut()) {
            row.assign(&ndarray::aview1(&rng::standard_normal_vec(rng, d)));
        }
        Ok(Self { pr, cfg: cfg.clone(), xs, rngs, iteration: 0 })
    }

    pub fn positions(&self) -> &Array2<f64> {
        &self.xs
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Score every chain at its current latent and apply one update. Returns
    /// the rewards of the latents that were scored.
    pub fn step(&mut self) -> Result<Vec<f64>> {
        let (rewards, grads) = self.pr.value_and_gradient_batch(self.xs.view())?;
        let d = self.xs.ncols();
        for (c, ((mut row, g), rng)) in self
            .xs
            .rows_mut()
            .into_iter()
            .zip(grads.rows())
            .zip(self.rngs.iter_mut())
            .enumerate()
        {
            let noise = rng::standard_normal_vec(rng, d);
            let x = row.to_vec();
            let next = apply_update(&self.cfg, &x, rewards[c], g.as_slice().expect("row-major"), &noise)
                .map_err(|e| Error::Numerical(format!("chain {c}, iteration {}: {e}", self.iteration)))?;
            row.assign(&ndarray::aview1(&next));
        }
        self.iteration += 1;
        Ok(rewards)
    }

    /// Rewards at the current latents without updating.
    pub fn score(&self) -> Result<Vec<f64>> {
        self.pr.value_batch(self.xs.view())
    }
}

/// Run `n_chains` independent chains for `cfg.iterations` updates each.
pub fn run_chains(pr: &PullbackReward, cfg: &SamplerConfig, n_chains: usize, threshold: Option<f64>) -> Result<Vec<RunRecord>> {
    let mut ens = Ensemble::new(pr, cfg, n_chains)?;
    let mut chains: Vec<ChainState> = ens.positions().rows().into_iter().map(|r| ChainState::new(r.to_vec())).collect();
    for _ in 0..cfg.iterations {
        let scored = ens.positions().clone();
        let rewards = ens.step()?;
        for ((chain, r), x) in chains.iter_mut().zip(rewards).zip(scored.rows()) {
            chain.record(r, x.as_slice().expect("row-major"));
            chain.iteration += 1;
        }
    }
    let rewards = ens.score()?;
    chains
        .into_iter()
        .zip(rewards)
        .zip(ens.positions().rows())
        .map(|((mut chain, r), x)| {
            chain.x = x.to_vec();
            chain.record(r, &chain.x.clone());
            RunRecord::finish(pr, chain, threshold)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::{Generator, RewardSpec};

    fn quad(c: f64) -> PullbackReward {
        PullbackReward::new(RewardSpec::Quadratic { c }, Generator::Identity { dim: 2 }).unwrap()
    }

    fn toy_identity() -> PullbackReward {
        PullbackReward::new(RewardSpec::ToyMixture, Generator::Identity { dim: 2 }).unwrap()
    }

    #[test]
    fn monitor_reference_values() {
        let mp = MonitorParams::default();
        assert_eq!(mp.value(0.0), 1.0 / 3.0);
        assert!((mp.value(-2.0) - 0.870).abs() < 1e-3);
        assert!((mp.value(-1e9) - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(mp.value(5.0), 1.0 / 3.0);
    }

    #[test]
    fn monitor_log_derivative_matches_finite_differences() {
        let mp = MonitorParams::default();
        for r in [-5.0, -2.0, -0.5, -0.01] {
            let h = 1e-6;
            let fd = (mp.value(r + h).ln() - mp.value(r - h).ln()) / (2.0 * h);
            assert!((fd - mp.log_derivative(r)).abs() < 1e-8, "{r}");
        }
        assert_eq!(mp.log_derivative(0.5), 0.0);
    }

    #[test]
    fn monitor_validation() {
        assert!(MonitorParams { s_min: 0.0, ..MonitorParams::default() }.validate().is_err());
        assert!(MonitorParams { s_min: 2.0, s_max: 1.0, k: 0.3 }.validate().is_err());
        assert!(MonitorParams::constant_one().validate().is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        assert!(SamplerConfig { gamma: 0.0, ..SamplerConfig::default() }.validate().is_err());
        assert!(SamplerConfig { gamma: 1.0, ..SamplerConfig::default() }.validate().is_err());
        let adaptive = SamplerConfig { mode: SamplerMode::AdaptiveLangevin, gamma: 0.8, ..SamplerConfig::default() };
        assert!(adaptive.validate().is_err());
        assert!(SamplerConfig { mode: SamplerMode::Langevin, ..adaptive }.validate().is_ok());
    }

    #[test]
    fn gradient_ascent_steps() {
        let pr = quad(1.0);
        assert_eq!(step_gradient_ascent(&[0.0, 0.0], &pr, 0.5).unwrap(), vec![0.0, 0.0]);
        let x1 = step_gradient_ascent(&[1.0, 0.0], &pr, 0.1).unwrap();
        assert!((x1[0] - 0.9).abs() < 1e-15 && x1[1] == 0.0);
        let x = [0.7, -1.3];
        let disp = |eta: f64| {
            let y = step_gradient_ascent(&x, &pr, eta).unwrap();
            ((y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2)).sqrt()
        };
        assert!((disp(0.2) - 2.0 * disp(0.1)).abs() < 1e-15);
    }

    #[test]
    fn norm_reg_steps() {
        let pr = toy_identity();
        let on_circle = [0.6, 0.8];
        let y = step_norm_reg(&on_circle, &pr, 0.0, 1.0).unwrap();
        assert!((y[0] - 0.6).abs() < 1e-15 && (y[1] - 0.8).abs() < 1e-15);
        assert_eq!(step_norm_reg(&[1.5, -2.0], &pr, 0.0, 0.0).unwrap(), vec![1.5, -2.0]);
        let mut x = vec![3.0, 0.0];
        let mut r = 3.0;
        for _ in 0..20 {
            x = step_norm_reg(&x, &pr, 0.0, 0.1).unwrap();
            let nr = (x[0] * x[0] + x[1] * x[1]).sqrt();
            assert!(nr < r && nr > 1.0);
            r = nr;
        }
        assert!(matches!(step_norm_reg(&[0.0, 0.0], &pr, 0.1, 0.1), Err(Error::Numerical(_))));
    }

    #[test]
    fn langevin_steps() {
        let pr = quad(1.0);
        let x = [0.4, -2.0];
        assert_eq!(step_langevin(&x, &pr, 0.0, 1.0, &[0.0, 0.0]).unwrap(), x.to_vec());
        let zero_grad = PullbackReward::new(
            RewardSpec::Custom(std::sync::Arc::new(Flat)),
            Generator::Identity { dim: 2 },
        )
        .unwrap();
        let y = step_langevin(&[1.0, -2.0], &zero_grad, 0.19, 0.8, &[0.0, 0.0]).unwrap();
        assert!((y[0] - 0.9).abs() < 1e-15 && (y[1] + 1.8).abs() < 1e-15);
        assert!(step_langevin(&x, &pr, 1.0, 1.0, &[0.0, 0.0]).is_err());
    }

    struct Flat;
    impl crate::reward::DifferentiableReward for Flat {
        fn value(&self, _: &[f64]) -> f64 {
            -1.0
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            vec![0.0; x.len()]
        }
    }

    #[test]
    fn constant_monitor_reverts_to_langevin() {
        let pr = toy_identity();
        let x = [1.2, -0.4];
        let noise = [0.3, -1.1];
        let a = step_adaptive(&x, &pr, 0.3, 0.8, &MonitorParams::constant_one(), &noise).unwrap();
        let b = step_langevin(&x, &pr, 0.3, 0.8, &noise).unwrap();
        assert_eq!(a, b);
        let n = step_naive_adaptive(&x, &pr, 0.3, 0.8, &MonitorParams::constant_one(), &noise).unwrap();
        assert_eq!(n, b);
    }

    #[test]
    fn correction_term_is_the_only_difference() {
        let pr = toy_identity();
        let mp = MonitorParams::default();
        let x = [2.5, 0.7];
        let noise = [0.2, 0.9];
        let a = step_adaptive(&x, &pr, 0.3, 0.8, &mp, &noise).unwrap();
        let n = step_naive_adaptive(&x, &pr, 0.3, 0.8, &mp, &noise).unwrap();
        let (r, g) = pr.value_and_gradient(&x).unwrap();
        let gx = mp.value(r) * 0.3;
        for k in 0..2 {
            let corr = 0.5 * gx * mp.log_derivative(r) * g[k];
            assert!((a[k] - n[k] - corr).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_has_no_correction() {
        let pr = PullbackReward::new(RewardSpec::Custom(std::sync::Arc::new(Flat)), Generator::Identity { dim: 2 }).unwrap();
        let mp = MonitorParams::default();
        let a = step_adaptive(&[1.0, 1.0], &pr, 0.3, 0.8, &mp, &[0.5, 0.5]).unwrap();
        let n = step_naive_adaptive(&[1.0, 1.0], &pr, 0.3, 0.8, &mp, &[0.5, 0.5]).unwrap();
        assert_eq!(a, n);
    }

    #[test]
    fn low_reward_gets_larger_effective_step() {
        let mp = MonitorParams::default();
        assert!(mp.value(-5.0) * 0.3 > mp.value(-0.01) * 0.3);
    }

    #[test]
    fn single_update_scores_two_latents() {
        let pr = toy_identity();
        for mode in SamplerMode::ALL {
            let cfg = SamplerConfig { mode, iterations: 1, seed: 4, ..SamplerConfig::default() };
            let rec = run_chain(&pr, &cfg, None).unwrap();
            let h = &rec.chain.reward_history;
            assert_eq!(h.len(), 2);
            assert_eq!(rec.chain.best_reward, h[0].max(h[1]));
            assert_eq!(rec.nfe(), 2);
        }
    }

    #[test]
    fn best_tracking_invariants() {
        let pr = toy_identity();
        let cfg = SamplerConfig { mode: SamplerMode::AdaptiveLangevin, iterations: 30, seed: 9, ..SamplerConfig::default() };
        let rec = run_chain(&pr, &cfg, Some(-0.5)).unwrap();
        let max = rec.chain.reward_history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(rec.chain.best_reward, max);
        assert!((pr.value(&rec.chain.best_latent).unwrap() - max).abs() < 1e-12);
        assert_eq!(rec.final_output, pr.generator().push_forward(&rec.chain.best_latent).unwrap());
        assert_eq!(rec.chain.iteration, 30);
    }

    #[test]
    fn runs_are_deterministic() {
        let pr = toy_identity();
        let cfg = SamplerConfig { iterations: 20, seed: 77, ..SamplerConfig::default() };
        assert_eq!(run_chain(&pr, &cfg, None).unwrap(), run_chain(&pr, &cfg, None).unwrap());
        let other = SamplerConfig { seed: 78, ..cfg.clone() };
        assert_ne!(run_chain(&pr, &cfg, None).unwrap(), run_chain(&pr, &other, None).unwrap());
    }

    #[test]
    fn ensemble_chain_zero_matches_single_chain() {
        let pr = toy_identity();
        for mode in SamplerMode::ALL {
            let cfg = SamplerConfig { mode, iterations: 15, seed: 3, ..SamplerConfig::default() };
            let single = run_chain(&pr, &cfg, Some(-0.9)).unwrap();
            let many = run_chains(&pr, &cfg, 4, Some(-0.9)).unwrap();
            assert_eq!(many[0], single);
            assert_ne!(many[1].chain.x, single.chain.x);
        }
    }

    #[test]
    fn failure_keeps_partial_record() {
        struct Explodes;
        impl crate::reward::DifferentiableReward for Explodes {
            fn value(&self, _: &[f64]) -> f64 {
                0.0
            }
            fn gradient(&self, x: &[f64]) -> Vec<f64> {
                vec![f64::NAN; x.len()]
            }
        }
        let pr = PullbackReward::new(RewardSpec::Custom(std::sync::Arc::new(Explodes)), Generator::Identity { dim: 2 }).unwrap();
        let err = run_chain(&pr, &SamplerConfig::default(), None).unwrap_err();
        assert!(err.error.is_numerical());
        assert_eq!(err.partial.chain.reward_history.len(), 1);
        assert_eq!(err.partial.chain.iteration, 0);
    }

    #[test]
    fn zero_iterations_scores_the_start() {
        let pr = toy_identity();
        let rec = run_chain(&pr, &SamplerConfig { iterations: 0, ..SamplerConfig::default() }, None).unwrap();
        assert_eq!(rec.chain.reward_history.len(), 1);
        assert_eq!(rec.chain.best_latent, rec.chain.x);
    }
}
