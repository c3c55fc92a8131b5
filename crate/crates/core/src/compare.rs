//! Equal-budget comparison of latent samplers against the exact target.
//!
//! Every method runs the same number of chains with the same seed, so chain
//! `c` starts from the same prior draw under every method. Distributional
//! metrics compare the final chain iterates (latent space) with oracle draws
//! from `q*`; reward statistics use both the final iterates and the
//! best-reward outputs returned by each chain.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::metrics::{self, MmdEstimate, ModeProportions, ThresholdStats};
use crate::oracle::{self, OracleSamples, TargetDensity, TwoSampleResult};
use crate::reward::PullbackReward;
use crate::sampler::{self, SamplerConfig, SamplerMode};

#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub name: String,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub alpha: f64,
    pub chains: usize,
    pub threshold: f64,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Data-space centers and radii for mode proportions.
    pub mode_centers: Vec<Vec<f64>>,
    pub mode_radii: Vec<f64>,
}

impl CompareConfig {
    /// The toy comparison: norm-regularized ascent, Langevin and adaptive
    /// Langevin at `iterations` NFE, `alpha = 1/(2 * 0.8)`.
    pub fn toy(iterations: usize, chains: usize, seed: u64) -> Self {
        let base = SamplerConfig { iterations, seed, ..SamplerConfig::default() };
        let method = |name: &str, mode| Method { name: name.into(), sampler: SamplerConfig { mode, ..base.clone() } };
        Self {
            alpha: base.alpha(),
            chains,
            threshold: -0.05,
            seed,
            methods: vec![
                method("norm_reg_ascent", SamplerMode::NormRegAscent),
                method("langevin", SamplerMode::Langevin),
                method("adaptive_langevin", SamplerMode::AdaptiveLangevin),
            ],
            mode_centers: vec![vec![4.0, 0.0], vec![-4.0, 0.0]],
            mode_radii: vec![0.9, 2.7],
        }
    }

    /// Shared budget `M`, or an error when the methods disagree.
    pub fn iterations(&self) -> Result<usize> {
        let first = self.methods.first().ok_or_else(|| Error::Config("no methods to compare".into()))?;
        let m = first.sampler.iterations;
        if let Some(bad) = self.methods.iter().find(|x| x.sampler.iterations != m) {
            return Err(Error::Config(format!(
                "unequal budgets: {} uses {} iterations but {} uses {m}",
                bad.name, bad.sampler.iterations, first.name
            )));
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.iterations()?;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.chains < 2 {
            return Err(Error::Config("need at least two chains".into()));
        }
        for m in &self.methods {
            m.sampler.validate()?;
            let target_eta = 1.0 / (2.0 * self.alpha);
            if m.sampler.mode.is_stochastic() && (m.sampler.eta - target_eta).abs() > 1e-12 * target_eta {
                return Err(Error::Config(format!(
                    "{}: eta = {} does not target alpha = {} (needs eta = {target_eta})",
                    m.name, m.sampler.eta, self.alpha
                )));
            }
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || names.contains(&ORACLE_NAME) {
            return Err(Error::Config("method names must be unique and differ from \"oracle\"".into()));
        }
        if self.mode_centers.len() != self.mode_radii.len() {
            return Err(Error::Config("mode_centers and mode_radii differ in length".into()));
        }
        Ok(())
    }
}

pub const ORACLE_NAME: &str = "oracle";

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub name: String,
    pub mode: SamplerMode,
    /// Final chain iterates.
    pub latents: Array2<f64>,
    /// `F` applied to the final iterates.
    pub data: Array2<f64>,
    /// `F(x_*)` returned by each chain.
    pub returned: Array2<f64>,
    pub mean_reward_final: f64,
    pub mean_reward_returned: f64,
    pub mmd: MmdEstimate,
    pub two_sample: TwoSampleResult,
    pub threshold: ThresholdStats,
    pub modes: ModeProportions,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub oracle: OracleSamples,
    pub oracle_data: Array2<f64>,
    pub oracle_mean_reward: f64,
    pub oracle_modes: ModeProportions,
    pub iterations: usize,
    pub methods: Vec<MethodResult>,
}

impl CompareReport {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.name == name)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn run(pr: &PullbackReward, cfg: &CompareConfig) -> Result<CompareReport> {
    cfg.validate()?;
    let iterations = cfg.iterations()?;
    let td = TargetDensity::new(cfg.alpha, pr.clone())?;
    let oracle = oracle::sample_q_star_best(&td, cfg.seed, cfg.chains)?;
    let oracle_data = pr.generator().push_forward_batch(oracle.points.view())?;
    let oracle_mean_reward = mean(&pr.value_batch(oracle.points.view())?);
    let oracle_modes = metrics::mode_proportions(oracle_data.view(), &cfg.mode_centers, &cfg.mode_radii)?;
    let methods = cfg
        .methods
        .iter()
        .map(|m| {
            let records = sampler::run_chains(pr, &m.sampler, cfg.chains, Some(cfg.threshold))?;
            let d = pr.dim();
            let stack = |rows: Vec<&Vec<f64>>, width: usize| {
                Array2::from_shape_vec((rows.len(), width), rows.into_iter().flatten().copied().collect())
                    .expect("rectangular rows")
            };
            let latents = stack(records.iter().map(|r| &r.chain.x).collect(), d);
            let returned = stack(records.iter().map(|r| &r.final_output).collect(), d);
            let data = pr.generator().push_forward_batch(latents.view())?;
            let final_rewards: Vec<f64> = records.iter().map(|r| *r.chain.reward_history.last().expect("scored")).collect();
            let returned_rewards: Vec<f64> = records.iter().map(|r| r.chain.best_reward).collect();
            Ok(MethodResult {
                name: m.name.clone(),
                mode: m.sampler.mode,
                mmd: metrics::mmd_rbf(latents.view(), oracle.points.view(), None)?,
                two_sample: oracle::stationarity_test(latents.view(), oracle.points.view(), cfg.seed)?,
                threshold: metrics::mean_iterations_to_threshold(&records, cfg.threshold),
                modes: metrics::mode_proportions(data.view(), &cfg.mode_centers, &cfg.mode_radii)?,
                mean_reward_final: mean(&final_rewards),
                mean_reward_returned: mean(&returned_rewards),
                latents,
                data,
                returned,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareReport { oracle, oracle_data, oracle_mean_reward, oracle_modes, iterations, methods })
}
