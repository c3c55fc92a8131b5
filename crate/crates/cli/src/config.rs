//! TOML experiment configuration and its translation into library types.

use std::path::Path;

use anyhow::{Context, Result};
use latent_langevin::compare::{CompareConfig, Method};
use latent_langevin::diffnet::Architecture;
use latent_langevin::error::Error;
use latent_langevin::flow::{MixtureSpec, Pipeline, TrainConfig};
use latent_langevin::sampler::{MonitorParams, SamplerConfig, SamplerMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// The committed default configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mixture: MixtureSection,
    pub train: TrainSection,
    pub compare: CompareSection,
    pub monitor: MonitorSection,
    #[serde(default)]
    pub methods: Vec<MethodSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    pub means: Vec<Vec<f64>>,
    pub stddevs: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub num_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub init_scale: f64,
    pub hidden_width: usize,
    pub hidden_depth: usize,
    /// Training steps for each reflow round.
    pub reflow_steps: usize,
    pub reflow_pairs: usize,
    pub integration_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub alpha: f64,
    /// Shared NFE budget `M`.
    pub iterations: usize,
    pub chains: usize,
    pub threshold: f64,
    /// Data-space radii around each mixture mean used for mode proportions.
    pub mode_radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSection {
    pub s_min: f64,
    pub s_max: f64,
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub name: String,
    pub mode: String,
    pub gamma: f64,
    /// Defaults to `1 / (2 alpha)`.
    pub eta: Option<f64>,
    #[serde(default = "default_eta2")]
    pub eta2: f64,
    /// Must equal `compare.iterations` when given.
    pub iterations: Option<usize>,
}

fn default_eta2() -> f64 {
    SamplerConfig::default().eta2
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.mixture()?;
        cfg.compare()?;
        Ok(cfg)
    }

    /// Read `path`, or the committed default when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("in config {}", p.display()))
            }
            None => Self::parse(DEFAULT_CONFIG),
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
    }

    pub fn mixture(&self) -> Result<MixtureSpec> {
        let m = &self.mixture;
        let spec = MixtureSpec { means: m.means.clone(), stddevs: m.stddevs.clone(), weights: m.weights.clone() };
        spec.validate()?;
        Ok(spec)
    }

    fn train_config(&self, num_steps: usize) -> Result<TrainConfig> {
        let t = &self.train;
        let dim = self.mixture.means.first().map_or(0, Vec::len);
        let cfg = TrainConfig {
            seed: self.seed,
            num_steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            init_scale: t.init_scale,
            arch: Architecture::velocity(dim, t.hidden_width, t.hidden_depth),
            reflow_pairs: t.reflow_pairs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Pipeline with one reflow round; the CLI runs rounds one at a time.
    pub fn pipeline(&self) -> Result<Pipeline> {
        Ok(Pipeline {
            base: self.train_config(self.train.num_steps)?,
            reflow: self.train_config(self.train.reflow_steps)?,
            integration_steps: self.train.integration_steps,
            rounds: 1,
        })
    }

    pub fn compare(&self) -> Result<CompareConfig> {
        let c = &self.compare;
        let m = &self.monitor;
        let monitor = MonitorParams { s_min: m.s_min, s_max: m.s_max, k: m.k };
        let eta = 1.0 / (2.0 * c.alpha);
        let methods = self
            .methods
            .iter()
            .map(|s| {
                let mode = SamplerMode::parse(&s.mode).ok_or_else(|| {
                    let known: Vec<&str> = SamplerMode::ALL.iter().map(|m| m.name()).collect();
                    Error::Config(format!("{}: unknown mode {:?}; expected one of {known:?}", s.name, s.mode))
                })?;
                Ok(Method {
                    name: s.name.clone(),
                    sampler: SamplerConfig {
                        mode,
                        iterations: s.iterations.unwrap_or(c.iterations),
                        gamma: s.gamma,
                        eta: s.eta.unwrap_or(eta),
                        monitor,
                        eta2: s.eta2,
                        seed: self.seed,
                    },
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        let cfg = CompareConfig {
            alpha: c.alpha,
            chains: c.chains,
            threshold: c.threshold,
            seed: self.seed,
            methods,
            mode_centers: self.mixture.means.clone(),
            mode_radii: c.mode_radii.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_matches_library_defaults() {
        let cfg = ExperimentConfig::parse(DEFAULT_CONFIG).unwrap();
        let p = cfg.pipeline().unwrap();
        assert_eq!(p.base, TrainConfig::default());
        assert_eq!(p.integration_steps, Pipeline::default().integration_steps);
        assert_eq!(cfg.mixture().unwrap(), MixtureSpec::default());
        assert_eq!(cfg.compare().unwrap(), CompareConfig::toy(50, 2000, 0));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::parse(DEFAULT_CONFIG).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn mismatched_budget_is_refused() {
        let text = DEFAULT_CONFIG.replacen("gamma = 0.3\n", "gamma = 0.3\niterations = 10\n", 1);
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("unequal budgets"), "{err}");
    }

    #[test]
    fn unknown_keys_are_refused() {
        assert!(ExperimentConfig::parse(&format!("{DEFAULT_CONFIG}\nbogus = 1\n")).is_err());
    }
}
