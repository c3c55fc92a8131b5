//! Rectified-flow training, reflow distillation and the one-step generator.
//!
//! A [`FlowModel`] wraps a velocity network `v(x, t)`. Integrating
//! `dx/dt = v(x, t)` from `t = 0` (prior) to `t = 1` (data) generates samples;
//! a single Euler step over the whole interval gives the one-step generator
//! `F(x) = x + v(x, 0)` that the samplers differentiate through.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;

use crate::diffnet::{self, Architecture, NetworkParams, ParamGradient};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rng::{self, streams, Rng};

/// Isotropic Gaussian mixture used as the toy data distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub stddevs: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Default for MixtureSpec {
    /// Two modes at `(4, 0)` (std 0.3) and `(-4, 0)` (std 0.9), equal weights.
    fn default() -> Self {
        Self {
            means: vec![vec![4.0, 0.0], vec![-4.0, 0.0]],
            stddevs: vec![0.3, 0.9],
            weights: vec![0.5, 0.5],
        }
    }
}

impl MixtureSpec {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if k == 0 || self.stddevs.len() != k || self.weights.len() != k {
            return Err(Error::Config(format!(
                "mixture needs equal non-zero counts of means, stddevs and weights (got {}, {}, {})",
                k,
                self.stddevs.len(),
                self.weights.len()
            )));
        }
        let d = self.dim();
        if d == 0 || self.means.iter().any(|m| m.len() != d || !m.iter().all(|v| v.is_finite())) {
            return Err(Error::Config("mixture means must share one positive dimension and be finite".into()));
        }
        if self.stddevs.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("mixture stddevs must be positive".into()));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("mixture weights must be non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mixture weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut Rng, n: usize) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        for mut row in out.rows_mut() {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut comp = self.weights.len() - 1;
            for (i, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    comp = i;
                    break;
                }
            }
            let noise = rng::standard_normal_vec(rng, d);
            for (k, v) in row.iter_mut().enumerate() {
                *v = self.means[comp][k] + self.stddevs[comp] * noise[k];
            }
        }
        out
    }
}

/// `n` i.i.d. draws from `N(0, I_dim)`, one per row.
pub fn sample_prior(seed: u64, n: usize, dim: usize) -> Array2<f64> {
    let mut rng = rng::stream(seed, streams::PRIOR);
    rng::standard_normal_matrix(&mut rng, n, dim)
}

/// `n` draws from the mixture, one per row.
pub fn sample_mixture(spec: &MixtureSpec, seed: u64, n: usize) -> Result<Array2<f64>> {
    spec.validate()?;
    let mut rng = rng::stream(seed, streams::MIXTURE);
    Ok(spec.draw(&mut rng, n))
}

/// Optimizer and schedule settings for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub num_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub init_scale: f64,
    pub arch: Architecture,
    /// Size of the synthetic coupling set generated for each reflow round.
    pub reflow_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_steps: 20_000,
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            init_scale: 1.0,
            arch: Architecture::default(),
            reflow_pairs: 20_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !positive(self.learning_rate) || !positive(self.epsilon) || !positive(self.init_scale) {
            return Err(Error::Config("learning_rate, epsilon and init_scale must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.reflow_pairs == 0 {
            return Err(Error::Config("reflow_pairs must be positive".into()));
        }
        Ok(())
    }
}

/// Provenance stored alongside trained parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    pub num_steps: u64,
    pub batch_size: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub init_scale: f64,
    /// Euler steps used to build the reflow coupling (0 for a base model).
    pub integration_steps: u64,
    /// Coupling set size for reflow (0 for a base model).
    pub reflow_pairs: u64,
}

impl TrainingMeta {
    fn from_config(cfg: &TrainConfig, integration_steps: usize, reflow_pairs: usize) -> Self {
        Self {
            seed: cfg.seed,
            num_steps: cfg.num_steps as u64,
            batch_size: cfg.batch_size as u64,
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            init_scale: cfg.init_scale,
            integration_steps: integration_steps as u64,
            reflow_pairs: reflow_pairs as u64,
        }
    }
}

/// A velocity field plus its rectification level (1 = base model).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub params: NetworkParams,
    pub rectification_level: u32,
    pub training_meta: TrainingMeta,
}

impl FlowModel {
    /// Wrap parameters as an untrained level-1 model.
    pub fn from_params(params: NetworkParams) -> Self {
        Self {
            params,
            rectification_level: 1,
            training_meta: TrainingMeta::from_config(&TrainConfig { num_steps: 0, ..TrainConfig::default() }, 0, 0),
        }
    }

    pub fn data_dim(&self) -> usize {
        self.params.arch().data_dim()
    }

    pub fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        diffnet::forward(&self.params, x, t).map(|(v, _)| v)
    }
}

/// Loss trace of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// `(step, running average loss)` sampled every [`TrainReport::LOG_EVERY`] steps
    /// and at the final step.
    pub loss_trace: Vec<(usize, f64)>,
    pub final_running_loss: Option<f64>,
}

impl TrainReport {
    pub const LOG_EVERY: usize = 100;
    /// Decay of the exponential running average.
    pub const SMOOTHING: f64 = 0.99;
}

/// Squared error `||v(x_t, t) - (x1 - x0)||^2` at `x_t = (1 - t) x0 + t x1`,
/// and its parameter gradient.
pub fn rectified_flow_loss(model: &FlowModel, x0: &[f64], x1: &[f64], t: f64) -> Result<(f64, ParamGradient)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Usage(format!("interpolation time {t} outside [0, 1]")));
    }
    if x0.len() != x1.len() {
        return Err(Error::Usage("x0 and x1 differ in dimension".into()));
    }
    let xt: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
    let (v, tape) = diffnet::forward(&model.params, &xt, t)?;
    let residual: Vec<f64> = v.iter().zip(x0.iter().zip(x1)).map(|(v, (a, b))| v - (b - a)).collect();
    let loss = residual.iter().map(|r| r * r).sum();
    let cot: Vec<f64> = residual.iter().map(|r| 2.0 * r).collect();
    let grad = diffnet::vjp_params(&model.params, &tape, &cot)?;
    Ok((loss, grad))
}

/// Mean batch loss and its gradient for rows of `(x0, x1)` at times `ts`.
fn batch_loss(params: &NetworkParams, x0: ArrayView2<f64>, x1: ArrayView2<f64>, ts: &[f64]) -> Result<(f64, ParamGradient)> {
    let n = x0.nrows() as f64;
    let mut xt = x0.to_owned();
    Zip::from(xt.rows_mut()).and(x1.rows()).and(ts).for_each(|mut row, target, &t| {
        Zip::from(&mut row).and(&target).for_each(|a, &b| *a = (1.0 - t) * *a + t * b);
    });
    let (v, tape) = diffnet::forward_batch(params, xt.view(), ts)?;
    let residual = &v - &(&x1 - &x0);
    let loss = residual.iter().map(|r| r * r).sum::<f64>() / n;
    let cot = residual * (2.0 / n);
    let (_, grad) = diffnet::backward_batch(params, &tape, cot.view(), true)?;
    Ok((loss, grad.expect("parameter gradient requested")))
}

/// Shared Adam loop. `draw` fills one batch of `(x0, x1)` pairs.
fn optimize(
    mut params: NetworkParams,
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut draw: impl FnMut(&mut Rng, usize) -> (Array2<f64>, Array2<f64>),
) -> Result<(NetworkParams, TrainReport)> {
    let mut adam = Adam::new(&params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut report = TrainReport::default();
    let mut running: Option<f64> = None;
    for step in 1..=cfg.num_steps {
        let (x0, x1) = draw(rng, cfg.batch_size);
        let ts: Vec<f64> = (0..cfg.batch_size).map(|_| rng.random::<f64>()).collect();
        let (loss, grad) = batch_loss(&params, x0.view(), x1.view(), &ts)?;
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::Numerical(format!(
                "training diverged at step {step}: batch loss {loss}, last running loss {running:?}, learning rate {}",
                cfg.learning_rate
            )));
        }
        let avg = match running {
            None => loss,
            Some(r) => TrainReport::SMOOTHING * r + (1.0 - TrainReport::SMOOTHING) * loss,
        };
        running = Some(avg);
        adam.step(&mut params, &grad);
        if step % TrainReport::LOG_EVERY == 0 || step == cfg.num_steps {
            report.loss_trace.push((step, avg));
        }
    }
    report.final_running_loss = running;
    Ok((params, report))
}

/// Train a base (level-1) rectified flow from `N(0, I)` to the mixture with
/// independent couplings and `t ~ U[0, 1]`.
pub fn train(spec: &MixtureSpec, cfg: &TrainConfig) -> Result<(FlowModel, TrainReport)> {
    spec.validate()?;
    cfg.validate()?;
    if spec.dim() != cfg.arch.data_dim() {
        return Err(Error::Config(format!(
            "mixture dimension {} does not match network data dimension {}",
            spec.dim(),
            cfg.arch.data_dim()
        )));
    }
    let init = NetworkParams::init(cfg.arch, cfg.seed, cfg.init_scale)?;
    let d = spec.dim();
    let mut rng = rng::stream(cfg.seed, streams::TRAIN);
    let (params, report) = optimize(init, cfg, &mut rng, |rng, n| {
        let x0 = rng::standard_normal_matrix(rng, n, d);
        let x1 = spec.draw(rng, n);
        (x0, x1)
    })?;
    let model = FlowModel {
        params,
        rectification_level: 1,
        training_meta: TrainingMeta::from_config(cfg, 0, 0),
    };
    Ok((model, report))
}

/// Retrain on the deterministic coupling `(x0, Phi(x0))`, where `Phi`
/// integrates `model` with `integration_steps` Euler steps. The student starts
/// from the teacher's parameters.
pub fn reflow_distill(model: &FlowModel, cfg: &TrainConfig, integration_steps: usize) -> Result<(FlowModel, TrainReport)> {
    cfg.validate()?;
    if integration_steps == 0 {
        return Err(Error::Config("reflow needs at least one integration step".into()));
    }
    let level = model.rectification_level + 1;
    let stream_offset = 16 * u64::from(level);
    let d = model.data_dim();
    let mut coupling_rng = rng::stream(cfg.seed, streams::REFLOW + stream_offset);
    let x0 = rng::standard_normal_matrix(&mut coupling_rng, cfg.reflow_pairs, d);
    let x1 = generate_multi_step_batch(model, x0.view(), integration_steps)?;

    let mut rng = rng::stream(cfg.seed, streams::TRAIN + stream_offset);
    let pairs = cfg.reflow_pairs;
    let (params, report) = optimize(model.params.clone(), cfg, &mut rng, |rng, n| {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..pairs)).collect();
        (x0.select(Axis(0), &idx), x1.select(Axis(0), &idx))
    })?;
    let distilled = FlowModel {
        params,
        rectification_level: level,
        training_meta: TrainingMeta::from_config(cfg, integration_steps, pairs),
    };
    Ok((distilled, report))
}

fn ensure_finite(xs: &[f64], step: usize) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite state after Euler step {step}")))
    }
}

/// Euler-integrate `dx/dt = v(x, t)` over `[0, 1]` with `n_steps` uniform steps.
pub fn generate_multi_step(model: &FlowModel, x0: &[f64], n_steps: usize) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(Error::Usage("n_steps must be at least 1".into()));
    }
    let dt = 1.0 / n_steps as f64;
    let mut x = x0.to_vec();
    for k in 0..n_steps {
        let t = k as f64 / n_steps as f64;
        let v = model.velocity(&x, t)?;
        x.iter_mut().zip(&v).for_each(|(xi, vi)| *xi += dt * vi);
        ensure_finite(&x, k + 1)?;
    }
    Ok(x)
}

/// The one-step generator `F(x) = x + v(x, 0)`.
pub fn generate_one_step(model: &FlowModel, x0: &[f64]) -> Result<Vec<f64>> {
    let v = model.velocity(x0, 0.0)?;
    Ok(x0.iter().zip(&v).map(|(x, v)| x + v).collect())
}

/// Row-wise [`generate_multi_step`] using batched network evaluation.
pub fn generate_multi_step_batch(model: &FlowModel, x0: ArrayView2<f64>, n_steps: usize) -> Result<Array2<f64>> {
    if n_steps == 0 {
        return Err(Error::Usage("n_steps must be at least 1".into()));
    }
    let dt = 1.0 / n_steps as f64;
    let mut x = x0.to_owned();
    let mut ts = vec![0.0; x.nrows()];
    for k in 0..n_steps {
        ts.fill(k as f64 / n_steps as f64);
        let (v, _) = diffnet::forward_batch(&model.params, x.view(), &ts)?;
        x.scaled_add(dt, &v);
        ensure_finite(x.as_slice().expect("standard layout"), k + 1)?;
    }
    Ok(x)
}

/// Row-wise one-step generator using batched network evaluation.
pub fn generate_one_step_batch(model: &FlowModel, x0: ArrayView2<f64>) -> Result<Array2<f64>> {
    let ts = vec![0.0; x0.nrows()];
    let (v, _) = diffnet::forward_batch(&model.params, x0, &ts)?;
    Ok(&x0 + &v)
}

/// Mean over `n_eval` prior trajectories of the average squared deviation
/// `||v(x_t, t) - (x_1 - x_0)||^2` along an `n_steps` Euler path. Zero iff
/// every trajectory is a straight line traversed at constant speed.
pub fn straightness(model: &FlowModel, n_eval: usize, n_steps: usize, seed: u64) -> Result<f64> {
    if n_eval == 0 || n_steps == 0 {
        return Err(Error::Usage("straightness needs n_eval >= 1 and n_steps >= 1".into()));
    }
    let d = model.data_dim();
    let mut rng = rng::stream(seed, streams::EVAL);
    let x0 = rng::standard_normal_matrix(&mut rng, n_eval, d);
    let dt = 1.0 / n_steps as f64;
    let mut x = x0.clone();
    let mut ts = vec![0.0; n_eval];
    let mut velocities = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        ts.fill(k as f64 / n_steps as f64);
        let (v, _) = diffnet::forward_batch(&model.params, x.view(), &ts)?;
        x.scaled_add(dt, &v);
        velocities.push(v);
    }
    let displacement = &x - &x0;
    let total: f64 = velocities
        .iter()
        .map(|v| (v - &displacement).iter().map(|r| r * r).sum::<f64>())
        .sum();
    let value = total / (n_eval as f64 * n_steps as f64);
    if !value.is_finite() {
        return Err(Error::Numerical("straightness is non-finite".into()));
    }
    Ok(value)
}

/// Base training followed by reflow rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub base: TrainConfig,
    pub reflow: TrainConfig,
    /// Euler steps used to integrate each teacher when building couplings.
    pub integration_steps: usize,
    /// Number of reflow rounds; the final model has level `rounds + 1`.
    pub rounds: u32,
}

impl Default for Pipeline {
    fn default() -> Self {
        Self { base: TrainConfig::default(), reflow: TrainConfig::default(), integration_steps: 100, rounds: 2 }
    }
}

impl Pipeline {
    /// Shortened schedule for test suites: 4000 base steps, 2000 steps per
    /// reflow round and 10000 coupling pairs.
    pub fn quick() -> Self {
        let base = TrainConfig { num_steps: 4000, reflow_pairs: 10_000, ..TrainConfig::default() };
        let reflow = TrainConfig { num_steps: 2000, ..base.clone() };
        Self { base, reflow, integration_steps: 100, rounds: 2 }
    }

    /// Every level from 1 to `rounds + 1`, in order.
    pub fn run(&self, spec: &MixtureSpec) -> Result<Vec<(FlowModel, TrainReport)>> {
        let mut levels = vec![train(spec, &self.base)?];
        for _ in 0..self.rounds {
            let teacher = &levels.last().expect("base level present").0;
            let next = reflow_distill(teacher, &self.reflow, self.integration_steps)?;
            levels.push(next);
        }
        Ok(levels)
    }
}
