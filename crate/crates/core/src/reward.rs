//! Rewards over data space, their pullback through the one-step generator,
//! and the multi-object orientation reward over categorical angle predictions.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};

use crate::diffnet;
use crate::error::{Error, Result};
use crate::flow::{self, FlowModel};

/// A differentiable reward supplied by the caller.
pub trait DifferentiableReward: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Reward over data space.
#[derive(Clone)]
pub enum RewardSpec {
    /// `exp(-|x - (4,0)|^2 / 2) + 0.1 exp(-|x + (4,0)|^2 / 2) - 1` on 2D data.
    ToyMixture,
    /// `-c |x|^2 / 2`, whose tilted Gaussian target has a closed form.
    Quadratic { c: f64 },
    Custom(Arc<dyn DifferentiableReward>),
}

impl fmt::Debug for RewardSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardSpec::ToyMixture => write!(f, "ToyMixture"),
            RewardSpec::Quadratic { c } => write!(f, "Quadratic {{ c: {c} }}"),
            RewardSpec::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Constants of the two-bump toy reward.
pub mod toy {
    pub const PRIMARY_CENTER: [f64; 2] = [4.0, 0.0];
    pub const SECONDARY_CENTER: [f64; 2] = [-4.0, 0.0];
    pub const SECONDARY_WEIGHT: f64 = 0.1;
    pub const OFFSET: f64 = -1.0;
    /// Both bumps use `exp(-r^2 * INNER_SCALE)`.
    pub const INNER_SCALE: f64 = 0.5;
}

fn bump(x: &[f64], center: [f64; 2]) -> f64 {
    let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
    (-toy::INNER_SCALE * r2).exp()
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            RewardSpec::Quadratic { c } if !(*c > 0.0 && c.is_finite()) => {
                Err(Error::Config(format!("quadratic reward needs c > 0, got {c}")))
            }
            _ => Ok(()),
        }
    }

    /// Input dimension the reward is defined on, if fixed.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            RewardSpec::ToyMixture => Some(2),
            _ => None,
        }
    }

    /// A known supremum of the reward, if any.
    pub fn upper_bound(&self) -> Option<f64> {
        match self {
            RewardSpec::ToyMixture => Some(1.0 + toy::SECONDARY_WEIGHT + toy::OFFSET),
            RewardSpec::Quadratic { .. } => Some(0.0),
            RewardSpec::Custom(_) => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            RewardSpec::ToyMixture => {
                bump(x, toy::PRIMARY_CENTER) + toy::SECONDARY_WEIGHT * bump(x, toy::SECONDARY_CENTER) + toy::OFFSET
            }
            RewardSpec::Quadratic { c } => -0.5 * c * x.iter().map(|v| v * v).sum::<f64>(),
            RewardSpec::Custom(r) => r.value(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            RewardSpec::ToyMixture => {
                let a = bump(x, toy::PRIMARY_CENTER);
                let b = toy::SECONDARY_WEIGHT * bump(x, toy::SECONDARY_CENTER);
                (0..2)
                    .map(|k| {
                        -2.0 * toy::INNER_SCALE
                            * (a * (x[k] - toy::PRIMARY_CENTER[k]) + b * (x[k] - toy::SECONDARY_CENTER[k]))
                    })
                    .collect()
            }
            RewardSpec::Quadratic { c } => x.iter().map(|v| -c * v).collect(),
            RewardSpec::Custom(r) => r.gradient(x),
        }
    }
}

pub fn eval_reward(spec: &RewardSpec, x: &[f64]) -> f64 {
    spec.value(x)
}

pub fn grad_reward(spec: &RewardSpec, x: &[f64]) -> Vec<f64> {
    spec.gradient(x)
}

/// Map from latent space to data space.
#[derive(Debug, Clone)]
pub enum Generator {
    Identity { dim: usize },
    /// The one-step generator `x + v(x, 0)` of a flow model.
    Flow(Arc<FlowModel>),
}

impl Generator {
    pub fn dim(&self) -> usize {
        match self {
            Generator::Identity { dim } => *dim,
            Generator::Flow(m) => m.data_dim(),
        }
    }

    pub fn push_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Generator::Identity { .. } => Ok(x.to_vec()),
            Generator::Flow(m) => flow::generate_one_step(m, x),
        }
    }

    pub fn push_forward_batch(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Generator::Identity { .. } => Ok(xs.to_owned()),
            Generator::Flow(m) => flow::generate_one_step_batch(m, xs),
        }
    }
}

impl From<FlowModel> for Generator {
    fn from(m: FlowModel) -> Self {
        Generator::Flow(Arc::new(m))
    }
}

/// The latent-space objective `R(F(x))`.
#[derive(Debug, Clone)]
pub struct PullbackReward {
    reward: RewardSpec,
    generator: Generator,
}

impl PullbackReward {
    pub fn new(reward: RewardSpec, generator: Generator) -> Result<Self> {
        reward.validate()?;
        if let Some(d) = reward.input_dim() {
            if d != generator.dim() {
                return Err(Error::Config(format!(
                    "reward expects {d}-dimensional data but the generator produces {}",
                    generator.dim()
                )));
            }
        }
        Ok(Self { reward, generator })
    }

    pub fn reward(&self) -> &RewardSpec {
        &self.reward
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn dim(&self) -> usize {
        self.generator.dim()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Usage(format!("latent has {} entries, expected {}", x.len(), self.dim())));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.reward.value(&self.generator.push_forward(x)?))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.value_and_gradient(x).map(|(_, g)| g)
    }

    /// Value and gradient from one forward pass and one input VJP.
    /// `grad = J_F(x)^T grad R(F(x))` with `J_F = I + J_v`.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        match &self.generator {
            Generator::Identity { .. } => Ok((self.reward.value(x), self.reward.gradient(x))),
            Generator::Flow(m) => {
                let (v, tape) = diffnet::forward(&m.params, x, 0.0)?;
                let y: Vec<f64> = x.iter().zip(&v).map(|(x, v)| x + v).collect();
                let outer = self.reward.gradient(&y);
                let through = diffnet::vjp_input(&m.params, &tape, &outer)?;
                let grad = outer.iter().zip(&through).map(|(a, b)| a + b).collect();
                Ok((self.reward.value(&y), grad))
            }
        }
    }

    /// Row-wise values.
    pub fn value_batch(&self, xs: ArrayView2<f64>) -> Result<Vec<f64>> {
        let ys = self.generator.push_forward_batch(xs)?;
        Ok(ys.rows().into_iter().map(|r| self.reward.value(r.as_slice().expect("row-major"))).collect())
    }

    /// Row-wise values and gradients using batched network evaluation.
    pub fn value_and_gradient_batch(&self, xs: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        let (n, d) = xs.dim();
        if d != self.dim() {
            return Err(Error::Usage(format!("latents have {d} columns, expected {}", self.dim())));
        }
        let ys = match &self.generator {
            Generator::Identity { .. } => xs.to_owned(),
            Generator::Flow(m) => {
                let ts = vec![0.0; n];
                let (v, tape) = diffnet::forward_batch(&m.params, xs, &ts)?;
                let ys = &xs + &v;
                let (values, outer) = self.reward_rows(&ys);
                let (through, _) = diffnet::backward_batch(&m.params, &tape, outer.view(), false)?;
                return Ok((values, outer + through));
            }
        };
        Ok(self.reward_rows(&ys))
    }

    fn reward_rows(&self, ys: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
        let mut grads = Array2::zeros(ys.dim());
        let values = ys
            .rows()
            .into_iter()
            .zip(grads.rows_mut())
            .map(|(y, mut g)| {
                let y = y.as_slice().expect("row-major");
                g.assign(&ndarray::aview1(&self.reward.gradient(y)));
                self.reward.value(y)
            })
            .collect();
        (values, grads)
    }
}

pub fn eval_pullback(pr: &PullbackReward, x: &[f64]) -> Result<f64> {
    pr.value(x)
}

pub fn grad_pullback(pr: &PullbackReward, x: &[f64]) -> Result<Vec<f64>> {
    pr.gradient(x)
}

// ---------------------------------------------------------------------------
// Orientation reward
// ---------------------------------------------------------------------------

/// Euler angle of an object orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Angle {
    Azimuth,
    Polar,
    Rotation,
}

impl Angle {
    pub const ALL: [Angle; 3] = [Angle::Azimuth, Angle::Polar, Angle::Rotation];

    /// One-degree bins: 360 for azimuth and rotation, 180 for polar.
    pub fn n_bins(self) -> usize {
        match self {
            Angle::Polar => 180,
            _ => 360,
        }
    }

    pub fn circular(self) -> bool {
        !matches!(self, Angle::Polar)
    }

    /// Target spread in degrees.
    pub fn default_sigma(self) -> f64 {
        match self {
            Angle::Azimuth => 20.0,
            Angle::Polar => 2.0,
            Angle::Rotation => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Angle::Azimuth => "azimuth",
            Angle::Polar => "polar",
            Angle::Rotation => "rotation",
        }
    }

    pub fn parse(s: &str) -> Option<Angle> {
        Angle::ALL.into_iter().find(|a| a.name() == s.trim())
    }
}

/// Probability mass over one-degree angle bins. Bin `k` represents the angle
/// `k` degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalAngleDist {
    probs: Vec<f64>,
    circular: bool,
}

impl CategoricalAngleDist {
    pub fn new(probs: Vec<f64>, circular: bool) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Config("categorical distribution needs at least one bin".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::Config("bin probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("bin probabilities sum to {total}, expected 1")));
        }
        Ok(Self { probs, circular })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_bins(&self) -> usize {
        self.probs.len()
    }

    pub fn circular(&self) -> bool {
        self.circular
    }
}

/// Gaussian density at each bin value, wrapped over two full turns on each
/// side when `circular`, renormalized to sum to one.
pub fn discretize_gaussian(center: f64, sigma: f64, n_bins: usize, circular: bool) -> Result<CategoricalAngleDist> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    if n_bins == 0 || !(0.0..n_bins as f64).contains(&center) {
        return Err(Error::Config(format!("center {center} outside [0, {n_bins})")));
    }
    let period = n_bins as f64;
    let wraps: &[f64] = if circular { &[-2.0, -1.0, 0.0, 1.0, 2.0] } else { &[0.0] };
    let mut probs: Vec<f64> = (0..n_bins)
        .map(|k| {
            wraps
                .iter()
                .map(|m| {
                    let z = (k as f64 - center + m * period) / sigma;
                    (-0.5 * z * z).exp()
                })
                .sum()
        })
        .collect();
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical(format!("discretized Gaussian (center {center}, sigma {sigma}) has no mass")));
    }
    probs.iter_mut().for_each(|p| *p /= total);
    CategoricalAngleDist::new(probs, circular)
}

/// Floor applied to target bins before taking logs.
pub const KL_FLOOR: f64 = 1e-12;

/// `KL(p || q) = sum_k p_k log(p_k / q_k)`; empty bins of `p` contribute zero.
pub fn kl_categorical(p: &CategoricalAngleDist, q: &CategoricalAngleDist) -> Result<f64> {
    if p.n_bins() != q.n_bins() {
        return Err(Error::Usage(format!("bin counts differ: {} vs {}", p.n_bins(), q.n_bins())));
    }
    let kl: f64 = p
        .probs
        .iter()
        .zip(&q.probs)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &qk)| pk * (pk / qk.max(KL_FLOOR)).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// Reference orientation of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationTarget {
    pub azimuth: f64,
    pub polar: f64,
    pub rotation: f64,
    pub sigmas: [f64; 3],
}

impl OrientationTarget {
    pub fn new(azimuth: f64, polar: f64, rotation: f64) -> Self {
        Self {
            azimuth,
            polar,
            rotation,
            sigmas: Angle::ALL.map(Angle::default_sigma),
        }
    }

    pub fn angle(&self, a: Angle) -> f64 {
        match a {
            Angle::Azimuth => self.azimuth,
            Angle::Polar => self.polar,
            Angle::Rotation => self.rotation,
        }
    }

    pub fn sigma(&self, a: Angle) -> f64 {
        self.sigmas[a as usize]
    }

    /// Discretized-Gaussian target distribution for every angle.
    pub fn distributions(&self) -> Result<ObjectOrientation> {
        let mut out = ObjectOrientation::default();
        for a in Angle::ALL {
            out.insert(a, discretize_gaussian(self.angle(a), self.sigma(a), a.n_bins(), a.circular())?);
        }
        Ok(out)
    }
}

/// Per-angle distributions of one object (either predicted or target).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectOrientation {
    dists: BTreeMap<Angle, CategoricalAngleDist>,
}

impl ObjectOrientation {
    pub fn insert(&mut self, angle: Angle, dist: CategoricalAngleDist) {
        self.dists.insert(angle, dist);
    }

    pub fn get(&self, angle: Angle) -> Option<&CategoricalAngleDist> {
        self.dists.get(&angle)
    }
}

/// `-(1/N) sum_i sum_{j in angles} KL(pred_ij || target_ij)`.
pub fn orientation_reward_against(
    preds: &[ObjectOrientation],
    targets: &[ObjectOrientation],
    angles: &[Angle],
) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::Usage(format!(
            "need the same positive number of predictions and targets, got {} and {}",
            preds.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (i, (p, q)) in preds.iter().zip(targets).enumerate() {
        for &a in angles {
            let (Some(pd), Some(qd)) = (p.get(a), q.get(a)) else {
                return Err(Error::Usage(format!("object {i} lacks a {} distribution", a.name())));
            };
            total += kl_categorical(pd, qd)?;
        }
    }
    // `0 - x` rather than `-x`, so a perfect match is +0.
    Ok(0.0 - total / preds.len() as f64)
}

/// Orientation reward against discretized-Gaussian targets built from
/// reference angles.
pub fn orientation_reward(preds: &[ObjectOrientation], targets: &[OrientationTarget], angles: &[Angle]) -> Result<f64> {
    let target_dists = targets.iter().map(OrientationTarget::distributions).collect::<Result<Vec<_>>>()?;
    orientation_reward_against(preds, &target_dists, angles)
}

/// Read per-object angle distributions from CSV with header
/// `object_id,angle_name,bin,probability`. Bins not listed carry zero mass.
/// Objects are returned in ascending `object_id` order.
pub fn read_orientation_csv<R: Read>(reader: R) -> Result<Vec<ObjectOrientation>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    let expected = ["object_id", "angle_name", "bin", "probability"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse { line: 1, message: format!("expected header {}", expected.join(",")) });
    }
    let mut raw: BTreeMap<u64, BTreeMap<Angle, Vec<f64>>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let bad = |message: String| Error::Parse { line, message };
        let object: u64 = rec[0].parse().map_err(|_| bad(format!("bad object_id {:?}", &rec[0])))?;
        let angle = Angle::parse(&rec[1]).ok_or_else(|| bad(format!("unknown angle {:?}", &rec[1])))?;
        let bin: usize = rec[2].parse().map_err(|_| bad(format!("bad bin {:?}", &rec[2])))?;
        let p: f64 = rec[3].parse().map_err(|_| bad(format!("bad probability {:?}", &rec[3])))?;
        if bin >= angle.n_bins() {
            return Err(bad(format!("bin {bin} out of range for {}", angle.name())));
        }
        raw.entry(object).or_default().entry(angle).or_insert_with(|| vec![0.0; angle.n_bins()])[bin] += p;
    }
    raw.into_values()
        .map(|angles| {
            let mut obj = ObjectOrientation::default();
            for (a, probs) in angles {
                obj.insert(a, CategoricalAngleDist::new(probs, a.circular())?);
            }
            Ok(obj)
        })
        .collect()
}
