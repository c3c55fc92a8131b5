//! A small reverse-mode evaluator for the velocity MLP.
//!
//! The network maps `[x, t]` (data dimension `d` plus one time coordinate)
//! through `hidden_depth` tanh layers of `hidden_width` units to a linear
//! `d`-dimensional output. Two evaluation paths exist:
//!
//! * [`forward`] / [`vjp_input`] / [`vjp_params`] work on one point and keep an
//!   [`EvaluationTape`]. Samplers and gradient checks use this path.
//! * [`forward_batch`] / [`backward_batch`] work on a row-major batch and are
//!   backed by matrix products. Training and ensemble sampling use this path.
//!
//! Both paths are pure: parameters are never mutated by evaluation.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Shape of the velocity MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub hidden_depth: usize,
    pub output_dim: usize,
}

impl Architecture {
    /// Time-conditioned velocity network for `data_dim`-dimensional data.
    pub fn velocity(data_dim: usize, hidden_width: usize, hidden_depth: usize) -> Self {
        Self {
            input_dim: data_dim + 1,
            hidden_width,
            hidden_depth,
            output_dim: data_dim,
        }
    }

    pub fn data_dim(&self) -> usize {
        self.output_dim
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_depth + 1
    }

    /// `(fan_out, fan_in)` for every linear layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.num_layers());
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_depth {
            shapes.push((self.hidden_width, fan_in));
            fan_in = self.hidden_width;
        }
        shapes.push((self.output_dim, fan_in));
        shapes
    }

    pub fn num_parameters(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_width == 0 || self.hidden_depth == 0 || self.output_dim == 0 {
            return Err(Error::Config(format!("architecture dimensions must be positive: {self:?}")));
        }
        if self.input_dim != self.output_dim + 1 {
            return Err(Error::Config(format!(
                "velocity network needs input_dim = output_dim + 1, got {} and {}",
                self.input_dim, self.output_dim
            )));
        }
        Ok(())
    }
}

impl Default for Architecture {
    /// Four hidden layers of width 128 on 2D data.
    fn default() -> Self {
        Self::velocity(2, 128, 4)
    }
}

/// Weights and biases of the velocity MLP. Weight matrices are stored
/// `(fan_out, fan_in)`.
///
/// The same structure doubles as a parameter-space gradient (see
/// [`ParamGradient`]).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

pub type ParamGradient = NetworkParams;

impl NetworkParams {
    /// Fan-in scaled uniform weights, zero biases. Each weight is drawn from
    /// `U(-a, a)` with `a = scale * sqrt(3 / fan_in)`, giving variance
    /// `scale^2 / fan_in`.
    pub fn init(arch: Architecture, seed: u64, scale: f64) -> Result<Self> {
        arch.validate()?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("init scale must be positive, got {scale}")));
        }
        let mut rng = rng::stream(seed, streams::INIT);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_out, fan_in) in arch.layer_shapes() {
            let bound = scale * (3.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..bound));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self { arch, weights, biases })
    }

    pub fn zeros(arch: Architecture) -> Self {
        let (weights, biases) = arch
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| (Array2::zeros((o, i)), Array1::zeros(o)))
            .unzip();
        Self { arch, weights, biases }
    }

    /// Assemble parameters from explicit arrays, checking shapes and finiteness.
    pub fn from_parts(arch: Architecture, weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if weights.len() != shapes.len() || biases.len() != shapes.len() {
            return Err(Error::Config(format!(
                "expected {} layers, got {} weight matrices and {} bias vectors",
                shapes.len(),
                weights.len(),
                biases.len()
            )));
        }
        for (l, ((w, b), &(o, i))) in weights.iter().zip(&biases).zip(&shapes).enumerate() {
            if w.dim() != (o, i) || b.len() != o {
                return Err(Error::Config(format!(
                    "layer {l}: expected weight {o}x{i} and bias {o}, got {:?} and {}",
                    w.dim(),
                    b.len()
                )));
            }
            if !w.iter().chain(b.iter()).all(|v| v.is_finite()) {
                return Err(Error::Config(format!("layer {l} contains non-finite parameters")));
            }
        }
        Ok(Self { arch, weights, biases })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// All parameters in layer order; each layer contributes its weights
    /// (row-major) followed by its bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }

    /// Mutable counterpart of [`values`](Self::values), same order.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    /// Frobenius inner product with another parameter set of the same shape.
    pub fn dot(&self, other: &NetworkParams) -> f64 {
        self.values().zip(other.values()).map(|(a, b)| a * b).sum()
    }

    fn check_compatible(&self, arch: Architecture, what: &str) -> Result<()> {
        if self.arch != arch {
            return Err(Error::Usage(format!(
                "{what} was produced for {arch:?} but parameters have {:?}",
                self.arch
            )));
        }
        Ok(())
    }
}

/// Cached activations from one single-point forward pass.
#[derive(Debug, Clone)]
pub struct EvaluationTape {
    arch: Architecture,
    input: Array1<f64>,
    /// One `(pre_activation, post_activation)` pair per linear layer.
    layers: Vec<(Array1<f64>, Array1<f64>)>,
}

impl EvaluationTape {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn pre_activation(&self, layer: usize) -> &Array1<f64> {
        &self.layers[layer].0
    }

    pub fn post_activation(&self, layer: usize) -> &Array1<f64> {
        &self.layers[layer].1
    }
}

fn check_point(params: &NetworkParams, x: &[f64], t: f64) -> Result<()> {
    let d = params.arch.data_dim();
    if x.len() != d {
        return Err(Error::Config(format!("network expects {d}-dimensional input, got {}", x.len())));
    }
    if !t.is_finite() || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite network input x={x:?}, t={t}")));
    }
    Ok(())
}

/// Evaluate the velocity `v(x, t)` and record the tape needed for VJPs.
pub fn forward(params: &NetworkParams, x: &[f64], t: f64) -> Result<(Vec<f64>, EvaluationTape)> {
    check_point(params, x, t)?;
    let mut input = Array1::zeros(params.arch.input_dim);
    input.slice_mut(s![..x.len()]).assign(&ndarray::aview1(x));
    input[x.len()] = t;

    let last = params.arch.num_layers() - 1;
    let mut layers: Vec<(Array1<f64>, Array1<f64>)> = Vec::with_capacity(last + 1);
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let prev = if l == 0 { &input } else { &layers[l - 1].1 };
        let pre = w.dot(prev) + b;
        let post = if l < last { pre.mapv(f64::tanh) } else { pre.clone() };
        layers.push((pre, post));
    }
    let out = layers[last].1.to_vec();
    Ok((out, EvaluationTape { arch: params.arch, input, layers }))
}

/// Backpropagate `cotangent` through the tape. Returns the gradient with
/// respect to the full network input (including `t`) and, when requested, the
/// parameter gradient.
fn backward_point(
    params: &NetworkParams,
    tape: &EvaluationTape,
    cotangent: &[f64],
    want_params: bool,
) -> Result<(Array1<f64>, Option<ParamGradient>)> {
    params.check_compatible(tape.arch, "tape")?;
    if cotangent.len() != params.arch.output_dim {
        return Err(Error::Usage(format!(
            "cotangent has {} entries, network output has {}",
            cotangent.len(),
            params.arch.output_dim
        )));
    }
    let mut grads = want_params.then(|| NetworkParams::zeros(params.arch));
    let mut delta = Array1::from(cotangent.to_vec());
    for l in (0..params.arch.num_layers()).rev() {
        let prev = if l == 0 { &tape.input } else { &tape.layers[l - 1].1 };
        if let Some(g) = grads.as_mut() {
            let outer = delta
                .view()
                .insert_axis(Axis(1))
                .dot(&prev.view().insert_axis(Axis(0)));
            g.weights[l] = outer;
            g.biases[l] = delta.clone();
        }
        let mut next = params.weights[l].t().dot(&delta);
        if l > 0 {
            Zip::from(&mut next).and(prev).for_each(|d, &a| *d *= 1.0 - a * a);
        }
        delta = next;
    }
    Ok((delta, grads))
}

/// `J^T u` where `J` is the Jacobian of the output with respect to `x`
/// (the time coordinate is excluded).
pub fn vjp_input(params: &NetworkParams, tape: &EvaluationTape, cotangent: &[f64]) -> Result<Vec<f64>> {
    let (full, _) = backward_point(params, tape, cotangent, false)?;
    Ok(full.slice(s![..params.arch.data_dim()]).to_vec())
}

/// Parameter gradient of `<cotangent, output>`.
pub fn vjp_params(params: &NetworkParams, tape: &EvaluationTape, cotangent: &[f64]) -> Result<ParamGradient> {
    let (_, grads) = backward_point(params, tape, cotangent, true)?;
    Ok(grads.expect("parameter gradient requested"))
}

/// Post-activations of a batched forward pass.
#[derive(Debug, Clone)]
pub struct BatchTape {
    arch: Architecture,
    input: Array2<f64>,
    activations: Vec<Array2<f64>>,
}

impl BatchTape {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }
}

/// Evaluate the network on `xs` (one point per row) at per-row times `ts`.
/// Returns the `(n, d)` output and a tape for [`backward_batch`].
pub fn forward_batch(params: &NetworkParams, xs: ArrayView2<f64>, ts: &[f64]) -> Result<(Array2<f64>, BatchTape)> {
    let (n, d) = xs.dim();
    if d != params.arch.data_dim() || ts.len() != n {
        return Err(Error::Config(format!(
            "batch of shape {n}x{d} with {} times does not match data dimension {}",
            ts.len(),
            params.arch.data_dim()
        )));
    }
    let mut input = Array2::zeros((n, d + 1));
    input.slice_mut(s![.., ..d]).assign(&xs);
    input.column_mut(d).assign(&ndarray::aview1(ts));

    let last = params.arch.num_layers() - 1;
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(last + 1);
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let prev = if l == 0 { &input } else { &activations[l - 1] };
        let mut z = prev.dot(&w.t());
        z += b;
        if l < last {
            z.mapv_inplace(f64::tanh);
        }
        activations.push(z);
    }
    let out = activations[last].clone();
    Ok((out, BatchTape { arch: params.arch, input, activations }))
}

/// Backpropagate per-row cotangents. Returns the `(n, d)` input gradient and,
/// when requested, the parameter gradient summed over rows.
pub fn backward_batch(
    params: &NetworkParams,
    tape: &BatchTape,
    cotangent: ArrayView2<f64>,
    want_params: bool,
) -> Result<(Array2<f64>, Option<ParamGradient>)> {
    params.check_compatible(tape.arch, "batch tape")?;
    if cotangent.dim() != (tape.batch_size(), params.arch.output_dim) {
        return Err(Error::Usage(format!(
            "cotangent shape {:?} does not match batch output ({}, {})",
            cotangent.dim(),
            tape.batch_size(),
            params.arch.output_dim
        )));
    }
    let mut grads = want_params.then(|| NetworkParams::zeros(params.arch));
    let mut delta = cotangent.to_owned();
    for l in (0..params.arch.num_layers()).rev() {
        let prev = if l == 0 { &tape.input } else { &tape.activations[l - 1] };
        if let Some(g) = grads.as_mut() {
            g.weights[l] = delta.t().dot(prev);
            g.biases[l] = delta.sum_axis(Axis(0));
        }
        let mut next = delta.dot(&params.weights[l]);
        if l > 0 {
            Zip::from(&mut next).and(prev).for_each(|d, &a| *d *= 1.0 - a * a);
        }
        delta = next;
    }
    let d = params.arch.data_dim();
    Ok((delta.slice(s![.., ..d]).to_owned(), grads))
}
