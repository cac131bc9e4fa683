//! Logistic regression, dense MLP classifiers, MLP autoencoders and their
//! training loops.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softplus, Tape, Var};
use crate::dataio::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{matmul_flags, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Softplus { beta: f64 },
}

impl Activation {
    pub const DEFAULT_SOFTPLUS_BETA: f64 = 10.0;

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Softplus { .. } => "softplus",
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Softplus { beta } => softplus(x, beta),
        }
    }

    /// Derivative, with relu'(0) = 0.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus { beta } => sigmoid(beta * x),
        }
    }

    fn record(&self, tape: &mut Tape, x: Var) -> Var {
        match *self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Softplus { beta } => tape.softplus(x, beta),
        }
    }
}

/// `y = act(x Wᵀ + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    /// `1 x out`
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.ndim() != 2 {
            return Err(Error::InvalidShape(weight.shape().to_vec()));
        }
        let bias = bias.reshape(vec![1, weight.rows()])?;
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Kaiming-uniform initialization with gain for a = √5, i.e. weights and
    /// biases uniform on ±1/√fan_in.
    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut RngState) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| rng.uniform_range(-bound, bound)).collect();
        let b = (0..outputs).map(|_| rng.uniform_range(-bound, bound)).collect();
        Self {
            weight: Tensor::from_parts(vec![outputs, inputs], w),
            bias: Tensor::from_parts(vec![1, outputs], b),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    /// Pre-activation `x Wᵀ + b` for a batch.
    pub fn preactivation(&self, x: &Tensor) -> Result<Tensor> {
        let mut z = matmul_flags(x, &self.weight, false, true)?;
        let b = self.bias.data();
        for row in z.data_mut().chunks_mut(b.len()) {
            for (v, bi) in row.iter_mut().zip(b) {
                *v += bi;
            }
        }
        Ok(z)
    }
}

/// Anything that maps a batch `N x D` to scores `N x C` and can record that
/// computation on a tape.
pub trait Classifier {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Records the forward pass; returns the pre-softmax scores.
    fn record(&self, tape: &mut Tape, x: Var) -> Result<Var>;
    fn predict(&self, x: &Tensor) -> Result<Tensor>;
}

/// Parameters placed on a tape as leaves, in layer order `[W0, b0, W1, b1, …]`.
#[derive(Debug, Clone)]
pub struct ParamVars(pub Vec<Var>);

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<DenseLayer>,
}

impl MlpModel {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("a model needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::ShapeMismatch {
                    expected: vec![pair[0].outputs()],
                    found: vec![pair[1].inputs()],
                });
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::InvalidArgument("the last layer must output raw scores".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if !l.weight.all_finite() || !l.bias.all_finite() {
                return Err(Error::InvalidArgument(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialized network with layer widths `dims` (input first);
    /// every hidden layer uses `hidden`, the last layer is linear.
    pub fn init(dims: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer widths {dims:?}")));
        }
        let mut rng = RngState::new(seed);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { hidden };
                DenseLayer::init(dims[i], dims[i + 1], act, &mut rng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs()];
        d.extend(self.layers.iter().map(|l| l.outputs()));
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameter tensors in `[W0, b0, W1, b1, …]` order.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Records the forward pass with every parameter as a differentiable leaf.
    pub fn record_with_params(&self, tape: &mut Tape, x: Var) -> Result<(Var, ParamVars)> {
        let mut params = Vec::with_capacity(2 * self.layers.len());
        let mut h = x;
        for layer in &self.layers {
            let w = tape.leaf(layer.weight.clone());
            let b = tape.leaf(layer.bias.clone());
            params.push(w);
            params.push(b);
            h = Self::record_layer(tape, layer, h, w, b)?;
        }
        Ok((h, ParamVars(params)))
    }

    fn record_layer(tape: &mut Tape, layer: &DenseLayer, h: Var, w: Var, b: Var) -> Result<Var> {
        let z = tape.matmul_t(h, w, false, true)?;
        let z = tape.add_row(z, b)?;
        Ok(layer.activation.record(tape, z))
    }

    /// Activations of every layer for a batch: `[x, a1, …, aL]`.
    pub fn activations(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        let mut acts = vec![x.clone()];
        for layer in &self.layers {
            let z = layer.preactivation(acts.last().expect("non-empty"))?;
            acts.push(z.map(|v| layer.activation.apply(v)));
        }
        Ok(acts)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![x.rows(), self.input_dim()],
                found: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Jacobian `∂f/∂x` (`out x in`) at a single point, by forward-mode
    /// propagation of the identity.
    pub fn jacobian(&self, x: &[f64]) -> Result<Tensor> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.input_dim()],
                found: vec![x.len()],
            });
        }
        let mut h = Tensor::from_parts(vec![1, x.len()], x.to_vec());
        let mut tangent = Tensor::identity(x.len());
        for layer in &self.layers {
            let z = layer.preactivation(&h)?;
            tangent = layer.weight.matmul(&tangent)?;
            if layer.activation != Activation::Identity {
                let cols = tangent.cols();
                for (r, zr) in z.data().iter().enumerate() {
                    let d = layer.activation.derivative(*zr);
                    for v in &mut tangent.data_mut()[r * cols..(r + 1) * cols] {
                        *v *= d;
                    }
                }
            }
            h = z.map(|v| layer.activation.apply(v));
        }
        Ok(tangent)
    }
}

impl Classifier for MlpModel {
    fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    fn record(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.check_input(tape.value(x))?;
        let mut h = x;
        for layer in &self.layers {
            let w = tape.constant(layer.weight.clone());
            let b = tape.constant(layer.bias.clone());
            h = Self::record_layer(tape, layer, h, w, b)?;
        }
        Ok(h)
    }

    fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.preactivation(&h)?;
            if layer.activation != Activation::Identity {
                h = h.map(|v| layer.activation.apply(v));
            }
        }
        Ok(h)
    }
}

/// `g(x) = σ(wᵀx + c)`; scores are reported before the sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub w: Vec<f64>,
    pub c: f64,
}

impl LogRegModel {
    pub fn new(w: Vec<f64>, c: f64) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidArgument("empty weight vector".into()));
        }
        if w.iter().chain([&c]).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameters".into()));
        }
        Ok(Self { w, c })
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        crate::tensor::dot(&self.w, x) + self.c
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x))
    }

    /// The same model as a one-layer network with a single output.
    pub fn to_mlp(&self) -> MlpModel {
        let d = self.w.len();
        MlpModel::from_layers(vec![DenseLayer {
            weight: Tensor::from_parts(vec![1, d], self.w.clone()),
            bias: Tensor::scalar(self.c),
            activation: Activation::Identity,
        }])
        .expect("valid single layer")
    }
}

impl Classifier for LogRegModel {
    fn input_dim(&self) -> usize {
        self.w.len()
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn record(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.to_mlp().record(tape, x)
    }

    fn predict(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.w.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![x.rows(), self.w.len()],
                found: x.shape().to_vec(),
            });
        }
        let data = (0..x.rows()).map(|i| self.score(x.row(i))).collect();
        Ok(Tensor::from_parts(vec![x.rows(), 1], data))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub encoder: MlpModel,
    pub decoder: MlpModel,
}

impl AutoencoderModel {
    pub fn new(encoder: MlpModel, decoder: MlpModel) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() || decoder.output_dim() != encoder.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![encoder.input_dim(), encoder.output_dim()],
                found: vec![decoder.output_dim(), decoder.input_dim()],
            });
        }
        Ok(Self { encoder, decoder })
    }

    /// Symmetric architecture `dims[0] → … → dims[last]` for the encoder and
    /// its mirror image for the decoder.
    pub fn init(dims: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        let encoder = MlpModel::init(dims, hidden, seed)?;
        let rev: Vec<usize> = dims.iter().rev().copied().collect();
        let decoder = MlpModel::init(&rev, hidden, seed.wrapping_add(1))?;
        Self::new(encoder, decoder)
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.predict(x)
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decoder.predict(&self.encoder.predict(x)?)
    }

    /// Mean squared reconstruction error over all entries.
    pub fn reconstruction_mse(&self, x: &Tensor) -> Result<f64> {
        let r = self.reconstruct(x)?;
        Ok(r.data().iter().zip(x.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_probs(logits: &Tensor) -> Tensor {
    let m = logits.cols();
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(m) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|x| (x - mx).exp()));
        let s: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= s);
    }
    Tensor::from_parts(vec![logits.rows(), m], out)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predicted_classes(model: &impl Classifier, x: &Tensor) -> Result<Vec<usize>> {
    let out = model.predict(x)?;
    if out.cols() == 1 {
        // single-score models: class 1 when the score is positive
        return Ok(out.data().iter().map(|&s| usize::from(s > 0.0)).collect());
    }
    Ok((0..out.rows()).map(|i| argmax(out.row(i))).collect())
}

pub fn accuracy(model: &impl Classifier, data: &LabeledDataset) -> Result<f64> {
    let pred = predicted_classes(model, data.inputs())?;
    let hits = pred.iter().zip(data.labels()).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.01,
            momentum: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it freezes the parameters.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning_rate must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::InvalidArgument("invalid Adam constants".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// SGD with (PyTorch-style) momentum `v ← μv + g, p ← p − ηv`, or Adam with
/// bias correction.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: TrainConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: &TrainConfig, shapes: &[usize]) -> Self {
        Self {
            config: config.clone(),
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: match config.optimizer {
                OptimizerKind::Adam => shapes.iter().map(|&n| vec![0.0; n]).collect(),
                OptimizerKind::Sgd => Vec::new(),
            },
            steps: 0,
        }
    }

    pub fn for_model(config: &TrainConfig, model: &MlpModel) -> Self {
        let shapes: Vec<usize> = model.params().iter().map(|t| t.len()).collect();
        Self::new(config, &shapes)
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) {
        self.steps += 1;
        let lr = self.config.learning_rate;
        match self.config.optimizer {
            OptimizerKind::Sgd => {
                let mu = self.config.momentum;
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *vi = mu * *vi + gi;
                        *pi -= lr * *vi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.eps);
                let c1 = 1.0 - b1.powi(self.steps as i32);
                let c2 = 1.0 - b2.powi(self.steps as i32);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pi, gi), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = b1 * *mi + (1.0 - b1) * gi;
                        *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *pi -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

fn one_hot_tensor(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (r, &l) in labels.iter().enumerate() {
        t.set(r, l, 1.0);
    }
    t
}

/// Mean cross-entropy of the model on a dataset.
pub fn cross_entropy(model: &MlpModel, data: &LabeledDataset) -> Result<f64> {
    let logits = model.predict(data.inputs())?;
    let m = logits.cols();
    let mut total = 0.0;
    for (i, &y) in data.labels().iter().enumerate() {
        let row = &logits.data()[i * m..(i + 1) * m];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / data.len() as f64)
}

fn check_classes(model: &MlpModel, data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some((sample, &label)) = data
        .labels()
        .iter()
        .enumerate()
        .find(|(_, &l)| l >= model.output_dim())
    {
        return Err(Error::LabelOutOfRange {
            sample,
            label,
            classes: model.output_dim(),
        });
    }
    Ok(())
}

/// Minibatch cross-entropy training. The model is consumed and the trained
/// copy returned; identical seeds reproduce identical parameters.
pub fn train_classifier(
    mut model: MlpModel,
    data: &LabeledDataset,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainHistory)> {
    config.validate()?;
    check_classes(&model, data)?;
    if data.dim() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![model.input_dim()],
            found: vec![data.dim()],
        });
    }
    let mut rng = RngState::new(config.seed);
    let mut opt = Optimizer::for_model(config, &model);
    let mut history = TrainHistory {
        initial_loss: cross_entropy(&model, data)?,
        epoch_losses: Vec::with_capacity(config.epochs),
    };
    let classes = model.output_dim();
    for epoch in 0..config.epochs {
        let order = rng.permutation(data.len());
        let mut total = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let mut tape = Tape::new();
            let x = tape.constant(data.inputs().gather_rows(batch));
            let (logits, params) = model.record_with_params(&mut tape, x)?;
            let logp = tape.log_softmax(logits);
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
            let onehot = tape.constant(one_hot_tensor(&labels, classes));
            let picked = tape.mul(logp, onehot)?;
            let s = tape.sum(picked);
            let loss = tape.scale(s, -1.0 / batch.len() as f64);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, step, loss: value });
            }
            total += value * batch.len() as f64;
            let grads = tape.grad(loss, &params.0)?;
            let grads: Vec<&Tensor> = grads.iter().map(|&g| tape.value(g)).collect();
            opt.step(&mut model.params_mut(), &grads);
        }
        history.epoch_losses.push(total / data.len() as f64);
    }
    Ok((model, history))
}

/// Minibatch training of encoder and decoder jointly on mean squared
/// reconstruction error.
pub fn train_autoencoder(
    mut model: AutoencoderModel,
    data: &LabeledDataset,
    config: &TrainConfig,
) -> Result<(AutoencoderModel, TrainHistory)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.dim() != model.encoder.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![model.encoder.input_dim()],
            found: vec![data.dim()],
        });
    }
    let mut rng = RngState::new(config.seed);
    let shapes: Vec<usize> = model
        .encoder
        .params()
        .into_iter()
        .chain(model.decoder.params())
        .map(|t| t.len())
        .collect();
    let mut opt = Optimizer::new(config, &shapes);
    let mut history = TrainHistory {
        initial_loss: model.reconstruction_mse(data.inputs())?,
        epoch_losses: Vec::with_capacity(config.epochs),
    };
    for epoch in 0..config.epochs {
        let order = rng.permutation(data.len());
        let mut total = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let mut tape = Tape::new();
            let xb = data.inputs().gather_rows(batch);
            let count = xb.len() as f64;
            let x = tape.constant(xb);
            let (z, pe) = model.encoder.record_with_params(&mut tape, x)?;
            let (r, pd) = model.decoder.record_with_params(&mut tape, z)?;
            let sq = tape.squared_distance(r, x)?;
            let loss = tape.scale(sq, 1.0 / count);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, step, loss: value });
            }
            total += value * batch.len() as f64;
            let all: Vec<Var> = pe.0.iter().chain(&pd.0).copied().collect();
            let grads = tape.grad(loss, &all)?;
            let grads: Vec<&Tensor> = grads.iter().map(|&g| tape.value(g)).collect();
            let mut params: Vec<&mut Tensor> = model.encoder.params_mut();
            params.extend(model.decoder.params_mut());
            opt.step(&mut params, &grads);
        }
        history.epoch_losses.push(total / data.len() as f64);
    }
    Ok((model, history))
}

const MODEL_MAGIC: &[u8; 8] = b"FWMODEL1";

/// Checkpoint layout (little-endian): `FWMODEL1`, u32 layer count, then per
/// layer u32 inputs, u32 outputs, u8 activation (0 identity, 1 relu,
/// 2 softplus followed by its f32 β); then every layer's weights (row-major,
/// `out x in`) and bias as f32.
pub fn encode_model(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * model.param_count());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for l in &model.layers {
        out.extend_from_slice(&(l.inputs() as u32).to_le_bytes());
        out.extend_from_slice(&(l.outputs() as u32).to_le_bytes());
        match l.activation {
            Activation::Identity => out.push(0),
            Activation::Relu => out.push(1),
            Activation::Softplus { beta } => {
                out.push(2);
                out.extend_from_slice(&(beta as f32).to_le_bytes());
            }
        }
    }
    for l in &model.layers {
        for &v in l.weight.data().iter().chain(l.bias.data()) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Decodes one model record; returns it with the number of bytes consumed.
pub fn decode_model(bytes: &[u8]) -> Result<(MlpModel, usize)> {
    let corrupt = |m: &str| Error::CorruptHeader(m.to_string());
    if bytes.len() < 12 || &bytes[..8] != MODEL_MAGIC {
        return Err(corrupt("missing FWMODEL1 magic"));
    }
    let mut at = 8;
    let u32_at = |at: &mut usize| -> Result<u32> {
        let b = bytes.get(*at..*at + 4).ok_or_else(|| corrupt("header truncated"))?;
        *at += 4;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };
    let count = u32_at(&mut at)? as usize;
    if count == 0 || count > 1024 {
        return Err(corrupt("implausible layer count"));
    }
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let i = u32_at(&mut at)? as usize;
        let o = u32_at(&mut at)? as usize;
        let tag = *bytes.get(at).ok_or_else(|| corrupt("header truncated"))?;
        at += 1;
        let act = match tag {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => {
                let beta = f32::from_le_bytes(u32_at(&mut at)?.to_le_bytes()) as f64;
                Activation::Softplus { beta }
            }
            t => return Err(corrupt(&format!("unknown activation tag {t}"))),
        };
        if i == 0 || o == 0 {
            return Err(corrupt("zero-width layer"));
        }
        specs.push((i, o, act));
    }
    let mut layers = Vec::with_capacity(count);
    for (i, o, act) in specs {
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let b = bytes
                .get(at..at + 4 * n)
                .ok_or_else(|| Error::Truncated("parameter blob".into()))?;
            at += 4 * n;
            Ok(b.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect())
        };
        let w = take(i * o)?;
        let b = take(o)?;
        layers.push(DenseLayer {
            weight: Tensor::new(vec![o, i], w)?,
            bias: Tensor::new(vec![1, o], b)?,
            activation: act,
        });
    }
    Ok((MlpModel::from_layers(layers)?, at))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    write_bytes(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let bytes = read_bytes(path)?;
    let (model, used) = decode_model(&bytes)?;
    if used != bytes.len() {
        return Err(Error::CorruptHeader(format!("{} trailing bytes", bytes.len() - used)));
    }
    Ok(model)
}

/// An autoencoder is stored as the encoder record followed by the decoder record.
pub fn save_autoencoder(model: &AutoencoderModel, path: &Path) -> Result<()> {
    let mut bytes = encode_model(&model.encoder);
    bytes.extend(encode_model(&model.decoder));
    write_bytes(path, &bytes)
}

pub fn load_autoencoder(path: &Path) -> Result<AutoencoderModel> {
    let bytes = read_bytes(path)?;
    let (encoder, used) = decode_model(&bytes)?;
    let (decoder, used2) = decode_model(&bytes[used..])?;
    if used + used2 != bytes.len() {
        return Err(Error::CorruptHeader("trailing bytes after decoder".into()));
    }
    AutoencoderModel::new(encoder, decoder)
}

/// Rounds every parameter to the nearest f32 so that the in-memory model is
/// exactly what a checkpoint stores.
pub fn round_to_f32(model: &mut MlpModel) {
    for p in model.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}
