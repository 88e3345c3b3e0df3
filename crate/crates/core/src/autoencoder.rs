//! Fully connected autoencoder (20 → 12 → 20) trained with Adam.
//!
//! Hidden units use `tanh`, the output layer is linear so reconstructions of
//! faulty inputs can leave the [0, 1] training range. The loss is the mean
//! squared error over every sensor of every frame in a batch; gradients come
//! from hand-written backpropagation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Dataset, SENSOR_COUNT};
use crate::error::{Error, Result};
use crate::metrics;

pub const BOTTLENECK: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
            activation,
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.biases))
        {
            let z = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b;
            *o = self.activation.apply(z);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub layers: Vec<Layer>,
}

/// Parameter gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &AutoencoderModel) -> Self {
        Self {
            weights: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.biases.len()])
                .collect(),
        }
    }

    /// All gradient entries in the order of [`AutoencoderModel::params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}

/// Samples `U(-limit, limit)` with `limit = sqrt(6 / (fan_in + fan_out))`.
fn scaled_uniform(
    inputs: usize,
    outputs: usize,
    activation: Activation,
    rng: &mut impl Rng,
) -> Layer {
    let limit = (6.0 / (inputs + outputs) as f64).sqrt();
    let mut layer = Layer::zeros(inputs, outputs, activation);
    for w in &mut layer.weights {
        *w = rng.random_range(-limit..=limit);
    }
    layer
}

/// The standard 20 → 12 → 20 model, initialized from `seed`.
pub fn init_model(seed: u64) -> AutoencoderModel {
    AutoencoderModel::with_widths(SENSOR_COUNT, BOTTLENECK, seed)
}

impl AutoencoderModel {
    /// `input → hidden (tanh) → input (identity)` with seeded scaled-uniform
    /// weights and zero biases.
    pub fn with_widths(input: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = scaled_uniform(input, hidden, Activation::Tanh, &mut rng);
        let decoder = scaled_uniform(hidden, input, Activation::Identity, &mut rng);
        Self {
            layers: vec![encoder, decoder],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Flat copy of every parameter: per layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut rest = params;
        for layer in &mut self.layers {
            let (w, tail) = rest.split_at(layer.weights.len());
            layer.weights.copy_from_slice(w);
            let (b, tail) = tail.split_at(layer.biases.len());
            layer.biases.copy_from_slice(b);
            rest = tail;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Structural checks used when loading a model from disk.
    pub fn check_shape(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("autoencoder has no layers".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::InvalidConfig(
                    "autoencoder layer widths do not chain".into(),
                ));
            }
        }
        for l in &self.layers {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::InvalidConfig(
                    "autoencoder layer has wrong parameter count".into(),
                ));
            }
        }
        if self.input_dim() != self.output_dim() {
            return Err(Error::InvalidConfig(
                "autoencoder input and output widths differ".into(),
            ));
        }
        if !self.is_finite() {
            return Err(Error::InvalidConfig(
                "autoencoder has non-finite parameters".into(),
            ));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Per-layer activations, starting with the input itself.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let mut out = vec![0.0; layer.outputs];
            layer.forward_into(acts.last().unwrap(), &mut out);
            acts.push(out);
        }
        acts
    }

    /// Reconstruction of one normalized frame.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x).pop().unwrap())
    }

    /// Mean squared reconstruction error over all entries of the batch.
    pub fn loss(&self, batch: &[&[f64]]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut total = 0.0;
        for x in batch {
            self.check_input(x)?;
            let recon = self.activations(x).pop().unwrap();
            total += recon
                .iter()
                .zip(*x)
                .map(|(r, t)| (r - t).powi(2))
                .sum::<f64>();
        }
        Ok(total / (batch.len() * self.output_dim()) as f64)
    }

    /// Exact gradient of [`loss`](Self::loss) with respect to every parameter.
    pub fn gradient(&self, batch: &[&[f64]]) -> Result<Gradients> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut grads = Gradients::zeros_like(self);
        let scale = 2.0 / (batch.len() * self.output_dim()) as f64;
        for x in batch {
            self.check_input(x)?;
            let acts = self.activations(x);
            // dL/d(pre-activation) of the current layer
            let out = acts.last().unwrap();
            let last = self.layers.last().unwrap();
            let mut delta: Vec<f64> = out
                .iter()
                .zip(*x)
                .map(|(o, t)| scale * (o - t) * last.activation.derivative_from_output(*o))
                .collect();
            for (li, layer) in self.layers.iter().enumerate().rev() {
                let input = &acts[li];
                let gw = &mut grads.weights[li];
                for (j, d) in delta.iter().enumerate() {
                    grads.biases[li][j] += d;
                    let row = &mut gw[j * layer.inputs..(j + 1) * layer.inputs];
                    for (g, xi) in row.iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
                if li > 0 {
                    let below = self.layers[li - 1].activation;
                    delta = (0..layer.inputs)
                        .map(|i| {
                            let back: f64 = delta
                                .iter()
                                .enumerate()
                                .map(|(j, d)| d * layer.weights[j * layer.inputs + i])
                                .sum();
                            back * below.derivative_from_output(input[i])
                        })
                        .collect();
                }
            }
        }
        Ok(grads)
    }

    pub fn reconstruct_dataset(&self, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
        dataset
            .frames()
            .iter()
            .map(|f| self.forward(&f.values))
            .collect()
    }

    /// Per-sensor R² of the reconstruction against the (normalized) input.
    pub fn reconstruction_r2(&self, dataset: &Dataset) -> Result<Vec<Result<f64>>> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let recon = self.reconstruct_dataset(dataset)?;
        Ok((0..self.output_dim())
            .map(|s| {
                let actual = dataset.column(s);
                let predicted: Vec<f64> = recon.iter().map(|r| r[s]).collect();
                metrics::r_squared(&actual, &predicted, s)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            early_stop_patience: 25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::InvalidConfig(
                "epochs, batch_size and early_stop_patience must be at least 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "learning_rate must be finite and positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochLoss>,
    /// Index of the epoch whose parameters were kept.
    pub best_epoch: usize,
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Mini-batch Adam training with best-validation checkpointing and early
/// stopping. Batch order is drawn from `config.seed`.
pub fn train(
    model: &AutoencoderModel,
    train: &Dataset,
    validation: &Dataset,
    config: &TrainConfig,
) -> Result<(AutoencoderModel, TrainTrace)> {
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let train_rows = train.rows();
    let val_rows = validation.rows();

    let mut current = model.clone();
    let mut params = current.params();
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_rows.len()).collect();

    let mut best = (f64::INFINITY, current.clone(), 0);
    let mut trace = TrainTrace::default();
    let mut stale = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut weighted_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| train_rows[i]).collect();
            weighted_loss += current.loss(&batch)? * batch.len() as f64;
            let grad = current.gradient(&batch)?.flatten();
            adam.update(&mut params, &grad);
            current.set_params(&params);
        }
        let train_loss = weighted_loss / train_rows.len() as f64;
        let validation_loss = current.loss(&val_rows)?;
        if !(train_loss.is_finite() && validation_loss.is_finite()) {
            return Err(Error::DivergedLoss { epoch });
        }
        trace.epochs.push(EpochLoss {
            train_loss,
            validation_loss,
        });

        if validation_loss < best.0 {
            best = (validation_loss, current.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                break;
            }
        }
    }
    trace.best_epoch = best.2;
    Ok((best.1, trace))
}
