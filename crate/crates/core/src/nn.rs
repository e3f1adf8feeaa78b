//! Dense feed-forward networks trained with masked mini-batch SGD.
//!
//! Weights are stored `fan_in × fan_out`, so a batch of row vectors flows
//! through a layer as `Z = X·W + b`. Every layer carries a boolean mask; masked
//! (pruned) entries hold exactly zero and are never touched by an update.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Rows evaluated per forward call when scoring a whole dataset.
const EVAL_CHUNK: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
    Linear,
}

impl Activation {
    fn apply_in_place(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Linear => {}
            Activation::Softmax => {
                for mut row in z.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Array2<f64>,
    biases: Array1<f64>,
    activation: Activation,
    mask: Array2<bool>,
}

impl DenseLayer {
    /// Builds a fully trainable layer. Bias length must equal the weight column count.
    pub fn new(weights: Array2<f64>, biases: Array1<f64>, activation: Activation) -> Result<Self> {
        let (fan_in, fan_out) = weights.dim();
        if fan_in == 0 || fan_out == 0 {
            return Err(Error::config(format!(
                "layer dimensions must be positive, got {fan_in}x{fan_out}"
            )));
        }
        if biases.len() != fan_out {
            return Err(Error::config(format!(
                "bias length {} does not match fan_out {fan_out}",
                biases.len()
            )));
        }
        let mask = Array2::from_elem((fan_in, fan_out), true);
        Ok(Self { weights, biases, activation, mask })
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Result<Self> {
        Self::new(Array2::zeros((fan_in, fan_out)), Array1::zeros(fan_out), activation)
    }

    /// Replaces the trainability mask. Entries masked out are zeroed immediately.
    pub fn with_mask(mut self, mask: Array2<bool>) -> Result<Self> {
        if mask.dim() != self.weights.dim() {
            return Err(Error::config(format!(
                "mask shape {:?} does not match weights {:?}",
                mask.dim(),
                self.weights.dim()
            )));
        }
        self.mask = mask;
        self.enforce_mask();
        Ok(self)
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn biases(&self) -> &Array1<f64> {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn pruned_count(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    /// Overwrites the weights; positions that are masked out stay at zero.
    pub fn set_weights(&mut self, weights: Array2<f64>) -> Result<()> {
        if weights.dim() != self.weights.dim() {
            return Err(Error::config(format!(
                "weight shape {:?} does not match layer {:?}",
                weights.dim(),
                self.weights.dim()
            )));
        }
        self.weights = weights;
        self.enforce_mask();
        Ok(())
    }

    pub fn set_biases(&mut self, biases: Array1<f64>) -> Result<()> {
        if biases.len() != self.fan_out() {
            return Err(Error::config("bias length does not match fan_out"));
        }
        self.biases = biases;
        Ok(())
    }

    fn enforce_mask(&mut self) {
        Zip::from(&mut self.weights).and(&self.mask).for_each(|w, &m| {
            if !m {
                *w = 0.0;
            }
        });
    }
}

/// Per-layer parameter gradients, shaped like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Everything the backward pass needs: the input and each layer's pre-activation and output.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `activations[0]` is the input batch, `activations[i + 1]` the output of layer `i`.
    pub activations: Vec<Array2<f64>>,
    pub pre_activations: Vec<Array2<f64>>,
}

impl ForwardPass {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("forward pass always holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<DenseLayer>,
    layer_names: Vec<String>,
}

/// `["hidden 0", "hidden 1", …, "output"]` for `n` weight layers.
pub fn default_layer_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| if i + 1 == n { "output".to_string() } else { format!("hidden {i}") })
        .collect()
}

impl DenseNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let names = default_layer_names(layers.len());
        Self::with_names(layers, names)
    }

    pub fn with_names(layers: Vec<DenseLayer>, layer_names: Vec<String>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        if layer_names.len() != layers.len() {
            return Err(Error::config("one name per layer is required"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::config(format!(
                    "layer {i} has fan_out {} but layer {} has fan_in {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        let last = layers.len() - 1;
        if layers[..last].iter().any(|l| l.activation == Activation::Softmax) {
            return Err(Error::config("softmax is only allowed on the output layer"));
        }
        Ok(Self { layers, layer_names })
    }

    /// Zero-weight multilayer perceptron: ReLU hidden layers and a softmax output.
    pub fn mlp(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config("an architecture needs at least an input and an output size"));
        }
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n { Activation::Softmax } else { Activation::Relu };
                DenseLayer::zeros(w[0], w[1], act)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut DenseLayer {
        &mut self.layers[index]
    }

    pub fn layer_names(&self) -> &[String] {
        &self.layer_names
    }

    /// Neuron counts per level, input first: `[784, 300, 100, 10]` for LeNet 300-100.
    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].fan_in())
            .chain(self.layers.iter().map(DenseLayer::fan_out))
            .collect()
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Number of weight entries (connections) across all layers.
    pub fn edge_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(inputs)?;
        let mut a = inputs.to_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.weights);
            z += &layer.biases;
            layer.activation.apply_in_place(&mut z);
            a = z;
        }
        Ok(a)
    }

    pub fn forward_cached(&self, inputs: ArrayView2<f64>) -> Result<ForwardPass> {
        self.check_inputs(inputs)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(inputs.to_owned());
        for layer in &self.layers {
            let prev = activations.last().expect("input pushed above");
            let mut z = prev.dot(&layer.weights);
            z += &layer.biases;
            let mut a = z.clone();
            layer.activation.apply_in_place(&mut a);
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardPass { activations, pre_activations })
    }

    /// Mean categorical cross-entropy over the batch and its exact gradients.
    ///
    /// Requires a softmax output layer. Gradients are reported for masked
    /// entries too; [`DenseNetwork::sgd_step`] ignores them.
    pub fn loss_and_gradients(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(f64, Gradients)> {
        let (loss, grads, _) = self.loss_gradients_outputs(inputs, targets)?;
        Ok((loss, grads))
    }

    /// Like [`Self::loss_and_gradients`] but also hands back the softmax outputs.
    fn loss_gradients_outputs(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(f64, Gradients, Array2<f64>)> {
        let out_layer = &self.layers[self.layers.len() - 1];
        if out_layer.activation != Activation::Softmax {
            return Err(Error::config("cross-entropy loss needs a softmax output layer"));
        }
        let batch = inputs.nrows();
        if batch == 0 {
            return Err(Error::input("empty batch"));
        }
        if targets.dim() != (batch, self.n_outputs()) {
            return Err(Error::config(format!(
                "targets have shape {:?}, expected ({batch}, {})",
                targets.dim(),
                self.n_outputs()
            )));
        }
        for (i, row) in targets.rows().into_iter().enumerate() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::input(format!("target row {i} is not one-hot")));
            }
        }

        let pass = self.forward_cached(inputs)?;
        let logits = pass.pre_activations.last().expect("at least one layer");

        // Cross-entropy straight from the logits through log-sum-exp.
        let mut loss = 0.0;
        for (row, (z, y)) in logits.rows().into_iter().zip(targets.rows()).enumerate() {
            let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            let row_loss: f64 = z.iter().zip(y).map(|(&zi, &yi)| if yi == 1.0 { lse - zi } else { 0.0 }).sum();
            if !row_loss.is_finite() {
                return Err(Error::NonFiniteLoss { row });
            }
            loss += row_loss;
        }
        loss /= batch as f64;

        let n = self.layers.len();
        let mut grad_w = Vec::with_capacity(n);
        let mut grad_b = Vec::with_capacity(n);
        let mut delta = (pass.output() - &targets) / batch as f64;
        for l in (0..n).rev() {
            grad_w.push(pass.activations[l].t().dot(&delta));
            grad_b.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].weights.t());
                match self.layers[l - 1].activation {
                    Activation::Relu => {
                        Zip::from(&mut back).and(&pass.pre_activations[l - 1]).for_each(|d, &z| {
                            if z <= 0.0 {
                                *d = 0.0;
                            }
                        });
                    }
                    Activation::Linear => {}
                    Activation::Softmax => unreachable!("softmax is rejected on hidden layers"),
                }
                delta = back;
            }
        }
        grad_w.reverse();
        grad_b.reverse();
        let output = pass.activations.into_iter().next_back().expect("non-empty");
        Ok((loss, Gradients { weights: grad_w, biases: grad_b }, output))
    }

    /// Plain SGD, `w ← w − lr·g`, applied only where the mask is set.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if grads.weights.len() != self.layers.len() || grads.biases.len() != self.layers.len() {
            return Err(Error::config("gradient layer count does not match network"));
        }
        for ((layer, gw), gb) in self.layers.iter().zip(&grads.weights).zip(&grads.biases) {
            if gw.dim() != layer.weights.dim() || gb.len() != layer.biases.len() {
                return Err(Error::config("gradient shape does not match parameters"));
            }
        }
        for ((layer, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.biases) {
            Zip::from(&mut layer.weights).and(gw).and(&layer.mask).for_each(|w, &g, &m| {
                if m {
                    *w -= learning_rate * g;
                }
            });
            layer.biases.scaled_add(-learning_rate, gb);
        }
        Ok(())
    }

    /// Predicted class per row; ties go to the lowest class index.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(inputs.nrows());
        for start in (0..inputs.nrows()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(inputs.nrows());
            let probs = self.forward(inputs.slice(ndarray::s![start..end, ..]))?;
            out.extend(probs.rows().into_iter().map(|r| argmax(r.iter().copied())));
        }
        Ok(out)
    }

    fn check_inputs(&self, inputs: ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.n_inputs() {
            return Err(Error::config(format!(
                "input has {} columns, network expects {}",
                inputs.ncols(),
                self.n_inputs()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite value in network input"));
        }
        Ok(())
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Fraction of rows whose predicted class equals the label.
pub fn evaluate(net: &DenseNetwork, inputs: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    if inputs.nrows() == 0 {
        return Err(Error::input("cannot evaluate on an empty dataset"));
    }
    if labels.len() != inputs.nrows() {
        return Err(Error::input(format!(
            "{} labels for {} inputs",
            labels.len(),
            inputs.nrows()
        )));
    }
    let predicted = net.predict(inputs)?;
    let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// One-hot matrix for the given labels.
pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), n_classes));
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::input(format!("label {l} out of range for {n_classes} classes")));
        }
        out[[i, l]] = 1.0;
    }
    Ok(out)
}

/// Serializable form of a [`DenseNetwork`]; weights flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub layer_names: Vec<String>,
    pub layers: Vec<LayerSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSnapshot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    /// Flat indices of pruned (untrainable) weights.
    #[serde(default)]
    pub pruned: Vec<usize>,
}

impl From<&DenseNetwork> for NetworkSnapshot {
    fn from(net: &DenseNetwork) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerSnapshot {
                fan_in: l.fan_in(),
                fan_out: l.fan_out(),
                activation: l.activation,
                weights: l.weights.iter().copied().collect(),
                biases: l.biases.to_vec(),
                pruned: l.mask.iter().enumerate().filter(|(_, &m)| !m).map(|(i, _)| i).collect(),
            })
            .collect();
        Self { layer_names: net.layer_names.clone(), layers }
    }
}

impl TryFrom<NetworkSnapshot> for DenseNetwork {
    type Error = Error;

    fn try_from(snap: NetworkSnapshot) -> Result<Self> {
        let layers = snap
            .layers
            .into_iter()
            .map(|l| {
                let shape = (l.fan_in, l.fan_out);
                let w = Array2::from_shape_vec(shape, l.weights)
                    .map_err(|e| Error::config(format!("weights do not fit {shape:?}: {e}")))?;
                let mut mask = Array2::from_elem(shape, true);
                for i in l.pruned {
                    if i >= l.fan_in * l.fan_out {
                        return Err(Error::config(format!("pruned index {i} out of range")));
                    }
                    mask[[i / l.fan_out, i % l.fan_out]] = false;
                }
                DenseLayer::new(w, Array1::from(l.biases), l.activation)?.with_mask(mask)
            })
            .collect::<Result<Vec<_>>>()?;
        DenseNetwork::with_names(layers, snap.layer_names)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_true")]
    pub shuffle_each_epoch: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    /// LeNet 300-100 MNIST setup: SGD at 0.05, batches of 100, 30 epochs.
    fn default() -> Self {
        Self { learning_rate: 0.05, batch_size: 100, epochs: 30, rng_seed: 0, shuffle_each_epoch: true }
    }
}

impl TrainConfig {
    pub fn validate(&self, train_len: usize) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if self.batch_size > train_len {
            return Err(Error::config(format!(
                "batch size {} exceeds training set size {train_len}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Metrics for one finished epoch. Epochs are numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub wall_time_s: f64,
    /// Fraction of the `k` strongest edges lying on complete paths, keyed by `k`.
    #[serde(default)]
    pub path_fractions: BTreeMap<usize, f64>,
}

impl ExperimentRecord {
    pub fn path_fraction(&self, k: usize) -> Option<f64> {
        self.path_fractions.get(&k).copied()
    }

    pub fn val_error(&self) -> f64 {
        1.0 - self.val_accuracy
    }
}

/// Per-epoch callback attached to [`train`].
pub trait EpochHook {
    /// Sees the network before the first update.
    fn before_training(&mut self, _net: &DenseNetwork) -> Result<()> {
        Ok(())
    }

    fn after_epoch(&mut self, net: &DenseNetwork, record: &mut ExperimentRecord) -> Result<()>;
}

/// Runs `config.epochs` epochs of masked mini-batch SGD.
///
/// Deterministic for a given seed: the run RNG only drives the per-epoch
/// shuffle, and all arithmetic is single-threaded.
pub fn train(
    net: &mut DenseNetwork,
    train_set: &Dataset,
    validation: &Dataset,
    config: &TrainConfig,
    hooks: &mut [&mut dyn EpochHook],
) -> Result<Vec<ExperimentRecord>> {
    if config.epochs == 0 {
        return Ok(Vec::new());
    }
    let n = train_set.len();
    if n == 0 {
        return Err(Error::input("training set is empty"));
    }
    config.validate(n)?;
    if train_set.n_features() != net.n_inputs() {
        return Err(Error::config(format!(
            "dataset has {} features, network expects {}",
            train_set.n_features(),
            net.n_inputs()
        )));
    }
    let n_classes = net.n_outputs();
    let all_targets = one_hot(train_set.labels(), n_classes)?;

    for hook in hooks.iter_mut() {
        hook.before_training(net)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let started = Instant::now();

    for epoch in 1..=config.epochs {
        if config.shuffle_each_epoch {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let x = train_set.images().select(Axis(0), idx);
            let y = all_targets.select(Axis(0), idx);
            let (loss, grads, probs) = match net.loss_gradients_outputs(x.view(), y.view()) {
                Ok(v) => v,
                Err(Error::NonFiniteLoss { .. }) => return Err(Error::Diverged { epoch, step }),
                Err(e) => return Err(e),
            };
            loss_sum += loss * idx.len() as f64;
            correct += probs
                .rows()
                .into_iter()
                .zip(idx)
                .filter(|(p, &i)| argmax(p.iter().copied()) == train_set.labels()[i])
                .count();
            net.sgd_step(&grads, config.learning_rate)?;
        }
        let mut record = ExperimentRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
            val_accuracy: evaluate(net, validation.images().view(), validation.labels())?,
            wall_time_s: started.elapsed().as_secs_f64(),
            path_fractions: BTreeMap::new(),
        };
        for hook in hooks.iter_mut() {
            hook.after_epoch(net, &mut record)?;
        }
        records.push(record);
    }
    Ok(records)
}
