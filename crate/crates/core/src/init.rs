//! Weight initializers: the usual random baselines and the lightning initializer.
//!
//! A lightning is one complete input→output path, chosen by drawing a neuron
//! uniformly at random in every level. All edges on at least one lightning
//! get magnitude `strength` with an independent random sign; every other
//! weight is zero. Edges shared by several lightnings are not summed.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::DenseNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightningConfig {
    pub n_lightnings: usize,
    pub strength: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl LightningConfig {
    pub fn new(n_lightnings: usize, strength: f64, rng_seed: u64) -> Self {
        Self { n_lightnings, strength, rng_seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strength > 0.0 && self.strength.is_finite()) {
            return Err(Error::config(format!("lightning strength must be positive, got {}", self.strength)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitKind {
    GlorotUniform,
    HeNormal,
    TruncatedNormal { std: f64 },
    Lightning { n_lightnings: usize, strength: f64 },
}

impl InitKind {
    /// Short label used in file names and CSV columns.
    pub fn label(&self) -> String {
        match self {
            InitKind::GlorotUniform => "glorot".into(),
            InitKind::HeNormal => "he".into(),
            InitKind::TruncatedNormal { std } => format!("truncated-{std}"),
            InitKind::Lightning { n_lightnings, strength } => format!("lightning-{n_lightnings}-{strength}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitializerSpec {
    #[serde(flatten)]
    pub kind: InitKind,
    #[serde(default)]
    pub rng_seed: u64,
}

impl InitializerSpec {
    pub fn new(kind: InitKind, rng_seed: u64) -> Self {
        Self { kind, rng_seed }
    }

    pub fn with_seed(self, rng_seed: u64) -> Self {
        Self { rng_seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            InitKind::TruncatedNormal { std } if !(std > 0.0 && std.is_finite()) => {
                Err(Error::config(format!("truncated normal std must be positive, got {std}")))
            }
            InitKind::Lightning { n_lightnings, strength } => {
                LightningConfig::new(n_lightnings, strength, self.rng_seed).validate()
            }
            _ => Ok(()),
        }
    }

    /// Weight matrices (`fan_in × fan_out`) for consecutive pairs of `layer_sizes`.
    pub fn weights(&self, layer_sizes: &[usize]) -> Result<Vec<Array2<f64>>> {
        self.validate()?;
        check_sizes(layer_sizes)?;
        if let InitKind::Lightning { n_lightnings, strength } = self.kind {
            return init_lightning(layer_sizes, &LightningConfig::new(n_lightnings, strength, self.rng_seed));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        Ok(layer_sizes
            .windows(2)
            .map(|w| match self.kind {
                InitKind::GlorotUniform => init_glorot_uniform(w[0], w[1], &mut rng),
                InitKind::HeNormal => init_he_normal(w[0], w[1], &mut rng),
                InitKind::TruncatedNormal { std } => init_truncated_normal(w[0], w[1], std, &mut rng),
                InitKind::Lightning { .. } => unreachable!(),
            })
            .collect())
    }

    /// ReLU/softmax MLP with these weights and zero biases.
    pub fn build_network(&self, layer_sizes: &[usize]) -> Result<DenseNetwork> {
        let weights = self.weights(layer_sizes)?;
        let mut net = DenseNetwork::mlp(layer_sizes)?;
        for (i, w) in weights.into_iter().enumerate() {
            net.layer_mut(i).set_weights(w)?;
        }
        Ok(net)
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::config("at least two layer sizes are required"));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::config("layer sizes must be positive"));
    }
    Ok(())
}

/// Uniform on `±√(6/(fan_in+fan_out))`.
pub fn init_glorot_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng))
}

/// Normal with mean 0 and std `√(2/fan_in)`.
pub fn init_he_normal<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite positive std");
    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng))
}

/// Normal(0, std) with every draw beyond `2·std` re-drawn.
pub fn init_truncated_normal<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, std: f64, rng: &mut R) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("std validated by caller");
    let bound = 2.0 * std;
    Array2::from_shape_simple_fn((fan_in, fan_out), || loop {
        let v: f64 = dist.sample(rng);
        if v.abs() <= bound {
            break v;
        }
    })
}

/// Samples `n_lightnings` random complete paths and weights only their edges.
pub fn init_lightning(layer_sizes: &[usize], config: &LightningConfig) -> Result<Vec<Array2<f64>>> {
    check_sizes(layer_sizes)?;
    config.validate()?;
    let mut weights: Vec<Array2<f64>> = layer_sizes.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut path = vec![0usize; layer_sizes.len()];
    for _ in 0..config.n_lightnings {
        for (node, &size) in path.iter_mut().zip(layer_sizes) {
            *node = rng.random_range(0..size);
        }
        for (layer, w) in weights.iter_mut().enumerate() {
            let edge = &mut w[[path[layer], path[layer + 1]]];
            // Untouched edges are exactly zero; a touched edge keeps its first sign.
            if *edge == 0.0 {
                *edge = if rng.random_bool(0.5) { config.strength } else { -config.strength };
            }
        }
    }
    Ok(weights)
}
