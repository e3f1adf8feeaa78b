//! Experiment configuration files and the built-in presets.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use lightnet::init::{InitKind, InitializerSpec};
use lightnet::nn::TrainConfig;
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub name: String,
    /// Neuron counts per level, input first. Hidden layers use ReLU, the output softmax.
    pub architecture: Vec<usize>,
    /// One training run (or curve) per initializer.
    pub initializers: Vec<InitializerSpec>,
    pub training: TrainConfig,
    #[serde(default = "one")]
    pub repeats: usize,
    /// Repeat `r` uses seed `seed + r` for both initialization and shuffling.
    #[serde(default)]
    pub seed: u64,
    /// `k` values for the per-epoch complete-path tracker.
    #[serde(default)]
    pub path_tracking: Vec<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    pub experiment: ExperimentKind,
}

fn default_schema() -> u32 {
    CONFIG_SCHEMA
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Cache root holding `mnist/`; defaults to `$LIGHTNET_CACHE` or `~/.cache/lightnet`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Directory with the four IDX files of any size (skips the MNIST size check).
    #[serde(default)]
    pub idx_dir: Option<PathBuf>,
    /// Use only the first `n` training samples.
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
    #[serde(default)]
    pub offline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentKind {
    Train,
    PruneReinit {
        active_fractions: Vec<f64>,
        magnitude: f64,
        /// Child training epochs; defaults to the parent's.
        #[serde(default)]
        child_epochs: Option<usize>,
    },
    PathCurve {
        grid: Grid,
        trials: usize,
    },
    ParamStudy {
        lightnings: Vec<usize>,
        strengths: Vec<f64>,
    },
    Cdf,
}

impl ExperimentKind {
    pub fn command(&self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::PruneReinit { .. } => "prune-reinit",
            ExperimentKind::PathCurve { .. } => "path-curve",
            ExperimentKind::ParamStudy { .. } => "param-study",
            ExperimentKind::Cdf => "cdf",
        }
    }
}

/// Edge counts for a path curve: explicit values or an even range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<usize>),
    Range { start: usize, end: usize, points: usize },
}

impl Grid {
    pub fn values(&self) -> Vec<usize> {
        match self {
            Grid::Values(v) => v.clone(),
            Grid::Range { start, end, points } => lightnet::analysis::linear_grid(*start, *end, *points),
        }
    }
}

impl ExperimentConfig {
    pub fn total_edges(&self) -> usize {
        self.architecture.windows(2).map(|w| w[0] * w[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.schema_version == CONFIG_SCHEMA,
            "config schema version {} is not supported (expected {CONFIG_SCHEMA})",
            self.schema_version
        );
        ensure!(self.architecture.len() >= 2, "architecture needs at least two levels");
        ensure!(!self.architecture.contains(&0), "layer sizes must be positive");
        ensure!(self.repeats >= 1, "repeats must be at least 1");
        ensure!(!self.initializers.is_empty(), "at least one initializer is required");
        for init in &self.initializers {
            init.validate()?;
        }
        ensure!(self.training.learning_rate > 0.0, "learning rate must be positive");
        ensure!(self.training.batch_size > 0, "batch size must be positive");
        let total = self.total_edges();
        if let Some(&k) = self.path_tracking.iter().find(|&&k| k > total) {
            bail!("path tracking k = {k} exceeds the {total} edges");
        }
        match &self.experiment {
            ExperimentKind::PruneReinit { active_fractions, magnitude, .. } => {
                ensure!(!active_fractions.is_empty(), "no active fractions given");
                for &f in active_fractions {
                    ensure!(f > 0.0 && f <= 1.0, "active fraction {f} is outside (0, 1]");
                }
                ensure!(*magnitude > 0.0, "reinit magnitude must be positive");
            }
            ExperimentKind::PathCurve { grid, trials } => {
                ensure!(*trials >= 1, "trials must be at least 1");
                let values = grid.values();
                ensure!(!values.is_empty(), "empty grid");
                ensure!(values.windows(2).all(|w| w[0] < w[1]), "grid must be strictly increasing");
                if let Some(&k) = values.iter().find(|&&k| k > total) {
                    bail!("grid value {k} exceeds the {total} edges");
                }
            }
            ExperimentKind::ParamStudy { lightnings, strengths } => {
                ensure!(!lightnings.is_empty() && !strengths.is_empty(), "parameter grid is empty");
                ensure!(strengths.iter().all(|&s| s > 0.0), "strengths must be positive");
            }
            ExperimentKind::Train | ExperimentKind::Cdf => {}
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }
}

fn lenet() -> Vec<usize> {
    lightnet::LENET_300_100.to_vec()
}

fn spec(kind: InitKind) -> InitializerSpec {
    InitializerSpec::new(kind, 0)
}

/// Glorot uniform, He normal, truncated normal (std 0.1) and lightning (1000 × 0.5).
fn comparison_initializers() -> Vec<InitializerSpec> {
    vec![
        spec(InitKind::Lightning { n_lightnings: 1000, strength: 0.5 }),
        spec(InitKind::GlorotUniform),
        spec(InitKind::HeNormal),
        spec(InitKind::TruncatedNormal { std: 0.1 }),
    ]
}

fn base(name: &str, experiment: ExperimentKind) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: CONFIG_SCHEMA,
        name: name.to_string(),
        architecture: lenet(),
        initializers: vec![spec(InitKind::GlorotUniform)],
        training: TrainConfig::default(),
        repeats: 1,
        seed: 0,
        path_tracking: Vec::new(),
        output_dir: None,
        data: DataConfig::default(),
        experiment,
    }
}

pub const PRESETS: &[(&str, &str)] = &[
    ("mnist-lenet-300-100", "LeNet 300-100, Glorot uniform, SGD 0.05, batch 100, 30 epochs"),
    ("init-comparison", "lightning vs Glorot/He/truncated, 30 epochs, 3 repeats"),
    ("init-comparison-desk", "init-comparison on 10k training samples, 5 epochs, 1 repeat"),
    ("paths-vs-accuracy", "Glorot runs tracking top-1000/10000 complete-path fractions, 5 repeats"),
    ("prune-reinit", "parent + children at 10-50% active, magnitude 0.1, 30 epochs each"),
    ("prune-reinit-desk", "prune-reinit with 10 child epochs"),
    ("path-curve", "Monte Carlo path curve, Glorot and truncated, 250 trials"),
    ("path-curve-desk", "path curve with 50 trials"),
    ("param-study", "lightning count x strength grid, 100 epochs, 5 repeats"),
    ("param-study-desk", "3x3 grid, 10k training samples, 5 epochs, 1 repeat"),
    ("cdf", "absolute-weight CDFs after 30 epochs for all four initializers"),
];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let fractions = vec![0.1, 0.2, 0.3, 0.4, 0.5];
    let config = match name {
        "mnist-lenet-300-100" => base(name, ExperimentKind::Train),
        "init-comparison" => ExperimentConfig {
            initializers: comparison_initializers(),
            repeats: 3,
            ..base(name, ExperimentKind::Train)
        },
        "init-comparison-desk" => ExperimentConfig {
            initializers: comparison_initializers(),
            training: TrainConfig { epochs: 5, ..TrainConfig::default() },
            data: DataConfig { train_limit: Some(10_000), ..DataConfig::default() },
            ..base(name, ExperimentKind::Train)
        },
        "paths-vs-accuracy" => ExperimentConfig {
            repeats: 5,
            path_tracking: vec![1000, 10_000],
            ..base(name, ExperimentKind::Train)
        },
        "prune-reinit" => base(
            name,
            ExperimentKind::PruneReinit { active_fractions: fractions, magnitude: 0.1, child_epochs: None },
        ),
        "prune-reinit-desk" => base(
            name,
            ExperimentKind::PruneReinit { active_fractions: fractions, magnitude: 0.1, child_epochs: Some(10) },
        ),
        "path-curve" | "path-curve-desk" => ExperimentConfig {
            initializers: vec![spec(InitKind::GlorotUniform), spec(InitKind::TruncatedNormal { std: 0.1 })],
            ..base(
                name,
                ExperimentKind::PathCurve {
                    grid: Grid::Range { start: 0, end: 40_000, points: 401 },
                    trials: if name == "path-curve" { 250 } else { 50 },
                },
            )
        },
        "param-study" => ExperimentConfig {
            repeats: 5,
            training: TrainConfig { epochs: 100, ..TrainConfig::default() },
            ..base(
                name,
                ExperimentKind::ParamStudy {
                    lightnings: vec![100, 300, 1000, 3000, 10_000],
                    strengths: vec![0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0],
                },
            )
        },
        "param-study-desk" => ExperimentConfig {
            training: TrainConfig { epochs: 5, ..TrainConfig::default() },
            data: DataConfig { train_limit: Some(10_000), ..DataConfig::default() },
            ..base(
                name,
                ExperimentKind::ParamStudy { lightnings: vec![100, 1000, 10_000], strengths: vec![0.05, 0.5, 5.0] },
            )
        },
        "cdf" => ExperimentConfig { initializers: comparison_initializers(), ..base(name, ExperimentKind::Cdf) },
        other => {
            let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            bail!("unknown preset {other:?}; known presets: {}", known.join(", "))
        }
    };
    Ok(config)
}
