//! Declarative run configuration: one TOML file describes the dataset, the
//! three model roles, training, distillation, pruning and benchmarking. Each
//! command resolves the file (plus presets and flag overrides) into a fully
//! explicit config, hashes it, and works inside a run directory named by the
//! hash and seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datahub::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::presets::{self, Dataset, ModelRole};
use crate::pruner::{Granularity, PruneSchedule};
use crate::train::{LossKind, TrainConfig};

/// Where the speed data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Synthetic,
    Csv,
}

fn default_split() -> [f64; 3] {
    [0.7, 0.15, 0.15]
}

fn default_input_window() -> usize {
    12
}

fn default_horizon() -> usize {
    9
}

fn default_adjacency_epsilon() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub source: SourceKind,
    /// Named network whose node count is enforced on CSV data; also the
    /// default source of hyperparameter presets.
    pub preset: Option<Dataset>,
    /// CSV source: timesteps-by-nodes speed matrix.
    pub speeds: Option<PathBuf>,
    /// CSV source: nodes-by-nodes distance matrix.
    pub distances: Option<PathBuf>,
    /// Synthetic source parameters; the run seed overrides the spec seed.
    #[serde(default)]
    pub synthetic: SyntheticSection,
    #[serde(default = "default_input_window")]
    pub input_window: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Gaussian-kernel threshold below which adjacency entries are dropped.
    #[serde(default = "default_adjacency_epsilon")]
    pub adjacency_epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_nodes: usize,
    pub n_timesteps: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection { n_nodes: 10, n_timesteps: 600 }
    }
}

/// Channel layout override for one model role.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub block1: [usize; 3],
    pub block2: [usize; 3],
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsSection {
    pub teacher: Option<ChannelSpec>,
    pub base: Option<ChannelSpec>,
    pub student: Option<ChannelSpec>,
    pub temporal_kernel: Option<usize>,
    pub spatial_order: Option<usize>,
    #[serde(default)]
    pub dropout: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 30,
            batch_size: None,
            lr: None,
            lr_decay: 0.7,
            lr_decay_every: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSection {
    pub loss: LossKind,
    pub beta: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub alpha3: Option<f64>,
}

impl Default for DistillSection {
    fn default() -> Self {
        DistillSection {
            loss: LossKind::Stcd,
            beta: None,
            alpha1: None,
            alpha2: None,
            alpha3: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSection {
    pub target_sparsity: f64,
    pub pruning_minibatch: usize,
    pub per_event_fraction: f64,
    pub granularity: Granularity,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub alpha3: Option<f64>,
}

impl Default for PruneSection {
    fn default() -> Self {
        let s = PruneSchedule::default();
        PruneSection {
            target_sparsity: s.target_sparsity,
            pruning_minibatch: s.pruning_minibatch,
            per_event_fraction: s.per_event_fraction,
            granularity: s.granularity,
            alpha1: None,
            alpha2: None,
            alpha3: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub batch: usize,
    pub chunk: usize,
    pub runs: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { batch: 1140, chunk: 32, runs: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScatterSection {
    pub samples: usize,
}

impl Default for ScatterSection {
    fn default() -> Self {
        ScatterSection { samples: 50 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Parent directory for run outputs; flag-overridable.
    pub out: Option<PathBuf>,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub models: ModelsSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub prune: PruneSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub scatter: ScatterSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("config parse failure: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(format!("config file {}", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        match self.dataset.source {
            SourceKind::Csv => {
                if self.dataset.speeds.is_none() || self.dataset.distances.is_none() {
                    return Err(Error::Config(
                        "csv dataset source needs both `speeds` and `distances` paths".into(),
                    ));
                }
            }
            SourceKind::Synthetic => {
                if self.dataset.speeds.is_some() || self.dataset.distances.is_some() {
                    return Err(Error::Config(
                        "synthetic dataset source must not name csv paths; exactly one \
                         source applies"
                            .into(),
                    ));
                }
                if self.dataset.synthetic.n_nodes == 0 || self.dataset.synthetic.n_timesteps == 0 {
                    return Err(Error::Config(
                        "synthetic dataset needs positive node and timestep counts".into(),
                    ));
                }
            }
        }
        if self.dataset.input_window == 0 || self.dataset.horizon == 0 {
            return Err(Error::Config("input_window and horizon must be positive".into()));
        }
        let sum: f64 = self.dataset.split.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.dataset.split.iter().any(|&r| r < 0.0) {
            return Err(Error::Config(format!(
                "split ratios must be nonnegative and sum to 1, got {:?}",
                self.dataset.split
            )));
        }
        self.model_config(ModelRole::Teacher)?.validate()?;
        self.model_config(ModelRole::Base)?.validate()?;
        self.model_config(ModelRole::Student)?.validate()?;
        self.train_config(None)?.validate()?;
        self.prune_schedule().validate()?;
        Ok(())
    }

    /// Number of graph nodes the run operates on.
    pub fn n_nodes(&self) -> usize {
        match self.dataset.source {
            SourceKind::Synthetic => self.dataset.synthetic.n_nodes,
            SourceKind::Csv => self
                .dataset
                .preset
                .map(|d| d.n_nodes())
                .unwrap_or(0),
        }
    }

    /// Synthetic generation spec with the run seed folded in.
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_nodes: self.dataset.synthetic.n_nodes,
            n_timesteps: self.dataset.synthetic.n_timesteps,
            seed: self.seed,
            ..SyntheticSpec::default()
        }
    }

    /// Resolved architecture for one role: explicit channels if given,
    /// otherwise the published preset layout scaled to this run's node
    /// count and window.
    pub fn model_config(&self, role: ModelRole) -> Result<ModelConfig> {
        let preset = self.dataset.preset.unwrap_or(Dataset::Pemsd7);
        let mut cfg = presets::model_preset(preset, role);
        cfg.n_nodes = self.n_nodes().max(1);
        cfg.input_window = self.dataset.input_window;
        let spec = match role {
            ModelRole::Teacher => &self.models.teacher,
            ModelRole::Base => &self.models.base,
            ModelRole::Student => &self.models.student,
        };
        if let Some(c) = spec {
            cfg.block1 = c.block1;
            cfg.block2 = c.block2;
        }
        if let Some(k) = self.models.temporal_kernel {
            cfg.temporal_kernel = k;
        }
        if let Some(k) = self.models.spatial_order {
            cfg.spatial_order = k;
        }
        cfg.dropout = self.models.dropout;
        Ok(cfg)
    }

    /// Resolved optimizer settings. `preset_batch_lr` supplies the table
    /// defaults of the active command; explicit config values win.
    pub fn train_config(&self, preset_batch_lr: Option<(usize, f64)>) -> Result<TrainConfig> {
        let (pb, plr) = preset_batch_lr.unwrap_or((50, 1e-3));
        Ok(TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size.unwrap_or(pb),
            lr: self.train.lr.unwrap_or(plr),
            lr_decay: self.train.lr_decay,
            lr_decay_every: self.train.lr_decay_every,
            seed: self.seed,
        })
    }

    pub fn prune_schedule(&self) -> PruneSchedule {
        PruneSchedule {
            pruning_minibatch: self.prune.pruning_minibatch,
            per_event_fraction: self.prune.per_event_fraction,
            target_sparsity: self.prune.target_sparsity,
            granularity: self.prune.granularity,
        }
    }

    /// Stable hexadecimal digest of the fully resolved config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(digest)
    }

    /// Run-directory name: first eight hash characters plus the seed.
    pub fn run_dir_name(&self) -> String {
        format!("{}-s{}", &self.hash()[..8], self.seed)
    }

    /// The effective config as TOML, written alongside every run's outputs.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
