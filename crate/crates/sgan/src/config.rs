//! Run configuration: one strictly validated TOML file describing the
//! dataset, model widths, training hyperparameters and evaluation cadence.
//!
//! A single master seed derives per-component seeds by fixed offsets
//! (data +1, init +2, training +3, eval +4) so each stage can be varied
//! independently.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_idx, make_rings_dataset, split_labels, DatasetSplit, RingsConfig};
use crate::error::{Error, Result};
use crate::network::Head;
use crate::trainer::{ModelWidths, Networks, PriorSpec, TrainConfig};

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/out")
}
fn default_labeled() -> usize {
    16
}
fn default_num_samples() -> usize {
    1000
}
fn default_eval_every() -> usize {
    10
}
fn default_checkpoint_every() -> usize {
    50
}
fn default_kind() -> DatasetKind {
    DatasetKind::Rings
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Rings,
    Idx,
}

/// Rings parameters as they appear in the config file; the generation
/// seed is derived from the master seed, not configured here.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingsSection {
    pub classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub noise: f64,
}

impl Default for RingsSection {
    fn default() -> Self {
        let d = RingsConfig::default();
        RingsSection {
            classes: d.classes,
            train_size: d.train_size,
            test_size: d.test_size,
            noise: d.noise,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default = "default_kind")]
    pub kind: DatasetKind,
    /// Number of labeled examples kept after the semi-supervised split.
    #[serde(default = "default_labeled")]
    pub labeled: usize,
    #[serde(default)]
    pub rings: RingsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxPaths>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            kind: DatasetKind::Rings,
            labeled: default_labeled(),
            rings: RingsSection::default(),
            idx: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Generated samples per conditional-accuracy / golden-score estimate.
    pub num_samples: usize,
    /// Evaluate every this many epochs (the final epoch always evaluates).
    pub eval_every: usize,
    /// Checkpoint every this many epochs (plus a final checkpoint).
    pub checkpoint_every: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            num_samples: default_num_samples(),
            eval_every: default_eval_every(),
            checkpoint_every: default_checkpoint_every(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelWidths,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.dataset.kind == DatasetKind::Idx && self.dataset.idx.is_none() {
            return Err(Error::Config("dataset.kind = \"idx\" requires a [dataset.idx] path section".into()));
        }
        if self.dataset.labeled == 0 {
            return Err(Error::Config("dataset.labeled must be positive".into()));
        }
        if self.eval.num_samples == 0 || self.eval.eval_every == 0 || self.eval.checkpoint_every == 0 {
            return Err(Error::Config("eval.{num_samples, eval_every, checkpoint_every} must be positive".into()));
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }
    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }
    pub fn train_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }
    pub fn eval_seed(&self) -> u64 {
        self.seed.wrapping_add(4)
    }

    /// First 8 bytes of the SHA-256 of the canonical (JSON) serialization,
    /// little-endian. Stable across field-order-preserving edits; changes
    /// whenever any setting that affects the trained model changes
    /// (the output directory is excluded).
    pub fn config_hash(&self) -> u64 {
        let mut canonical = self.clone();
        canonical.out_dir = default_out_dir();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn rings_config(&self) -> RingsConfig {
        RingsConfig {
            classes: self.dataset.rings.classes,
            train_size: self.dataset.rings.train_size,
            test_size: self.dataset.rings.test_size,
            noise: self.dataset.rings.noise,
            seed: self.data_seed(),
        }
    }

    /// Generator output head: rings points are unbounded coordinates,
    /// IDX pixels live in [0, 1].
    pub fn g_head(&self) -> Head {
        match self.dataset.kind {
            DatasetKind::Rings => Head::Linear,
            DatasetKind::Idx => Head::Sigmoid,
        }
    }

    pub fn build_split(&self) -> Result<DatasetSplit> {
        let (train, test) = match self.dataset.kind {
            DatasetKind::Rings => make_rings_dataset(&self.rings_config())?,
            DatasetKind::Idx => {
                let paths = self.dataset.idx.as_ref().expect("validated");
                let train = load_idx(&paths.train_images, &paths.train_labels)?;
                let test = load_idx(&paths.test_images, &paths.test_labels)?;
                (train, test)
            }
        };
        split_labels(&train, &test, self.dataset.labeled, self.data_seed())
    }

    pub fn build_networks(&self, split: &DatasetSplit) -> Result<Networks> {
        Networks::build(
            split.x_dim,
            split.num_classes,
            self.train.z_dim,
            &self.model,
            self.g_head(),
            self.init_seed(),
        )
    }

    pub fn priors(&self, split: &DatasetSplit) -> PriorSpec {
        PriorSpec {
            num_classes: split.num_classes,
            z_dim: self.train.z_dim,
            z_prior: self.train.z_prior,
        }
    }
}
