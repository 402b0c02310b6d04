//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderConfig;
use crate::error::{Error, Result};
use crate::flow::FlowSpec;
use crate::trainer::TrainConfig;

/// Where the objects and their attributes come from. Relative paths are
/// resolved against the config file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Object matrix, one row per object, values in `[0, 1]`.
    pub objects: PathBuf,
    /// One integer class per line, expanded to one-hot attributes.
    pub labels: Option<PathBuf>,
    /// Attribute matrix, used instead of `labels` for multi-attribute data.
    pub attributes: Option<PathBuf>,
    /// Number of classes; inferred from the labels when absent.
    pub classes: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorChoice {
    /// Training-split class frequencies.
    #[default]
    Empirical,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub prior: PriorChoice,
    /// Images per row in PGM grids.
    pub grid_columns: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig { prior: PriorChoice::Empirical, grid_columns: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub autoencoder: AutoencoderConfig,
    #[serde(default)]
    pub flow: FlowSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub tasks: TaskConfig,
}

impl ExperimentConfig {
    /// Parses without touching the filesystem.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.data.labels.is_some() == cfg.data.attributes.is_some() {
            return Err(Error::Config("data needs exactly one of `labels` or `attributes`".into()));
        }
        Ok(cfg)
    }

    /// Reads `path`, resolves relative paths against its directory and checks
    /// that every input file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.check_inputs()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.objects);
        self.data.labels.as_mut().map(fix);
        self.data.attributes.as_mut().map(fix);
        self.train.checkpoint_path.as_mut().map(fix);
    }

    pub fn check_inputs(&self) -> Result<()> {
        let inputs = std::iter::once(&self.data.objects)
            .chain(self.data.labels.as_ref())
            .chain(self.data.attributes.as_ref());
        for p in inputs {
            if !p.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialise")
    }

    pub fn autoencoder_path(&self) -> PathBuf {
        self.output_dir.join("autoencoder.fpn")
    }

    pub fn autoencoder_loss_path(&self) -> PathBuf {
        self.output_dir.join("autoencoder_loss.csv")
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.output_dir.join("latents.fpn")
    }

    pub fn flow_path(&self) -> PathBuf {
        self.output_dir.join("flow.fpn")
    }

    pub fn flow_loss_path(&self) -> PathBuf {
        self.output_dir.join("flow_loss.csv")
    }
}
