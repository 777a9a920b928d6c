//! TOML experiment configuration and dataset resolution.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skip_ganomaly::data::{load_cifar10_dir, load_image_folder, make_one_class_out_split, SplitSpec};
use skip_ganomaly::{AnomalyDataset, GeneratorConfig, ScoreConfig, SyntheticSpec, TrainConfig};

use crate::CliError;

/// Root for relative dataset paths and the default CIFAR-10 location.
pub const DATA_ENV: &str = "SKIPGANOMALY_DATA";
const CIFAR_DIR: &str = "cifar-10-batches-bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Cifar10,
    ImageFolder,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// CIFAR-10 batch directory or image-folder root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// CIFAR-10 class treated as anomalous.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomalous_class: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

impl DatasetConfig {
    /// Parses `synthetic`, `image-folder:DIR` or `cifar10:CLASS[:DIR]`.
    pub fn from_spec(spec: &str) -> Result<Self, CliError> {
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let mut cfg = DatasetConfig {
            kind: DatasetKind::Synthetic,
            path: None,
            anomalous_class: None,
            patch_window: None,
            patch_stride: None,
            synthetic: None,
        };
        match kind {
            "synthetic" if rest.is_empty() => {}
            "image-folder" if !rest.is_empty() => {
                cfg.kind = DatasetKind::ImageFolder;
                cfg.path = Some(rest.into());
            }
            "cifar10" => {
                cfg.kind = DatasetKind::Cifar10;
                let (class, dir) = rest.split_once(':').unwrap_or((rest, ""));
                let class = class
                    .parse()
                    .map_err(|_| CliError::Config(format!("dataset spec {spec:?}: expected cifar10:CLASS[:DIR]")))?;
                cfg.anomalous_class = Some(class);
                cfg.path = (!dir.is_empty()).then(|| dir.into());
            }
            _ => {
                return Err(CliError::Config(format!(
                    "unrecognised dataset spec {spec:?} (expected synthetic, image-folder:DIR or cifar10:CLASS[:DIR])"
                )))
            }
        }
        Ok(cfg)
    }

    fn resolve_path(&self, default: Option<&str>) -> Result<PathBuf, CliError> {
        let root = std::env::var_os(DATA_ENV).map(PathBuf::from);
        match (&self.path, root, default) {
            (Some(p), Some(root), _) if p.is_relative() => Ok(root.join(p)),
            (Some(p), _, _) => Ok(p.clone()),
            (None, Some(root), Some(d)) => Ok(root.join(d)),
            _ => Err(CliError::Config(format!(
                "dataset {:?} needs a path (or {DATA_ENV} set)",
                self.kind
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.kind == DatasetKind::Cifar10 && self.anomalous_class.is_none() {
            return Err(CliError::Config("cifar10 datasets need anomalous_class".into()));
        }
        if self.patch_window.is_some() != self.patch_stride.is_some() {
            return Err(CliError::Config(
                "patch_window and patch_stride must be given together".into(),
            ));
        }
        if let Some(s) = &self.synthetic {
            s.validate()?;
        }
        Ok(())
    }

    pub fn load(&self) -> Result<AnomalyDataset<f32>, CliError> {
        self.validate()?;
        let dataset = match self.kind {
            DatasetKind::Synthetic => self.synthetic.clone().unwrap_or_default().generate()?,
            DatasetKind::ImageFolder => load_image_folder(&self.resolve_path(None)?)?,
            DatasetKind::Cifar10 => {
                let dir = self.resolve_path(Some(CIFAR_DIR))?;
                let (train, test) = load_cifar10_dir(&dir)?;
                let spec = SplitSpec {
                    anomalous_class: self.anomalous_class.expect("validated"),
                };
                make_one_class_out_split(&train, &test, spec)?
            }
        };
        match (self.patch_window, self.patch_stride) {
            (Some(w), Some(s)) => Ok(dataset.into_patches(w, s)?),
            _ => Ok(dataset),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub model: GeneratorConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub score: ScoreConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.score.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))
    }
}
