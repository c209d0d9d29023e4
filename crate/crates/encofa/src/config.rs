//! Declarative run configuration (TOML) and dataset construction.
//!
//! One file drives a whole run: data source, optional noise injection,
//! model architecture, hyper-parameters, and optimizer settings. Example
//! presets live under `configs/` in the repository root.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneKind, ModelArch};
use crate::data::{
    generate_blobs, inject_noise, load_dataset_dir, load_image_folder, DatasetSplits,
    ImageFolderOptions, InputShape, InstanceProfile, NoiseSpec, OodSample,
};
use crate::error::{Error, Result};
use crate::losses::HyperParams;

/// Which slice of the framework a run exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain cross-entropy on observed labels; no triage at all.
    CeBaseline,
    /// Triage plus the three-branch classification loss only.
    ClsOnly,
    /// Adds the contrastive term.
    ClsEnsc,
    /// Adds feature augmentation on top; the complete pipeline.
    #[default]
    Full,
}

/// Which samples feed the channel-importance average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceOver {
    #[default]
    AllSamples,
    OpenSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub variant: Variant,
    /// Skip triage and treat every sample as clean (degeneration runs).
    pub force_all_clean: bool,
    /// Channel-importance averaging scope for the feature augmentation.
    pub importance_over: ImportanceOver,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            out_dir: None,
            variant: Variant::Full,
            force_all_clean: false,
            importance_over: ImportanceOver::AllSamples,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSection {
    Blobs {
        n_per_class: usize,
        id_classes: usize,
        ood_classes: usize,
        dim: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
    /// A directory produced by `generate-data` / `inject-noise`.
    CsvDir { path: PathBuf },
    ImageFolder {
        path: PathBuf,
        id_class_names: Vec<String>,
        ood_class_names: Vec<String>,
        #[serde(default = "default_channels")]
        channels: usize,
        #[serde(default = "default_image_side")]
        height: usize,
        #[serde(default = "default_image_side")]
        width: usize,
        #[serde(default)]
        split_seed: u64,
    },
}

fn default_channels() -> usize {
    3
}

fn default_image_side() -> usize {
    32
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_profile")]
    pub profile: InstanceProfile,
}

fn default_profile() -> InstanceProfile {
    InstanceProfile::ProbeConfusion
}

impl NoiseSection {
    pub fn to_spec(&self) -> NoiseSpec {
        NoiseSpec {
            alpha: self.alpha,
            beta: self.beta,
            seed: self.seed,
            instance_profile: self.profile,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: String,
    /// MLP hidden widths.
    pub hidden: Vec<usize>,
    /// CNN stage channels; the last entry is the feature dimension.
    pub channels: Vec<usize>,
    pub feature_dim: usize,
    pub projection_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            backbone: "mlp".into(),
            hidden: vec![64],
            channels: vec![16, 32],
            feature_dim: 32,
            projection_dim: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub lr0: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            lr0: 0.01,
            weight_decay: 1e-4,
            batch_size: 64,
            epochs: 60,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub data: DataSection,
    #[serde(default)]
    pub noise: Option<NoiseSection>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub hyperparams: HyperParams,
    #[serde(default)]
    pub optimizer: OptimizerSection,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Runtime(format!("config encode: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparams.validate()?;
        if let Some(noise) = &self.noise {
            noise.to_spec().validate()?;
        }
        if self.optimizer.lr0 <= 0.0 {
            return Err(Error::Config(format!(
                "optimizer.lr0 must be positive, got {}",
                self.optimizer.lr0
            )));
        }
        if self.optimizer.batch_size == 0 {
            return Err(Error::Config("optimizer.batch_size must be positive".into()));
        }
        if self.optimizer.epochs == 0 {
            return Err(Error::Config("optimizer.epochs must be positive".into()));
        }
        if self.hyperparams.warmup_epochs >= self.optimizer.epochs {
            return Err(Error::Config(format!(
                "hyperparams.warmup_epochs ({}) must be below optimizer.epochs ({})",
                self.hyperparams.warmup_epochs, self.optimizer.epochs
            )));
        }
        match self.model.backbone.as_str() {
            "mlp" | "cnn" => Ok(()),
            other => Err(Error::Config(format!(
                "model.backbone must be \"mlp\" or \"cnn\", got {other:?}"
            ))),
        }
    }

    /// Materialize the dataset and apply noise injection if configured.
    pub fn build_dataset(&self) -> Result<(DatasetSplits, Vec<OodSample>)> {
        let (splits, pool) = match &self.data {
            DataSection::Blobs { n_per_class, id_classes, ood_classes, dim, separation, seed } => {
                generate_blobs(*n_per_class, *id_classes, *ood_classes, *dim, *separation, *seed)?
            }
            DataSection::CsvDir { path } => load_dataset_dir(path)?,
            DataSection::ImageFolder {
                path,
                id_class_names,
                ood_class_names,
                channels,
                height,
                width,
                split_seed,
            } => load_image_folder(
                path,
                id_class_names,
                ood_class_names,
                &ImageFolderOptions {
                    channels: *channels,
                    height: *height,
                    width: *width,
                    seed: *split_seed,
                },
            )?,
        };
        match &self.noise {
            // A dataset loaded from disk may already carry injected noise;
            // never corrupt twice.
            Some(noise) if splits.meta.noise.is_none() => {
                let spec = noise.to_spec();
                let corrupted = inject_noise(splits, &pool, &spec)?;
                Ok((corrupted, pool))
            }
            _ => Ok((splits, pool)),
        }
    }

    /// Model architecture for a given input shape and ID class count.
    pub fn model_arch(&self, input_shape: InputShape, classes: usize) -> Result<ModelArch> {
        let backbone = match self.model.backbone.as_str() {
            "mlp" => BackboneKind::Mlp {
                hidden: self.model.hidden.clone(),
            },
            "cnn" => BackboneKind::Cnn {
                channels: self.model.channels.clone(),
            },
            other => {
                return Err(Error::Config(format!(
                    "model.backbone must be \"mlp\" or \"cnn\", got {other:?}"
                )))
            }
        };
        let feature_dim = match &backbone {
            BackboneKind::Cnn { channels } => *channels.last().unwrap(),
            BackboneKind::Mlp { .. } => self.model.feature_dim,
        };
        let arch = ModelArch {
            backbone,
            input_shape,
            feature_dim,
            classes,
            projection_dim: self.model.projection_dim,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Effective contrastive weight after the variant override.
    pub fn effective_lambda(&self) -> f64 {
        match self.run.variant {
            Variant::CeBaseline | Variant::ClsOnly => 0.0,
            Variant::ClsEnsc | Variant::Full => self.hyperparams.lambda,
        }
    }

    /// Effective feature-swap probability after the variant override.
    pub fn effective_gamma_p(&self) -> f64 {
        match self.run.variant {
            Variant::Full => self.hyperparams.gamma_p,
            _ => 0.0,
        }
    }
}

/// A ready-made blob + noise configuration used by tests and docs.
pub fn blob_run_config(seed: u64, alpha: f64, beta: f64) -> RunConfig {
    RunConfig {
        run: RunSection {
            seed,
            ..Default::default()
        },
        data: DataSection::Blobs {
            n_per_class: 200,
            id_classes: 5,
            ood_classes: 3,
            dim: 32,
            separation: 4.0,
            seed,
        },
        noise: Some(NoiseSection {
            alpha,
            beta,
            seed,
            profile: InstanceProfile::ProbeConfusion,
        }),
        model: ModelSection::default(),
        hyperparams: HyperParams::default(),
        optimizer: OptimizerSection::default(),
    }
}
