//! Datasets: desk-scale synthetic generation, image-folder loading, and
//! mixed closed-set / open-set label-noise injection.
//!
//! Conventions: class labels are 0-based. In-distribution (ID) classes are
//! `0..k`, out-of-distribution (OOD) classes continue at `k..k + k_ood`.
//! Observed labels always stay inside `0..k`, even for open-set noisy
//! samples; the hidden `true_label` / `true_type` fields exist for
//! evaluation only and never feed the trainer.

mod blobs;
mod image_folder;
mod io;
mod noise;

pub use blobs::generate_blobs;
pub use image_folder::{load_image_folder, ImageFolderOptions};
pub use io::{load_dataset_dir, save_dataset_dir};
pub use noise::inject_noise;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden noise type of a training sample; evaluation-only ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrueType {
    Clean,
    ClosedNoisy,
    OpenNoisy,
}

impl TrueType {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrueType::Clean => "CLEAN",
            TrueType::ClosedNoisy => "CLOSED_NOISY",
            TrueType::OpenNoisy => "OPEN_NOISY",
        }
    }

    pub fn parse(s: &str) -> Result<TrueType> {
        match s {
            "CLEAN" => Ok(TrueType::Clean),
            "CLOSED_NOISY" => Ok(TrueType::ClosedNoisy),
            "OPEN_NOISY" => Ok(TrueType::OpenNoisy),
            other => Err(Error::Data(format!("unknown true_type {other:?}"))),
        }
    }
}

/// One training example. `input` is flattened; its shape lives in
/// [`DatasetMeta::input_shape`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub input: Vec<f64>,
    /// Label the annotator assigned; always an ID class in `0..k`.
    pub observed_label: usize,
    /// Ground-truth class in `0..k + k_ood`; hidden from training.
    pub true_label: usize,
    /// Hidden noise type; evaluation only.
    pub true_type: TrueType,
}

/// An out-of-distribution draw used as replacement input during open-set
/// injection. Carries no observed label: OOD images only enter the dataset
/// by stealing an ID-labelled slot.
#[derive(Debug, Clone, PartialEq)]
pub struct OodSample {
    pub id: usize,
    pub input: Vec<f64>,
    pub true_label: usize,
}

/// How per-sample corruption probabilities are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceProfile {
    /// A weak probe is trained on the clean data for a few epochs; the
    /// probability a sample is corrupted follows its probe confusion mass.
    ProbeConfusion,
    /// Dependency-free fallback: probabilities drawn near the target rate.
    TruncatedGaussian,
}

/// Noise-injection parameters: overall rate `alpha`, open-set share `beta`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub instance_profile: InstanceProfile,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "noise.alpha must lie in [0,1], got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "noise.beta must lie in [0,1], got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Shape of one flattened input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputShape {
    Vector { dim: usize },
    Image { channels: usize, height: usize, width: usize },
}

impl InputShape {
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Vector { dim } => dim,
            InputShape::Image { channels, height, width } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Provenance of an injection pass, stored alongside the corrupted splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseProvenance {
    pub spec: NoiseSpec,
    /// Realized corrupted fraction of the train split.
    pub realized_noise_rate: f64,
    /// Realized open-set fraction among corrupted train samples.
    pub realized_open_share: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub input_shape: InputShape,
    /// Number of ID classes (K).
    pub id_class_count: usize,
    /// Number of OOD classes.
    pub ood_class_count: usize,
    pub noise: Option<NoiseProvenance>,
}

/// Train/val/test splits plus metadata. Test holds only clean ID samples.
#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub meta: DatasetMeta,
}

impl DatasetSplits {
    /// Per-dimension standard deviation over the train split; used to scale
    /// vector jitter augmentation. Zero-variance dimensions report 0.
    pub fn train_std(&self) -> Vec<f64> {
        let dim = self.meta.input_shape.len();
        let n = self.train.len() as f64;
        if self.train.is_empty() {
            return vec![0.0; dim];
        }
        let mut mean = vec![0.0; dim];
        for s in &self.train {
            for (m, x) in mean.iter_mut().zip(&s.input) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for s in &self.train {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(&s.input) {
                let d = x - m;
                *v += d * d;
            }
        }
        var.iter().map(|v| (v / n).sqrt()).collect()
    }
}

/// Split sizes for the 70/10/20 protocol, exact integer arithmetic:
/// train gets floor(70%), val floor(10%), test the remainder.
pub(crate) fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 70 / 100;
    let val = n * 10 / 100;
    (train, val, n - train - val)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_follow_70_10_20() {
        assert_eq!(split_sizes(200), (140, 20, 40));
        assert_eq!(split_sizes(10), (7, 1, 2));
    }

    #[test]
    fn true_type_round_trips() {
        for t in [TrueType::Clean, TrueType::ClosedNoisy, TrueType::OpenNoisy] {
            assert_eq!(TrueType::parse(t.as_str()).unwrap(), t);
        }
        assert!(TrueType::parse("bogus").is_err());
    }
}
