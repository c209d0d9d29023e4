//! Training framework for classification under mixed closed-set and
//! open-set label noise.
//!
//! The pipeline warm-starts a small backbone with plain cross-entropy, then
//! each epoch (1) triages every training sample into clean / closed-set
//! noisy / open-set noisy using a two-component Gaussian mixture over the
//! previous epoch's losses plus a KNN distance rule over the previous
//! epoch's features, (2) supervises each group with observed labels, soft
//! pseudo-labels, or per-epoch random labels, (3) adds a supervised
//! contrastive loss over K+1 classes (detected open-set samples form the
//! extra class) weighted by label reliability, and (4) enriches detected
//! open-set samples by swapping their class-general feature channels with
//! a random batchmate's.

pub mod backbone;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod noise_id;
pub mod osfeataug;
pub mod report;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
