//! Open-set feature augmentation.
//!
//! Feature channels are split into class-specific and class-general using
//! the min-max-normalized average of per-sample channel gradients from the
//! previous epoch. A detected open-set sample then has its class-general
//! channels replaced, with probability `gamma_p`, by the same channels of a
//! random batchmate. Class-specific channels are never touched.

use ndarray::ArrayView1;
use rand::Rng;

/// Boolean channel mask; `general[c]` marks channel `c` class-general.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMask {
    pub general: Vec<bool>,
}

impl ChannelMask {
    pub fn dim(&self) -> usize {
        self.general.len()
    }

    pub fn none(dim: usize) -> ChannelMask {
        ChannelMask {
            general: vec![false; dim],
        }
    }

    pub fn general_count(&self) -> usize {
        self.general.iter().filter(|g| **g).count()
    }
}

/// Average the per-sample channel gradients and min-max normalize to [0,1].
/// A constant average (min == max) has no usable ordering: every channel is
/// reported fully important, which turns the augmentation into an identity.
pub fn compute_channel_importance(gradients: &[ArrayView1<f64>]) -> Vec<f64> {
    assert!(!gradients.is_empty(), "channel importance needs gradients");
    let d = gradients[0].len();
    let mut mean = vec![0.0f64; d];
    for g in gradients {
        debug_assert_eq!(g.len(), d);
        for (m, v) in mean.iter_mut().zip(g.iter()) {
            *m += v;
        }
    }
    let n = gradients.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    let lo = mean.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        log::warn!("channel importance is constant; treating all channels as class-specific");
        return vec![1.0; d];
    }
    mean.iter().map(|m| (m - lo) / (hi - lo)).collect()
}

/// Channels with normalized importance strictly below `gamma_gen` are
/// class-general; ties keep the channel class-specific.
pub fn select_general_channels(importance: &[f64], gamma_gen: f64) -> ChannelMask {
    ChannelMask {
        general: importance.iter().map(|v| *v < gamma_gen).collect(),
    }
}

/// With probability `gamma_p`, return `f_i` with its class-general channels
/// substituted from `f_j`; otherwise return `f_i` unchanged.
pub fn augment_feature<R: Rng>(
    f_i: ArrayView1<f64>,
    f_j: ArrayView1<f64>,
    mask: &ChannelMask,
    gamma_p: f64,
    rng: &mut R,
) -> Vec<f64> {
    debug_assert_eq!(f_i.len(), mask.dim());
    debug_assert_eq!(f_j.len(), mask.dim());
    let fire = gamma_p > 0.0 && rng.gen::<f64>() < gamma_p;
    if !fire {
        return f_i.to_vec();
    }
    f_i.iter()
        .zip(f_j.iter())
        .zip(&mask.general)
        .map(|((a, b), general)| if *general { *b } else { *a })
        .collect()
}
