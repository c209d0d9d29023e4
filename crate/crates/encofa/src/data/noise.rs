//! Instance-dependent mixed label-noise injection.
//!
//! Train and val samples are corrupted with per-sample probabilities whose
//! mean equals `alpha`. Among corrupted samples a `beta` fraction become
//! open-set (the input is replaced by an OOD draw, the observed label is
//! kept); the rest become closed-set (the observed label flips to a
//! different ID class). The test split is never touched.
//!
//! Every stochastic decision is keyed on `(spec.seed, purpose, sample id)`,
//! so outcomes are independent of iteration order and of unrelated samples.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{DatasetSplits, InstanceProfile, NoiseProvenance, NoiseSpec, OodSample, Sample, TrueType};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Corrupt the train and val splits of `splits` according to `spec`.
pub fn inject_noise(
    mut splits: DatasetSplits,
    ood_pool: &[OodSample],
    spec: &NoiseSpec,
) -> Result<DatasetSplits> {
    spec.validate()?;
    if spec.alpha * spec.beta > 0.0 && ood_pool.is_empty() {
        return Err(Error::Config(
            "open-set injection requested (alpha*beta > 0) but the OOD pool is empty".into(),
        ));
    }
    let k = splits.meta.id_class_count;
    if k < 2 {
        return Err(Error::Config(
            "closed-set label flips need at least 2 ID classes".into(),
        ));
    }

    let probe = match spec.instance_profile {
        InstanceProfile::ProbeConfusion if spec.alpha > 0.0 => {
            Some(Probe::fit(&splits.train, k, spec.seed))
        }
        _ => None,
    };

    let mut train = std::mem::take(&mut splits.train);
    let mut val = std::mem::take(&mut splits.val);
    corrupt_split(&mut train, ood_pool, spec, probe.as_ref(), k)?;
    corrupt_split(&mut val, ood_pool, spec, probe.as_ref(), k)?;

    let corrupted = train
        .iter()
        .filter(|s| s.true_type != TrueType::Clean)
        .count();
    let open = train
        .iter()
        .filter(|s| s.true_type == TrueType::OpenNoisy)
        .count();
    splits.meta.noise = Some(NoiseProvenance {
        spec: *spec,
        realized_noise_rate: corrupted as f64 / train.len().max(1) as f64,
        realized_open_share: if corrupted > 0 {
            open as f64 / corrupted as f64
        } else {
            0.0
        },
    });
    splits.train = train;
    splits.val = val;
    Ok(splits)
}

fn corrupt_split(
    samples: &mut [Sample],
    ood_pool: &[OodSample],
    spec: &NoiseSpec,
    probe: Option<&Probe>,
    k: usize,
) -> Result<()> {
    if spec.alpha == 0.0 || samples.is_empty() {
        return Ok(());
    }
    let raw: Vec<f64> = samples
        .iter()
        .map(|s| raw_propensity(s, spec, probe))
        .collect();
    let probs = calibrate_probabilities(&raw, spec.alpha);

    for (sample, q) in samples.iter_mut().zip(&probs) {
        let u: f64 = stream_rng(spec.seed, "corrupt", sample.id as u64, 0).gen();
        if u >= *q {
            continue;
        }
        let v: f64 = stream_rng(spec.seed, "noise-type", sample.id as u64, 0).gen();
        if v < spec.beta {
            // Open-set: swap the input for an OOD draw, keep the tag.
            let pick = stream_rng(spec.seed, "ood-draw", sample.id as u64, 0)
                .gen_range(0..ood_pool.len());
            let donor = &ood_pool[pick];
            sample.input = donor.input.clone();
            sample.true_label = donor.true_label;
            sample.true_type = TrueType::OpenNoisy;
        } else {
            sample.observed_label = flip_label(sample, spec, probe, k);
            sample.true_type = TrueType::ClosedNoisy;
        }
    }
    Ok(())
}

/// Un-calibrated per-sample corruption propensity.
fn raw_propensity(sample: &Sample, spec: &NoiseSpec, probe: Option<&Probe>) -> f64 {
    match probe {
        // Confusion mass: probability the probe puts on wrong classes.
        // Harder samples draw more noise.
        Some(p) => 1.0 - p.predict(&sample.input)[sample.observed_label],
        None => {
            let g: f64 = stream_rng(spec.seed, "propensity", sample.id as u64, 0)
                .sample(StandardNormal);
            (spec.alpha + 0.1 * g).clamp(0.0, 1.0)
        }
    }
}

fn flip_label(sample: &Sample, spec: &NoiseSpec, probe: Option<&Probe>, k: usize) -> usize {
    match probe {
        Some(p) => {
            // Most-confused wrong class under the probe.
            let scores = p.predict(&sample.input);
            let mut best = usize::MAX;
            let mut best_p = f64::NEG_INFINITY;
            for (c, pc) in scores.iter().enumerate() {
                if c != sample.observed_label && *pc > best_p {
                    best = c;
                    best_p = *pc;
                }
            }
            best
        }
        None => {
            let draw = stream_rng(spec.seed, "flip", sample.id as u64, 0).gen_range(0..k - 1);
            // Skip over the current label so flips never map to self.
            if draw >= sample.observed_label {
                draw + 1
            } else {
                draw
            }
        }
    }
}

/// Shift-and-clip calibration: raise or lower all propensities by a common
/// offset until the mean corruption probability equals `alpha` exactly.
/// Monotone in the offset, so bisection converges; the boundary rates 0 and
/// 1 are reproduced exactly (every probability pinned to 0 or 1).
pub(crate) fn calibrate_probabilities(raw: &[f64], alpha: f64) -> Vec<f64> {
    let n = raw.len();
    if n == 0 {
        return Vec::new();
    }
    if alpha <= 0.0 {
        return vec![0.0; n];
    }
    if alpha >= 1.0 {
        return vec![1.0; n];
    }
    let mean_at = |delta: f64| -> f64 {
        raw.iter().map(|r| (r + delta).clamp(0.0, 1.0)).sum::<f64>() / n as f64
    };
    let max_raw = raw.iter().cloned().fold(0.0f64, f64::max);
    let mut lo = -max_raw - 1.0; // mean 0
    let mut hi = 1.0; // mean 1
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let delta = 0.5 * (lo + hi);
    raw.iter().map(|r| (r + delta).clamp(0.0, 1.0)).collect()
}

/// A weak linear softmax probe trained for a few epochs on the clean data.
/// Only used to shape corruption probabilities and pick confusable flip
/// targets; it never has to be a good classifier.
struct Probe {
    k: usize,
    dim: usize,
    /// Row-major (k x (dim+1)), last column is the bias.
    w: Vec<f64>,
}

impl Probe {
    const EPOCHS: usize = 5;
    const BATCH: usize = 64;
    const LR: f64 = 0.1;

    fn fit(train: &[Sample], k: usize, seed: u64) -> Probe {
        let dim = train.first().map_or(0, |s| s.input.len());
        let mut probe = Probe {
            k,
            dim,
            w: vec![0.0; k * (dim + 1)],
        };
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 0..Self::EPOCHS {
            let mut rng = stream_rng(seed, "probe-order", epoch as u64, 0);
            shuffle(&mut order, &mut rng);
            for chunk in order.chunks(Self::BATCH) {
                probe.sgd_step(train, chunk);
            }
        }
        probe
    }

    fn sgd_step(&mut self, train: &[Sample], batch: &[usize]) {
        let mut grad = vec![0.0; self.w.len()];
        for &i in batch {
            let s = &train[i];
            let p = self.predict(&s.input);
            for c in 0..self.k {
                let err = p[c] - if c == s.observed_label { 1.0 } else { 0.0 };
                let row = &mut grad[c * (self.dim + 1)..(c + 1) * (self.dim + 1)];
                for (g, x) in row[..self.dim].iter_mut().zip(&s.input) {
                    *g += err * x;
                }
                row[self.dim] += err;
            }
        }
        let scale = Self::LR / batch.len() as f64;
        for (w, g) in self.w.iter_mut().zip(&grad) {
            *w -= scale * g;
        }
    }

    fn predict(&self, input: &[f64]) -> Vec<f64> {
        let mut logits = Vec::with_capacity(self.k);
        for c in 0..self.k {
            let row = &self.w[c * (self.dim + 1)..(c + 1) * (self.dim + 1)];
            let z = row[self.dim]
                + row[..self.dim]
                    .iter()
                    .zip(input)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            logits.push(z);
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for l in &mut logits {
            *l = (*l - m).exp();
            z += *l;
        }
        for l in &mut logits {
            *l /= z;
        }
        logits
    }
}

/// Fisher-Yates with an explicit generator; `SliceRandom::shuffle` would work
/// too, this keeps the draw count obvious and stable.
pub(crate) fn shuffle<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
