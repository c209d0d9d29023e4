//! Supervision targets and training objectives.
//!
//! Three supervision branches: detected-clean samples keep their observed
//! labels, detected closed-set samples get sharpened soft pseudo-labels
//! weighted by a reliability score from a second loss GMM, and detected
//! open-set samples get a fresh uniformly random label every epoch. On top
//! sits an extended supervised contrastive loss over K+1 classes in which
//! detected open-set samples form the extra class and contrastive pairs are
//! weighted by label reliability.
//!
//! Loss reductions: the classification loss averages within each branch
//! (sums would scale gradients with the triage set sizes); the contrastive
//! loss here is the plain sum over anchors, and the trainer divides by the
//! number of contributing anchors.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise_id::{fit_gmm_em, posterior_clean, Partition};
use crate::rng::stream_rng;

/// Probability clamp for cross-entropy on degenerate predictions.
pub const CE_EPS: f64 = 1e-12;

/// Training hyper-parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Clean posterior threshold for the loss GMM.
    pub gamma_cl: f64,
    /// Fraction of detected-clean samples the OOD threshold must retain.
    pub gamma_ood: f64,
    /// Importance cutoff below which a feature channel is class-general.
    pub gamma_gen: f64,
    /// Probability of feature substitution for a detected open-set sample.
    pub gamma_p: f64,
    /// Weight of the contrastive term in the total loss.
    pub lambda: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Neighbor rank cap for the KNN OOD score.
    pub k: usize,
    pub warmup_epochs: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            gamma_cl: 0.98,
            gamma_ood: 0.96,
            gamma_gen: 0.1,
            gamma_p: 0.7,
            lambda: 1.0,
            tau: 0.2,
            k: 200,
            warmup_epochs: 1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        check(
            self.gamma_cl > 0.5 && self.gamma_cl < 1.0,
            &format!("hyperparams.gamma_cl must lie in (0.5, 1.0), got {}", self.gamma_cl),
        )?;
        check(
            (0.0..=1.0).contains(&self.gamma_ood),
            &format!("hyperparams.gamma_ood must lie in [0, 1], got {}", self.gamma_ood),
        )?;
        check(
            (0.0..=1.0).contains(&self.gamma_gen),
            &format!("hyperparams.gamma_gen must lie in [0, 1], got {}", self.gamma_gen),
        )?;
        check(
            (0.0..=1.0).contains(&self.gamma_p),
            &format!("hyperparams.gamma_p must lie in [0, 1], got {}", self.gamma_p),
        )?;
        check(
            self.lambda >= 0.0,
            &format!("hyperparams.lambda must be >= 0, got {}", self.lambda),
        )?;
        check(
            self.tau > 0.0,
            &format!("hyperparams.tau must be positive, got {}", self.tau),
        )?;
        check(self.k >= 1, "hyperparams.k must be >= 1")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupervisionKind {
    Clean,
    Closed,
    Open,
}

/// Classification target of one sample for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Observed label (clean branch) or dynamic label (open branch).
    Hard(usize),
    /// Soft pseudo-label over the K ID classes.
    Soft(Vec<f64>),
}

/// Per-sample supervision for one epoch: refined label over K+1 classes,
/// classification target, and reliability weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionRecord {
    pub kind: SupervisionKind,
    /// Refined label in 0..=K; K is the extra open-set class.
    pub refined_label: usize,
    pub target: Target,
    pub weight: f64,
}

/// Sharpened soft pseudo-label from two augmented-view predictions:
/// square the average, then L1-normalize back onto the simplex.
pub fn pseudo_label(p_v1: ArrayView1<f64>, p_v2: ArrayView1<f64>) -> Vec<f64> {
    debug_assert_eq!(p_v1.len(), p_v2.len());
    let mut out: Vec<f64> = p_v1
        .iter()
        .zip(p_v2.iter())
        .map(|(a, b)| {
            let m = 0.5 * (a + b);
            m * m
        })
        .collect();
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        for v in &mut out {
            *v /= total;
        }
    } else {
        let k = out.len() as f64;
        out.iter_mut().for_each(|v| *v = 1.0 / k);
    }
    out
}

/// Reliability weights for pseudo-labeled samples: posterior of the
/// lower-mean component of a GMM fit to the pseudo-label losses. Fewer than
/// two samples, or a degenerate fit, weight everything 0.5.
pub fn pseudo_weights(pseudo_losses: &[f64], seed: u64) -> Vec<f64> {
    if pseudo_losses.len() < 2 {
        return vec![0.5; pseudo_losses.len()];
    }
    match fit_gmm_em(pseudo_losses, 100, 1e-9, seed) {
        Ok(gmm) => pseudo_losses
            .iter()
            .map(|l| posterior_clean(&gmm, *l))
            .collect(),
        Err(_) => vec![0.5; pseudo_losses.len()],
    }
}

/// Per-epoch uniformly random class label for a detected open-set sample.
/// A pure function of `(seed, epoch, sample_id)`, resampled each epoch.
pub fn dynamic_label(k: usize, epoch: usize, sample_id: usize, seed: u64) -> usize {
    debug_assert!(k >= 1);
    stream_rng(seed, "dynamic-label", epoch as u64, sample_id as u64).gen_range(0..k)
}

fn ce_hard(probs: ArrayView1<f64>, label: usize) -> f64 {
    let p = probs[label];
    if p < CE_EPS {
        log::warn!("clamping zero probability at supervised class {label}");
    }
    -p.max(CE_EPS).ln()
}

fn ce_soft(probs: ArrayView1<f64>, target: &[f64]) -> f64 {
    let mut loss = 0.0;
    for (t, p) in target.iter().zip(probs.iter()) {
        if *t == 0.0 {
            continue;
        }
        if *p < CE_EPS {
            log::warn!("clamping zero probability under soft target");
        }
        loss -= t * p.max(CE_EPS).ln();
    }
    loss
}

/// Cross-entropy of one record against one prediction.
pub fn record_ce(record: &SupervisionRecord, probs: ArrayView1<f64>) -> f64 {
    match &record.target {
        Target::Hard(y) => ce_hard(probs, *y),
        Target::Soft(t) => ce_soft(probs, t),
    }
}

/// Three-branch classification loss, branch-mean reduction:
/// mean CE over clean + mean weighted CE over closed-set + mean CE over
/// open-set. Empty branches contribute zero.
pub fn classification_loss(records: &[SupervisionRecord], preds: ArrayView2<f64>) -> f64 {
    debug_assert_eq!(records.len(), preds.nrows());
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for (record, probs) in records.iter().zip(preds.rows()) {
        let branch = match record.kind {
            SupervisionKind::Clean => 0,
            SupervisionKind::Closed => 1,
            SupervisionKind::Open => 2,
        };
        let w = if record.kind == SupervisionKind::Closed {
            record.weight
        } else {
            1.0
        };
        sums[branch] += w * record_ce(record, probs);
        counts[branch] += 1;
    }
    let mut total = 0.0;
    for b in 0..3 {
        if counts[b] > 0 {
            total += sums[b] / counts[b] as f64;
        }
    }
    total
}

/// Classification loss plus its gradient with respect to the logits that
/// produced `preds` via softmax (the usual `p - target` form, scaled by the
/// branch means and reliability weights).
pub fn classification_loss_with_grad(
    records: &[SupervisionRecord],
    preds: ArrayView2<f64>,
) -> (f64, Array2<f64>) {
    let mut counts = [0usize; 3];
    for r in records {
        let branch = match r.kind {
            SupervisionKind::Clean => 0,
            SupervisionKind::Closed => 1,
            SupervisionKind::Open => 2,
        };
        counts[branch] += 1;
    }
    let loss = classification_loss(records, preds);
    let mut grad = Array2::zeros(preds.raw_dim());
    for (i, (record, probs)) in records.iter().zip(preds.rows()).enumerate() {
        let (branch, w) = match record.kind {
            SupervisionKind::Clean => (0, 1.0),
            SupervisionKind::Closed => (1, record.weight),
            SupervisionKind::Open => (2, 1.0),
        };
        let scale = w / counts[branch] as f64;
        match &record.target {
            Target::Hard(y) => {
                for (c, p) in probs.iter().enumerate() {
                    let t = if c == *y { 1.0 } else { 0.0 };
                    grad[[i, c]] = scale * (p - t);
                }
            }
            Target::Soft(t) => {
                for (c, p) in probs.iter().enumerate() {
                    grad[[i, c]] = scale * (p - t[c]);
                }
            }
        }
    }
    (loss, grad)
}

/// Extended supervised contrastive loss over labels in 0..=K, with
/// reliability-weighted pairs. Literal sum over anchors; anchors with no
/// positive partner are skipped, as are pairs whose weight is zero.
///
/// `z` rows need not be re-normalized here; the trainer supplies unit rows.
pub fn ensc_loss(z: ArrayView2<f64>, labels: &[usize], weights: &[f64], tau: f64) -> f64 {
    ensc_loss_with_grad(z, labels, weights, tau).0
}

/// [`ensc_loss`] plus its gradient with respect to `z` and the number of
/// anchors that contributed.
pub fn ensc_loss_with_grad(
    z: ArrayView2<f64>,
    labels: &[usize],
    weights: &[f64],
    tau: f64,
) -> (f64, Array2<f64>, usize) {
    let n = z.nrows();
    debug_assert_eq!(labels.len(), n);
    debug_assert_eq!(weights.len(), n);
    assert!(tau > 0.0, "contrastive temperature must be positive");

    let mut loss = 0.0;
    let mut grad: Array2<f64> = Array2::zeros(z.raw_dim());
    let mut active = 0usize;

    // Pairwise similarities s_ij = <z_i, z_j> / tau.
    let sims = z.dot(&z.t()) / tau;

    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        // Stable log denominator: logsumexp over log(w_a) + s_ia for all
        // competitors with positive weight. The anchor's own weight cancels
        // between numerator and denominator.
        let mut max_term = f64::NEG_INFINITY;
        for a in 0..n {
            if a == i || weights[a] <= 0.0 {
                continue;
            }
            max_term = max_term.max(weights[a].ln() + sims[[i, a]]);
        }
        if max_term == f64::NEG_INFINITY {
            log::warn!("contrastive anchor {i} has no positive-weight competitor; skipped");
            continue;
        }
        let mut denom = 0.0;
        for a in 0..n {
            if a == i || weights[a] <= 0.0 {
                continue;
            }
            denom += (weights[a].ln() + sims[[i, a]] - max_term).exp();
        }
        let log_denom = max_term + denom.ln();

        let inv_p = 1.0 / positives.len() as f64;
        let mut used = 0usize;
        let mut anchor_grad = vec![0.0f64; z.ncols()];
        for &p in &positives {
            if weights[p] <= 0.0 {
                log::warn!("contrastive pair ({i},{p}) has zero weight; term skipped");
                continue;
            }
            loss += inv_p * (log_denom - weights[p].ln() - sims[[i, p]]);
            used += 1;
            // -d s_ip / dz contributions of the numerator.
            for (g, zp) in anchor_grad.iter_mut().zip(z.row(p)) {
                *g -= inv_p * zp / tau;
            }
            for (gp, zi) in grad.row_mut(p).iter_mut().zip(z.row(i)) {
                *gp -= inv_p * zi / tau;
            }
        }
        if used == 0 {
            continue;
        }
        active += 1;
        // d log_denom / dz contributions, once per used pair.
        let denom_scale = used as f64 * inv_p;
        for a in 0..n {
            if a == i || weights[a] <= 0.0 {
                continue;
            }
            let q = (weights[a].ln() + sims[[i, a]] - log_denom).exp();
            for (g, za) in anchor_grad.iter_mut().zip(z.row(a)) {
                *g += denom_scale * q * za / tau;
            }
            for (ga, zi) in grad.row_mut(a).iter_mut().zip(z.row(i)) {
                *ga += denom_scale * q * zi / tau;
            }
        }
        for (g, ag) in grad.row_mut(i).iter_mut().zip(&anchor_grad) {
            *g += ag;
        }
    }
    (loss, grad, active)
}

/// Assemble per-sample supervision from the triage partition.
///
/// `pseudo` and `pseudo_weight` are indexed like `partition.closed_noisy`;
/// `dynamic` like `partition.open_noisy`. Clean samples keep their observed
/// label at weight 1, closed-set samples take the argmax of their pseudo
/// label as refined label, open-set samples join the extra class `k` at
/// weight 1.
pub fn refine_labels(
    partition: &Partition,
    observed: &[usize],
    pseudo: &[Vec<f64>],
    pseudo_weight: &[f64],
    dynamic: &[usize],
    k: usize,
) -> Vec<SupervisionRecord> {
    assert_eq!(pseudo.len(), partition.closed_noisy.len());
    assert_eq!(pseudo_weight.len(), partition.closed_noisy.len());
    assert_eq!(dynamic.len(), partition.open_noisy.len());
    let n = observed.len();
    let placeholder = SupervisionRecord {
        kind: SupervisionKind::Clean,
        refined_label: usize::MAX,
        target: Target::Hard(usize::MAX),
        weight: 0.0,
    };
    let mut records = vec![placeholder; n];
    for &i in &partition.clean {
        records[i] = SupervisionRecord {
            kind: SupervisionKind::Clean,
            refined_label: observed[i],
            target: Target::Hard(observed[i]),
            weight: 1.0,
        };
    }
    for (slot, &i) in partition.closed_noisy.iter().enumerate() {
        let soft = &pseudo[slot];
        let refined = argmax(soft);
        records[i] = SupervisionRecord {
            kind: SupervisionKind::Closed,
            refined_label: refined,
            target: Target::Soft(soft.clone()),
            weight: pseudo_weight[slot],
        };
    }
    for (slot, &i) in partition.open_noisy.iter().enumerate() {
        records[i] = SupervisionRecord {
            kind: SupervisionKind::Open,
            refined_label: k,
            target: Target::Hard(dynamic[slot]),
            weight: 1.0,
        };
    }
    debug_assert!(records.iter().all(|r| r.refined_label != usize::MAX));
    records
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Total objective: classification plus `lambda` times the contrastive term.
pub fn total_loss(l_cls: f64, l_ensc: f64, lambda: f64) -> f64 {
    l_cls + lambda * l_ensc
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array2};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn record(kind: SupervisionKind, target: Target, weight: f64) -> SupervisionRecord {
        let refined = match (&kind, &target) {
            (SupervisionKind::Open, _) => 99,
            (_, Target::Hard(y)) => *y,
            (_, Target::Soft(t)) => argmax(t),
        };
        SupervisionRecord {
            kind,
            refined_label: refined,
            target,
            weight,
        }
    }

    #[test]
    fn pseudo_label_fixed_points_and_symmetry() {
        let one_hot = arr1(&[0.0, 1.0, 0.0]);
        assert_eq!(pseudo_label(one_hot.view(), one_hot.view()), vec![0.0, 1.0, 0.0]);

        let a = arr1(&[0.6, 0.4]);
        let b = arr1(&[0.4, 0.6]);
        let out = pseudo_label(a.view(), b.view());
        assert!((out[0] - 0.5).abs() < 1e-12);
        assert!((out[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pseudo_label_sharpens_a_known_case() {
        // mean (0.8, 0.2) -> squares (0.64, 0.04) -> (16/17, 1/17)
        let a = arr1(&[0.8, 0.2]);
        let out = pseudo_label(a.view(), a.view());
        assert!((out[0] - 16.0 / 17.0).abs() < 1e-12);
        assert!((out[1] - 1.0 / 17.0).abs() < 1e-12);
    }

    fn entropy(p: &[f64]) -> f64 {
        p.iter()
            .filter(|v| **v > 0.0)
            .map(|v| -v * v.ln())
            .sum()
    }

    proptest! {
        /// Squaring + renormalizing never increases entropy.
        #[test]
        fn pseudo_label_never_raises_entropy(
            raw1 in proptest::collection::vec(1e-6f64..1.0, 2..8),
            raw2 in proptest::collection::vec(1e-6f64..1.0, 2..8),
        ) {
            let n = raw1.len().min(raw2.len());
            let norm = |v: &[f64]| {
                let s: f64 = v[..n].iter().sum();
                v[..n].iter().map(|x| x / s).collect::<Vec<f64>>()
            };
            let p1 = norm(&raw1);
            let p2 = norm(&raw2);
            let mean: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| 0.5 * (a + b)).collect();
            let sharp = pseudo_label(
                arr1(&p1).view(),
                arr1(&p2).view(),
            );
            prop_assert!(entropy(&sharp) <= entropy(&mean) + 1e-9);
            let total: f64 = sharp.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pseudo_weights_follow_the_loss_gmm() {
        // Two clusters 10+ sigma apart.
        let mut losses = vec![0.1; 40];
        losses.extend(vec![5.0; 40]);
        for (i, l) in losses.iter_mut().enumerate() {
            *l += (i % 7) as f64 * 0.003;
        }
        let w = pseudo_weights(&losses, 0);
        for (i, wi) in w.iter().enumerate() {
            if losses[i] < 1.0 {
                assert!(*wi > 0.99, "low-loss weight {wi}");
            } else {
                assert!(*wi < 0.01, "high-loss weight {wi}");
            }
        }
    }

    #[test]
    fn pseudo_weights_degenerate_and_permutation() {
        assert_eq!(pseudo_weights(&[1.0; 8], 0), vec![0.5; 8]);
        assert_eq!(pseudo_weights(&[0.3], 0), vec![0.5]);

        let losses = [0.1, 4.0, 0.2, 3.5, 0.15, 3.9];
        let w = pseudo_weights(&losses, 1);
        let mut permuted = losses;
        permuted.reverse();
        let wp = pseudo_weights(&permuted, 1);
        for i in 0..losses.len() {
            assert!((w[i] - wp[losses.len() - 1 - i]).abs() < 1e-9);
        }
    }

    #[test]
    fn dynamic_label_contract() {
        assert_eq!(dynamic_label(1, 5, 42, 9), 0);
        assert_eq!(dynamic_label(7, 3, 11, 2), dynamic_label(7, 3, 11, 2));
        // Resampled across epochs: some epoch must differ.
        let base = dynamic_label(7, 0, 11, 2);
        assert!((1..20).any(|e| dynamic_label(7, e, 11, 2) != base));

        let mut counts = vec![0usize; 5];
        let draws = 100_000;
        for id in 0..draws {
            counts[dynamic_label(5, 0, id, 3)] += 1;
        }
        // 3 sigma of a Binomial(draws, 0.2) frequency.
        let sigma = (0.2 * 0.8 / draws as f64).sqrt();
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.2).abs() <= 3.0 * sigma, "freq {freq}");
        }
    }

    #[test]
    fn classification_loss_hand_values() {
        // Perfect prediction: zero loss.
        let preds = arr2(&[[0.0, 1.0]]);
        let records = vec![record(SupervisionKind::Clean, Target::Hard(1), 1.0)];
        assert!(classification_loss(&records, preds.view()) < 1e-9);

        // Uniform prediction on 2 classes: ln 2.
        let preds = arr2(&[[0.5, 0.5]]);
        let loss = classification_loss(&records, preds.view());
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_annihilate_the_closed_branch() {
        let preds = arr2(&[[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]]);
        let records = vec![
            record(SupervisionKind::Clean, Target::Hard(0), 1.0),
            record(SupervisionKind::Closed, Target::Soft(vec![0.3, 0.7]), 0.0),
            record(SupervisionKind::Open, Target::Hard(1), 1.0),
        ];
        let with_closed = classification_loss(&records, preds.view());
        let clean_open = vec![records[0].clone(), records[2].clone()];
        let reduced = classification_loss(
            &clean_open,
            preds.select(ndarray::Axis(0), &[0, 2]).view(),
        );
        assert!((with_closed - reduced).abs() < 1e-12);
    }

    #[test]
    fn classification_loss_is_additive_over_branches() {
        let preds = arr2(&[
            [0.7, 0.2, 0.1],
            [0.1, 0.6, 0.3],
            [0.3, 0.3, 0.4],
            [0.25, 0.5, 0.25],
        ]);
        let records = vec![
            record(SupervisionKind::Clean, Target::Hard(0), 1.0),
            record(SupervisionKind::Closed, Target::Soft(vec![0.2, 0.5, 0.3]), 0.8),
            record(SupervisionKind::Open, Target::Hard(2), 1.0),
            record(SupervisionKind::Clean, Target::Hard(1), 1.0),
        ];
        let joint = classification_loss(&records, preds.view());
        let mut by_branch = 0.0;
        for kind in [SupervisionKind::Clean, SupervisionKind::Closed, SupervisionKind::Open] {
            let idx: Vec<usize> = records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.kind == kind)
                .map(|(i, _)| i)
                .collect();
            if idx.is_empty() {
                continue;
            }
            let sub: Vec<SupervisionRecord> = idx.iter().map(|&i| records[i].clone()).collect();
            by_branch += classification_loss(&sub, preds.select(ndarray::Axis(0), &idx).view());
        }
        assert!((joint - by_branch).abs() < 1e-12);
    }

    #[test]
    fn classification_grad_matches_finite_differences() {
        // Check d loss / d logits through an explicit softmax.
        let logits = arr2(&[[0.3, -0.7, 1.1], [0.0, 0.4, -0.2], [2.0, 0.1, 0.5]]);
        let records = vec![
            record(SupervisionKind::Clean, Target::Hard(2), 1.0),
            record(SupervisionKind::Closed, Target::Soft(vec![0.6, 0.3, 0.1]), 0.7),
            record(SupervisionKind::Open, Target::Hard(0), 1.0),
        ];
        let softmax = |l: &Array2<f64>| {
            let mut p = l.clone();
            for mut row in p.rows_mut() {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - m).exp());
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            p
        };
        let (_, grad) = classification_loss_with_grad(&records, softmax(&logits).view());
        let h = 1e-6;
        for i in 0..3 {
            for c in 0..3 {
                let mut plus = logits.clone();
                plus[[i, c]] += h;
                let mut minus = logits.clone();
                minus[[i, c]] -= h;
                let fd = (classification_loss(&records, softmax(&plus).view())
                    - classification_loss(&records, softmax(&minus).view()))
                    / (2.0 * h);
                assert!(
                    (grad[[i, c]] - fd).abs() <= 1e-6 + 1e-4 * fd.abs(),
                    "grad[{i},{c}] = {} vs fd {}",
                    grad[[i, c]],
                    fd
                );
            }
        }
    }

    /// Direct transcription of the contrastive formula with explicit
    /// anchor weights (no cancellation), as an independent oracle.
    fn ensc_brute_force(z: &Array2<f64>, labels: &[usize], weights: &[f64], tau: f64) -> f64 {
        let n = z.nrows();
        let mut total = 0.0;
        for i in 0..n {
            let positives: Vec<usize> = (0..n)
                .filter(|&j| j != i && labels[j] == labels[i])
                .collect();
            if positives.is_empty() {
                continue;
            }
            let mut denom = 0.0;
            for a in 0..n {
                if a == i {
                    continue;
                }
                let sim = z.row(i).dot(&z.row(a)) / tau;
                denom += weights[i] * weights[a] * sim.exp();
            }
            if denom <= 0.0 {
                continue;
            }
            let mut acc = 0.0;
            let mut used = 0;
            for &p in &positives {
                let sim = z.row(i).dot(&z.row(p)) / tau;
                let num = weights[i] * weights[p] * sim.exp();
                if num <= 0.0 {
                    continue;
                }
                acc += (num / denom).ln();
                used += 1;
            }
            if used > 0 {
                total += -acc / positives.len() as f64;
            }
        }
        total
    }

    #[test]
    fn ensc_zero_for_trivial_batches() {
        // Two samples, same class, unit weight: numerator equals the only
        // denominator term.
        let z = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let loss = ensc_loss(z.view(), &[0, 0], &[1.0, 1.0], 0.2);
        assert!(loss.abs() < 1e-12);

        // Every anchor alone in its class: all anchors skipped.
        let loss = ensc_loss(z.view(), &[0, 1], &[1.0, 1.0], 0.2);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn ensc_matches_brute_force_on_fixed_geometry() {
        // Unit vectors at 0, 10, 180 degrees; classes (0, 0, 1).
        let deg = |d: f64| d.to_radians();
        let z = arr2(&[
            [deg(0.0).cos(), deg(0.0).sin()],
            [deg(10.0).cos(), deg(10.0).sin()],
            [deg(180.0).cos(), deg(180.0).sin()],
        ]);
        let labels = [0usize, 0, 1];
        let w = [1.0, 1.0, 1.0];
        let got = ensc_loss(z.view(), &labels, &w, 0.2);
        let want = ensc_brute_force(&z, &labels, &w, 0.2);
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn ensc_matches_brute_force_on_random_instances() {
        let mut rng = stream_rng(0, "ensc-oracle", 0, 0);
        for _ in 0..200 {
            let n = rng.gen_range(2..7);
            let d = rng.gen_range(2..5);
            let mut z = Array2::zeros((n, d));
            for mut row in z.rows_mut() {
                for v in row.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                row.mapv_inplace(|x| x / norm);
            }
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let got = ensc_loss(z.view(), &labels, &weights, 0.2);
            let want = ensc_brute_force(&z, &labels, &weights, 0.2);
            assert!(
                (got - want).abs() <= 1e-9 * want.abs().max(1.0),
                "{got} vs {want}"
            );
        }
    }

    #[test]
    fn ensc_is_invariant_to_weight_rescaling() {
        let mut rng = stream_rng(1, "ensc-scale", 0, 0);
        let mut z = Array2::zeros((5, 3));
        for mut row in z.rows_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let norm = row.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
            row.mapv_inplace(|x| x / norm);
        }
        let labels = [0usize, 1, 0, 1, 0];
        let w = [0.9, 0.4, 0.7, 1.0, 0.2];
        let a = ensc_loss(z.view(), &labels, &w, 0.2);
        let w2: Vec<f64> = w.iter().map(|x| x * 7.3).collect();
        let b = ensc_loss(z.view(), &labels, &w2, 0.2);
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn ensc_rewards_closer_same_class_pairs() {
        let deg = |d: f64| d.to_radians();
        let at = |theta: f64| {
            arr2(&[
                [1.0, 0.0],
                [theta.cos(), theta.sin()],
                [deg(170.0).cos(), deg(170.0).sin()],
            ])
        };
        let labels = [0usize, 0, 1];
        let w = [1.0; 3];
        let far = ensc_loss(at(deg(40.0)).view(), &labels, &w, 0.2);
        let near = ensc_loss(at(deg(10.0)).view(), &labels, &w, 0.2);
        assert!(near < far);
    }

    #[test]
    fn ensc_grad_matches_finite_differences() {
        let mut rng = stream_rng(2, "ensc-grad", 0, 0);
        let mut z = Array2::zeros((8, 16));
        for mut row in z.rows_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let norm = row.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
            row.mapv_inplace(|x| x / norm);
        }
        let labels: Vec<usize> = (0..8).map(|i| i % 3).collect();
        let weights: Vec<f64> = (0..8).map(|i| 0.3 + 0.08 * i as f64).collect();
        let (_, grad, _) = ensc_loss_with_grad(z.view(), &labels, &weights, 0.2);
        let h = 1e-5;
        for i in 0..8 {
            for c in 0..16 {
                let mut plus = z.clone();
                plus[[i, c]] += h;
                let mut minus = z.clone();
                minus[[i, c]] -= h;
                let fd = (ensc_loss(plus.view(), &labels, &weights, 0.2)
                    - ensc_loss(minus.view(), &labels, &weights, 0.2))
                    / (2.0 * h);
                let g = grad[[i, c]];
                let denom = fd.abs().max(1e-6);
                assert!(
                    (g - fd).abs() / denom <= 1e-4,
                    "z[{i},{c}]: grad {g} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn refine_labels_covers_all_branches() {
        let partition = Partition {
            clean: vec![0, 3],
            closed_noisy: vec![1],
            open_noisy: vec![2],
        };
        let observed = [4usize, 0, 1, 2];
        let pseudo = vec![vec![0.1, 0.7, 0.2]];
        let pw = vec![0.9];
        let dynamic = vec![2usize];
        let records = refine_labels(&partition, &observed, &pseudo, &pw, &dynamic, 5);
        assert_eq!(records.len(), 4);
        assert_eq!(records[0].refined_label, 4);
        assert_eq!(records[0].weight, 1.0);
        assert_eq!(records[1].refined_label, 1); // argmax of (0.1, 0.7, 0.2)
        assert_eq!(records[1].weight, 0.9);
        assert_eq!(records[2].refined_label, 5); // the K+1-th class, 0-based K
        assert_eq!(records[2].target, Target::Hard(2));
        assert_eq!(records[3].refined_label, 2);
    }

    #[test]
    fn refine_labels_all_clean_is_observed() {
        let partition = Partition::all_clean(3);
        let observed = [2usize, 0, 1];
        let records = refine_labels(&partition, &observed, &[], &[], &[], 3);
        for (r, o) in records.iter().zip(&observed) {
            assert_eq!(r.refined_label, *o);
            assert_eq!(r.target, Target::Hard(*o));
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(3.0, 99.0, 0.0), 3.0);
        assert_eq!(total_loss(1.0, 2.0, 1.5), 4.0);
    }

    #[test]
    fn hyperparams_validation() {
        assert!(HyperParams::default().validate().is_ok());
        let bad = HyperParams { gamma_cl: 0.4, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = HyperParams { tau: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = HyperParams { lambda: -0.1, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
