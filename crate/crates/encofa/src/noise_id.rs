//! Per-epoch noise-type triage.
//!
//! Stage one fits a two-component Gaussian mixture to the previous epoch's
//! per-sample losses and keeps samples whose posterior under the lower-mean
//! component exceeds `gamma_cl` as clean. Stage two scores the remaining
//! samples with a KNN distance rule in (normalized) feature space and calls
//! everything at or below a clean-calibrated threshold open-set.

use ndarray::ArrayView1;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Variance floor preventing EM collapse on near-duplicate losses.
pub const VAR_FLOOR: f64 = 1e-6;

/// A fitted two-component 1-D Gaussian mixture. Component 0 always has the
/// lower mean after fitting.
#[derive(Debug, Clone)]
pub struct Gmm2 {
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub mix_weights: [f64; 2],
    /// Set when the inputs carry no usable spread; posteriors are then 0.5.
    pub degenerate: bool,
    /// Log-likelihood after each EM iteration of the winning restart.
    pub log_likelihood_trace: Vec<f64>,
}

/// Disjoint triage of the training indices; union covers `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    pub clean: Vec<usize>,
    pub closed_noisy: Vec<usize>,
    pub open_noisy: Vec<usize>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.clean.len() + self.closed_noisy.len() + self.open_noisy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All samples clean; the warm-up / fallback partition.
    pub fn all_clean(n: usize) -> Partition {
        Partition {
            clean: (0..n).collect(),
            closed_noisy: Vec::new(),
            open_noisy: Vec::new(),
        }
    }
}

/// Fit a two-component GMM to scalar losses with EM.
///
/// Initialization draws kmeans++-style seed pairs from the sorted values
/// (10 restarts, best final likelihood wins), so the fit is deterministic
/// given `seed` and exactly invariant to permutations of the input.
/// All-equal inputs set the degenerate flag instead of fitting.
pub fn fit_gmm_em(losses: &[f64], max_iter: usize, tol: f64, seed: u64) -> Result<Gmm2> {
    if losses.len() < 2 {
        return Err(Error::Runtime(format!(
            "gmm fit needs at least 2 samples, got {}",
            losses.len()
        )));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Runtime("gmm fit received non-finite loss".into()));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let spread = sorted[sorted.len() - 1] - sorted[0];
    if spread < 1e-12 {
        return Ok(Gmm2 {
            means: [sorted[0], sorted[0]],
            variances: [VAR_FLOOR, VAR_FLOOR],
            mix_weights: [0.5, 0.5],
            degenerate: true,
            log_likelihood_trace: Vec::new(),
        });
    }

    let n = sorted.len();
    let mean: f64 = sorted.iter().sum::<f64>() / n as f64;
    let var: f64 = sorted.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let var = var.max(VAR_FLOOR);

    let mut rng = stream_rng(seed, "gmm-init", 0, 0);
    let mut best: Option<Gmm2> = None;
    for _ in 0..10 {
        // kmeans++ pair on the sorted values: first seed uniform, second
        // proportional to squared distance from the first.
        let first = sorted[rng.gen_range(0..n)];
        let weights: Vec<f64> = sorted.iter().map(|x| (x - first) * (x - first)).collect();
        let total: f64 = weights.iter().sum();
        let second = if total <= 0.0 {
            sorted[n - 1]
        } else {
            let mut draw: f64 = rng.gen::<f64>() * total;
            let mut pick = sorted[n - 1];
            for (x, w) in sorted.iter().zip(&weights) {
                draw -= w;
                if draw <= 0.0 {
                    pick = *x;
                    break;
                }
            }
            pick
        };
        let init = [first.min(second), first.max(second)];
        let fitted = run_em(&sorted, init, [var, var], max_iter, tol);
        let better = match &best {
            None => true,
            Some(b) => {
                fitted.log_likelihood_trace.last() > b.log_likelihood_trace.last()
            }
        };
        if better {
            best = Some(fitted);
        }
    }
    Ok(best.expect("at least one EM restart runs"))
}

fn run_em(values: &[f64], mut means: [f64; 2], mut vars: [f64; 2], max_iter: usize, tol: f64) -> Gmm2 {
    let n = values.len();
    let mut weights = [0.5f64, 0.5];
    let mut resp = vec![0.0f64; n]; // responsibility of component 0
    let mut trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..max_iter {
        // E step
        let mut ll = 0.0;
        for (i, &x) in values.iter().enumerate() {
            let p0 = weights[0] * gauss_pdf(x, means[0], vars[0]);
            let p1 = weights[1] * gauss_pdf(x, means[1], vars[1]);
            let total = p0 + p1;
            resp[i] = if total > 0.0 { p0 / total } else { 0.5 };
            ll += total.max(f64::MIN_POSITIVE).ln();
        }
        trace.push(ll);
        // M step
        let r0: f64 = resp.iter().sum();
        let r1 = n as f64 - r0;
        if r0 > 0.0 {
            means[0] = values.iter().zip(&resp).map(|(x, r)| x * r).sum::<f64>() / r0;
            vars[0] = (values
                .iter()
                .zip(&resp)
                .map(|(x, r)| r * (x - means[0]) * (x - means[0]))
                .sum::<f64>()
                / r0)
                .max(VAR_FLOOR);
        }
        if r1 > 0.0 {
            means[1] = values
                .iter()
                .zip(&resp)
                .map(|(x, r)| x * (1.0 - r))
                .sum::<f64>()
                / r1;
            vars[1] = (values
                .iter()
                .zip(&resp)
                .map(|(x, r)| (1.0 - r) * (x - means[1]) * (x - means[1]))
                .sum::<f64>()
                / r1)
                .max(VAR_FLOOR);
        }
        weights = [r0 / n as f64, r1 / n as f64];
        if (ll - prev_ll).abs() < tol {
            break;
        }
        prev_ll = ll;
    }
    // Order components by mean.
    if means[0] > means[1] {
        means.swap(0, 1);
        vars.swap(0, 1);
        weights.swap(0, 1);
    }
    Gmm2 {
        means,
        variances: vars,
        mix_weights: weights,
        degenerate: false,
        log_likelihood_trace: trace,
    }
}

fn gauss_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-(d * d) / (2.0 * var)).exp() / (var * std::f64::consts::TAU).sqrt()
}

/// Posterior probability that `loss` came from the lower-mean component.
/// Degenerate fits answer 0.5 everywhere, which pushes every sample to the
/// noisy branch for any `gamma_cl` above one half.
pub fn posterior_clean(gmm: &Gmm2, loss: f64) -> f64 {
    if gmm.degenerate {
        return 0.5;
    }
    let p0 = gmm.mix_weights[0] * gauss_pdf(loss, gmm.means[0], gmm.variances[0]);
    let p1 = gmm.mix_weights[1] * gauss_pdf(loss, gmm.means[1], gmm.variances[1]);
    let total = p0 + p1;
    if total > 0.0 {
        p0 / total
    } else {
        // Both tails underflowed; decide by distance in standard deviations.
        let z0 = (loss - gmm.means[0]).abs() / gmm.variances[0].sqrt();
        let z1 = (loss - gmm.means[1]).abs() / gmm.variances[1].sqrt();
        if z0 <= z1 {
            1.0
        } else {
            0.0
        }
    }
}

/// First triage stage: indices whose clean posterior exceeds `gamma_cl`,
/// and the complementary noisy set.
pub fn partition_clean(losses: &[f64], gmm: &Gmm2, gamma_cl: f64) -> (Vec<usize>, Vec<usize>) {
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for (i, &l) in losses.iter().enumerate() {
        if posterior_clean(gmm, l) > gamma_cl {
            clean.push(i);
        } else {
            noisy.push(i);
        }
    }
    (clean, noisy)
}

fn l2_normalized(f: ArrayView1<f64>) -> Vec<f64> {
    let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        // Degenerate zero feature; fall back to the first basis vector.
        let mut e = vec![0.0; f.len()];
        if !e.is_empty() {
            e[0] = 1.0;
        }
        return e;
    }
    f.iter().map(|x| x / norm).collect()
}

/// Negative distance to the k-th nearest clean feature, both sides L2
/// normalized. Always <= 0; larger (closer to zero) means more ID-like.
/// `k` larger than the reference set is clamped with a warning.
pub fn knn_ood_score(f: ArrayView1<f64>, clean_features: &[Vec<f64>], k: usize) -> Result<f64> {
    if clean_features.is_empty() {
        return Err(Error::Runtime("knn scoring needs a non-empty clean set".into()));
    }
    let mut k = k.max(1);
    if k > clean_features.len() {
        log::warn!(
            "knn k={k} exceeds clean set size {}; clamping",
            clean_features.len()
        );
        k = clean_features.len();
    }
    let fq = l2_normalized(f);
    let mut dists: Vec<f64> = clean_features
        .iter()
        .map(|c| {
            fq.iter()
                .zip(c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(-dists[k - 1])
}

/// Normalize a reference feature set once for repeated scoring.
pub fn normalize_features(features: &[ArrayView1<f64>]) -> Vec<Vec<f64>> {
    features.iter().map(|f| l2_normalized(*f)).collect()
}

/// Threshold as the empirical `(1 - gamma_ood)` lower quantile of the clean
/// samples' own scores, so a `gamma_ood` fraction of clean samples sits
/// strictly above it.
pub fn select_ood_threshold(clean_scores: &[f64], gamma_ood: f64) -> Result<f64> {
    if clean_scores.is_empty() {
        return Err(Error::Runtime("threshold selection needs clean scores".into()));
    }
    if !(0.0..=1.0).contains(&gamma_ood) {
        return Err(Error::Config(format!(
            "gamma_ood must lie in [0,1], got {gamma_ood}"
        )));
    }
    let mut sorted = clean_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let retain = (gamma_ood * n as f64).ceil() as usize;
    let retain = retain.min(n);
    if retain == n {
        Ok(sorted[0])
    } else {
        // Largest score that is *not* retained.
        Ok(sorted[n - retain - 1])
    }
}

/// Second triage stage: noisy indices whose score falls at or below the
/// threshold are open-set (boundary ties go open-set), the rest closed-set.
pub fn partition_open_set(
    noisy_indices: &[usize],
    scores: &[f64],
    threshold: f64,
) -> (Vec<usize>, Vec<usize>) {
    debug_assert_eq!(noisy_indices.len(), scores.len());
    let mut open = Vec::new();
    let mut closed = Vec::new();
    for (&i, &s) in noisy_indices.iter().zip(scores) {
        if s <= threshold {
            open.push(i);
        } else {
            closed.push(i);
        }
    }
    (open, closed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1};
    use rand_distr::{Distribution, Normal};

    fn bimodal(seed: u64) -> (Vec<f64>, Vec<bool>) {
        // 500 draws from N(0.2, 0.1^2) and 500 from N(2.0, 0.1^2); the bool
        // marks low-cluster membership.
        let mut rng = stream_rng(seed, "test-bimodal", 0, 0);
        let low = Normal::new(0.2, 0.1).unwrap();
        let high = Normal::new(2.0, 0.1).unwrap();
        let mut values = Vec::new();
        let mut is_low = Vec::new();
        for i in 0..1000 {
            if i % 2 == 0 {
                values.push(low.sample(&mut rng));
                is_low.push(true);
            } else {
                values.push(high.sample(&mut rng));
                is_low.push(false);
            }
        }
        (values, is_low)
    }

    #[test]
    fn em_recovers_bimodal_means() {
        let (values, _) = bimodal(0);
        let gmm = fit_gmm_em(&values, 100, 1e-9, 0).unwrap();
        assert!((gmm.means[0] - 0.2).abs() < 0.05, "low mean {}", gmm.means[0]);
        assert!((gmm.means[1] - 2.0).abs() < 0.05, "high mean {}", gmm.means[1]);
        assert!(!gmm.degenerate);
    }

    #[test]
    fn em_log_likelihood_is_monotone() {
        let (values, _) = bimodal(1);
        let gmm = fit_gmm_em(&values, 100, 0.0, 1).unwrap();
        for w in gmm.log_likelihood_trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9,
                "log-likelihood decreased: {} -> {}",
                w[0],
                w[1]
            );
        }
        assert!(gmm.log_likelihood_trace.len() > 1);
    }

    #[test]
    fn identical_losses_degenerate_to_half() {
        let gmm = fit_gmm_em(&[0.7; 50], 100, 1e-9, 0).unwrap();
        assert!(gmm.degenerate);
        assert_eq!(posterior_clean(&gmm, 0.7), 0.5);
        assert_eq!(posterior_clean(&gmm, 123.4), 0.5);
    }

    #[test]
    fn fit_is_permutation_invariant() {
        let (mut values, _) = bimodal(2);
        let a = fit_gmm_em(&values, 100, 1e-9, 5).unwrap();
        values.reverse();
        values.swap(3, 77);
        let b = fit_gmm_em(&values, 100, 1e-9, 5).unwrap();
        for i in 0..2 {
            assert!((a.means[i] - b.means[i]).abs() < 1e-8);
            assert!((a.variances[i] - b.variances[i]).abs() < 1e-8);
            assert!((a.mix_weights[i] - b.mix_weights[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn posterior_matches_direct_bayes_rule() {
        let gmm = Gmm2 {
            means: [0.0, 10.0],
            variances: [1.0, 1.0],
            mix_weights: [0.5, 0.5],
            degenerate: false,
            log_likelihood_trace: Vec::new(),
        };
        // At the low-mean center with means 10 sigma apart.
        assert!(posterior_clean(&gmm, 0.0) > 0.999);
        // Direct Bayes evaluation as independent oracle.
        let x = 3.0;
        let n0 = (-(x - 0.0f64).powi(2) / 2.0).exp();
        let n1 = (-(x - 10.0f64).powi(2) / 2.0).exp();
        let expect = n0 / (n0 + n1);
        assert!((posterior_clean(&gmm, x) - expect).abs() < 1e-12);
    }

    #[test]
    fn posterior_symmetry_and_tail() {
        let sym = Gmm2 {
            means: [1.0, 1.0],
            variances: [0.5, 0.5],
            mix_weights: [0.5, 0.5],
            degenerate: false,
            log_likelihood_trace: Vec::new(),
        };
        for x in [-3.0, 0.0, 1.0, 9.0] {
            assert!((posterior_clean(&sym, x) - 0.5).abs() < 1e-12);
        }
        let gmm = Gmm2 {
            means: [0.2, 2.0],
            variances: [0.01, 0.01],
            mix_weights: [0.5, 0.5],
            degenerate: false,
            log_likelihood_trace: Vec::new(),
        };
        assert!(posterior_clean(&gmm, 1e6) < 1e-6);
    }

    #[test]
    fn partition_clean_splits_bimodal_losses() {
        let (values, is_low) = bimodal(3);
        let gmm = fit_gmm_em(&values, 100, 1e-9, 3).unwrap();
        let (clean, noisy) = partition_clean(&values, &gmm, 0.98);
        assert_eq!(clean.len() + noisy.len(), values.len());
        let low_total = is_low.iter().filter(|b| **b).count();
        let low_clean = clean.iter().filter(|&&i| is_low[i]).count();
        let high_clean = clean.iter().filter(|&&i| !is_low[i]).count();
        assert!(low_clean as f64 >= 0.95 * low_total as f64);
        assert_eq!(high_clean, 0);
    }

    #[test]
    fn degenerate_fit_keeps_nothing_clean() {
        let gmm = fit_gmm_em(&[1.0; 10], 100, 1e-9, 0).unwrap();
        let (clean, noisy) = partition_clean(&[1.0; 10], &gmm, 0.999);
        assert!(clean.is_empty());
        assert_eq!(noisy.len(), 10);
    }

    #[test]
    fn partition_is_scale_invariant() {
        let (values, _) = bimodal(4);
        let gmm = fit_gmm_em(&values, 100, 1e-9, 9).unwrap();
        let (clean, _) = partition_clean(&values, &gmm, 0.98);
        let mut rng = stream_rng(11, "scale", 0, 0);
        for _ in 0..10 {
            let c: f64 = rng.gen_range(0.1..10.0);
            let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
            let gmm_s = fit_gmm_em(&scaled, 100, 1e-9, 9).unwrap();
            let (clean_s, _) = partition_clean(&scaled, &gmm_s, 0.98);
            assert_eq!(clean, clean_s, "scale {c}");
        }
    }

    #[test]
    fn knn_score_zero_for_member_and_minus_two_for_antipode() {
        let g = vec![vec![1.0, 0.0]];
        let s = knn_ood_score(arr1(&[2.0, 0.0]).view(), &g, 1).unwrap();
        assert!(s.abs() < 1e-12);
        let s = knn_ood_score(arr1(&[-3.0, 0.0]).view(), &g, 1).unwrap();
        assert!((s + 2.0).abs() < 1e-12);
    }

    #[test]
    fn knn_matches_brute_force_oracle() {
        let mut rng = stream_rng(5, "knn-test", 0, 0);
        for _ in 0..100 {
            let dim = 4;
            let clean_raw: Vec<Array1<f64>> = (0..3)
                .map(|_| Array1::from_iter((0..dim).map(|_| rng.gen_range(-2.0..2.0))))
                .collect();
            let clean = normalize_features(&clean_raw.iter().map(|a| a.view()).collect::<Vec<_>>());
            let q = Array1::from_iter((0..dim).map(|_| rng.gen_range(-2.0..2.0_f64)));
            let qn = {
                let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
                q.mapv(|x| x / norm)
            };
            let mut dists: Vec<f64> = clean
                .iter()
                .map(|c| {
                    qn.iter()
                        .zip(c)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let got = knn_ood_score(q.view(), &clean, 2).unwrap();
            assert!((got + dists[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn knn_is_invariant_to_positive_rescaling() {
        let mut rng = stream_rng(6, "knn-scale", 0, 0);
        let clean_raw: Vec<Array1<f64>> = (0..5)
            .map(|_| Array1::from_iter((0..6).map(|_| rng.gen_range(-1.0..1.0))))
            .collect();
        let clean = normalize_features(&clean_raw.iter().map(|a| a.view()).collect::<Vec<_>>());
        let f = Array1::from_iter((0..6).map(|_| rng.gen_range(-1.0..1.0_f64)));
        let a = knn_ood_score(f.view(), &clean, 2).unwrap();
        let b = knn_ood_score(f.mapv(|x| x * 37.5).view(), &clean, 2).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn knn_clamps_oversized_k() {
        let g = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = knn_ood_score(arr1(&[1.0, 0.0]).view(), &g, 50).unwrap();
        // Clamped to k=2: distance to the farther of the two.
        assert!((s + std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn threshold_retains_requested_fraction() {
        // gamma = 1 keeps everything: threshold is the minimum.
        let scores = [-0.5, -0.1, -0.9, -0.3];
        assert_eq!(select_ood_threshold(&scores, 1.0).unwrap(), -0.9);

        for &(n, gamma) in &[(50usize, 0.9f64), (50, 0.95), (1000, 0.99)] {
            let mut rng = stream_rng(n as u64, "thr", 0, 0);
            let scores: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>()).collect();
            let t = select_ood_threshold(&scores, gamma).unwrap();
            let above = scores.iter().filter(|s| **s > t).count() as i64;
            let want = (gamma * n as f64).ceil() as i64;
            assert!(
                (above - want).abs() <= 1,
                "n={n} gamma={gamma}: retained {above}, want {want}"
            );
        }
    }

    #[test]
    fn open_set_partition_boundaries() {
        let noisy = [3usize, 7, 9];
        let scores = [-0.5, -0.2, -0.9];
        let (open, closed) = partition_open_set(&noisy, &scores, -1.0);
        assert!(open.is_empty());
        assert_eq!(closed, vec![3, 7, 9]);

        let (open, closed) = partition_open_set(&noisy, &scores, 1.0);
        assert_eq!(open, vec![3, 7, 9]);
        assert!(closed.is_empty());

        // Boundary tie goes open-set.
        let (open, _) = partition_open_set(&noisy, &scores, -0.5);
        assert!(open.contains(&3));
    }
}
