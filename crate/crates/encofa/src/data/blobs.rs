//! Synthetic isotropic-Gaussian cluster datasets: a desk-scale stand-in for
//! image benchmarks that keeps every downstream property measurable.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{split_sizes, DatasetMeta, DatasetSplits, InputShape, OodSample, Sample, TrueType};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Generate `k + k_ood` unit-variance Gaussian clusters with pairwise center
/// distance at least `separation`, split the ID samples 70/10/20, and return
/// the OOD samples as a separate pool.
///
/// Deterministic given `seed`.
pub fn generate_blobs(
    n_per_class: usize,
    k: usize,
    k_ood: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<(DatasetSplits, Vec<OodSample>)> {
    if k < 2 {
        return Err(Error::Config(format!(
            "blob generation needs at least 2 ID classes, got {k}"
        )));
    }
    if n_per_class < 10 {
        return Err(Error::Config(format!(
            "blob generation needs n_per_class >= 10, got {n_per_class}"
        )));
    }
    if dim < 2 {
        return Err(Error::Config(format!("blob dim must be >= 2, got {dim}")));
    }
    if separation <= 0.0 {
        return Err(Error::Config(format!(
            "blob separation must be positive, got {separation}"
        )));
    }

    let total_classes = k + k_ood;
    let centers = place_centers(total_classes, dim, separation, seed);

    // ID samples, contiguous ids per class, then the OOD pool continues
    // the numbering.
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut next_id = 0usize;
    let (n_train, n_val, _) = split_sizes(n_per_class);
    for class in 0..k {
        let mut rng = stream_rng(seed, "blob-class", class as u64, 0);
        for j in 0..n_per_class {
            let input: Vec<f64> = (0..dim)
                .map(|d| centers[class][d] + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let sample = Sample {
                id: next_id,
                input,
                observed_label: class,
                true_label: class,
                true_type: TrueType::Clean,
            };
            next_id += 1;
            // Within-class draws are iid, so positional splitting is
            // already an unbiased split.
            if j < n_train {
                train.push(sample);
            } else if j < n_train + n_val {
                val.push(sample);
            } else {
                test.push(sample);
            }
        }
    }

    let mut pool = Vec::new();
    for class_off in 0..k_ood {
        let class = k + class_off;
        let mut rng = stream_rng(seed, "blob-class", class as u64, 0);
        for _ in 0..n_per_class {
            let input: Vec<f64> = (0..dim)
                .map(|d| centers[class][d] + rng.sample::<f64, _>(StandardNormal))
                .collect();
            pool.push(OodSample {
                id: next_id,
                input,
                true_label: class,
            });
            next_id += 1;
        }
    }

    let splits = DatasetSplits {
        train,
        val,
        test,
        meta: DatasetMeta {
            input_shape: InputShape::Vector { dim },
            id_class_count: k,
            ood_class_count: k_ood,
            noise: None,
        },
    };
    Ok((splits, pool))
}

/// Rejection-sample cluster centers on a sphere whose radius grows until all
/// pairwise distances reach `separation`. Unit cluster variance, so the
/// spec's `separation * sigma` is just `separation`.
fn place_centers(count: usize, dim: usize, separation: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, "blob-centers", 0, 0);
    let mut radius = separation.max(1.0);
    loop {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
        let mut rejects = 0usize;
        while centers.len() < count {
            let mut c: Vec<f64> = (0..dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                continue;
            }
            for x in &mut c {
                *x *= radius / norm;
            }
            let ok = centers
                .iter()
                .all(|other| dist(other, &c) >= separation);
            if ok {
                centers.push(c);
                rejects = 0;
            } else {
                rejects += 1;
                if rejects > 200 {
                    break;
                }
            }
        }
        if centers.len() == count {
            return centers;
        }
        radius *= 1.25;
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
