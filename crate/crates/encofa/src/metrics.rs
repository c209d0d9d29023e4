//! Triage-quality and classification metrics.

use serde::{Deserialize, Serialize};

use crate::data::TrueType;
use crate::noise_id::Partition;

/// Headline numbers for a finished run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Test accuracy of the best-validation checkpoint.
    pub acc_test: f64,
    /// Test accuracy of the final-epoch checkpoint.
    pub acc_test_final: f64,
    /// Best validation accuracy (against observed labels).
    pub acc_val: f64,
    pub best_epoch: usize,
    /// Final-epoch triage metrics.
    pub acc_type_train: f64,
    pub f1_on_train: f64,
    pub pre_on_train: f64,
}

/// Three-way triage accuracy plus precision/recall-derived F1 for the
/// open-set class. Empty positive predictions and the absent-positive case
/// use the zero convention.
pub fn noise_type_metrics(partition: &Partition, truth: &[TrueType]) -> (f64, f64, f64) {
    let n = truth.len();
    debug_assert_eq!(partition.len(), n);
    if n == 0 {
        return (0.0, 0.0, 0.0);
    }
    let mut assigned = vec![TrueType::Clean; n];
    for &i in &partition.closed_noisy {
        assigned[i] = TrueType::ClosedNoisy;
    }
    for &i in &partition.open_noisy {
        assigned[i] = TrueType::OpenNoisy;
    }
    let correct = assigned
        .iter()
        .zip(truth)
        .filter(|(a, t)| a == t)
        .count();
    let acc_type = correct as f64 / n as f64;

    let tp = assigned
        .iter()
        .zip(truth)
        .filter(|(a, t)| **a == TrueType::OpenNoisy && **t == TrueType::OpenNoisy)
        .count() as f64;
    let predicted_on = partition.open_noisy.len() as f64;
    let actual_on = truth.iter().filter(|t| **t == TrueType::OpenNoisy).count() as f64;
    let precision = if predicted_on > 0.0 { tp / predicted_on } else { 0.0 };
    let recall = if actual_on > 0.0 { tp / actual_on } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (acc_type, f1, precision)
}

/// Fraction of samples where `predicted == label`.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    debug_assert_eq!(predicted.len(), labels.len());
    if labels.is_empty() {
        return 0.0;
    }
    let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn truth_vector() -> Vec<TrueType> {
        let mut t = vec![TrueType::Clean; 10];
        t[2] = TrueType::ClosedNoisy;
        t[3] = TrueType::ClosedNoisy;
        t[7] = TrueType::OpenNoisy;
        t[8] = TrueType::OpenNoisy;
        t[9] = TrueType::OpenNoisy;
        t
    }

    fn partition_from(assigned: &[TrueType]) -> Partition {
        let mut p = Partition::default();
        for (i, a) in assigned.iter().enumerate() {
            match a {
                TrueType::Clean => p.clean.push(i),
                TrueType::ClosedNoisy => p.closed_noisy.push(i),
                TrueType::OpenNoisy => p.open_noisy.push(i),
            }
        }
        p
    }

    #[test]
    fn perfect_triage_scores_ones() {
        let truth = truth_vector();
        let p = partition_from(&truth);
        let (acc, f1, pre) = noise_type_metrics(&p, &truth);
        assert_eq!((acc, f1, pre), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_predicted_open_set_gives_zero_f1() {
        let truth = truth_vector();
        let mut assigned = truth.clone();
        for a in &mut assigned {
            if *a == TrueType::OpenNoisy {
                *a = TrueType::ClosedNoisy;
            }
        }
        let (_, f1, pre) = noise_type_metrics(&partition_from(&assigned), &truth);
        assert_eq!(f1, 0.0);
        assert_eq!(pre, 0.0);
    }

    #[test]
    fn randomized_triage_matches_confusion_matrix_oracle() {
        let mut rng = crate::rng::stream_rng(0, "metrics-test", 0, 0);
        for _ in 0..50 {
            let n = 40;
            let types = [TrueType::Clean, TrueType::ClosedNoisy, TrueType::OpenNoisy];
            let truth: Vec<TrueType> = (0..n).map(|_| types[rng.gen_range(0..3)]).collect();
            let assigned: Vec<TrueType> = (0..n).map(|_| types[rng.gen_range(0..3)]).collect();
            let got = noise_type_metrics(&partition_from(&assigned), &truth);

            // Independent 3x3 confusion-matrix computation.
            let idx = |t: &TrueType| match t {
                TrueType::Clean => 0usize,
                TrueType::ClosedNoisy => 1,
                TrueType::OpenNoisy => 2,
            };
            let mut cm = [[0usize; 3]; 3];
            for (a, t) in assigned.iter().zip(&truth) {
                cm[idx(a)][idx(t)] += 1;
            }
            let acc = (cm[0][0] + cm[1][1] + cm[2][2]) as f64 / n as f64;
            let tp = cm[2][2] as f64;
            let pred_on = (cm[2][0] + cm[2][1] + cm[2][2]) as f64;
            let act_on = (cm[0][2] + cm[1][2] + cm[2][2]) as f64;
            let pre = if pred_on > 0.0 { tp / pred_on } else { 0.0 };
            let rec = if act_on > 0.0 { tp / act_on } else { 0.0 };
            let f1 = if pre + rec > 0.0 { 2.0 * pre * rec / (pre + rec) } else { 0.0 };
            assert!((got.0 - acc).abs() < 1e-12);
            assert!((got.1 - f1).abs() < 1e-12);
            assert!((got.2 - pre).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_edges() {
        assert_eq!(accuracy(&[1, 1, 1, 1, 1], &[0, 1, 2, 3, 4]), 0.2);
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]), 1.0);
    }
}
