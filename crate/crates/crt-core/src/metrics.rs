//! Classification metrics: one-vs-rest ROC-AUC averaged over classes, macro
//! F1, and accuracy in both the overall and per-class-mean reading.

use serde::{Deserialize, Serialize};

use crate::error::{CrtError, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    /// One-vs-rest AUC per class; absent when the class has no positives or
    /// no negatives in the ground truth.
    pub roc_auc_per_class: Vec<Option<f64>>,
    /// Mean over the defined classes only.
    pub roc_auc_mean: f64,
    pub f1_per_class: Vec<f64>,
    pub f1_macro: f64,
    pub accuracy_overall: f64,
    /// Mean over classes of one-vs-rest accuracy (TP+TN)/total.
    pub accuracy_per_class_mean: f64,
    /// confusion[true][pred]; row sums equal class support.
    pub confusion_matrix: Vec<Vec<usize>>,
}

fn check_lengths(op: &'static str, n_scores: usize, n_labels: usize) -> Result<()> {
    if n_scores != n_labels || n_labels == 0 {
        return Err(CrtError::InvalidArgument {
            op,
            reason: format!("{n_scores} predictions vs {n_labels} labels"),
        });
    }
    Ok(())
}

/// AUC for one class from the midrank statistic: ties contribute 0.5,
/// matching trapezoidal integration of the ROC curve.
fn auc_binary(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // midrank of the tie block [i, j], 1-based
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Per-class one-vs-rest AUC over probability columns, plus the mean over
/// the classes that are defined in the ground truth.
pub fn roc_auc(scores: &[Vec<f64>], labels: &[usize]) -> Result<(Vec<Option<f64>>, f64)> {
    check_lengths("roc_auc", scores.len(), labels.len())?;
    let num_classes = scores[0].len();
    if num_classes < 2 || scores.iter().any(|row| row.len() != num_classes) {
        return Err(CrtError::InvalidArgument {
            op: "roc_auc",
            reason: "need a fixed number (>= 2) of class probability columns".into(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(CrtError::InvalidArgument {
            op: "roc_auc",
            reason: format!("label {bad} outside 0..{num_classes}"),
        });
    }
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let col: Vec<f64> = scores.iter().map(|row| row[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        per_class.push(auc_binary(&col, &pos));
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(CrtError::InvalidArgument {
            op: "roc_auc",
            reason: "ground truth contains a single class; no AUC is defined".into(),
        });
    }
    let mean = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok((per_class, mean))
}

/// Per-class F1 = 2PR/(P+R), 0 when the class is never predicted and never
/// present; macro is the unweighted mean.
pub fn macro_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<(Vec<f64>, f64)> {
    check_lengths("macro_f1", preds.len(), labels.len())?;
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let tp = preds.iter().zip(labels).filter(|(&p, &y)| p == c && y == c).count() as f64;
        let fp = preds.iter().zip(labels).filter(|(&p, &y)| p == c && y != c).count() as f64;
        let fn_ = preds.iter().zip(labels).filter(|(&p, &y)| p != c && y == c).count() as f64;
        let denom = 2.0 * tp + fp + fn_;
        per_class.push(if denom == 0.0 { 0.0 } else { 2.0 * tp / denom });
    }
    let macro_ = per_class.iter().sum::<f64>() / num_classes.max(1) as f64;
    Ok((per_class, macro_))
}

/// Overall fraction correct plus the mean over classes of one-vs-rest
/// accuracy; the two diverge as soon as errors concentrate in one class.
pub fn accuracy(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<(f64, f64)> {
    check_lengths("accuracy", preds.len(), labels.len())?;
    let n = preds.len() as f64;
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64;
    let mut ovr_sum = 0.0;
    for c in 0..num_classes {
        let agree = preds
            .iter()
            .zip(labels)
            .filter(|(&p, &y)| (p == c) == (y == c))
            .count() as f64;
        ovr_sum += agree / n;
    }
    Ok((correct / n, ovr_sum / num_classes.max(1) as f64))
}

pub fn confusion_matrix(
    preds: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<usize>>> {
    check_lengths("confusion_matrix", preds.len(), labels.len())?;
    let mut m = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if p >= num_classes || y >= num_classes {
            return Err(CrtError::InvalidArgument {
                op: "confusion_matrix",
                reason: format!("entry ({y}, {p}) outside 0..{num_classes}"),
            });
        }
        m[y][p] += 1;
    }
    Ok(m)
}

impl EvalReport {
    /// Builds the full report from probability rows; predictions are the
    /// argmax of each row.
    pub fn from_scores(scores: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        let (roc_auc_per_class, roc_auc_mean) = roc_auc(scores, labels)?;
        let num_classes = scores[0].len();
        let preds: Vec<usize> = scores
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect();
        let (f1_per_class, f1_macro) = macro_f1(&preds, labels, num_classes)?;
        let (accuracy_overall, accuracy_per_class_mean) = accuracy(&preds, labels, num_classes)?;
        let confusion_matrix = confusion_matrix(&preds, labels, num_classes)?;
        Ok(EvalReport {
            roc_auc_per_class,
            roc_auc_mean,
            f1_per_class,
            f1_macro,
            accuracy_overall,
            accuracy_per_class_mean,
            confusion_matrix,
        })
    }

    pub fn csv_header() -> &'static str {
        "roc_auc_mean,f1_macro,accuracy_overall,accuracy_per_class_mean"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6}",
            self.roc_auc_mean, self.f1_macro, self.accuracy_overall, self.accuracy_per_class_mean
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn binary_scores(pos_prob: &[f64]) -> Vec<Vec<f64>> {
        pos_prob.iter().map(|&p| vec![1.0 - p, p]).collect()
    }

    #[test]
    fn auc_hand_example() {
        let scores = binary_scores(&[0.1, 0.4, 0.35, 0.8]);
        let labels = [0, 0, 1, 1];
        let (per, mean) = roc_auc(&scores, &labels).unwrap();
        assert!((per[1].unwrap() - 0.75).abs() < 1e-12, "3 of 4 pairs ordered");
        assert!((mean - 0.75).abs() < 1e-12, "class 0 mirrors class 1 here");
    }

    #[test]
    fn auc_extremes_and_ties() {
        let perfect = binary_scores(&[0.1, 0.2, 0.8, 0.9]);
        let (_, mean) = roc_auc(&perfect, &[0, 0, 1, 1]).unwrap();
        assert_eq!(mean, 1.0);
        let flat = binary_scores(&[0.5; 6]);
        let (_, mean) = roc_auc(&flat, &[0, 1, 0, 1, 0, 1]).unwrap();
        assert_eq!(mean, 0.5, "all ties count half");
    }

    #[test]
    fn auc_absent_class_is_skipped() {
        let scores = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.3, 0.6, 0.1],
            vec![0.5, 0.4, 0.1],
        ];
        let (per, mean) = roc_auc(&scores, &[0, 1, 0]).unwrap();
        assert!(per[2].is_none(), "class 2 never occurs");
        assert!(per[0].is_some() && per[1].is_some());
        assert!((0.0..=1.0).contains(&mean));
        assert!(roc_auc(&scores, &[1, 1, 1]).is_err(), "single-class truth");
    }

    fn brute_force_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
        let pos: Vec<f64> = scores
            .iter()
            .zip(positive)
            .filter(|(_, &p)| p)
            .map(|(&s, _)| s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(positive)
            .filter(|(_, &p)| !p)
            .map(|(&s, _)| s)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut total = 0.0;
        for &p in &pos {
            for &n in &neg {
                total += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        Some(total / (pos.len() * neg.len()) as f64)
    }

    #[test]
    fn rank_statistic_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..300 {
            let n = rng.gen_range(2..=200);
            // quantized scores force plenty of ties
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.gen::<f64>() * 8.0).round() / 8.0).collect();
            let positive: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
            let fast = auc_binary(&scores, &positive);
            let slow = brute_force_auc(&scores, &positive);
            match (fast, slow) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    assert!((a - b).abs() < 1e-12, "trial {trial}: {a} vs {b}")
                }
                other => panic!("trial {trial}: {other:?}"),
            }
        }
    }

    #[test]
    fn f1_hand_examples() {
        let (_, perfect) = macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(perfect, 1.0);
        // all-one-class predictions on a balanced binary set
        let (per, macro_) = macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert!((per[0] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(per[1], 0.0, "empty predicted class, no NaN");
        assert!((macro_ - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_hand_examples() {
        let (o, m) = accuracy(&[0, 1], &[0, 1], 2).unwrap();
        assert_eq!((o, m), (1.0, 1.0));
        let (o, m) = accuracy(&[1, 0], &[0, 1], 2).unwrap();
        assert_eq!((o, m), (0.0, 0.0));
        let (o, m) = accuracy(&[0, 1, 1], &[0, 1, 2], 3).unwrap();
        assert!((o - 2.0 / 3.0).abs() < 1e-12);
        assert!((m - 7.0 / 9.0).abs() < 1e-12);
        assert!(accuracy(&[0, 1], &[0], 2).is_err());
    }

    #[test]
    fn report_fields_are_consistent() {
        let scores = vec![
            vec![0.8, 0.1, 0.1],
            vec![0.2, 0.7, 0.1],
            vec![0.1, 0.5, 0.4],
            vec![0.2, 0.2, 0.6],
        ];
        let labels = [0, 1, 2, 2];
        let report = EvalReport::from_scores(&scores, &labels).unwrap();
        for row in &report.confusion_matrix {
            assert_eq!(row.len(), 3);
        }
        for (c, row) in report.confusion_matrix.iter().enumerate() {
            let support = labels.iter().filter(|&&y| y == c).count();
            assert_eq!(row.iter().sum::<usize>(), support, "row sums = class support");
        }
        for v in [
            report.roc_auc_mean,
            report.f1_macro,
            report.accuracy_overall,
            report.accuracy_per_class_mean,
        ] {
            assert!((0.0..=1.0).contains(&v));
        }
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.csv_row(), report.csv_row());
        assert_eq!(EvalReport::csv_header().split(',').count(), report.csv_row().split(',').count());
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform(
            raw in proptest::collection::vec(0.0f64..1.0, 4..60),
            flips in proptest::collection::vec(proptest::bool::ANY, 4..60),
        ) {
            let n = raw.len().min(flips.len());
            let scores = &raw[..n];
            let positive = &flips[..n];
            let transformed: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() + 1.0).collect();
            let a = auc_binary(scores, positive);
            let b = auc_binary(&transformed, positive);
            match (a, b) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (None, None) => {}
                other => prop_assert!(false, "{other:?}"),
            }
        }

        #[test]
        fn f1_and_accuracy_are_permutation_invariant(
            seed in 0u64..1000,
            n in 5usize..40,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let mut order: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let preds_p: Vec<usize> = order.iter().map(|&i| preds[i]).collect();
            let labels_p: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
            let (_, f1) = macro_f1(&preds, &labels, 3).unwrap();
            let (_, f1p) = macro_f1(&preds_p, &labels_p, 3).unwrap();
            prop_assert!((f1 - f1p).abs() < 1e-12);
            let (o, m) = accuracy(&preds, &labels, 3).unwrap();
            let (op, mp) = accuracy(&preds_p, &labels_p, 3).unwrap();
            prop_assert!((o - op).abs() < 1e-12 && (m - mp).abs() < 1e-12);
        }
    }
}
