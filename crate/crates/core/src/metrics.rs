//! ROC AUC (binary and one-vs-rest), top-1 accuracy and confusion matrices.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Per-clip class probabilities with the true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    n_classes: usize,
    scores: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl PredictionSet {
    pub fn new(n_classes: usize, scores: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::invalid(
                "predictions",
                format!("{} score vectors for {} labels", scores.len(), labels.len()),
            ));
        }
        for (i, (s, &l)) in scores.iter().zip(&labels).enumerate() {
            if s.len() != n_classes {
                return Err(Error::invalid("predictions", format!("item {i} has {} scores, want {n_classes}", s.len())));
            }
            if l >= n_classes {
                return Err(Error::LabelOutOfRange { label: l, classes: n_classes });
            }
            let sum: f64 = s.iter().sum();
            if !((sum - 1.0).abs() <= 1e-6) || s.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("predictions", format!("item {i} scores sum to {sum}, want 1")));
            }
        }
        Ok(PredictionSet { n_classes, scores, labels })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Scores of class `k` for every item.
    pub fn class_scores(&self, k: usize) -> Vec<f64> {
        self.scores.iter().map(|s| s[k]).collect()
    }
}

/// Area under the ROC curve by the rank statistic: the fraction of
/// (positive, negative) pairs ordered correctly, ties counting one half.
pub fn binary_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("binary_auc", format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid("binary_auc", format!("label {l} is not 0 or 1")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("binary_auc", "scores contain NaN"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("binary_auc", "both classes must be present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (1-based, tie-averaged) ranks of the positives, doubled to stay integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let positives = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum2 += positives * (i as u128 + 1 + j as u128 + 1);
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Unweighted mean over classes of the one-vs-rest AUC.
pub fn ovr_auc(preds: &PredictionSet) -> Result<f64> {
    Ok(per_class_auc(preds)?.iter().sum::<f64>() / preds.n_classes as f64)
}

pub fn per_class_auc(preds: &PredictionSet) -> Result<Vec<f64>> {
    (0..preds.n_classes)
        .map(|k| {
            if !preds.labels.contains(&k) {
                return Err(Error::invalid("ovr_auc", format!("class {k} is absent from the labels")));
            }
            let labels: Vec<usize> = preds.labels.iter().map(|&l| (l == k) as usize).collect();
            binary_auc(&preds.class_scores(k), &labels)
        })
        .collect()
}

/// Index of the largest score; the lowest index wins exact ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Confusion {
    /// `counts[i][j]`: items of true class `i` predicted as `j`.
    pub counts: Vec<Vec<usize>>,
    /// Row-normalised `counts`; rows without support stay all zero.
    pub matrix: Vec<Vec<f64>>,
    pub support: Vec<usize>,
}

impl Confusion {
    /// Classes with no test items (their rows are not normalised).
    pub fn empty_rows(&self) -> Vec<usize> {
        self.support.iter().enumerate().filter(|(_, &s)| s == 0).map(|(i, _)| i).collect()
    }

    /// Whether every supported row has its diagonal entry strictly above
    /// every other entry of the row.
    pub fn diagonal_dominant(&self) -> bool {
        self.matrix.iter().enumerate().filter(|(i, _)| self.support[*i] > 0).all(|(i, row)| {
            row.iter().enumerate().all(|(j, &v)| j == i || row[i] > v)
        })
    }
}

pub fn top1_and_confusion(preds: &PredictionSet) -> Result<(f64, Confusion)> {
    if preds.is_empty() {
        return Err(Error::invalid("top1_and_confusion", "no predictions"));
    }
    let k = preds.n_classes;
    let mut counts = vec![vec![0usize; k]; k];
    for (s, &l) in preds.scores.iter().zip(&preds.labels) {
        counts[l][argmax(s)] += 1;
    }
    let support: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    let matrix: Vec<Vec<f64>> = counts
        .iter()
        .zip(&support)
        .map(|(row, &n)| {
            if n == 0 {
                vec![0.0; k]
            } else {
                row.iter().map(|&c| c as f64 / n as f64).collect()
            }
        })
        .collect();
    let top1 = (0..k).map(|i| support[i] as f64 * matrix[i][i]).sum::<f64>() / preds.len() as f64;
    Ok((top1, Confusion { counts, matrix, support }))
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one per distinct threshold.
pub fn roc_curve(scores: &[f64], labels: &[usize]) -> Result<Vec<(f64, f64)>> {
    binary_auc(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg, tp as f64 / n_pos));
    }
    Ok(points)
}

/// Trapezoidal area under a ROC polyline.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

/// Metrics of one test split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMetrics {
    pub auc: f64,
    pub top1: f64,
    pub confusion: Confusion,
    /// ROC of the positive class for binary tasks.
    pub roc: Option<Vec<(f64, f64)>>,
}

/// Scores one split. Binary tasks use the class-1 probability; multiclass
/// tasks average one-vs-rest AUC over classes.
pub fn evaluate(preds: &PredictionSet) -> Result<SplitMetrics> {
    let (top1, confusion) = top1_and_confusion(preds)?;
    let (auc, roc) = if preds.n_classes == 2 {
        let s = preds.class_scores(1);
        (binary_auc(&s, &preds.labels)?, Some(roc_curve(&s, &preds.labels)?))
    } else {
        (ovr_auc(preds)?, None)
    };
    Ok(SplitMetrics { auc, top1, confusion, roc })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub splits: Vec<SplitMetrics>,
    pub mean_auc: f64,
    pub mean_top1: f64,
    /// Element-wise mean of the per-split normalised confusion matrices.
    pub mean_confusion: Vec<Vec<f64>>,
}

impl EvalReport {
    pub fn from_splits(splits: Vec<SplitMetrics>) -> Result<Self> {
        let n = splits.len();
        if n == 0 {
            return Err(Error::invalid("eval report", "no splits"));
        }
        let k = splits[0].confusion.matrix.len();
        let mut mean_confusion = vec![vec![0.0; k]; k];
        for s in &splits {
            for (acc, row) in mean_confusion.iter_mut().zip(&s.confusion.matrix) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v / n as f64;
                }
            }
        }
        Ok(EvalReport {
            mean_auc: splits.iter().map(|s| s.auc).sum::<f64>() / n as f64,
            mean_top1: splits.iter().map(|s| s.top1).sum::<f64>() / n as f64,
            mean_confusion,
            splits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn brute_auc(scores: &[f64], labels: &[usize]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    num += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(binary_auc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(binary_auc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert_eq!(binary_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert!(binary_auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(binary_auc(&[0.1, 0.2], &[1, 2]).is_err());
    }

    #[test]
    fn ovr_examples() {
        let perfect = PredictionSet::new(
            3,
            vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1], vec![0.2, 0.2, 0.6], vec![0.7, 0.2, 0.1]],
            vec![0, 1, 2, 0],
        )
        .unwrap();
        assert_eq!(ovr_auc(&perfect).unwrap(), 1.0);
        let uniform = PredictionSet::new(5, vec![vec![0.2; 5]; 10], (0..10).map(|i| i % 5).collect()).unwrap();
        assert_eq!(per_class_auc(&uniform).unwrap(), vec![0.5; 5]);
        let missing = PredictionSet::new(3, vec![vec![0.5, 0.5, 0.0]; 2], vec![0, 1]).unwrap();
        let e = ovr_auc(&missing).unwrap_err().to_string();
        assert!(e.contains("class 2"), "{e}");
    }

    #[test]
    fn hand_listed_three_class_set() {
        let scores = vec![
            vec![0.6, 0.3, 0.1],
            vec![0.2, 0.5, 0.3],
            vec![0.3, 0.3, 0.4],
            vec![0.5, 0.4, 0.1],
            vec![0.1, 0.1, 0.8],
            vec![0.4, 0.4, 0.2],
        ];
        let labels = vec![0, 1, 2, 1, 2, 0];
        let p = PredictionSet::new(3, scores.clone(), labels.clone()).unwrap();
        let want: f64 = (0..3)
            .map(|k| {
                let s: Vec<f64> = scores.iter().map(|v| v[k]).collect();
                let l: Vec<usize> = labels.iter().map(|&x| (x == k) as usize).collect();
                brute_auc(&s, &l)
            })
            .sum::<f64>()
            / 3.0;
        assert!((ovr_auc(&p).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn reference_confusion_row_and_weighted_trace() {
        let row: [f64; 5] = [0.79, 0.05, 0.11, 0.05, 0.0];
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let diag = [0.79, 0.35, 0.55, 0.8, 0.6];
        let support = [30.0, 20.0, 19.0, 24.0, 9.0];
        let top1 = diag.iter().zip(&support).map(|(d, s)| d * s).sum::<f64>() / 102.0;
        assert!((top1 - 65.75 / 102.0).abs() < 1e-12);
        assert!((top1 - 0.65).abs() < 0.01, "{top1}");
    }

    #[test]
    fn perfect_predictions_give_identity() {
        let p = PredictionSet::new(2, vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.4, 0.6]], vec![0, 1, 1]).unwrap();
        let (top1, c) = top1_and_confusion(&p).unwrap();
        assert_eq!(top1, 1.0);
        assert_eq!(c.matrix, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(c.diagonal_dominant());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn empty_rows_are_flagged() {
        let p = PredictionSet::new(3, vec![vec![0.5, 0.5, 0.0]; 2], vec![0, 0]).unwrap();
        let (_, c) = top1_and_confusion(&p).unwrap();
        assert_eq!(c.empty_rows(), vec![1, 2]);
        assert_eq!(c.matrix[1], vec![0.0; 3]);
    }

    #[test]
    fn scores_must_sum_to_one() {
        assert!(PredictionSet::new(2, vec![vec![0.5, 0.6]], vec![0]).is_err());
        assert!(PredictionSet::new(2, vec![vec![0.5, 0.5]], vec![2]).is_err());
    }

    #[test]
    fn roc_area_matches_rank_statistic() {
        let mut rng = rng_from(3);
        for _ in 0..200 {
            let n = rng.gen_range(2..25);
            let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect();
            let roc = roc_curve(&scores, &labels).unwrap();
            assert_eq!(*roc.last().unwrap(), (1.0, 1.0));
            let auc = binary_auc(&scores, &labels).unwrap();
            assert!((trapezoid_area(&roc) - auc).abs() < 1e-12);
        }
    }

    fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
        (2usize..30).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..8, n).prop_map(|v| v.into_iter().map(|x| x as f64 / 7.0).collect()),
                proptest::collection::vec(0usize..2, n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
    }

    proptest! {
        #[test]
        fn auc_matches_pair_enumeration((s, l) in scored_labels()) {
            prop_assert!((binary_auc(&s, &l).unwrap() - brute_auc(&s, &l)).abs() < 1e-12);
        }

        #[test]
        fn auc_complement_sums_to_one((s, l) in scored_labels()) {
            let flipped: Vec<usize> = l.iter().map(|x| 1 - x).collect();
            let total = binary_auc(&s, &l).unwrap() + binary_auc(&s, &flipped).unwrap();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_maps((s, l) in scored_labels()) {
            let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            prop_assert_eq!(binary_auc(&s, &l).unwrap(), binary_auc(&t, &l).unwrap());
        }

        #[test]
        fn two_class_ovr_equals_binary((s, l) in scored_labels()) {
            let scores: Vec<Vec<f64>> = s.iter().map(|&x| vec![1.0 - x, x]).collect();
            let p = PredictionSet::new(2, scores, l.clone()).unwrap();
            prop_assert!((per_class_auc(&p).unwrap()[1] - binary_auc(&s, &l).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn top1_equals_correct_count(raw in proptest::collection::vec((proptest::collection::vec(0.01f64..1.0, 4), 0usize..4), 1..30)) {
            let scores: Vec<Vec<f64>> = raw.iter().map(|(v, _)| {
                let s: f64 = v.iter().sum();
                v.iter().map(|x| x / s).collect()
            }).collect();
            let labels: Vec<usize> = raw.iter().map(|(_, l)| *l).collect();
            let p = PredictionSet::new(4, scores.clone(), labels.clone()).unwrap();
            let (top1, c) = top1_and_confusion(&p).unwrap();
            let correct = scores.iter().zip(&labels).filter(|(s, &l)| argmax(s) == l).count();
            prop_assert!((top1 - correct as f64 / labels.len() as f64).abs() < 1e-12);
            for (row, &n) in c.matrix.iter().zip(&c.support) {
                if n > 0 {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
