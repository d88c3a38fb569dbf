use serde::{Deserialize, Serialize};

use super::PredictionEntry;
use crate::error::{Error, Result};

/// Mann-Whitney AUC: P(score_pos > score_neg) + ½ P(tie), via midranks.
pub fn roc_auc_scores(scores: &[f64], labels: &[u8]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::undefined("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied block shares the midrank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_block = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += midrank * pos_in_block as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn roc_auc(entries: &[PredictionEntry]) -> Result<f64> {
    let scores: Vec<f64> = entries.iter().map(|e| e.score).collect();
    let labels: Vec<u8> = entries.iter().map(|e| e.y_true).collect();
    roc_auc_scores(&scores, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub t2d: ClassScores,
    pub nod: ClassScores,
    pub macro_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_scores(entries: &[PredictionEntry], class: u8) -> ClassScores {
    let tp = entries.iter().filter(|e| e.y_pred == class && e.y_true == class).count();
    let predicted = entries.iter().filter(|e| e.y_pred == class).count();
    let support = entries.iter().filter(|e| e.y_true == class).count();
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, support);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassScores {
        precision,
        recall,
        f1,
        support,
    }
}

/// Per-class precision/recall/F1 and their unweighted macro F1. Zero
/// denominators give 0.
pub fn classification_metrics(entries: &[PredictionEntry]) -> ClassificationReport {
    let t2d = class_scores(entries, 1);
    let nod = class_scores(entries, 0);
    ClassificationReport {
        t2d,
        nod,
        macro_f1: (t2d.f1 + nod.f1) / 2.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(rows: &[(u8, f64)]) -> Vec<PredictionEntry> {
        rows.iter()
            .enumerate()
            .map(|(i, (y, s))| PredictionEntry::new(format!("p{i}"), *y, *s, 0.5))
            .collect()
    }

    #[test]
    fn auc_examples() {
        let perfect = entries(&[(1, 0.9), (1, 0.8), (0, 0.7), (0, 0.1)]);
        assert_eq!(roc_auc(&perfect).unwrap(), 1.0);
        let three_of_four = entries(&[(1, 0.8), (1, 0.4), (0, 0.6), (0, 0.2)]);
        assert_eq!(roc_auc(&three_of_four).unwrap(), 0.75);
        let ties = entries(&[(1, 0.5), (0, 0.5), (1, 0.5), (0, 0.5)]);
        assert_eq!(roc_auc(&ties).unwrap(), 0.5);
        assert!(matches!(roc_auc(&entries(&[(1, 0.3)])), Err(Error::Undefined(_))));
    }

    #[test]
    fn auc_monotone_invariance() {
        let e = entries(&[(1, 0.8), (0, 0.35), (1, 0.4), (0, 0.6), (1, 0.6), (0, 0.05)]);
        let t: Vec<_> = e
            .iter()
            .map(|x| PredictionEntry {
                score: x.score.powi(3),
                ..x.clone()
            })
            .collect();
        assert_eq!(roc_auc(&e).unwrap(), roc_auc(&t).unwrap());
    }

    #[test]
    fn all_negative_predictor() {
        let mut e = entries(&[(1, 0.1), (1, 0.2), (0, 0.3), (0, 0.4)]);
        e.iter_mut().for_each(|x| x.y_pred = 0);
        let r = classification_metrics(&e);
        assert_eq!((r.t2d.precision, r.t2d.recall), (0.0, 0.0));
        assert_eq!(r.nod.recall, 1.0);
    }

    #[test]
    fn perfect_predictor() {
        let e = entries(&[(1, 0.9), (0, 0.1)]);
        let r = classification_metrics(&e);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.t2d.precision, 1.0);
        assert_eq!(r.nod.recall, 1.0);
    }

    #[test]
    fn formula_arithmetic() {
        // TP=3, FP=1, FN=2
        let e = entries(&[
            (1, 0.9),
            (1, 0.9),
            (1, 0.9),
            (0, 0.9),
            (1, 0.1),
            (1, 0.1),
        ]);
        let r = classification_metrics(&e);
        assert_eq!(r.t2d.precision, 0.75);
        assert_eq!(r.t2d.recall, 0.6);
        assert!((r.t2d.f1 - 2.0 / 3.0).abs() < 1e-15);
    }
}
