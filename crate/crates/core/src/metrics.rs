//! Classification metrics: accuracy, per-class precision/recall/F1, macro-F1,
//! and the confusion matrix.

use crate::signals::EmotionClass;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    /// Unweighted mean of per-class F1 over all five classes; a class with
    /// zero support (or an undefined precision/recall) contributes 0.
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Score `(truth, prediction)` pairs over the five-class label set.
pub fn evaluate(pairs: &[(EmotionClass, EmotionClass)]) -> Metrics {
    let k = EmotionClass::COUNT;
    let mut confusion = vec![vec![0usize; k]; k];
    for &(truth, pred) in pairs {
        confusion[truth.index()][pred.index()] += 1;
    }
    let n = pairs.len();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let accuracy = if n == 0 { 0.0 } else { correct as f64 / n as f64 };
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..k).map(|t| confusion[t][c]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics { precision, recall, f1, support });
    }
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64;
    Metrics { n, accuracy, macro_f1, per_class, confusion }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(i: usize) -> EmotionClass {
        EmotionClass::from_index(i).unwrap()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let pairs: Vec<_> = (0..5).flat_map(|i| vec![(c(i), c(i)); 3]).collect();
        let m = evaluate(&pairs);
        assert_eq!(m.n, 15);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        for (i, cm) in m.per_class.iter().enumerate() {
            assert_eq!((cm.precision, cm.recall, cm.f1, cm.support), (1.0, 1.0, 1.0, 3));
            assert_eq!(m.confusion[i][i], 3);
        }
    }

    #[test]
    fn constant_predictor_on_a_balanced_set() {
        // Always predicting class 0 on a balanced set: accuracy 1/5,
        // class 0 F1 = 2*(1/5)/(1/5 + 1) = 1/3, macro-F1 = (1/3)/5.
        let pairs: Vec<_> = (0..5).flat_map(|i| vec![(c(i), c(0)); 4]).collect();
        let m = evaluate(&pairs);
        assert!((m.accuracy - 0.2).abs() < 1e-15);
        assert!((m.per_class[0].f1 - 1.0 / 3.0).abs() < 1e-15);
        for cm in &m.per_class[1..] {
            assert_eq!(cm.f1, 0.0);
            assert_eq!(cm.precision, 0.0);
        }
        assert!((m.macro_f1 - 1.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn hand_checked_confusion_matrix() {
        // truth 0: predicted 0,0,1; truth 1: predicted 1,0; class 2 absent.
        let pairs = vec![(c(0), c(0)), (c(0), c(0)), (c(0), c(1)), (c(1), c(1)), (c(1), c(0))];
        let m = evaluate(&pairs);
        assert_eq!(m.confusion[0][0], 2);
        assert_eq!(m.confusion[0][1], 1);
        assert_eq!(m.confusion[1][0], 1);
        assert_eq!(m.confusion[1][1], 1);
        assert_eq!(m.accuracy, 0.6);
        // class 0: p = 2/3, r = 2/3, f1 = 2/3. class 1: p = 1/2, r = 1/2.
        assert!((m.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.per_class[1].f1 - 0.5).abs() < 1e-15);
        // zero-support classes contribute zero to macro-F1
        assert_eq!(m.per_class[2].f1, 0.0);
        assert!((m.macro_f1 - (2.0 / 3.0 + 0.5) / 5.0).abs() < 1e-15);
    }

    #[test]
    fn empty_input_scores_zero() {
        let m = evaluate(&[]);
        assert_eq!(m.n, 0);
        assert_eq!(m.accuracy, 0.0);
        assert_eq!(m.macro_f1, 0.0);
    }
}
