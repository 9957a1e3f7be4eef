use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

/// `k x k` counts; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[&[u64]]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(EvalError::NotSquare);
        }
        Ok(Self {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cm = Self::new(classes);
        for (t, p) in pairs {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for label in [truth, predicted] {
            if label >= self.classes {
                return Err(EvalError::LabelOutOfRange {
                    label,
                    classes: self.classes,
                });
            }
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    pub fn true_positives(&self, k: usize) -> u64 {
        self.get(k, k)
    }

    pub fn false_positives(&self, k: usize) -> u64 {
        (0..self.classes).filter(|&t| t != k).map(|t| self.get(t, k)).sum()
    }

    pub fn false_negatives(&self, k: usize) -> u64 {
        (0..self.classes).filter(|&p| p != k).map(|p| self.get(k, p)).sum()
    }

    pub fn true_negatives(&self, k: usize) -> u64 {
        self.total() - self.true_positives(k) - self.false_positives(k) - self.false_negatives(k)
    }
}

/// Accuracy, one-vs-rest F1 per class, and their unweighted mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub n: u64,
}

/// A class absent from both truth and predictions scores F1 = 0.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 || cm.classes() == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let per_class_f1: Vec<f64> = (0..cm.classes())
        .map(|k| {
            let tp = cm.true_positives(k);
            let denom = 2 * tp + cm.false_positives(k) + cm.false_negatives(k);
            if denom == 0 {
                0.0
            } else {
                (2 * tp) as f64 / denom as f64
            }
        })
        .collect();
    Ok(Metrics {
        accuracy: cm.trace() as f64 / total as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / per_class_f1.len() as f64,
        per_class_f1,
        n: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_perfect() {
        let cm = ConfusionMatrix::from_rows(&[&[3, 0], &[0, 4]]).unwrap();
        let m = compute_metrics(&cm).unwrap();
        assert_eq!((m.accuracy, m.macro_f1, m.n), (1.0, 1.0, 7));
    }

    #[test]
    fn binary_example() {
        // Positive class 1: TP=2, FP=1, FN=1, TN=6.
        let cm = ConfusionMatrix::from_rows(&[&[6, 1], &[1, 2]]).unwrap();
        assert_eq!(
            (cm.true_positives(1), cm.false_positives(1), cm.false_negatives(1), cm.true_negatives(1)),
            (2, 1, 1, 6)
        );
        let m = compute_metrics(&cm).unwrap();
        assert!((m.accuracy - 0.8).abs() < 1e-15);
        assert!((m.per_class_f1[1] - 4.0 / 6.0).abs() < 1e-15);
        assert!((m.per_class_f1[1] - 0.6667).abs() < 1e-4);
    }

    #[test]
    fn three_class_example() {
        let cm = ConfusionMatrix::from_rows(&[&[2, 0, 0], &[1, 1, 0], &[0, 0, 1]]).unwrap();
        let m = compute_metrics(&cm).unwrap();
        assert!((m.accuracy - 0.8).abs() < 1e-15);
        let expected = [0.8, 2.0 / 3.0, 1.0];
        for (a, b) in m.per_class_f1.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((m.macro_f1 - 0.8222).abs() < 1e-4);
    }

    #[test]
    fn absent_class_scores_zero() {
        let cm = ConfusionMatrix::from_rows(&[&[5, 0, 0], &[0, 5, 0], &[0, 0, 0]]).unwrap();
        let m = compute_metrics(&cm).unwrap();
        assert_eq!(m.per_class_f1, [1.0, 1.0, 0.0]);
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(compute_metrics(&ConfusionMatrix::new(2)), Err(EvalError::EmptyMatrix)));
        assert!(matches!(ConfusionMatrix::new(2).record(0, 2), Err(EvalError::LabelOutOfRange { .. })));
        assert!(ConfusionMatrix::from_rows(&[&[1, 2], &[3]]).is_err());
    }
}
