use serde::{Deserialize, Serialize};

use crate::phantom::BoneLabel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// Indexed by class code.
    pub per_class: [ClassMetrics; 3],
    pub macro_avg: ClassMetrics,
    /// `confusion[truth][predicted]`.
    pub confusion: [[u64; 3]; 3],
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassificationMetrics {
    pub fn from_confusion(confusion: [[u64; 3]; 3]) -> Self {
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..3).map(|c| confusion[c][c]).sum();
        let per_class = std::array::from_fn(|c| {
            let tp = confusion[c][c];
            let fp: u64 = (0..3).filter(|&t| t != c).map(|t| confusion[t][c]).sum();
            let fn_: u64 = (0..3).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                iou: ratio(tp, tp + fp + fn_),
            }
        });
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / 3.0;
        let macro_avg = ClassMetrics {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
            iou: mean(|m| m.iou),
        };
        Self {
            accuracy: ratio(correct, total),
            per_class,
            macro_avg,
            confusion,
        }
    }
}

/// Accuracy and per-class precision/recall/F1/IoU; empty denominators give 0.
pub fn evaluate_metrics(predicted: &[BoneLabel], truth: &[BoneLabel]) -> ClassificationMetrics {
    assert_eq!(predicted.len(), truth.len(), "prediction/label length mismatch");
    let mut confusion = [[0u64; 3]; 3];
    for (p, t) in predicted.iter().zip(truth) {
        confusion[t.index()][p.index()] += 1;
    }
    ClassificationMetrics::from_confusion(confusion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use BoneLabel::*;

    #[test]
    fn perfect_predictions() {
        let labels = [Femur, Patella, Tibia, Tibia];
        let m = evaluate_metrics(&labels, &labels);
        assert_eq!(m.accuracy, 1.0);
        for c in m.per_class {
            assert_eq!((c.precision, c.recall, c.f1, c.iou), (1.0, 1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn all_wrong_two_class_toy() {
        let m = evaluate_metrics(&[Patella, Femur, Patella], &[Femur, Patella, Femur]);
        assert_eq!(m.accuracy, 0.0);
        for c in [0, 1] {
            let x = m.per_class[c];
            assert_eq!((x.precision, x.recall, x.iou, x.f1), (0.0, 0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn random_case_matches_counting_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| BoneLabel::from_code(rng.random_range(0..3)).unwrap();
        let pred: Vec<_> = (0..200).map(|_| draw(&mut rng)).collect();
        let truth: Vec<_> = (0..200).map(|_| draw(&mut rng)).collect();
        let m = evaluate_metrics(&pred, &truth);
        for class in BoneLabel::ALL {
            let tp = pred.iter().zip(&truth).filter(|(p, t)| **p == class && **t == class).count() as f64;
            let fp = pred.iter().zip(&truth).filter(|(p, t)| **p == class && **t != class).count() as f64;
            let fn_ = pred.iter().zip(&truth).filter(|(p, t)| **p != class && **t == class).count() as f64;
            let c = m.per_class[class.index()];
            assert_eq!(c.precision, tp / (tp + fp));
            assert_eq!(c.recall, tp / (tp + fn_));
            assert_eq!(c.iou, tp / (tp + fp + fn_));
            let f1 = 2.0 * c.precision * c.recall / (c.precision + c.recall);
            assert_eq!(c.f1, f1);
        }
        let acc = pred.iter().zip(&truth).filter(|(p, t)| p == t).count() as f64 / 200.0;
        assert_eq!(m.accuracy, acc);
    }
}
