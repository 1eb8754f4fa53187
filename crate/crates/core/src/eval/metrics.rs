use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::signal::Label;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: Label,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Occurrences in the ground truth.
    pub support: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    /// Unweighted mean over classes.
    pub macro_avg: Averaged,
    /// Mean over classes weighted by true support.
    pub weighted_avg: Averaged,
    pub per_class: Vec<ClassScores>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy plus per-class, macro and support-weighted precision, recall
/// and F1. Classes are the union of predicted and true labels; any `0/0` is
/// taken as 0.
pub fn classification_metrics(pred: &[Label], truth: &[Label]) -> Result<ProbeReport, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::Dimension(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(EvalError::Domain("no ground-truth labels".into()));
    }
    let classes: BTreeSet<Label> = pred.iter().chain(truth).copied().collect();
    let per_class: Vec<ClassScores> = classes
        .iter()
        .map(|&c| {
            let tp = pred.iter().zip(truth).filter(|(p, t)| **p == c && **t == c).count();
            let predicted = pred.iter().filter(|p| **p == c).count();
            let support = truth.iter().filter(|t| **t == c).count();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores {
                label: c,
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let k = per_class.len() as f64;
    let n = truth.len() as f64;
    let mut macro_avg = Averaged::default();
    let mut weighted_avg = Averaged::default();
    for s in &per_class {
        macro_avg.precision += s.precision / k;
        macro_avg.recall += s.recall / k;
        macro_avg.f1 += s.f1 / k;
        let w = s.support as f64 / n;
        weighted_avg.precision += w * s.precision;
        weighted_avg.recall += w * s.recall;
        weighted_avg.f1 += w * s.f1;
    }
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(ProbeReport {
        accuracy: correct as f64 / n,
        macro_avg,
        weighted_avg,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 1];
        let r = classification_metrics(&y, &y).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_avg, Averaged { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(r.weighted_avg, r.macro_avg);
    }

    #[test]
    fn constant_predictor() {
        let r = classification_metrics(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.macro_avg.recall, 0.5);
        assert_eq!(r.macro_avg.precision, 0.25);
        assert_eq!(r.per_class[1].precision, 0.0);
    }

    #[test]
    fn predicted_only_class_counts_in_macro() {
        let r = classification_metrics(&[0, 2], &[0, 1]).unwrap();
        assert_eq!(r.per_class.len(), 3);
        assert_eq!(r.per_class[2].support, 0);
        assert!((r.macro_avg.f1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.weighted_avg.f1, 0.5);
    }

    #[test]
    fn length_mismatch() {
        assert!(classification_metrics(&[0], &[0, 1]).is_err());
    }
}
