//! Accuracy and macro-averaged precision, recall and F1.

use serde::Serialize;

use crate::error::{Result, TecoError};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub macro_f1: f64,
    pub macro_prec: f64,
    pub macro_rec: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[label][prediction]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro scores average over all `num_classes` classes, including classes
/// that never occur; undefined ratios count as 0.
pub fn compute_metrics(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<MetricsReport> {
    if predictions.len() != labels.len() {
        return Err(TecoError::shape(
            "compute_metrics",
            &[predictions.len()],
            &[labels.len()],
        ));
    }
    if labels.is_empty() {
        return Err(TecoError::arg("compute_metrics", "no samples"));
    }
    if let Some(&bad) = predictions
        .iter()
        .chain(labels)
        .find(|&&c| c >= num_classes)
    {
        return Err(TecoError::arg(
            "compute_metrics",
            format!("class {bad} out of range for {num_classes} classes"),
        ));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        confusion[y][p] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..num_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let support: usize = confusion[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let n = num_classes as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        acc: ratio(correct, labels.len()),
        macro_f1: mean(|m| m.f1),
        macro_prec: mean(|m| m.precision),
        macro_rec: mean(|m| m.recall),
        per_class,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-4
    }

    #[test]
    fn perfect_predictions_score_one() {
        let y = [0, 1, 2, 1, 0];
        let m = compute_metrics(&y, &y, 3).unwrap();
        assert_eq!(
            (m.acc, m.macro_f1, m.macro_prec, m.macro_rec),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn hand_worked_three_class_case() {
        let m = compute_metrics(&[0, 1, 1, 2], &[0, 0, 1, 2], 3).unwrap();
        assert_eq!(m.acc, 0.75);
        let p: Vec<_> = m.per_class.iter().map(|c| c.precision).collect();
        let r: Vec<_> = m.per_class.iter().map(|c| c.recall).collect();
        assert_eq!(p, vec![1.0, 0.5, 1.0]);
        assert_eq!(r, vec![0.5, 1.0, 1.0]);
        assert!(close(m.macro_prec, 0.8333));
        assert!(close(m.macro_rec, 0.8333));
        assert!(close(m.macro_f1, 0.7778));
    }

    #[test]
    fn constant_predictor_on_balanced_binary() {
        let m = compute_metrics(&[0, 0, 0, 0], &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(m.acc, 0.5);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absent_classes_count_in_macro_average() {
        let m = compute_metrics(&[0, 0], &[0, 0], 4).unwrap();
        assert_eq!(m.macro_f1, 0.25);
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(compute_metrics(&[0], &[0, 1], 2).is_err());
        assert!(compute_metrics(&[], &[], 2).is_err());
        assert!(compute_metrics(&[2], &[0], 2).is_err());
    }

    /// Independent per-class counting without a confusion matrix.
    fn oracle(p: &[usize], y: &[usize], n: usize) -> (f64, f64, f64, f64) {
        let mut f1 = 0.0;
        let mut prec = 0.0;
        let mut rec = 0.0;
        for c in 0..n {
            let tp = p.iter().zip(y).filter(|&(&a, &b)| a == c && b == c).count() as f64;
            let fp = p.iter().zip(y).filter(|&(&a, &b)| a == c && b != c).count() as f64;
            let fne = p.iter().zip(y).filter(|&(&a, &b)| a != c && b == c).count() as f64;
            let pc = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rc = if tp + fne > 0.0 { tp / (tp + fne) } else { 0.0 };
            let fc = if tp > 0.0 {
                2.0 * tp / (2.0 * tp + fp + fne)
            } else {
                0.0
            };
            f1 += fc;
            prec += pc;
            rec += rc;
        }
        let acc = p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
        (acc, f1 / n as f64, prec / n as f64, rec / n as f64)
    }

    fn assignments(len: usize, n: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|v| {
                    (0..n).map(move |c| {
                        let mut w = v.clone();
                        w.push(c);
                        w
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn exhaustive_agreement_with_oracle() {
        let mut checked = 0usize;
        for n in 1..=3 {
            for len in 1..=6 {
                let all = assignments(len, n);
                for y in &all {
                    for p in &all {
                        let m = compute_metrics(p, y, n).unwrap();
                        let (acc, f1, prec, rec) = oracle(p, y, n);
                        assert!((m.acc - acc).abs() < 1e-12);
                        assert!((m.macro_f1 - f1).abs() < 1e-12, "{p:?} {y:?}");
                        assert!((m.macro_prec - prec).abs() < 1e-12);
                        assert!((m.macro_rec - rec).abs() < 1e-12);
                        assert_eq!(m.confusion.iter().flatten().sum::<usize>(), len);
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 500_000);
    }
}
