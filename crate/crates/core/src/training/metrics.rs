use crate::error::{DeqError, Result};
use crate::numcore::Tensor2;

/// Accuracy and F1 scores as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predictions(logits: &Tensor2) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Macro-F1 averages per-class F1 over the classes that occur in either the
/// labels or the predictions; weighted-F1 weights each class by its support.
pub fn metrics_from_predictions(pred: &[usize], labels: &[usize]) -> Result<Metrics> {
    if labels.is_empty() {
        return Err(DeqError::Domain("metrics of an empty label set".into()));
    }
    if pred.len() != labels.len() {
        return Err(DeqError::shape("metrics", (pred.len(), 1), (labels.len(), 1)));
    }
    let classes = pred.iter().chain(labels).max().unwrap() + 1;
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&p, &y) in pred.iter().zip(labels) {
        if p == y {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let n = labels.len() as f64;
    let (mut macro_sum, mut present, mut weighted) = (0.0, 0usize, 0.0);
    for c in 0..classes {
        let support = tp[c] + fn_[c];
        if support + fp[c] == 0 {
            continue;
        }
        let f1 = 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fn_[c]) as f64;
        macro_sum += f1;
        present += 1;
        weighted += f1 * support as f64 / n;
    }
    Ok(Metrics {
        accuracy: tp.iter().sum::<usize>() as f64 / n,
        macro_f1: macro_sum / present as f64,
        weighted_f1: weighted,
    })
}

pub fn metrics(logits: &Tensor2, labels: &[usize]) -> Result<Metrics> {
    if logits.rows() != labels.len() {
        return Err(DeqError::shape("metrics", logits.shape(), (labels.len(), logits.cols())));
    }
    metrics_from_predictions(&predictions(logits), labels)
}
