use serde::{Deserialize, Serialize};

use super::EvalError;

/// Classification metrics over a fixed class set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    /// Mean F1 over classes with at least one true instance.
    pub macro_f1: f64,
    pub support: Vec<u64>,
    /// `confusion_counts[true][predicted]`.
    pub confusion_counts: Vec<Vec<u64>>,
    /// Row-normalized confusion; rows without support stay zero.
    pub confusion: Vec<Vec<f64>>,
    /// `None` when the class was never predicted.
    pub precision: Vec<Option<f64>>,
    /// `None` when the class has no support.
    pub recall: Vec<Option<f64>>,
    pub f1: Vec<Option<f64>>,
}

pub fn compute_metrics(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Metrics, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch { predictions: predictions.len(), labels: labels.len() });
    }
    if labels.is_empty() {
        return Err(EvalError::NoPredictions);
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c >= n_classes) {
        return Err(EvalError::LabelOutOfRange { label: bad, classes: n_classes });
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        counts[y][p] += 1;
    }
    let support: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let predicted: Vec<u64> = (0..n_classes).map(|c| counts.iter().map(|r| r[c]).sum()).collect();
    let correct: u64 = (0..n_classes).map(|c| counts[c][c]).sum();

    let precision: Vec<Option<f64>> =
        (0..n_classes).map(|c| (predicted[c] > 0).then(|| counts[c][c] as f64 / predicted[c] as f64)).collect();
    let recall: Vec<Option<f64>> =
        (0..n_classes).map(|c| (support[c] > 0).then(|| counts[c][c] as f64 / support[c] as f64)).collect();
    let f1: Vec<Option<f64>> = (0..n_classes)
        .map(|c| {
            let r = recall[c]?;
            let p = precision[c].unwrap_or(0.0);
            Some(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
        })
        .collect();
    let scored: Vec<f64> = f1.iter().flatten().copied().collect();
    let confusion = counts
        .iter()
        .zip(&support)
        .map(|(row, &s)| row.iter().map(|&v| if s > 0 { v as f64 / s as f64 } else { 0.0 }).collect())
        .collect();
    Ok(Metrics {
        n: labels.len(),
        accuracy: correct as f64 / labels.len() as f64,
        macro_f1: scored.iter().sum::<f64>() / scored.len() as f64,
        support,
        confusion_counts: counts,
        confusion,
        precision,
        recall,
        f1,
    })
}
