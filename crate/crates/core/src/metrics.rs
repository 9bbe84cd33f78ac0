//! Classification metrics: overall accuracy and class-averaged accuracy.

use serde::{Deserialize, Serialize};

use crate::data::LabelVector;
use crate::error::{Error, Result};

/// Per-evaluation metrics.
///
/// `oa` is the pooled fraction of correct predictions. `aa` is the mean of
/// per-class accuracies over classes that actually occur in the truth;
/// absent classes are excluded from the mean (their `per_class_acc` entry
/// is reported as 0 with `per_class_support` 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub oa: f64,
    pub aa: f64,
    pub per_class_acc: Vec<f64>,
    pub per_class_support: Vec<usize>,
    pub n_eval: usize,
}

/// Compute OA, AA, and per-class accuracy from predictions and ground truth.
pub fn compute_metrics(predictions: &LabelVector, truth: &LabelVector) -> Result<MetricsRecord> {
    if predictions.len() != truth.len() {
        return Err(Error::contract(format!(
            "prediction length {} != truth length {}",
            predictions.len(),
            truth.len()
        )));
    }
    if predictions.classes() != truth.classes() {
        return Err(Error::contract(format!(
            "prediction classes {} != truth classes {}",
            predictions.classes(),
            truth.classes()
        )));
    }
    if truth.is_empty() {
        return Err(Error::contract("cannot compute metrics on an empty batch"));
    }
    let c = truth.classes();
    let mut correct = vec![0usize; c];
    let mut support = vec![0usize; c];
    for i in 0..truth.len() {
        let t = truth.get(i);
        support[t] += 1;
        if predictions.get(i) == t {
            correct[t] += 1;
        }
    }
    let n_eval = truth.len();
    let total_correct: usize = correct.iter().sum();
    let oa = total_correct as f64 / n_eval as f64;
    let per_class_acc: Vec<f64> = (0..c)
        .map(|k| {
            if support[k] == 0 {
                0.0
            } else {
                correct[k] as f64 / support[k] as f64
            }
        })
        .collect();
    let present = support.iter().filter(|&&s| s > 0).count();
    let aa = (0..c)
        .filter(|&k| support[k] > 0)
        .map(|k| per_class_acc[k])
        .sum::<f64>()
        / present as f64;
    Ok(MetricsRecord {
        oa,
        aa,
        per_class_acc,
        per_class_support: support,
        n_eval,
    })
}
