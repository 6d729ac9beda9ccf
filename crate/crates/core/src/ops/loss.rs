//! Softmax cross-entropy on `[batch, classes]` logits.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};

/// Mean negative log-likelihood of the true classes and the row-wise
/// softmax probabilities.
pub fn softmax_cross_entropy(
    logits: &[f64],
    batch: usize,
    classes: usize,
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if labels.len() != batch {
        return shape_err("softmax_cross_entropy", "labels", batch, labels.len());
    }
    if logits.len() != batch * classes {
        return shape_err("softmax_cross_entropy", "logits", batch * classes, logits.len());
    }
    let mut probs = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (p, &z) in probs[b * classes..(b + 1) * classes].iter_mut().zip(row) {
            *p = libm::exp(z - max);
            sum += *p;
        }
        for p in &mut probs[b * classes..(b + 1) * classes] {
            *p /= sum;
        }
        total += libm::log(sum) - (row[label] - max);
    }
    let loss = total / batch as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            op: "softmax_cross_entropy",
        });
    }
    Ok((loss, probs))
}
