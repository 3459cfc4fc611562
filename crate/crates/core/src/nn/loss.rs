use super::tensor::FeatureMap;
use crate::error::{data_err, shape_err, Result};

/// Row-wise softmax of `batch x classes` logits, max-subtracted.
pub fn softmax(logits: &FeatureMap) -> Vec<Vec<f64>> {
    (0..logits.batch())
        .map(|b| softmax_row(logits.sample(b)))
        .collect()
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean categorical cross-entropy over the batch and its gradient with
/// respect to the logits, `(softmax - onehot) / batch`.
pub fn softmax_crossentropy(logits: &FeatureMap, labels: &[usize]) -> Result<(f64, FeatureMap)> {
    let batch = logits.batch();
    let classes = logits.sample_width();
    if labels.len() != batch {
        return Err(shape_err!(
            "{} labels for a batch of {batch}",
            labels.len()
        ));
    }
    let mut grad = vec![0.0; batch * classes];
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(data_err!("label {label} out of range for {classes} classes"));
        }
        let row = logits.sample(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        loss += log_sum - (row[label] - max);
        let g = &mut grad[b * classes..(b + 1) * classes];
        for (gv, &z) in g.iter_mut().zip(row) {
            *gv = (z - max - log_sum).exp() / batch as f64;
        }
        g[label] -= 1.0 / batch as f64;
    }
    let grad = FeatureMap::new(batch, logits.length(), logits.channels(), grad)?;
    Ok((loss / batch as f64, grad))
}
