use super::FeatureMap;
use crate::error::{Error, Result};

/// Row-wise softmax.
pub fn softmax(logits: &FeatureMap) -> FeatureMap {
    let mut p = logits.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    p
}

/// Mean cross-entropy over rows and its gradient wrt the logits.
pub fn softmax_cross_entropy(logits: &FeatureMap, labels: &[usize]) -> Result<(f64, FeatureMap)> {
    if labels.len() != logits.rows() || logits.rows() == 0 {
        return Err(Error::invalid(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::invalid(format!(
            "label {bad} outside {} classes",
            logits.cols()
        )));
    }
    let n = logits.rows() as f64;
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        let g = grad.row_mut(i);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v /= n);
    }
    Ok((loss / n, grad))
}
