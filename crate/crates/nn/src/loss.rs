//! Softmax and cross-entropy.

use crate::tensor::Tensor;

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|v| ((v - max) as f64).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum) as f32).collect()
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> (f32, Tensor) {
    let (n, c) = logits.dims2();
    assert_eq!(n, labels.len(), "one label per row");
    let mut grad = Tensor::zeros(&[n, c]);
    let mut total = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        assert!(y < c, "label {y} out of range for {c} classes");
        let row = &logits.data()[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let lse = row.iter().map(|v| ((v - max) as f64).exp()).sum::<f64>().ln() + max as f64;
        total += lse - row[y] as f64;
        let g = &mut grad.data_mut()[i * c..(i + 1) * c];
        for (j, gv) in g.iter_mut().enumerate() {
            let p = ((row[j] as f64) - lse).exp();
            *gv = ((p - if j == y { 1.0 } else { 0.0 }) / n as f64) as f32;
        }
    }
    ((total / n as f64) as f32, grad)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
