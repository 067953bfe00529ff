use crate::error::{Error, Result};
use crate::tensor::Real;

/// Class probabilities `exp(f_j) / Σ_k exp(f_k)`, computed after
/// subtracting the max logit.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&f| (f - m).exp()).collect();
    let z: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Cross-entropy of the softmax against `label`, with its gradient
/// `P - onehot(label)` with respect to the logits.
pub fn softmax_xent<T: Real>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if logits.len() < 2 {
        return Err(Error::Argument(format!(
            "softmax needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if label >= logits.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let z: T = logits.iter().map(|&f| (f - m).exp()).sum();
    let log_z = z.ln() + m;
    let loss = log_z - logits[label];
    let mut grad: Vec<T> = logits.iter().map(|&f| (f - log_z).exp()).collect();
    grad[label] -= T::one();
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("softmax_xent"));
    }
    Ok((loss, grad))
}
