use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy over every sample point of the batch, and its
/// gradient with respect to each probability.
pub fn bce_loss<T: Real, L: AsRef<[u8]>>(probs: &[Tensor<T>], labels: &[L]) -> Result<(T, Vec<Tensor<T>>)> {
    if probs.is_empty() {
        return Err(Error::input("empty batch"));
    }
    if probs.len() != labels.len() {
        return Err(Error::shape(format!("{} predictions but {} label rows", probs.len(), labels.len())));
    }
    let total: usize = probs.iter().map(|p| p.values().len()).sum();
    let inv_n = 1.0 / total as f64;
    let mut acc = 0.0f64;
    let mut grads = Vec::with_capacity(probs.len());
    for (p, y) in probs.iter().zip(labels) {
        let y = y.as_ref();
        if y.len() != p.values().len() {
            return Err(Error::shape(format!("{} probabilities but {} labels", p.values().len(), y.len())));
        }
        let mut g = Tensor::zeros(p.channels(), p.length());
        for ((gv, &pv), &yv) in g.values_mut().iter_mut().zip(p.values()).zip(y) {
            let q = pv.to_f64().unwrap_or(0.5).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let (loss, d) = if yv != 0 {
                (-q.ln(), -1.0 / q)
            } else {
                (-(1.0 - q).ln(), 1.0 / (1.0 - q))
            };
            acc += loss;
            *gv = T::lit(d * inv_n);
        }
        grads.push(g);
    }
    Ok((T::lit(acc * inv_n), grads))
}
