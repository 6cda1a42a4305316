use super::anchors::{AnchorSet, MemoryBank, PointClass};
use crate::error::{Error, Result};
use crate::nn::Real;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Supervised contrastive loss over an anchor set.
///
/// For each anchor `a` with positives `P` and negatives `N` (other entries of
/// the set plus bank entries, split by class) the loss is the mean over
/// `p` in `P` of `-log(exp(s_ap) / (exp(s_ap) + sum_n exp(s_an)))` with
/// `s = <a, b> / tau`. The batch value is the mean over anchors that have at
/// least one positive. Returns the loss and its gradient with respect to
/// every entry's embedding; bank entries are treated as constants.
pub fn contrastive_loss<T: Real>(set: &AnchorSet<T>, bank: Option<&MemoryBank<T>>, tau: f64) -> Result<(T, Vec<Vec<T>>)> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    let to64 = |v: &[T]| v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect::<Vec<f64>>();
    let xs: Vec<Vec<f64>> = set.entries.iter().map(|e| to64(&e.embedding)).collect();
    let classes: Vec<PointClass> = set.entries.iter().map(|e| e.class).collect();
    let banked: Vec<(PointClass, Vec<f64>)> = bank
        .map(|b| b.iter().map(|(c, e)| (c, to64(&e.embedding))).collect())
        .unwrap_or_default();
    let dim = xs.first().map_or(0, Vec::len);
    if xs.iter().chain(banked.iter().map(|(_, v)| v)).any(|v| v.len() != dim) {
        return Err(Error::shape("embeddings of different widths in one contrastive batch"));
    }

    let n = xs.len();
    let mut grads = vec![vec![0.0f64; dim]; n];
    let mut total = 0.0f64;
    let mut contributing = 0usize;
    // Scratch: (similarity, index into xs or n + bank index) per candidate.
    let mut pos: Vec<(f64, usize)> = Vec::new();
    let mut neg: Vec<(f64, usize)> = Vec::new();
    let candidate = |j: usize| -> &[f64] {
        if j < n {
            &xs[j]
        } else {
            &banked[j - n].1
        }
    };
    let mut anchor_terms: Vec<(usize, Vec<(f64, usize)>, Vec<(f64, usize)>, f64)> = Vec::new();
    for (i, e) in set.entries.iter().enumerate() {
        if !e.is_anchor {
            continue;
        }
        pos.clear();
        neg.clear();
        let cls = classes[i];
        for j in (0..n).filter(|&j| j != i) {
            let s = dot(&xs[i], &xs[j]) / tau;
            if classes[j] == cls {
                pos.push((s, j));
            } else {
                neg.push((s, j));
            }
        }
        for (k, (c, v)) in banked.iter().enumerate() {
            let s = dot(&xs[i], v) / tau;
            if *c == cls {
                pos.push((s, n + k));
            } else {
                neg.push((s, n + k));
            }
        }
        if pos.is_empty() {
            continue;
        }
        contributing += 1;
        let lse = if neg.is_empty() {
            f64::NEG_INFINITY
        } else {
            let m = neg.iter().map(|&(s, _)| s).fold(f64::NEG_INFINITY, f64::max);
            m + neg.iter().map(|&(s, _)| (s - m).exp()).sum::<f64>().ln()
        };
        let mut loss = 0.0;
        for &(s, _) in &pos {
            loss += if neg.is_empty() { 0.0 } else { softplus(lse - s) };
        }
        total += loss / pos.len() as f64;
        anchor_terms.push((i, pos.clone(), neg.clone(), lse));
    }
    if contributing == 0 {
        return Ok((T::zero(), vec![vec![T::zero(); dim]; n]));
    }
    let scale = 1.0 / contributing as f64;
    for (i, pos, neg, lse) in &anchor_terms {
        if neg.is_empty() {
            continue;
        }
        let per_pos = scale / pos.len() as f64;
        let mut w_sum = 0.0;
        // d loss / d s for each candidate, then chain through s = <x_i, x_j> / tau.
        let mut ds: Vec<(f64, usize)> = Vec::with_capacity(pos.len() + neg.len());
        for &(s, j) in pos {
            let w = logistic(lse - s) * per_pos;
            w_sum += w;
            ds.push((-w, j));
        }
        for &(s, j) in neg {
            ds.push((w_sum * (s - lse).exp(), j));
        }
        for (d, j) in ds {
            let c = d / tau;
            let xj = candidate(j);
            for (g, v) in grads[*i].iter_mut().zip(xj) {
                *g += c * v;
            }
            if j < n {
                let xi = &xs[*i];
                for (g, v) in grads[j].iter_mut().zip(xi) {
                    *g += c * v;
                }
            }
        }
    }
    let grads = grads
        .into_iter()
        .map(|g| g.into_iter().map(T::lit).collect())
        .collect();
    Ok((T::lit(total * scale), grads))
}
