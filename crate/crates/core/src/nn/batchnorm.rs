use super::{sum, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates only.
    Eval,
}

/// Per-channel batch-normalization state. `gamma` doubles as the channel
/// importance score used by pruning.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T: Real = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormGrads<T: Real = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> BatchNormGrads<T> {
    pub fn zeros(channels: usize) -> Self {
        Self {
            gamma: vec![T::zero(); channels],
            beta: vec![T::zero(); channels],
        }
    }
}

/// Values kept from the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T: Real = f32> {
    pub mode: Mode,
    /// Normalized input, one buffer per batch element.
    pub x_hat: Vec<Vec<T>>,
    /// `1 / sqrt(var + eps)` per channel, using whichever variance normalized.
    pub inv_std: Vec<T>,
}

impl<T: Real> BatchNormParams<T> {
    /// gamma = 1, beta = 0, running mean 0, running variance 1.
    pub fn new(channels: usize, eps: T, momentum: T) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::shape("batch-norm buffers disagree on channel count"));
        }
        if !(self.eps > T::zero()) {
            return Err(Error::config("batch-norm eps must be positive"));
        }
        if !(self.momentum > T::zero() && self.momentum < T::one()) {
            return Err(Error::config("batch-norm momentum must lie in (0, 1)"));
        }
        if self.running_var.iter().any(|&v| v < T::zero()) {
            return Err(Error::config("batch-norm running variance must be non-negative"));
        }
        Ok(())
    }
}

/// Applies eval-mode normalization to one channel in place.
#[inline]
pub fn batchnorm_eval_channel<T: Real>(x: &mut [T], p: &BatchNormParams<T>, c: usize) {
    let inv = T::one() / (p.running_var[c] + p.eps).sqrt();
    let (mu, g, b) = (p.running_mean[c], p.gamma[c], p.beta[c]);
    for v in x {
        *v = (*v - mu) * inv * g + b;
    }
}

/// Normalizes a batch in place and returns what the backward pass needs.
/// Train mode pools statistics over batch and length per channel and
/// updates the running estimates (unbiased variance) with `momentum`.
pub fn batchnorm_forward_inplace<T: Real>(
    xs: &mut [Tensor<T>],
    p: &mut BatchNormParams<T>,
    mode: Mode,
) -> Result<BatchNormCache<T>> {
    let channels = p.channels();
    if let Some(bad) = xs.iter().find(|x| x.channels() != channels) {
        return Err(Error::shape(format!(
            "batch-norm over {channels} channels got input with {}",
            bad.channels()
        )));
    }
    let mut inv_std = vec![T::zero(); channels];
    match mode {
        Mode::Train => {
            if xs.is_empty() {
                return Err(Error::input("train-mode batch norm needs a non-empty batch"));
            }
            let count: usize = xs.iter().map(|x| x.length()).sum();
            let m = T::from_usize_lossy(count);
            for c in 0..channels {
                let mean = xs.iter().map(|x| sum(x.channel(c))).sum::<T>() / m;
                let var = xs
                    .iter()
                    .map(|x| {
                        x.channel(c)
                            .iter()
                            .map(|&v| (v - mean) * (v - mean))
                            .sum::<T>()
                    })
                    .sum::<T>()
                    / m;
                let inv = T::one() / (var + p.eps).sqrt();
                inv_std[c] = inv;
                let unbiased = if count > 1 {
                    var * m / (m - T::one())
                } else {
                    var
                };
                let mom = p.momentum;
                p.running_mean[c] = (T::one() - mom) * p.running_mean[c] + mom * mean;
                p.running_var[c] = (T::one() - mom) * p.running_var[c] + mom * unbiased;
                for x in xs.iter_mut() {
                    for v in x.channel_mut(c) {
                        *v = (*v - mean) * inv;
                    }
                }
            }
        }
        Mode::Eval => {
            for c in 0..channels {
                inv_std[c] = T::one() / (p.running_var[c] + p.eps).sqrt();
                let mu = p.running_mean[c];
                for x in xs.iter_mut() {
                    for v in x.channel_mut(c) {
                        *v = (*v - mu) * inv_std[c];
                    }
                }
            }
        }
    }
    let x_hat: Vec<Vec<T>> = xs.iter().map(|x| x.values().to_vec()).collect();
    for x in xs.iter_mut() {
        for c in 0..channels {
            let (g, b) = (p.gamma[c], p.beta[c]);
            for v in x.channel_mut(c) {
                *v = *v * g + b;
            }
        }
    }
    Ok(BatchNormCache { mode, x_hat, inv_std })
}

/// Out-of-place variant of [`batchnorm_forward_inplace`].
pub fn batchnorm_forward<T: Real>(
    xs: &[Tensor<T>],
    p: &mut BatchNormParams<T>,
    mode: Mode,
) -> Result<(Vec<Tensor<T>>, BatchNormCache<T>)> {
    let mut ys = xs.to_vec();
    let cache = batchnorm_forward_inplace(&mut ys, p, mode)?;
    Ok((ys, cache))
}

/// Backward pass; `dys` is overwritten with the input gradient.
pub(crate) fn batchnorm_backward_inplace<T: Real>(
    cache: &BatchNormCache<T>,
    p: &BatchNormParams<T>,
    dys: &mut [Tensor<T>],
) -> Result<BatchNormGrads<T>> {
    let channels = p.channels();
    if dys.len() != cache.x_hat.len() {
        return Err(Error::shape("batch-norm gradient batch size mismatch"));
    }
    let mut grads = BatchNormGrads::zeros(channels);
    let count: usize = dys.iter().map(|d| d.length()).sum();
    let m = T::from_usize_lossy(count.max(1));
    for c in 0..channels {
        let mut dbeta = T::zero();
        let mut dgamma = T::zero();
        for (dy, xh) in dys.iter().zip(&cache.x_hat) {
            let l = dy.length();
            let d = dy.channel(c);
            let h = &xh[c * l..(c + 1) * l];
            dbeta += sum(d);
            dgamma += super::dot(d, h);
        }
        grads.beta[c] = dbeta;
        grads.gamma[c] = dgamma;
        let scale = p.gamma[c] * cache.inv_std[c];
        match cache.mode {
            Mode::Train => {
                for (dy, xh) in dys.iter_mut().zip(&cache.x_hat) {
                    let l = dy.length();
                    let h = &xh[c * l..(c + 1) * l];
                    for (g, &hv) in dy.channel_mut(c).iter_mut().zip(h) {
                        *g = scale * (*g - (dbeta + hv * dgamma) / m);
                    }
                }
            }
            Mode::Eval => {
                for dy in dys.iter_mut() {
                    for g in dy.channel_mut(c) {
                        *g *= scale;
                    }
                }
            }
        }
    }
    Ok(grads)
}

pub fn batchnorm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    p: &BatchNormParams<T>,
    dys: &[Tensor<T>],
) -> Result<(Vec<Tensor<T>>, BatchNormGrads<T>)> {
    let mut dx = dys.to_vec();
    let grads = batchnorm_backward_inplace(cache, p, &mut dx)?;
    Ok((dx, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gaussian_input_is_fixed_point() {
        let x = Tensor::from_vec(1, 4, vec![-1.0f64, 1.0, -1.0, 1.0]).unwrap();
        let mut p = BatchNormParams::new(1, 1e-5, 0.1);
        let (y, _) = batchnorm_forward(&[x.clone()], &mut p, Mode::Train).unwrap();
        for (a, b) in y[0].values().iter().zip(x.values()) {
            assert!((a - b).abs() < 1e-3);
        }
        // running stats moved toward (0, 4/3)
        assert!((p.running_mean[0] - 0.0).abs() < 1e-12);
        assert!((p.running_var[0] - (0.9 + 0.1 * 4.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let x = Tensor::from_vec(2, 3, vec![1.0f64, 5.0, 2.0, -3.0, 0.0, 8.0]).unwrap();
        let mut p = BatchNormParams::new(2, 1e-5, 0.1);
        p.gamma = vec![0.0, 0.0];
        p.beta = vec![0.25, -2.0];
        for mode in [Mode::Train, Mode::Eval] {
            let (y, _) = batchnorm_forward(&[x.clone()], &mut p.clone(), mode).unwrap();
            assert!(y[0].channel(0).iter().all(|&v| v == 0.25));
            assert!(y[0].channel(1).iter().all(|&v| v == -2.0));
        }
    }

    #[test]
    fn eval_mode_matches_hand_formula() {
        let x = Tensor::from_row(vec![1.0f64, 2.0, 4.0]).unwrap();
        let mut p = BatchNormParams::new(1, 1e-5, 0.1);
        p.running_mean = vec![2.0];
        p.running_var = vec![4.0];
        p.gamma = vec![3.0];
        p.beta = vec![0.5];
        let (y, _) = batchnorm_forward(&[x], &mut p, Mode::Eval).unwrap();
        let hand = |v: f64| (v - 2.0) / (4.0f64 + 1e-5).sqrt() * 3.0 + 0.5;
        for (a, v) in y[0].values().iter().zip([1.0, 2.0, 4.0]) {
            assert!((a - hand(v)).abs() < 1e-12);
        }
        // eval leaves running statistics alone
        assert_eq!(p.running_mean, vec![2.0]);
    }

    #[test]
    fn empty_train_batch_is_input_error() {
        let mut p = BatchNormParams::<f32>::new(1, 1e-5, 0.1);
        assert!(matches!(
            batchnorm_forward(&[], &mut p, Mode::Train),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn validate_guards() {
        let mut p = BatchNormParams::<f32>::new(2, 1e-5, 0.1);
        assert!(p.validate().is_ok());
        p.running_var[0] = -1.0;
        assert!(p.validate().is_err());
        let mut q = BatchNormParams::<f32>::new(2, 0.0, 0.1);
        assert!(q.validate().is_err());
        q.eps = 1e-5;
        q.momentum = 1.0;
        assert!(q.validate().is_err());
    }
}
