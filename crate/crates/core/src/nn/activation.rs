use super::{Real, Tensor};
use crate::error::{Error, Result};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        *v = v.max(T::zero());
    }
}

/// Gradient through ReLU, given the activation's *output*.
pub fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != dy.shape() {
        return Err(Error::shape("relu gradient shape mismatch"));
    }
    let mut dx = dy.clone();
    relu_backward_slice(y.values(), dx.values_mut());
    Ok(dx)
}

pub(crate) fn relu_backward_slice<T: Real>(y: &[T], dy: &mut [T]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Logistic function, clamped so the result stays strictly inside (0, 1)
/// even where the float type would round to 0 or 1.
#[inline]
pub(crate) fn sigmoid_scalar<T: Real>(x: T) -> T {
    let one = T::one();
    let y = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    let hi = one - T::epsilon() / (one + one);
    y.max(T::min_positive_value()).min(hi)
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub fn sigmoid_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        *v = sigmoid_scalar(*v);
    }
}

/// Gradient through the sigmoid, given its *output*.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != dy.shape() {
        return Err(Error::shape("sigmoid gradient shape mismatch"));
    }
    let mut dx = dy.clone();
    for (g, &s) in dx.values_mut().iter_mut().zip(y.values()) {
        *g *= s * (T::one() - s);
    }
    Ok(dx)
}

/// Repeats each sample `factor` times along the length axis.
pub fn upsample_nearest<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::config("upsampling factor must be >= 1"));
    }
    let (c, l) = x.shape();
    let mut out = Tensor::zeros(c, l * factor);
    upsample_slice(x.values(), c, l, factor, out.values_mut());
    Ok(out)
}

pub(crate) fn upsample_slice<T: Real>(x: &[T], channels: usize, len: usize, factor: usize, out: &mut [T]) {
    for c in 0..channels {
        let src = &x[c * len..(c + 1) * len];
        let dst = &mut out[c * len * factor..(c + 1) * len * factor];
        for (chunk, &v) in dst.chunks_exact_mut(factor).zip(src) {
            chunk.fill(v);
        }
    }
}

/// Sums the gradient over each group of repeated samples.
pub fn upsample_nearest_backward<T: Real>(dy: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 || dy.length() % factor != 0 {
        return Err(Error::shape("upsampling gradient length not divisible by factor"));
    }
    let (c, l) = dy.shape();
    let mut dx = Tensor::zeros(c, l / factor);
    for ch in 0..c {
        let src = dy.channel(ch);
        for (d, chunk) in dx.channel_mut(ch).iter_mut().zip(src.chunks_exact(factor)) {
            *d = chunk.iter().copied().sum();
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_row(vec![-1.0f32, 2.0]).unwrap();
        assert_eq!(relu(&x).values(), &[0.0, 2.0]);
    }

    #[test]
    fn sigmoid_at_zero_and_its_slope() {
        let x = Tensor::from_row(vec![0.0f64]).unwrap();
        let y = sigmoid(&x);
        assert_eq!(y.values(), &[0.5]);
        let dy = Tensor::from_row(vec![1.0]).unwrap();
        assert_eq!(sigmoid_backward(&y, &dy).unwrap().values(), &[0.25]);
    }

    #[test]
    fn sigmoid_stays_open_interval_in_f32() {
        let x = Tensor::from_row(vec![-200.0f32, -30.0, 30.0, 200.0]).unwrap();
        for &v in sigmoid(&x).values() {
            assert!(v > 0.0 && v < 1.0, "{v}");
        }
    }

    #[test]
    fn upsample_repeats() {
        let x = Tensor::from_row(vec![1.0f32, 2.0]).unwrap();
        let y = upsample_nearest(&x, 8).unwrap();
        assert_eq!(y.length(), 16);
        assert!(y.values()[..8].iter().all(|&v| v == 1.0));
        assert!(y.values()[8..].iter().all(|&v| v == 2.0));
        let back = upsample_nearest_backward(&Tensor::from_row(vec![1.0f32; 16]).unwrap(), 8).unwrap();
        assert_eq!(back.values(), &[8.0, 8.0]);
        assert!(upsample_nearest(&x, 0).is_err());
    }
}
