//! Minimal numeric engine: channel-major 1-D tensors, the layer set the
//! network needs (with hand-written backward passes) and the Adam optimizer.
//!
//! Every kernel is generic over [`Real`] so the same code runs in `f32` for
//! training and inference and in `f64` for finite-difference gradient checks.

mod activation;
mod adam;
mod batchnorm;
mod conv;
mod pool;
mod tensor;

pub use activation::{
    relu, relu_backward, relu_inplace, sigmoid, sigmoid_backward, sigmoid_inplace,
    upsample_nearest, upsample_nearest_backward,
};
pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{
    batchnorm_backward, batchnorm_eval_channel, batchnorm_forward, batchnorm_forward_inplace,
    BatchNormCache,
    BatchNormGrads, BatchNormParams, Mode,
};
pub use conv::{
    conv1d_backward, conv1d_forward, depthwise_conv1d_forward, ConvGrads, ConvKind,
    ConvParams, Padding,
};
pub use pool::{maxpool1d, maxpool1d_backward};
pub use tensor::{Real, Tensor};

pub(crate) use conv::{conv1d_backward_slice, conv1d_slice};
pub(crate) use activation::{relu_backward_slice, upsample_slice};
pub(crate) use batchnorm::batchnorm_backward_inplace;
pub(crate) use pool::{maxpool1d_slice, pool_backward_slice};

/// Dot product with eight independent partial sums.
///
/// The fixed lane split keeps the summation order (and thus the result)
/// deterministic while letting the compiler vectorize the loop.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub(crate) fn sum<T: Real>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let ra = ca.remainder();
    for x in ca {
        for k in 0..8 {
            acc[k] += x[k];
        }
    }
    let mut tail = T::zero();
    for x in ra {
        tail += *x;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}
