use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

use crate::error::{Error, Result};

/// Floating-point element type accepted by the numeric kernels.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("count representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// A `channels x length` array stored channel-major, with an optional
/// gradient buffer of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Real = f32> {
    channels: usize,
    length: usize,
    values: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, length: usize) -> Self {
        Self {
            channels,
            length,
            values: vec![T::zero(); channels * length],
            grad: None,
        }
    }

    pub fn from_vec(channels: usize, length: usize, values: Vec<T>) -> Result<Self> {
        if channels == 0 || length == 0 {
            return Err(Error::shape(format!(
                "tensor dimensions must be positive, got ({channels}, {length})"
            )));
        }
        if values.len() != channels * length {
            return Err(Error::shape(format!(
                "buffer of {} values does not fit shape ({channels}, {length})",
                values.len()
            )));
        }
        Ok(Self {
            channels,
            length,
            values,
            grad: None,
        })
    }

    /// Single-channel tensor.
    pub fn from_row(values: Vec<T>) -> Result<Self> {
        let n = values.len();
        Self::from_vec(1, n, values)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.length)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.values[c * self.length..(c + 1) * self.length]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        &mut self.values[c * self.length..(c + 1) * self.length]
    }

    pub fn get(&self, c: usize, t: usize) -> T {
        self.values[c * self.length + t]
    }

    pub fn set(&mut self, c: usize, t: usize, v: T) {
        self.values[c * self.length + t] = v;
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient buffer, creating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.values.len() {
            return Err(Error::shape(format!(
                "gradient of {} values for tensor of {}",
                g.len(),
                self.values.len()
            )));
        }
        let buf = self
            .grad
            .get_or_insert_with(|| vec![T::zero(); self.values.len()]);
        for (b, x) in buf.iter_mut().zip(g) {
            *b += *x;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            channels: self.channels,
            length: self.length,
            values: self.values.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            length: self.length,
            values: self
                .values
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
            grad: None,
        }
    }

    pub(crate) fn ensure_shape(&self, channels: usize, length: usize, what: &str) -> Result<()> {
        if self.shape() != (channels, length) {
            return Err(Error::shape(format!(
                "{what}: expected ({channels}, {length}), got {:?}",
                self.shape()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_mismatch() {
        assert!(Tensor::<f32>::from_vec(2, 3, vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(0, 3, vec![]).is_err());
        let t = Tensor::<f32>::from_vec(2, 3, (0..6).map(|v| v as f32).collect()).unwrap();
        assert_eq!(t.channel(1), &[3.0, 4.0, 5.0]);
        assert_eq!(t.get(0, 2), 2.0);
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::<f64>::zeros(1, 2);
        assert!(t.grad().is_none());
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
        t.zero_grad();
        assert!(t.grad().is_none());
    }
}
