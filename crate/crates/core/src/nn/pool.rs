use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Window-2, stride-2 max pooling over raw slices. `indices` receives the
/// argmax position within each input channel; ties go to the earlier sample.
pub(crate) fn maxpool1d_slice<T: Real>(
    x: &[T],
    channels: usize,
    len_in: usize,
    out: &mut [T],
    mut indices: Option<&mut [u32]>,
) {
    let len_out = len_in / 2;
    for c in 0..channels {
        let xc = &x[c * len_in..(c + 1) * len_in];
        let oc = &mut out[c * len_out..(c + 1) * len_out];
        for (t, pair) in xc.chunks_exact(2).enumerate() {
            let pick = usize::from(pair[1] > pair[0]);
            oc[t] = pair[pick];
            if let Some(idx) = indices.as_deref_mut() {
                idx[c * len_out + t] = (2 * t + pick) as u32;
            }
        }
    }
}

/// Max pooling with window 2 and stride 2. Returns the pooled tensor and,
/// per output element, the argmax position within its input channel.
pub fn maxpool1d<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    if x.length() % 2 != 0 {
        return Err(Error::shape(format!(
            "max pooling needs an even length, got {}",
            x.length()
        )));
    }
    let (c, l) = x.shape();
    let mut out = Tensor::zeros(c, l / 2);
    let mut idx = vec![0u32; c * (l / 2)];
    maxpool1d_slice(x.values(), c, l, out.values_mut(), Some(&mut idx));
    Ok((out, idx))
}

/// Routes each pooled gradient to the argmax position it came from.
pub fn maxpool1d_backward<T: Real>(
    dy: &Tensor<T>,
    indices: &[u32],
    len_in: usize,
) -> Result<Tensor<T>> {
    let (c, len_out) = dy.shape();
    if indices.len() != c * len_out || len_in != 2 * len_out {
        return Err(Error::shape("pooling indices do not match upstream gradient"));
    }
    let mut dx = Tensor::zeros(c, len_in);
    pool_backward_slice(dy.values(), indices, c, len_in, dx.values_mut());
    Ok(dx)
}

pub(crate) fn pool_backward_slice<T: Real>(dy: &[T], indices: &[u32], channels: usize, len_in: usize, dx: &mut [T]) {
    let len_out = len_in / 2;
    dx.fill(T::zero());
    for c in 0..channels {
        for t in 0..len_out {
            let k = c * len_out + t;
            dx[c * len_in + indices[k] as usize] += dy[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_max_and_index() {
        let x = Tensor::from_row(vec![1.0f32, 3.0, 2.0, 5.0]).unwrap();
        let (y, idx) = maxpool1d(&x).unwrap();
        assert_eq!(y.values(), &[3.0, 5.0]);
        assert_eq!(idx, vec![1, 3]);
    }

    #[test]
    fn ties_go_to_earlier_position() {
        let x = Tensor::from_row(vec![7.0f32, 7.0]).unwrap();
        let (y, idx) = maxpool1d(&x).unwrap();
        assert_eq!(y.values(), &[7.0]);
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn odd_length_rejected() {
        let x = Tensor::from_row(vec![1.0f32, 2.0, 3.0]).unwrap();
        assert!(matches!(maxpool1d(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_routes_to_argmax() {
        let x = Tensor::from_vec(2, 4, vec![1.0f64, 3.0, 2.0, 5.0, 9.0, 0.0, -1.0, -2.0]).unwrap();
        let (_, idx) = maxpool1d(&x).unwrap();
        let dy = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let dx = maxpool1d_backward(&dy, &idx, 4).unwrap();
        assert_eq!(dx.values(), &[0.0, 1.0, 0.0, 2.0, 3.0, 0.0, 4.0, 0.0]);
    }
}
