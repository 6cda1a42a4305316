use rand::Rng;

use super::{axpy, dot, sum, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    /// Every output channel sees every input channel.
    Standard,
    /// Output channel `c` sees only input channel `c`.
    Depthwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output length equals input length. Zero padding totals
    /// `dilation * (kernel_size - 1)`; when that is odd the extra zero goes
    /// on the right.
    Same,
    /// No padding; output length is `len - dilation * (kernel_size - 1)`.
    Valid,
}

/// Weights and bias of a 1-D convolution (cross-correlation, no kernel flip).
///
/// Weight layout is `[out][in][tap]` for [`ConvKind::Standard`] and
/// `[channel][tap]` for [`ConvKind::Depthwise`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T: Real = f32> {
    pub kind: ConvKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub padding: Padding,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T: Real = f32> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvGrads<T> {
    pub fn zeros_like(p: &ConvParams<T>) -> Self {
        Self {
            weight: vec![T::zero(); p.weight.len()],
            bias: vec![T::zero(); p.bias.len()],
        }
    }
}

impl<T: Real> ConvParams<T> {
    /// Zero-initialized standard convolution with "same" padding.
    pub fn standard(in_channels: usize, out_channels: usize, kernel_size: usize, dilation: usize) -> Self {
        Self {
            kind: ConvKind::Standard,
            in_channels,
            out_channels,
            kernel_size,
            dilation,
            padding: Padding::Same,
            weight: vec![T::zero(); out_channels * in_channels * kernel_size],
            bias: vec![T::zero(); out_channels],
        }
    }

    /// Zero-initialized depthwise convolution with "same" padding.
    pub fn depthwise(channels: usize, kernel_size: usize, dilation: usize) -> Self {
        Self {
            kind: ConvKind::Depthwise,
            in_channels: channels,
            out_channels: channels,
            kernel_size,
            dilation,
            padding: Padding::Same,
            weight: vec![T::zero(); channels * kernel_size],
            bias: vec![T::zero(); channels],
        }
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    /// Number of weights feeding one output channel.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            ConvKind::Standard => self.in_channels * self.kernel_size,
            ConvKind::Depthwise => self.kernel_size,
        }
    }

    /// Uniform initialization in `±sqrt(1 / fan_in)` for weights and bias.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let bound = (1.0 / self.fan_in() as f64).sqrt();
        for w in self.weight.iter_mut().chain(self.bias.iter_mut()) {
            *w = T::lit(rng.random_range(-bound..bound));
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Span of input samples one output sample depends on.
    pub fn extent(&self) -> usize {
        self.dilation * (self.kernel_size - 1) + 1
    }

    pub fn pad_left(&self) -> usize {
        match self.padding {
            Padding::Same => (self.extent() - 1) / 2,
            Padding::Valid => 0,
        }
    }

    pub fn out_len(&self, len_in: usize) -> Option<usize> {
        match self.padding {
            Padding::Same => Some(len_in),
            Padding::Valid => (len_in + 1).checked_sub(self.extent()).filter(|&n| n > 0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.dilation == 0 {
            return Err(Error::config(format!(
                "kernel_size and dilation must be >= 1 (got {}, {})",
                self.kernel_size, self.dilation
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("convolution needs at least one channel"));
        }
        let expected = match self.kind {
            ConvKind::Standard => self.out_channels * self.in_channels * self.kernel_size,
            ConvKind::Depthwise => {
                if self.in_channels != self.out_channels {
                    return Err(Error::config("depthwise convolution must keep its channel count"));
                }
                self.in_channels * self.kernel_size
            }
        };
        if self.weight.len() != expected || self.bias.len() != self.out_channels {
            return Err(Error::shape(format!(
                "weight/bias buffers ({}, {}) do not match declared shape ({expected}, {})",
                self.weight.len(),
                self.bias.len(),
                self.out_channels
            )));
        }
        Ok(())
    }

    /// Tap `j` of the kernel connecting input channel `i` to output channel `o`.
    pub fn kernel(&self, o: usize, i: usize) -> &[T] {
        let k = self.kernel_size;
        match self.kind {
            ConvKind::Standard => &self.weight[(o * self.in_channels + i) * k..][..k],
            ConvKind::Depthwise => {
                assert_eq!(o, i, "depthwise kernels only connect matching channels");
                &self.weight[o * k..][..k]
            }
        }
    }

    /// Valid output range `[lo, hi)` for tap `j`, and the input offset it reads at.
    #[inline]
    fn tap_range(&self, j: usize, len_in: usize, len_out: usize) -> (usize, usize, isize) {
        let off = (j * self.dilation) as isize - self.pad_left() as isize;
        let lo = (-off).max(0) as usize;
        let hi = (len_in as isize - off).clamp(0, len_out as isize) as usize;
        (lo.min(hi), hi, off)
    }
}

fn is_pointwise<T: Real>(p: &ConvParams<T>, len_in: usize, len_out: usize) -> bool {
    p.kind == ConvKind::Standard && p.kernel_size == 1 && len_in == len_out
}

/// `out += w · x` for a row-major `(rows, inner)` matrix `w` and channel-major
/// `x` of `inner` rows. Four output rows are produced per pass so each
/// input row is loaded once per block; per output the accumulation runs
/// over `inner` in order, as in the general path.
fn matmul_acc<T: Real>(w: &[T], rows: usize, inner: usize, x: &[T], len: usize, out: &mut [T]) {
    let out = &mut out[..rows * len];
    let mut blocks = out.chunks_exact_mut(4 * len);
    let mut r = 0;
    for block in blocks.by_ref() {
        let (r0, rest) = block.split_at_mut(len);
        let (r1, rest) = rest.split_at_mut(len);
        let (r2, r3) = rest.split_at_mut(len);
        for i in 0..inner {
            let xi = &x[i * len..(i + 1) * len];
            let w0 = w[r * inner + i];
            let w1 = w[(r + 1) * inner + i];
            let w2 = w[(r + 2) * inner + i];
            let w3 = w[(r + 3) * inner + i];
            for ((((a, b), c), d), &v) in r0.iter_mut().zip(r1.iter_mut()).zip(r2.iter_mut()).zip(r3.iter_mut()).zip(xi) {
                *a += w0 * v;
                *b += w1 * v;
                *c += w2 * v;
                *d += w3 * v;
            }
        }
        r += 4;
    }
    for row in blocks.into_remainder().chunks_exact_mut(len) {
        for i in 0..inner {
            axpy(w[r * inner + i], &x[i * len..(i + 1) * len], row);
        }
        r += 1;
    }
}

fn pointwise_forward<T: Real>(p: &ConvParams<T>, x: &[T], len: usize, out: &mut [T]) {
    for (o, row) in out.chunks_exact_mut(len).take(p.out_channels).enumerate() {
        row.fill(p.bias[o]);
    }
    matmul_acc(&p.weight, p.out_channels, p.in_channels, x, len, out);
}

fn row<T>(buf: &[T], c: usize, len: usize) -> &[T] {
    &buf[c * len..(c + 1) * len]
}

fn pointwise_backward<T: Real>(
    p: &ConvParams<T>,
    x: &[T],
    len: usize,
    dy: &[T],
    dx: Option<&mut [T]>,
    grads: &mut ConvGrads<T>,
) {
    let cin = p.in_channels;
    let cout = p.out_channels;
    for o in 0..cout {
        grads.bias[o] += sum(row(dy, o, len));
    }
    // dW += dy · xᵀ, computed as a row-blocked product against the transposed input.
    let mut xt = vec![T::zero(); len * cin];
    for i in 0..cin {
        for (t, &v) in row(x, i, len).iter().enumerate() {
            xt[t * cin + i] = v;
        }
    }
    matmul_acc(dy, cout, len, &xt, cin, &mut grads.weight);
    if let Some(dx) = dx {
        let mut wt = vec![T::zero(); cin * cout];
        for o in 0..cout {
            for i in 0..cin {
                wt[i * cout + o] = p.weight[o * cin + i];
            }
        }
        matmul_acc(&wt, cin, cout, dy, len, dx);
    }
}

/// Forward pass over raw channel-major slices; `out` is overwritten.
pub(crate) fn conv1d_slice<T: Real>(p: &ConvParams<T>, x: &[T], len_in: usize, out: &mut [T], len_out: usize) {
    if is_pointwise(p, len_in, len_out) {
        return pointwise_forward(p, x, len_in, &mut out[..p.out_channels * len_out]);
    }
    let k = p.kernel_size;
    for o in 0..p.out_channels {
        let row = &mut out[o * len_out..(o + 1) * len_out];
        row.fill(p.bias[o]);
        let inputs = match p.kind {
            ConvKind::Standard => 0..p.in_channels,
            ConvKind::Depthwise => o..o + 1,
        };
        for i in inputs {
            let xi = &x[i * len_in..(i + 1) * len_in];
            let w = p.kernel(o, i);
            for j in 0..k {
                let (lo, hi, off) = p.tap_range(j, len_in, len_out);
                if lo < hi {
                    let src = &xi[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    axpy(w[j], src, &mut row[lo..hi]);
                }
            }
        }
    }
}

/// Backward pass over raw slices. Parameter gradients are accumulated into
/// `grads` and the input gradient, when requested, into `dx`.
pub(crate) fn conv1d_backward_slice<T: Real>(
    p: &ConvParams<T>,
    x: &[T],
    len_in: usize,
    dy: &[T],
    len_out: usize,
    mut dx: Option<&mut [T]>,
    grads: &mut ConvGrads<T>,
) {
    if is_pointwise(p, len_in, len_out) {
        return pointwise_backward(p, x, len_in, dy, dx, grads);
    }
    let k = p.kernel_size;
    for o in 0..p.out_channels {
        let dyo = &dy[o * len_out..(o + 1) * len_out];
        grads.bias[o] += sum(dyo);
        let inputs = match p.kind {
            ConvKind::Standard => 0..p.in_channels,
            ConvKind::Depthwise => o..o + 1,
        };
        for i in inputs {
            let xi = &x[i * len_in..(i + 1) * len_in];
            let wbase = match p.kind {
                ConvKind::Standard => (o * p.in_channels + i) * k,
                ConvKind::Depthwise => o * k,
            };
            for j in 0..k {
                let (lo, hi, off) = p.tap_range(j, len_in, len_out);
                if lo >= hi {
                    continue;
                }
                let a = (lo as isize + off) as usize;
                let b = (hi as isize + off) as usize;
                grads.weight[wbase + j] += dot(&dyo[lo..hi], &xi[a..b]);
                if let Some(dx) = dx.as_deref_mut() {
                    let dxi = &mut dx[i * len_in..(i + 1) * len_in];
                    axpy(p.weight[wbase + j], &dyo[lo..hi], &mut dxi[a..b]);
                }
            }
        }
    }
}

fn check_input<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<usize> {
    p.validate()?;
    if x.channels() != p.in_channels {
        return Err(Error::shape(format!(
            "convolution expects {} input channels, got {}",
            p.in_channels,
            x.channels()
        )));
    }
    p.out_len(x.length()).ok_or_else(|| {
        Error::shape(format!(
            "input length {} shorter than kernel extent {}",
            x.length(),
            p.extent()
        ))
    })
}

/// 1-D convolution of either kind.
pub fn conv1d_forward<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let len_out = check_input(x, p)?;
    let mut out = Tensor::zeros(p.out_channels, len_out);
    conv1d_slice(p, x.values(), x.length(), out.values_mut(), len_out);
    Ok(out)
}

/// Depthwise convolution; rejects parameters declared as standard.
pub fn depthwise_conv1d_forward<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    if p.kind != ConvKind::Depthwise {
        return Err(Error::shape("parameters are not depthwise"));
    }
    conv1d_forward(x, p)
}

/// Returns `(dL/dx, parameter gradients)` for one input.
pub fn conv1d_backward<T: Real>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, ConvGrads<T>)> {
    let len_out = check_input(x, p)?;
    dy.ensure_shape(p.out_channels, len_out, "convolution upstream gradient")?;
    let mut dx = Tensor::zeros(x.channels(), x.length());
    let mut grads = ConvGrads::zeros_like(p);
    conv1d_backward_slice(
        p,
        x.values(),
        x.length(),
        dy.values(),
        len_out,
        Some(dx.values_mut()),
        &mut grads,
    );
    Ok((dx, grads))
}
