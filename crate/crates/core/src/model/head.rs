//! Training-only projection head: upsample to the input resolution, then
//! pointwise conv, batch norm, ReLU, pointwise conv and L2 normalization.
//!
//! Pointwise convolutions, batch norm (whose statistics are unchanged by
//! repeating every sample the same number of times), ReLU and per-point
//! normalization all commute with nearest-neighbour upsampling, so the head
//! runs at the feature resolution and [`Embeddings`] expands positions on
//! lookup. Gradients at the input resolution are folded back by summing
//! over each repeated group, which is exactly the upsampling backward pass.

use rand::Rng;

use super::config::ProjectionConfig;
use crate::error::{Error, Result};
use crate::nn::{
    batchnorm_backward_inplace, batchnorm_forward_inplace, conv1d_backward_slice, conv1d_slice,
    relu_backward_slice, relu_inplace, BatchNormCache, BatchNormGrads, BatchNormParams, ConvGrads,
    ConvParams, Mode, Real, Tensor,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead<T: Real = f32> {
    pub expand: ConvParams<T>,
    pub bn: BatchNormParams<T>,
    pub project: ConvParams<T>,
    pub upsample: usize,
    pub normalize: bool,
}

#[derive(Clone, Debug)]
pub struct HeadGrads<T: Real = f32> {
    pub expand: ConvGrads<T>,
    pub bn: BatchNormGrads<T>,
    pub project: ConvGrads<T>,
}

impl<T: Real> HeadGrads<T> {
    pub fn zeros_like(h: &ProjectionHead<T>) -> Self {
        Self {
            expand: ConvGrads::zeros_like(&h.expand),
            bn: BatchNormGrads::zeros(h.bn.channels()),
            project: ConvGrads::zeros_like(&h.project),
        }
    }
}

/// Per-point embeddings for a batch, stored at feature resolution.
#[derive(Clone, Debug)]
pub struct Embeddings<T: Real = f32> {
    /// `(embed_dim, feature_len)` per batch element.
    base: Vec<Tensor<T>>,
    factor: usize,
}

impl<T: Real> Embeddings<T> {
    /// Wraps per-element `(dim, len)` tensors that stand for `len * factor` positions.
    pub fn from_base(base: Vec<Tensor<T>>, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::config("embedding factor must be positive"));
        }
        if let Some(first) = base.first() {
            if base.iter().any(|t| t.shape() != first.shape()) {
                return Err(Error::shape("embedding tensors differ in shape"));
            }
        }
        Ok(Self { base, factor })
    }

    pub fn batch_len(&self) -> usize {
        self.base.len()
    }

    /// Positions per batch element at input resolution.
    pub fn positions(&self) -> usize {
        self.base.first().map_or(0, |t| t.length() * self.factor)
    }

    pub fn dim(&self) -> usize {
        self.base.first().map_or(0, |t| t.channels())
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Embedding of input-resolution position `pos` in batch element `n`.
    pub fn get(&self, n: usize, pos: usize) -> Vec<T> {
        let t = &self.base[n];
        let p = pos / self.factor;
        (0..t.channels()).map(|d| t.get(d, p)).collect()
    }

    pub fn base(&self) -> &[Tensor<T>] {
        &self.base
    }
}

/// Gradient with respect to [`Embeddings`], accumulated at feature resolution.
#[derive(Clone, Debug)]
pub struct EmbeddingGrads<T: Real = f32> {
    base: Vec<Tensor<T>>,
    factor: usize,
}

impl<T: Real> EmbeddingGrads<T> {
    pub fn zeros_like(e: &Embeddings<T>) -> Self {
        Self {
            base: e
                .base
                .iter()
                .map(|t| Tensor::zeros(t.channels(), t.length()))
                .collect(),
            factor: e.factor,
        }
    }

    pub fn add(&mut self, n: usize, pos: usize, g: &[T]) {
        let t = &mut self.base[n];
        let p = pos / self.factor;
        for (d, &v) in g.iter().enumerate() {
            let cur = t.get(d, p);
            t.set(d, p, cur + v);
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.base {
            for v in t.values_mut() {
                *v *= s;
            }
        }
    }

    pub fn base(&self) -> &[Tensor<T>] {
        &self.base
    }
}

#[derive(Clone, Debug)]
pub struct HeadCache<T: Real = f32> {
    bn: BatchNormCache<T>,
    hidden: Vec<Tensor<T>>,
    norms: Vec<Vec<T>>,
    embeddings: Embeddings<T>,
}

impl<T: Real> HeadCache<T> {
    pub fn embeddings(&self) -> &Embeddings<T> {
        &self.embeddings
    }
}

impl<T: Real> ProjectionHead<T> {
    pub fn new(in_channels: usize, cfg: &ProjectionConfig, upsample: usize, eps: T, momentum: T) -> Self {
        Self {
            expand: ConvParams::standard(in_channels, cfg.hidden_channels, 1, 1),
            bn: BatchNormParams::new(cfg.hidden_channels, eps, momentum),
            project: ConvParams::standard(cfg.hidden_channels, cfg.embed_dim, 1, 1),
            upsample,
            normalize: cfg.normalize,
        }
    }

    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.expand.init_uniform(rng);
        self.project.init_uniform(rng);
    }

    pub fn embed_dim(&self) -> usize {
        self.project.out_channels
    }

    pub fn param_count(&self) -> usize {
        self.expand.param_count() + 2 * self.bn.channels() + self.project.param_count()
    }

    pub fn forward(&mut self, features: &[Tensor<T>], mode: Mode) -> Result<HeadCache<T>> {
        let cin = self.expand.in_channels;
        if let Some(f) = features.iter().find(|f| f.channels() != cin) {
            return Err(Error::shape(format!(
                "projection head expects {cin} channels, got {}",
                f.channels()
            )));
        }
        let mut hidden: Vec<Tensor<T>> = features
            .iter()
            .map(|f| {
                let mut h = Tensor::zeros(self.expand.out_channels, f.length());
                conv1d_slice(&self.expand, f.values(), f.length(), h.values_mut(), f.length());
                h
            })
            .collect();
        let bn = batchnorm_forward_inplace(&mut hidden, &mut self.bn, mode)?;
        for h in &mut hidden {
            relu_inplace(h.values_mut());
        }
        let mut norms = Vec::with_capacity(hidden.len());
        let base: Vec<Tensor<T>> = hidden
            .iter()
            .map(|h| {
                let len = h.length();
                let mut z = Tensor::zeros(self.project.out_channels, len);
                conv1d_slice(&self.project, h.values(), len, z.values_mut(), len);
                let mut n = vec![T::one(); len];
                if self.normalize {
                    for (t, nt) in n.iter_mut().enumerate() {
                        let sq: T = (0..z.channels()).map(|d| z.get(d, t) * z.get(d, t)).sum();
                        *nt = sq.sqrt().max(T::lit(1e-12));
                        for d in 0..z.channels() {
                            let v = z.get(d, t) / *nt;
                            z.set(d, t, v);
                        }
                    }
                }
                norms.push(n);
                z
            })
            .collect();
        Ok(HeadCache {
            bn,
            hidden,
            norms,
            embeddings: Embeddings {
                base,
                factor: self.upsample,
            },
        })
    }

    /// Accumulates the gradient with respect to the head's input into `dfeatures`.
    pub fn backward(
        &self,
        features: &[Tensor<T>],
        cache: &HeadCache<T>,
        grads_in: &EmbeddingGrads<T>,
        dfeatures: &mut [Tensor<T>],
    ) -> Result<HeadGrads<T>> {
        let mut grads = HeadGrads::zeros_like(self);
        let mut dhidden = Vec::with_capacity(features.len());
        for (n, dz) in grads_in.base.iter().enumerate() {
            let z = &cache.embeddings.base[n];
            let len = z.length();
            let mut du = dz.clone();
            if self.normalize {
                for t in 0..len {
                    let dot: T = (0..z.channels()).map(|d| z.get(d, t) * dz.get(d, t)).sum();
                    let inv = T::one() / cache.norms[n][t];
                    for d in 0..z.channels() {
                        du.set(d, t, (dz.get(d, t) - z.get(d, t) * dot) * inv);
                    }
                }
            }
            let h = &cache.hidden[n];
            let mut dh = Tensor::zeros(h.channels(), len);
            conv1d_backward_slice(
                &self.project,
                h.values(),
                len,
                du.values(),
                len,
                Some(dh.values_mut()),
                &mut grads.project,
            );
            relu_backward_slice(h.values(), dh.values_mut());
            dhidden.push(dh);
        }
        grads.bn = batchnorm_backward_inplace(&cache.bn, &self.bn, &mut dhidden)?;
        for ((f, dh), df) in features.iter().zip(&dhidden).zip(dfeatures.iter_mut()) {
            let len = f.length();
            conv1d_backward_slice(
                &self.expand,
                f.values(),
                len,
                dh.values(),
                len,
                Some(df.values_mut()),
                &mut grads.expand,
            );
        }
        Ok(grads)
    }
}
