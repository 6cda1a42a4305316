use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::head::{EmbeddingGrads, Embeddings, HeadCache, HeadGrads, ProjectionHead};
use crate::data::SignalSegment;
use crate::error::{Error, Result};
use crate::nn::{
    batchnorm_backward_inplace, batchnorm_eval_channel, batchnorm_forward_inplace,
    conv1d_backward_slice, conv1d_slice, maxpool1d_slice, pool_backward_slice, relu_backward_slice,
    relu_inplace, sigmoid_inplace, upsample_slice, BatchNormCache, BatchNormGrads, BatchNormParams,
    ConvGrads, ConvParams, Mode, Real, Tensor,
};

/// One feature block: (depthwise conv) -> pointwise conv -> batch norm ->
/// (max pool) -> ReLU. Without a depthwise stage `conv` is a standard
/// convolution with the block's full kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct DscBlock<T: Real = f32> {
    pub depthwise: Option<ConvParams<T>>,
    pub conv: ConvParams<T>,
    pub bn: BatchNormParams<T>,
    pub pool: bool,
}

impl<T: Real> DscBlock<T> {
    pub fn in_channels(&self) -> usize {
        self.depthwise.as_ref().map_or(self.conv.in_channels, |d| d.in_channels)
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels
    }

    pub fn param_count(&self) -> usize {
        self.depthwise.as_ref().map_or(0, |d| d.param_count()) + self.conv.param_count() + 2 * self.bn.channels()
    }
}

/// Channels kept (`true`) after pruning, one vector per feature block.
pub type PruneMask = Vec<Vec<bool>>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelMetadata {
    pub seed: u64,
    pub provenance: String,
}

/// The segmentation network: four feature blocks, a dilated-branch pyramid,
/// upsampling, an output convolution and a sigmoid, plus an optional
/// projection head used only during contrastive training.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyPpg<T: Real = f32> {
    pub config: ModelConfig,
    pub blocks: Vec<DscBlock<T>>,
    pub branches: Vec<ConvParams<T>>,
    pub output_conv: ConvParams<T>,
    pub head: Option<ProjectionHead<T>>,
    pub prune_mask: Option<PruneMask>,
    pub metadata: ModelMetadata,
}

#[derive(Clone, Debug)]
pub struct BlockGrads<T: Real = f32> {
    pub depthwise: Option<ConvGrads<T>>,
    pub conv: ConvGrads<T>,
    pub bn: BatchNormGrads<T>,
}

#[derive(Clone, Debug)]
pub struct ModelGrads<T: Real = f32> {
    pub blocks: Vec<BlockGrads<T>>,
    pub branches: Vec<ConvGrads<T>>,
    pub output_conv: ConvGrads<T>,
    pub head: Option<HeadGrads<T>>,
}

impl<T: Real> ModelGrads<T> {
    /// Gradient groups in the order of [`TinyPpg::params_mut`].
    pub fn groups(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for b in &self.blocks {
            if let Some(d) = &b.depthwise {
                out.push(&d.weight);
                out.push(&d.bias);
            }
            out.push(&b.conv.weight);
            out.push(&b.conv.bias);
            out.push(&b.bn.gamma);
            out.push(&b.bn.beta);
        }
        for g in &self.branches {
            out.push(&g.weight);
            out.push(&g.bias);
        }
        out.push(&self.output_conv.weight);
        out.push(&self.output_conv.bias);
        if let Some(h) = &self.head {
            out.push(&h.expand.weight);
            out.push(&h.expand.bias);
            out.push(&h.bn.gamma);
            out.push(&h.bn.beta);
            out.push(&h.project.weight);
            out.push(&h.project.bias);
        }
        out
    }
}

struct BlockCache<T: Real> {
    dw_out: Option<Vec<Tensor<T>>>,
    bn: BatchNormCache<T>,
    pool_idx: Option<Vec<Vec<u32>>>,
    /// Post-ReLU output.
    out: Vec<Tensor<T>>,
}

/// Activations kept by [`TinyPpg::forward_cached`] for [`TinyPpg::backward`].
pub struct ForwardCache<T: Real = f32> {
    inputs: Vec<Tensor<T>>,
    blocks: Vec<BlockCache<T>>,
    upsampled: Vec<Tensor<T>>,
    probs: Vec<Tensor<T>>,
    head: Option<HeadCache<T>>,
}

impl<T: Real> ForwardCache<T> {
    /// Per-sample probabilities, `(1, input_len)` each.
    pub fn probs(&self) -> &[Tensor<T>] {
        &self.probs
    }

    pub fn embeddings(&self) -> Option<&Embeddings<T>> {
        self.head.as_ref().map(|h| h.embeddings())
    }

    /// Output of the last feature block (the projection head's input).
    pub fn features(&self) -> &[Tensor<T>] {
        &self.blocks.last().expect("model has blocks").out
    }
}

impl<T: Real> TinyPpg<T> {
    /// Builds and initializes a model. The projection head, when configured,
    /// is initialized after every other layer so the main network's weights
    /// do not depend on whether the head exists.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = T::lit(config.bn_eps);
        let mom = T::lit(config.bn_momentum);
        let mut cin = 1;
        let n_blocks = config.dsc_specs.len();
        let mut blocks = Vec::with_capacity(n_blocks);
        for (i, &(cout, k)) in config.dsc_specs.iter().enumerate() {
            let (depthwise, conv) = if config.separable {
                let mut dw = ConvParams::depthwise(cin, k, 1);
                dw.init_uniform(&mut rng);
                let mut pw = ConvParams::standard(cin, cout, 1, 1);
                pw.init_uniform(&mut rng);
                (Some(dw), pw)
            } else {
                let mut c = ConvParams::standard(cin, cout, k, 1);
                c.init_uniform(&mut rng);
                (None, c)
            };
            blocks.push(DscBlock {
                depthwise,
                conv,
                bn: BatchNormParams::new(cout, eps, mom),
                pool: i + 1 < n_blocks,
            });
            cin = cout;
        }
        let branches = config
            .branch_rates()
            .into_iter()
            .map(|r| {
                let mut b = ConvParams::standard(cin, 1, config.aspp_kernel, r);
                b.init_uniform(&mut rng);
                b
            })
            .collect::<Vec<_>>();
        let mut output_conv = ConvParams::standard(branches.len(), 1, config.final_conv_kernel, 1);
        output_conv.init_uniform(&mut rng);
        let head = config.projection.map(|p| {
            let mut h = ProjectionHead::new(cin, &p, config.head_upsample_factor, eps, mom);
            h.init_uniform(&mut rng);
            h
        });
        Ok(Self {
            config,
            blocks,
            branches,
            output_conv,
            head,
            prune_mask: None,
            metadata: ModelMetadata {
                seed,
                provenance: String::new(),
            },
        })
    }

    pub fn input_len(&self) -> usize {
        self.config.input_len
    }

    pub fn has_head(&self) -> bool {
        self.head.is_some()
    }

    /// Drops the projection head (it is never needed for inference).
    pub fn without_head(mut self) -> Self {
        self.head = None;
        self.config.projection = None;
        self
    }

    /// Trainable scalars of the inference network: convolution weights and
    /// biases plus batch-norm gamma and beta. Running statistics and the
    /// projection head are excluded.
    pub fn count_parameters(&self) -> usize {
        self.blocks.iter().map(DscBlock::param_count).sum::<usize>()
            + self.branches.iter().map(ConvParams::param_count).sum::<usize>()
            + self.output_conv.param_count()
    }

    /// Trainable parameter groups in a fixed order shared with
    /// [`ModelGrads::groups`].
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for b in &mut self.blocks {
            if let Some(d) = &mut b.depthwise {
                out.push(&mut d.weight);
                out.push(&mut d.bias);
            }
            out.push(&mut b.conv.weight);
            out.push(&mut b.conv.bias);
            out.push(&mut b.bn.gamma);
            out.push(&mut b.bn.beta);
        }
        for g in &mut self.branches {
            out.push(&mut g.weight);
            out.push(&mut g.bias);
        }
        out.push(&mut self.output_conv.weight);
        out.push(&mut self.output_conv.bias);
        if let Some(h) = &mut self.head {
            out.push(&mut h.expand.weight);
            out.push(&mut h.expand.bias);
            out.push(&mut h.bn.gamma);
            out.push(&mut h.bn.beta);
            out.push(&mut h.project.weight);
            out.push(&mut h.project.bias);
        }
        out
    }

    pub(crate) fn mask_for(&self, block: usize) -> Option<&[bool]> {
        self.prune_mask.as_ref().map(|m| m[block].as_slice())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        x.ensure_shape(1, self.config.input_len, "model input")
    }

    /// Eval-mode forward for one `(1, input_len)` input, returning probabilities.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = x.values().to_vec();
        let mut len = x.length();
        for (bi, b) in self.blocks.iter().enumerate() {
            let src = match &b.depthwise {
                Some(dw) => {
                    let mut a = vec![T::zero(); dw.out_channels * len];
                    conv1d_slice(dw, &cur, len, &mut a, len);
                    a
                }
                None => cur,
            };
            let c = b.out_channels();
            let mut y = vec![T::zero(); c * len];
            conv1d_slice(&b.conv, &src, len, &mut y, len);
            for ch in 0..c {
                batchnorm_eval_channel(&mut y[ch * len..(ch + 1) * len], &b.bn, ch);
            }
            apply_mask(&mut y, len, self.mask_for(bi));
            if b.pool {
                let mut p = vec![T::zero(); c * (len / 2)];
                maxpool1d_slice(&y, c, len, &mut p, None);
                y = p;
                len /= 2;
            }
            relu_inplace(&mut y);
            cur = y;
        }
        let nb = self.branches.len();
        let mut concat = vec![T::zero(); nb * len];
        for (j, br) in self.branches.iter().enumerate() {
            conv1d_slice(br, &cur, len, &mut concat[j * len..(j + 1) * len], len);
        }
        let factor = self.config.head_upsample_factor;
        let full = len * factor;
        let mut up = vec![T::zero(); nb * full];
        upsample_slice(&concat, nb, len, factor, &mut up);
        let mut out = vec![T::zero(); full];
        conv1d_slice(&self.output_conv, &up, full, &mut out, full);
        sigmoid_inplace(&mut out);
        Tensor::from_row(out)
    }

    /// Eval-mode forward over a batch.
    pub fn predict_batch(&self, inputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        inputs.iter().map(|x| self.predict(x)).collect()
    }

    /// Forward pass keeping every activation the backward pass needs.
    ///
    /// `Mode::Train` normalizes with batch statistics and updates the
    /// running estimates. The projection head runs only when `with_head` is
    /// set (and fails with a state error if the model has none).
    pub fn forward_cached(&mut self, inputs: Vec<Tensor<T>>, mode: Mode, with_head: bool) -> Result<ForwardCache<T>> {
        if inputs.is_empty() {
            return Err(Error::input("empty batch"));
        }
        for x in &inputs {
            self.check_input(x)?;
        }
        if with_head && self.head.is_none() {
            return Err(Error::state("model has no projection head attached"));
        }
        let mut caches: Vec<BlockCache<T>> = Vec::with_capacity(self.blocks.len());
        let mut len = self.config.input_len;
        for bi in 0..self.blocks.len() {
            let mask = self.prune_mask.as_ref().map(|m| m[bi].clone());
            let block = &mut self.blocks[bi];
            let prev: &[Tensor<T>] = match caches.last() {
                Some(c) => &c.out,
                None => &inputs,
            };
            let dw_out = block.depthwise.as_ref().map(|dw| {
                prev.iter()
                    .map(|x| {
                        let mut a = Tensor::zeros(dw.out_channels, len);
                        conv1d_slice(dw, x.values(), len, a.values_mut(), len);
                        a
                    })
                    .collect::<Vec<_>>()
            });
            let src = dw_out.as_deref().unwrap_or(prev);
            let c = block.out_channels();
            let mut y: Vec<Tensor<T>> = src
                .iter()
                .map(|x| {
                    let mut o = Tensor::zeros(c, len);
                    conv1d_slice(&block.conv, x.values(), len, o.values_mut(), len);
                    o
                })
                .collect();
            let bn = batchnorm_forward_inplace(&mut y, &mut block.bn, mode)?;
            for t in &mut y {
                apply_mask(t.values_mut(), len, mask.as_deref());
            }
            let (mut out, pool_idx) = if block.pool {
                let mut idxs = Vec::with_capacity(y.len());
                let pooled = y
                    .iter()
                    .map(|t| {
                        let mut p = Tensor::zeros(c, len / 2);
                        let mut idx = vec![0u32; c * (len / 2)];
                        maxpool1d_slice(t.values(), c, len, p.values_mut(), Some(&mut idx));
                        idxs.push(idx);
                        p
                    })
                    .collect::<Vec<_>>();
                len /= 2;
                (pooled, Some(idxs))
            } else {
                (y, None)
            };
            for t in &mut out {
                relu_inplace(t.values_mut());
            }
            caches.push(BlockCache {
                dw_out,
                bn,
                pool_idx,
                out,
            });
        }

        let features = &caches.last().expect("blocks").out;
        let nb = self.branches.len();
        let factor = self.config.head_upsample_factor;
        let full = len * factor;
        let mut upsampled = Vec::with_capacity(features.len());
        let mut probs = Vec::with_capacity(features.len());
        for f in features {
            let mut concat = vec![T::zero(); nb * len];
            for (j, br) in self.branches.iter().enumerate() {
                conv1d_slice(br, f.values(), len, &mut concat[j * len..(j + 1) * len], len);
            }
            let mut up = Tensor::zeros(nb, full);
            upsample_slice(&concat, nb, len, factor, up.values_mut());
            let mut out = Tensor::zeros(1, full);
            conv1d_slice(&self.output_conv, up.values(), full, out.values_mut(), full);
            sigmoid_inplace(out.values_mut());
            upsampled.push(up);
            probs.push(out);
        }
        let head = if with_head {
            let h = self.head.as_mut().expect("checked above");
            Some(h.forward(features, mode)?)
        } else {
            None
        };
        Ok(ForwardCache {
            inputs,
            blocks: caches,
            upsampled,
            probs,
            head,
        })
    }

    /// Reverse pass. `dprobs` is the loss gradient with respect to the
    /// probabilities; `dembed` the gradient with respect to the head's
    /// embeddings (required iff the head ran in the forward pass).
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        dprobs: &[Tensor<T>],
        dembed: Option<&EmbeddingGrads<T>>,
    ) -> Result<ModelGrads<T>> {
        let batch = cache.probs.len();
        if dprobs.len() != batch {
            return Err(Error::shape(format!(
                "got {} upstream gradients for a batch of {batch}",
                dprobs.len()
            )));
        }
        let full = self.config.input_len;
        let factor = self.config.head_upsample_factor;
        let len4 = full / factor;
        let nb = self.branches.len();

        let mut output_grads = ConvGrads::zeros_like(&self.output_conv);
        let mut branch_grads: Vec<ConvGrads<T>> = self.branches.iter().map(ConvGrads::zeros_like).collect();
        let features = cache.features();
        let c4 = features[0].channels();
        let mut dfeat: Vec<Tensor<T>> = (0..batch).map(|_| Tensor::zeros(c4, len4)).collect();

        for n in 0..batch {
            dprobs[n].ensure_shape(1, full, "probability gradient")?;
            let p = &cache.probs[n];
            let mut dlogit = dprobs[n].clone();
            for (g, &s) in dlogit.values_mut().iter_mut().zip(p.values()) {
                *g *= s * (T::one() - s);
            }
            let mut dup = Tensor::zeros(nb, full);
            conv1d_backward_slice(
                &self.output_conv,
                cache.upsampled[n].values(),
                full,
                dlogit.values(),
                full,
                Some(dup.values_mut()),
                &mut output_grads,
            );
            let mut dconcat = vec![T::zero(); nb * len4];
            for (d, chunk) in dconcat.iter_mut().zip(dup.values().chunks_exact(factor)) {
                *d = chunk.iter().copied().sum();
            }
            for (j, br) in self.branches.iter().enumerate() {
                conv1d_backward_slice(
                    br,
                    features[n].values(),
                    len4,
                    &dconcat[j * len4..(j + 1) * len4],
                    len4,
                    Some(dfeat[n].values_mut()),
                    &mut branch_grads[j],
                );
            }
        }

        let head_grads = match (&cache.head, dembed) {
            (Some(hc), Some(de)) => {
                let head = self.head.as_ref().ok_or_else(|| Error::state("head missing"))?;
                Some(head.backward(features, hc, de, &mut dfeat)?)
            }
            (None, None) => self.head.as_ref().map(HeadGrads::zeros_like),
            (Some(_), None) => return Err(Error::state("embedding gradient missing for head pass")),
            (None, Some(_)) => return Err(Error::state("embedding gradient given but head did not run")),
        };

        let mut block_grads: Vec<BlockGrads<T>> = Vec::with_capacity(self.blocks.len());
        let mut dout = dfeat;
        for bi in (0..self.blocks.len()).rev() {
            let block = &self.blocks[bi];
            let bc = &cache.blocks[bi];
            let c = block.out_channels();
            let prev: &[Tensor<T>] = if bi == 0 { &cache.inputs } else { &cache.blocks[bi - 1].out };
            let len = prev[0].length();
            let mask = self.mask_for(bi);

            let mut dy: Vec<Tensor<T>> = Vec::with_capacity(batch);
            for n in 0..batch {
                let mut d = std::mem::replace(&mut dout[n], Tensor::zeros(1, 1));
                relu_backward_slice(bc.out[n].values(), d.values_mut());
                let d = match &bc.pool_idx {
                    Some(idx) => {
                        let mut dx = Tensor::zeros(c, len);
                        pool_backward_slice(d.values(), &idx[n], c, len, dx.values_mut());
                        dx
                    }
                    None => d,
                };
                dy.push(d);
            }
            for d in &mut dy {
                apply_mask(d.values_mut(), len, mask);
            }
            let bn_grads = batchnorm_backward_inplace(&bc.bn, &block.bn, &mut dy)?;

            let need_dx = bi > 0;
            let mut conv_grads = ConvGrads::zeros_like(&block.conv);
            let mut dw_grads = block.depthwise.as_ref().map(ConvGrads::zeros_like);
            let mut next = Vec::with_capacity(batch);
            for n in 0..batch {
                match (&block.depthwise, &bc.dw_out) {
                    (Some(dw), Some(a)) => {
                        let mut da = Tensor::zeros(dw.out_channels, len);
                        conv1d_backward_slice(
                            &block.conv,
                            a[n].values(),
                            len,
                            dy[n].values(),
                            len,
                            Some(da.values_mut()),
                            &mut conv_grads,
                        );
                        let mut dx = need_dx.then(|| Tensor::zeros(prev[n].channels(), len));
                        conv1d_backward_slice(
                            dw,
                            prev[n].values(),
                            len,
                            da.values(),
                            len,
                            dx.as_mut().map(|t| t.values_mut()),
                            dw_grads.as_mut().expect("depthwise grads"),
                        );
                        next.push(dx);
                    }
                    _ => {
                        let mut dx = need_dx.then(|| Tensor::zeros(prev[n].channels(), len));
                        conv1d_backward_slice(
                            &block.conv,
                            prev[n].values(),
                            len,
                            dy[n].values(),
                            len,
                            dx.as_mut().map(|t| t.values_mut()),
                            &mut conv_grads,
                        );
                        next.push(dx);
                    }
                }
            }
            block_grads.push(BlockGrads {
                depthwise: dw_grads,
                conv: conv_grads,
                bn: bn_grads,
            });
            if need_dx {
                dout = next.into_iter().map(|d| d.expect("input gradient")).collect();
            }
        }
        block_grads.reverse();
        Ok(ModelGrads {
            blocks: block_grads,
            branches: branch_grads,
            output_conv: output_grads,
            head: head_grads,
        })
    }
}

pub(crate) fn apply_mask<T: Real>(y: &mut [T], len: usize, mask: Option<&[bool]>) {
    if let Some(mask) = mask {
        for (c, &keep) in mask.iter().enumerate() {
            if !keep {
                y[c * len..(c + 1) * len].fill(T::zero());
            }
        }
    }
}

pub(crate) fn segment_tensor<T: Real>(seg: &SignalSegment) -> Tensor<T> {
    Tensor::from_row(seg.samples.iter().map(|&v| T::lit(v as f64)).collect()).expect("non-empty segment")
}

impl TinyPpg<f32> {
    /// Eval-mode probability masks for a batch of segments.
    pub fn forward(&self, batch: &[SignalSegment]) -> Result<Vec<Vec<f32>>> {
        batch
            .iter()
            .map(|s| self.predict(&segment_tensor(s)).map(Tensor::into_values))
            .collect()
    }

    /// Eval-mode masks plus per-point projection embeddings.
    pub fn forward_with_embeddings(&self, batch: &[SignalSegment]) -> Result<(Vec<Vec<f32>>, Embeddings<f32>)> {
        if self.head.is_none() {
            return Err(Error::state("model has no projection head attached"));
        }
        if batch.is_empty() {
            return Err(Error::input("empty batch"));
        }
        let masks = self.forward(batch)?;
        let mut scratch = self.clone();
        let cache = scratch.forward_cached(batch.iter().map(segment_tensor).collect(), Mode::Eval, true)?;
        let emb = cache.embeddings().expect("head ran").clone();
        Ok((masks, emb))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProjectionConfig;
    use rand::Rng;

    fn small_config(separable: bool, aspp: bool) -> ModelConfig {
        ModelConfig {
            dsc_specs: vec![(3, 5), (4, 3), (5, 3), (6, 3)],
            separable,
            aspp_rates: vec![1, 2],
            aspp_enabled: aspp,
            aspp_kernel: 3,
            head_upsample_factor: 8,
            final_conv_kernel: 3,
            projection: Some(ProjectionConfig {
                hidden_channels: 4,
                embed_dim: 3,
                normalize: true,
            }),
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            input_len: 32,
        }
    }

    fn random_inputs(n: usize, len: usize, seed: u64) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Tensor::from_row((0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect()
    }

    #[test]
    fn default_parameter_count() {
        let m = TinyPpg::<f32>::build(ModelConfig::default(), 0).unwrap();
        // Blocks: (80+1) + 1*32+32 + 64, then 32*41 + 32*64+64 + 128, ...
        let blocks = [
            80 + 1 + 32 + 32 + 64,
            32 * 40 + 32 + 32 * 64 + 64 + 128,
            64 * 20 + 64 + 64 * 128 + 128 + 256,
            128 * 7 + 128 + 128 * 512 + 512 + 1024,
        ];
        let pyramid = 4 * (512 * 3 + 1);
        let output = 4 * 3 + 1;
        assert_eq!(m.count_parameters(), blocks.iter().sum::<usize>() + pyramid + output);
        assert_eq!(m.count_parameters(), 87_938);
        let with_head = TinyPpg::<f32>::build(ModelConfig::with_projection(), 0).unwrap();
        assert_eq!(with_head.count_parameters(), 87_938);
    }

    #[test]
    fn head_does_not_change_main_weights() {
        let a = TinyPpg::<f32>::build(ModelConfig::default(), 11).unwrap();
        let b = TinyPpg::<f32>::build(ModelConfig::with_projection(), 11).unwrap();
        assert_eq!(a.blocks, b.blocks);
        assert_eq!(a.branches, b.branches);
        assert_eq!(a.output_conv, b.output_conv);
        assert_eq!(b.without_head(), a);
    }

    #[test]
    fn default_shapes_and_range() {
        let mut m = TinyPpg::<f32>::build(ModelConfig::with_projection(), 2).unwrap();
        let x = random_inputs(2, 1920, 5).iter().map(|t| t.cast::<f32>()).collect::<Vec<_>>();
        let cache = m.forward_cached(x.clone(), Mode::Train, true).unwrap();
        let shapes: Vec<_> = cache.blocks.iter().map(|b| b.out[0].shape()).collect();
        assert_eq!(shapes, vec![(32, 960), (64, 480), (128, 240), (512, 240)]);
        assert_eq!(cache.probs()[0].shape(), (1, 1920));
        let emb = cache.embeddings().unwrap();
        assert_eq!((emb.batch_len(), emb.positions(), emb.dim()), (2, 1920, 64));
        let e = emb.get(1, 777);
        let norm: f32 = e.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-4);
        for p in cache.probs() {
            assert!(p.values().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn predict_matches_cached_eval_bitwise() {
        let mut m = TinyPpg::<f64>::build(small_config(true, true), 4).unwrap();
        let xs = random_inputs(3, 32, 1);
        m.forward_cached(xs.clone(), Mode::Train, false).unwrap();
        let cache = m.forward_cached(xs.clone(), Mode::Eval, false).unwrap();
        for (x, p) in xs.iter().zip(cache.probs()) {
            assert_eq!(m.predict(x).unwrap(), *p);
        }
    }

    #[test]
    fn wrong_input_shapes_are_rejected() {
        let mut m = TinyPpg::<f64>::build(small_config(true, true), 4).unwrap();
        let bad = random_inputs(1, 30, 1);
        assert!(matches!(m.predict(&bad[0]), Err(Error::Shape(_))));
        assert!(matches!(m.forward_cached(vec![], Mode::Train, false), Err(Error::Input(_))));
        let mut plain = m.clone().without_head();
        let xs = random_inputs(1, 32, 1);
        assert!(matches!(plain.forward_cached(xs, Mode::Eval, true), Err(Error::State(_))));
    }

    #[test]
    fn masked_channels_are_silent() {
        let mut m = TinyPpg::<f64>::build(small_config(true, true), 9).unwrap();
        let mut mask: PruneMask = m.blocks.iter().map(|b| vec![true; b.out_channels()]).collect();
        mask[1][2] = false;
        mask[3][0] = false;
        m.prune_mask = Some(mask);
        let xs = random_inputs(2, 32, 3);
        let cache = m.forward_cached(xs, Mode::Train, false).unwrap();
        for out in &cache.blocks[1].out {
            assert!(out.channel(2).iter().all(|&v| v == 0.0));
        }
        for out in &cache.blocks[3].out {
            assert!(out.channel(0).iter().all(|&v| v == 0.0));
        }
    }

    /// Loss = <probs, r> + <embeddings, q> for fixed random r, q.
    fn probe_loss(m: &mut TinyPpg<f64>, xs: &[Tensor<f64>], r: &[Tensor<f64>], q: &[Tensor<f64>]) -> f64 {
        let cache = m.forward_cached(xs.to_vec(), Mode::Train, true).unwrap();
        let a: f64 = cache
            .probs()
            .iter()
            .zip(r)
            .map(|(p, r)| p.values().iter().zip(r.values()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let b: f64 = cache
            .embeddings()
            .unwrap()
            .base()
            .iter()
            .zip(q)
            .map(|(e, q)| e.values().iter().zip(q.values()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        a + b
    }

    fn check_gradients(cfg: ModelConfig, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = TinyPpg::<f64>::build(cfg, seed).unwrap();
        let xs = random_inputs(2, 32, seed + 100);
        let r: Vec<Tensor<f64>> = random_inputs(2, 32, seed + 200);
        let q: Vec<Tensor<f64>> = (0..2)
            .map(|_| Tensor::from_vec(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();

        let mut probe = m.clone();
        let cache = probe.forward_cached(xs.clone(), Mode::Train, true).unwrap();
        let mut de = EmbeddingGrads::zeros_like(cache.embeddings().unwrap());
        for (n, qn) in q.iter().enumerate() {
            for t in 0..4 {
                let g: Vec<f64> = (0..3).map(|d| qn.get(d, t)).collect();
                de.add(n, t * 8, &g);
            }
        }
        let grads = probe.backward(&cache, &r, Some(&de)).unwrap();
        let analytic: Vec<Vec<f64>> = grads.groups().iter().map(|g| g.to_vec()).collect();

        let h = 1e-6;
        let n_groups = analytic.len();
        for gi in 0..n_groups {
            let len = analytic[gi].len();
            let picks: Vec<usize> = if len <= 4 { (0..len).collect() } else { (0..4).map(|_| rng.random_range(0..len)).collect() };
            for idx in picks {
                let mut plus = m.clone();
                plus.params_mut()[gi][idx] += h;
                let mut minus = m.clone();
                minus.params_mut()[gi][idx] -= h;
                let num = (probe_loss(&mut plus, &xs, &r, &q) - probe_loss(&mut minus, &xs, &r, &q)) / (2.0 * h);
                let ana = analytic[gi][idx];
                let tol = 1e-5 * (1.0 + num.abs().max(ana.abs()));
                assert!((num - ana).abs() < tol, "group {gi} idx {idx}: numeric {num} analytic {ana}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_separable() {
        check_gradients(small_config(true, true), 21);
    }

    #[test]
    fn gradients_match_finite_differences_standard_conv() {
        check_gradients(small_config(false, true), 22);
    }

    #[test]
    fn gradients_match_finite_differences_single_branch() {
        check_gradients(small_config(true, false), 23);
    }

    #[test]
    fn gradients_match_with_mask() {
        let mut cfg = small_config(true, true);
        cfg.projection = Some(ProjectionConfig { hidden_channels: 4, embed_dim: 3, normalize: false });
        let mut m = TinyPpg::<f64>::build(cfg, 5).unwrap();
        let mut mask: PruneMask = m.blocks.iter().map(|b| vec![true; b.out_channels()]).collect();
        mask[2][1] = false;
        m.prune_mask = Some(mask);
        let xs = random_inputs(2, 32, 8);
        let r = random_inputs(2, 32, 9);
        let cache = m.forward_cached(xs, Mode::Train, false).unwrap();
        let g = m.backward(&cache, &r, None).unwrap();
        assert_eq!(g.blocks[2].bn.gamma[1], 0.0);
        assert_eq!(g.blocks[2].conv.bias[1], 0.0);
        assert!(g.head.is_some());
    }
}
