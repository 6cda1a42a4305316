//! Channel pruning driven by batch-norm scales: global ranking, masking,
//! physical compaction and fine-tuning.

use crate::data::SignalSegment;
use crate::error::{Error, Result};
use crate::model::{DscBlock, ModelConfig, ProjectionHead, PruneMask, TinyPpg};
use crate::nn::{BatchNormParams, ConvParams, Real};
use crate::train::{train_with_progress, EpochLog, TrainConfig, TrainOutcome};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedChannel {
    /// Feature block index.
    pub layer: usize,
    pub channel: usize,
    /// `|gamma|`.
    pub score: f64,
}

/// Every feature-block channel in ascending order of importance.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRank {
    pub entries: Vec<RankedChannel>,
}

/// One global ranking by `|gamma|` over all feature-block batch norms;
/// ties go to the lower (layer, channel).
pub fn rank_channels<T: Real>(model: &TinyPpg<T>) -> ChannelRank {
    let gammas: Vec<&[T]> = model.blocks.iter().map(|b| b.bn.gamma.as_slice()).collect();
    rank_scales(&gammas)
}

/// Ranking over explicit per-layer scale vectors.
pub fn rank_scales<T: Real>(gammas: &[&[T]]) -> ChannelRank {
    let mut entries: Vec<RankedChannel> = gammas
        .iter()
        .enumerate()
        .flat_map(|(layer, g)| {
            g.iter().enumerate().map(move |(channel, g)| RankedChannel {
                layer,
                channel,
                score: g.to_f64().unwrap_or(f64::NAN).abs(),
            })
        })
        .collect();
    entries.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(a.layer.cmp(&b.layer))
            .then(a.channel.cmp(&b.channel))
    });
    ChannelRank { entries }
}

pub fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::config(format!("prune ratio must be in [0, 1), got {ratio}")));
    }
    Ok(())
}

/// Mask selecting the lowest `floor(ratio * total)` channels. A layer never
/// loses its last channel; the shortfall moves on to the next-ranked
/// channels of other layers. Channels already masked stay masked.
pub fn prune_mask<T: Real>(model: &TinyPpg<T>, ratio: f64) -> Result<PruneMask> {
    check_ratio(ratio)?;
    let rank = rank_channels(model);
    let total = rank.entries.len();
    let target = (ratio * total as f64).floor() as usize;
    let mut mask: PruneMask = match &model.prune_mask {
        Some(m) => m.clone(),
        None => model.blocks.iter().map(|b| vec![true; b.out_channels()]).collect(),
    };
    let mut alive: Vec<usize> = mask.iter().map(|m| m.iter().filter(|&&k| k).count()).collect();
    let mut pruned = total - alive.iter().sum::<usize>();
    for e in &rank.entries {
        if pruned >= target {
            break;
        }
        if !mask[e.layer][e.channel] || alive[e.layer] <= 1 {
            continue;
        }
        mask[e.layer][e.channel] = false;
        alive[e.layer] -= 1;
        pruned += 1;
    }
    Ok(mask)
}

/// Zeroes the selected channels' pointwise output weights, bias, gamma and
/// beta, and records the mask so those channels stay silent.
pub fn apply_prune<T: Real>(model: &TinyPpg<T>, ratio: f64) -> Result<TinyPpg<T>> {
    let mask = prune_mask(model, ratio)?;
    let mut out = model.clone();
    for (b, keep) in out.blocks.iter_mut().zip(&mask) {
        let cin = b.conv.in_channels;
        let k = b.conv.kernel_size;
        for (o, _) in keep.iter().enumerate().filter(|(_, &k)| !k) {
            b.conv.weight[o * cin * k..(o + 1) * cin * k].fill(T::zero());
            b.conv.bias[o] = T::zero();
            b.bn.gamma[o] = T::zero();
            b.bn.beta[o] = T::zero();
        }
    }
    out.prune_mask = Some(mask);
    Ok(out)
}

fn kept(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect()
}

/// Keeps output channels `outs` and input channels `ins` of a standard conv.
fn slice_conv<T: Real>(p: &ConvParams<T>, outs: &[usize], ins: &[usize]) -> ConvParams<T> {
    let k = p.kernel_size;
    let mut q = ConvParams::standard(ins.len(), outs.len(), k, p.dilation).with_padding(p.padding);
    for (no, &o) in outs.iter().enumerate() {
        q.bias[no] = p.bias[o];
        for (ni, &i) in ins.iter().enumerate() {
            q.weight[(no * ins.len() + ni) * k..][..k].copy_from_slice(p.kernel(o, i));
        }
    }
    q
}

fn slice_bn<T: Real>(p: &BatchNormParams<T>, keep: &[usize]) -> BatchNormParams<T> {
    let pick = |v: &[T]| keep.iter().map(|&c| v[c]).collect::<Vec<T>>();
    BatchNormParams {
        gamma: pick(&p.gamma),
        beta: pick(&p.beta),
        running_mean: pick(&p.running_mean),
        running_var: pick(&p.running_var),
        eps: p.eps,
        momentum: p.momentum,
    }
}

/// Physically removes masked channels. Downstream layers lose the matching
/// input channels; a removed channel's depthwise bias (the constant that
/// channel would still have fed forward) is folded into the next pointwise
/// bias, so outputs match the masked model.
pub fn compact<T: Real>(model: &TinyPpg<T>) -> Result<TinyPpg<T>> {
    let mask = model
        .prune_mask
        .as_ref()
        .ok_or_else(|| Error::state("model has no prune mask to compact"))?;
    let keeps: Vec<Vec<usize>> = mask.iter().map(|m| kept(m)).collect();
    if keeps.iter().any(Vec::is_empty) {
        return Err(Error::state("prune mask empties a layer"));
    }
    let mut blocks = Vec::with_capacity(model.blocks.len());
    let mut prev_keep: Vec<usize> = vec![0];
    let mut prev_width = 1;
    for (b, keep) in model.blocks.iter().zip(&keeps) {
        let (depthwise, conv) = match &b.depthwise {
            Some(dw) => {
                let mut ndw = ConvParams::depthwise(prev_keep.len(), dw.kernel_size, dw.dilation).with_padding(dw.padding);
                for (nc, &c) in prev_keep.iter().enumerate() {
                    ndw.weight[nc * dw.kernel_size..][..dw.kernel_size].copy_from_slice(dw.kernel(c, c));
                    ndw.bias[nc] = dw.bias[c];
                }
                let mut pw = slice_conv(&b.conv, keep, &prev_keep);
                let dropped: Vec<usize> = (0..prev_width).filter(|c| !prev_keep.contains(c)).collect();
                for (no, &o) in keep.iter().enumerate() {
                    for &c in &dropped {
                        pw.bias[no] += b.conv.kernel(o, c)[0] * dw.bias[c];
                    }
                }
                (Some(ndw), pw)
            }
            None => (None, slice_conv(&b.conv, keep, &prev_keep)),
        };
        blocks.push(DscBlock {
            depthwise,
            conv,
            bn: slice_bn(&b.bn, keep),
            pool: b.pool,
        });
        prev_width = b.out_channels();
        prev_keep = keep.clone();
    }
    let branches = model.branches.iter().map(|br| slice_conv(br, &[0], &prev_keep)).collect();
    let head = model.head.as_ref().map(|h| ProjectionHead {
        expand: slice_conv(&h.expand, &(0..h.expand.out_channels).collect::<Vec<_>>(), &prev_keep),
        ..h.clone()
    });
    let config = ModelConfig {
        dsc_specs: model
            .config
            .dsc_specs
            .iter()
            .zip(&keeps)
            .map(|(&(_, k), keep)| (keep.len(), k))
            .collect(),
        ..model.config.clone()
    };
    Ok(TinyPpg {
        config,
        blocks,
        branches,
        output_conv: model.output_conv.clone(),
        head,
        prune_mask: None,
        metadata: model.metadata.clone(),
    })
}

/// Retrains a pruned model through the regular training loop.
pub fn finetune(
    model: TinyPpg<f32>,
    train_set: &[SignalSegment],
    val_set: &[SignalSegment],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    train_with_progress(model, train_set, val_set, cfg, on_epoch)
}

#[cfg(test)]
mod tests;
