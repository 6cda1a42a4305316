//! Subject-independent splitting, the training loop, DICE evaluation and
//! embedding export.

mod export;
mod metrics;
mod split;

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use export::export_embeddings;
pub use metrics::{confusion, dice, evaluate, ConfusionCounts, EvalReport, SegmentScore};
pub use split::{split_subjects, val_count, SplitSpec, Splits};

use crate::data::SignalSegment;
use crate::error::{Error, Result};
use crate::loss::{total_loss, AnchorSampler, ContrastInputs, LossConfig, MemoryBank};
use crate::model::{save_model, segment_tensor, ModelGrads, TinyPpg};
use crate::nn::{AdamConfig, AdamState, Mode, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub epochs: usize,
    /// The learning rate halves every this many epochs.
    pub lr_halving_period: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Weight of the L1 penalty on feature-block batch-norm scales.
    pub l1_gamma_weight: f64,
    /// Threshold used for validation DICE.
    pub threshold: f32,
    /// Save a snapshot every this many epochs into `checkpoint_dir` (0 = never).
    pub checkpoint_period: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr0: 5e-4,
            epochs: 1000,
            lr_halving_period: 100,
            seed: 0,
            loss: LossConfig::default(),
            l1_gamma_weight: 1e-4,
            threshold: 0.5,
            checkpoint_period: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr0)));
        }
        if self.lr_halving_period == 0 {
            return Err(Error::config("learning-rate halving period must be at least 1"));
        }
        if !(self.l1_gamma_weight >= 0.0) {
            return Err(Error::config("L1 weight must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("threshold must be in [0, 1]"));
        }
        self.loss.validate()
    }
}

/// `lr0 * 0.5^floor(epoch / period)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = (epoch / cfg.lr_halving_period.max(1)).min(i32::MAX as usize) as i32;
    cfg.lr0 * 0.5f64.powi(halvings)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// `None` without a validation set.
    pub val_dice: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<EpochLog>,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch,lr,train_loss,val_dice";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let val = r.val_dice.map_or_else(String::new, |d| format!("{d:.6}"));
            let _ = writeln!(s, "{},{:e},{:.8},{}", r.epoch, r.lr, r.train_loss, val);
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation DICE (the last epoch
    /// when there is no validation set).
    pub model: TinyPpg<f32>,
    pub log: TrainLog,
    pub best_epoch: Option<usize>,
    pub best_val_dice: Option<f64>,
}

/// Batch shuffling and anchor sampling draw from separate streams derived
/// from the one training seed, so enabling the contrastive term does not
/// change the batch order.
fn streams(seed: u64) -> (ChaCha8Rng, AnchorSampler) {
    (ChaCha8Rng::seed_from_u64(seed), AnchorSampler::new(seed ^ 0x5a5a_5a5a_5a5a_5a5a))
}

pub fn train(model: TinyPpg<f32>, train_set: &[SignalSegment], val_set: &[SignalSegment], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(model, train_set, val_set, cfg, |_| {})
}

/// Adds `weight * sign(gamma)` to each feature-block gamma gradient,
/// skipping masked channels, and returns `weight * sum |gamma|`.
fn l1_penalty(model: &TinyPpg<f32>, grads: &mut ModelGrads<f32>, weight: f64) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    let w = weight as f32;
    let mut total = 0.0f64;
    for (bi, (b, g)) in model.blocks.iter().zip(grads.blocks.iter_mut()).enumerate() {
        for (c, (&gamma, dg)) in b.bn.gamma.iter().zip(g.bn.gamma.iter_mut()).enumerate() {
            if model.prune_mask.as_ref().is_some_and(|m| !m[bi][c]) {
                continue;
            }
            total += gamma.abs() as f64;
            if gamma != 0.0 {
                *dg += w * gamma.signum();
            }
        }
    }
    weight * total
}

/// Training loop with a per-epoch callback (used for progress output).
pub fn train_with_progress(
    mut model: TinyPpg<f32>,
    train_set: &[SignalSegment],
    val_set: &[SignalSegment],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    let contrast = cfg.loss.contrast_active();
    if contrast && !model.has_head() {
        return Err(Error::state("contrastive training needs a model with a projection head"));
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let (mut shuffle_rng, mut sampler) = streams(cfg.seed);
    let mut bank = (contrast && cfg.loss.bank_enabled).then(|| MemoryBank::<f32>::new(cfg.loss.bank_capacity));
    let mut adam = AdamState::<f32>::new(AdamConfig::default());
    let mut log = TrainLog::default();
    let mut best: Option<(usize, f64, TinyPpg<f32>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<Tensor<f32>> = batch.iter().map(|&i| segment_tensor(&train_set[i])).collect();
            let labels: Vec<&[u8]> = batch.iter().map(|&i| train_set[i].labels.as_slice()).collect();
            let cache = model.forward_cached(inputs, Mode::Train, contrast)?;
            let (loss, anchors) = if contrast {
                let emb = cache.embeddings().expect("head ran");
                let set = sampler.sample(cache.probs(), &labels, emb, &cfg.loss)?;
                let inputs = ContrastInputs {
                    anchors: &set,
                    bank: bank.as_ref(),
                    embeddings: emb,
                };
                (total_loss(cache.probs(), &labels, Some(inputs), &cfg.loss)?, Some(set))
            } else {
                (total_loss(cache.probs(), &labels, None, &cfg.loss)?, None)
            };
            if let (Some(bank), Some(set)) = (bank.as_mut(), anchors.as_ref()) {
                sampler.update_bank(bank, set, &cfg.loss);
            }
            let mut grads = model.backward(&cache, &loss.dprobs, loss.dembed.as_ref())?;
            let penalty = l1_penalty(&model, &mut grads, cfg.l1_gamma_weight);
            let batch_loss = loss.total as f64 + penalty;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: format!("loss is {batch_loss} (cross-entropy {})", loss.bce),
                });
            }
            if let Some((gi, _)) = grads
                .groups()
                .iter()
                .enumerate()
                .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: format!("non-finite gradient in parameter group {gi}"),
                });
            }
            adam.step(&mut model.params_mut(), &grads.groups(), lr);
            loss_sum += batch_loss * batch.len() as f64;
            step += 1;
        }
        let val_dice = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&model, val_set, cfg.threshold)?.dice)
        };
        let row = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            val_dice,
        };
        on_epoch(&row);
        log.rows.push(row);
        if let Some(d) = val_dice {
            if best.as_ref().is_none_or(|(_, b, _)| d > *b) {
                best = Some((epoch, d, model.clone()));
            }
        }
        if let (Some(dir), true) = (&cfg.checkpoint_dir, cfg.checkpoint_period > 0) {
            if (epoch + 1) % cfg.checkpoint_period == 0 {
                save_model(&model, dir.join(format!("epoch_{:05}.tpml", epoch + 1)))?;
            }
        }
    }
    Ok(match best {
        Some((epoch, d, m)) => TrainOutcome {
            model: m,
            log,
            best_epoch: Some(epoch),
            best_val_dice: Some(d),
        },
        None => TrainOutcome {
            model,
            log,
            best_epoch: None,
            best_val_dice: None,
        },
    })
}
