//! Training objectives: per-sample cross-entropy plus an optional supervised
//! contrastive term over sampled embeddings, with a FIFO memory bank.

mod anchors;
mod bce;
mod contrastive;

use std::fmt;
use std::str::FromStr;

pub use anchors::{AnchorEntry, AnchorSampler, AnchorSet, BankEntry, Hardness, MemoryBank, PointClass, QuotaCounts};
pub use bce::{bce_loss, PROB_CLAMP};
pub use contrastive::contrastive_loss;

use crate::error::{Error, Result};
use crate::model::{EmbeddingGrads, Embeddings};
use crate::nn::{Real, Tensor};

/// Which classes may supply anchors for the contrastive term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ContrastStrategy {
    #[default]
    Both,
    ArtifactOnly,
    CleanOnly,
    Off,
}

impl FromStr for ContrastStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Self::Both),
            "artifact" | "artifact_only" => Ok(Self::ArtifactOnly),
            "clean" | "clean_only" => Ok(Self::CleanOnly),
            "off" => Ok(Self::Off),
            other => Err(Error::config(format!(
                "unknown contrastive strategy {other:?} (expected off, both, artifact or clean)"
            ))),
        }
    }
}

impl fmt::Display for ContrastStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Both => "both",
            Self::ArtifactOnly => "artifact",
            Self::CleanOnly => "clean",
            Self::Off => "off",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the contrastive term.
    pub lambda: f64,
    /// Temperature of the contrastive softmax.
    pub tau: f64,
    pub strategy: ContrastStrategy,
    pub bank_enabled: bool,
    /// Per-class queue length.
    pub bank_capacity: usize,
    pub bank_insert_per_batch: usize,
    pub anchors_per_batch: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            tau: 0.1,
            strategy: ContrastStrategy::Both,
            bank_enabled: false,
            bank_capacity: 1000,
            bank_insert_per_batch: 50,
            anchors_per_batch: 200,
        }
    }
}

impl LossConfig {
    /// Cross-entropy only.
    pub fn bce_only() -> Self {
        Self {
            lambda: 0.0,
            strategy: ContrastStrategy::Off,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Whether the contrastive term contributes at all. When it does not,
    /// training skips the projection head and anchor sampling entirely.
    pub fn contrast_active(&self) -> bool {
        self.lambda > 0.0 && self.strategy != ContrastStrategy::Off
    }
}

/// Inputs of the contrastive term for one batch.
pub struct ContrastInputs<'a, T: Real = f32> {
    pub anchors: &'a AnchorSet<T>,
    pub bank: Option<&'a MemoryBank<T>>,
    pub embeddings: &'a Embeddings<T>,
}

#[derive(Clone, Debug)]
pub struct TotalLoss<T: Real = f32> {
    pub total: T,
    pub bce: T,
    pub contrastive: Option<T>,
    pub dprobs: Vec<Tensor<T>>,
    /// Gradient with respect to the embeddings, already scaled by lambda.
    pub dembed: Option<EmbeddingGrads<T>>,
}

/// Cross-entropy plus `lambda` times the contrastive term. With the
/// contrastive term inactive the result is exactly the cross-entropy.
pub fn total_loss<T: Real, L: AsRef<[u8]>>(
    probs: &[Tensor<T>],
    labels: &[L],
    contrast: Option<ContrastInputs<'_, T>>,
    cfg: &LossConfig,
) -> Result<TotalLoss<T>> {
    cfg.validate()?;
    let (bce, dprobs) = bce_loss(probs, labels)?;
    if !cfg.contrast_active() {
        return Ok(TotalLoss {
            total: bce,
            bce,
            contrastive: None,
            dprobs,
            dembed: None,
        });
    }
    let c = contrast.ok_or_else(|| Error::state("contrastive term enabled but no embeddings were computed"))?;
    let bank = if cfg.bank_enabled { c.bank } else { None };
    let (cl, grads) = contrastive_loss(c.anchors, bank, cfg.tau)?;
    let lambda = T::lit(cfg.lambda);
    let mut dembed = EmbeddingGrads::zeros_like(c.embeddings);
    for (e, g) in c.anchors.entries.iter().zip(&grads) {
        let scaled: Vec<T> = g.iter().map(|&v| v * lambda).collect();
        dembed.add(e.segment, e.position, &scaled);
    }
    Ok(TotalLoss {
        total: bce + lambda * cl,
        bce,
        contrastive: Some(cl),
        dprobs,
        dembed: Some(dembed),
    })
}

#[cfg(test)]
mod tests;
