use crate::error::{Error, Result};

/// Projection head widths, used only while training with the contrastive term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionConfig {
    pub hidden_channels: usize,
    pub embed_dim: usize,
    /// L2-normalize each embedding so inner products are cosine similarities.
    pub normalize: bool,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            hidden_channels: 128,
            embed_dim: 64,
            normalize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// `(out_channels, kernel_size)` of each feature block. Every block but
    /// the last halves the length with max pooling.
    pub dsc_specs: Vec<(usize, usize)>,
    /// Depthwise + pointwise blocks; `false` swaps in one standard
    /// convolution per block (the plain FCN baseline).
    pub separable: bool,
    /// Parallel dilated branches, one output channel each.
    pub aspp_rates: Vec<usize>,
    /// With the pyramid disabled a single undilated branch is used instead.
    pub aspp_enabled: bool,
    pub aspp_kernel: usize,
    pub head_upsample_factor: usize,
    pub final_conv_kernel: usize,
    pub projection: Option<ProjectionConfig>,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub input_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dsc_specs: vec![(32, 80), (64, 40), (128, 20), (512, 7)],
            separable: true,
            aspp_rates: vec![4, 8, 12, 16],
            aspp_enabled: true,
            aspp_kernel: 3,
            head_upsample_factor: 8,
            final_conv_kernel: 3,
            projection: None,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            input_len: crate::data::SEGMENT_LEN,
        }
    }
}

impl ModelConfig {
    /// Default architecture with the training-time projection head attached.
    pub fn with_projection() -> Self {
        Self {
            projection: Some(ProjectionConfig::default()),
            ..Self::default()
        }
    }

    pub const BLOCKS: usize = 4;

    pub fn pooled_blocks(&self) -> usize {
        self.dsc_specs.len().saturating_sub(1)
    }

    /// Length at the pyramid, `input_len / 2^pools`.
    pub fn feature_len(&self) -> usize {
        self.input_len >> self.pooled_blocks()
    }

    /// Dilation of each branch actually built.
    pub fn branch_rates(&self) -> Vec<usize> {
        if self.aspp_enabled {
            self.aspp_rates.clone()
        } else {
            vec![1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dsc_specs.len() != Self::BLOCKS {
            return Err(Error::config(format!(
                "expected exactly {} feature blocks, got {}",
                Self::BLOCKS,
                self.dsc_specs.len()
            )));
        }
        if self.dsc_specs.iter().any(|&(c, k)| c == 0 || k == 0) {
            return Err(Error::config("feature blocks need positive channel counts and kernels"));
        }
        let pools = self.pooled_blocks();
        if self.input_len == 0 || self.input_len % (1 << pools) != 0 {
            return Err(Error::config(format!(
                "input length {} is not divisible by 2^{pools}",
                self.input_len
            )));
        }
        if self.head_upsample_factor != 1 << pools {
            return Err(Error::config(format!(
                "upsampling factor {} does not undo {pools} poolings",
                self.head_upsample_factor
            )));
        }
        if self.aspp_enabled && self.aspp_rates.is_empty() {
            return Err(Error::config("pyramid enabled without any rates"));
        }
        if self.aspp_rates.iter().any(|&r| r == 0) || self.aspp_kernel == 0 || self.final_conv_kernel == 0 {
            return Err(Error::config("kernel sizes and dilation rates must be >= 1"));
        }
        if let Some(p) = &self.projection {
            if p.hidden_channels == 0 || p.embed_dim == 0 {
                return Err(Error::config("projection widths must be positive"));
            }
        }
        if !(self.bn_eps > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::config("batch-norm eps must be > 0 and momentum in (0, 1)"));
        }
        Ok(())
    }

    /// `(channels, length)` after each stage: the four blocks, the
    /// concatenated pyramid, then the model output.
    pub fn shape_chain(&self) -> Vec<(usize, usize)> {
        let mut len = self.input_len;
        let mut chain = Vec::new();
        for (i, &(c, _)) in self.dsc_specs.iter().enumerate() {
            if i + 1 < self.dsc_specs.len() {
                len /= 2;
            }
            chain.push((c, len));
        }
        chain.push((self.branch_rates().len(), len));
        chain.push((1, self.input_len));
        chain
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_chain() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(
            cfg.shape_chain(),
            vec![(32, 960), (64, 480), (128, 240), (512, 240), (4, 240), (1, 1920)]
        );
    }

    #[test]
    fn three_blocks_rejected() {
        let cfg = ModelConfig {
            dsc_specs: vec![(32, 80), (64, 40), (128, 20)],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn bad_lengths_rejected() {
        let cfg = ModelConfig {
            input_len: 1921,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            head_upsample_factor: 4,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
