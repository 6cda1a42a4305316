//! Turning PPG recordings (or a synthetic generator) into normalized,
//! labeled 30-second segments, and the on-disk dataset format.

mod dataset;
mod filter;
mod segment;
mod synth;

pub use dataset::{
    decode_dataset, encode_dataset, load_dataset, read_raw_dump, read_raw_samples, save_dataset,
    write_raw_dump, DATASET_MAGIC, DATASET_VERSION,
};
pub use filter::{bandpass_filter, design_bandpass, FilterSpec, SecondOrderSection};
pub use segment::{minmax_normalize, minmax_normalize_inplace, segment_and_normalize};
pub use synth::{generate_synthetic, SyntheticConfig};
pub(crate) use dataset::Reader;

/// Sampling rate the whole pipeline assumes.
pub const SAMPLE_RATE_HZ: u16 = 64;
/// 30 s at 64 Hz.
pub const SEGMENT_LEN: usize = 1920;

use crate::error::{Error, Result};

/// A continuous recording from one subject with per-sample artifact labels
/// (1 = artifact).
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub subject_id: u16,
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
    pub labels: Vec<u8>,
    pub activity: Option<Vec<u8>>,
}

impl RawRecording {
    pub fn new(subject_id: u16, sample_rate_hz: f64, samples: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let rec = Self {
            subject_id,
            sample_rate_hz,
            samples,
            labels,
            activity: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::config(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.samples.len() != self.labels.len() {
            return Err(Error::input(format!(
                "recording has {} samples but {} labels",
                self.samples.len(),
                self.labels.len()
            )));
        }
        if let Some(i) = self.labels.iter().position(|&l| l > 1) {
            return Err(Error::input(format!("label {} at sample {i} is not 0/1", self.labels[i])));
        }
        if let Some(act) = &self.activity {
            if act.len() != self.samples.len() {
                return Err(Error::input("activity track length differs from samples"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One 30-second window: min-max normalized samples and per-sample labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalSegment {
    pub subject_id: u16,
    pub segment_index: u32,
    pub samples: Vec<f32>,
    pub labels: Vec<u8>,
}

impl SignalSegment {
    pub fn validate(&self) -> Result<()> {
        if self.samples.len() != SEGMENT_LEN || self.labels.len() != SEGMENT_LEN {
            return Err(Error::shape(format!(
                "segment {} has {} samples and {} labels, expected {SEGMENT_LEN}",
                self.segment_index,
                self.samples.len(),
                self.labels.len()
            )));
        }
        if self.labels.iter().any(|&l| l > 1) {
            return Err(Error::input(format!("segment {} has non-binary labels", self.segment_index)));
        }
        Ok(())
    }

    pub fn artifact_fraction(&self) -> f64 {
        self.labels.iter().map(|&l| l as f64).sum::<f64>() / self.labels.len().max(1) as f64
    }
}
