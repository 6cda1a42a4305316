use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{minmax_normalize, SignalSegment, SEGMENT_LEN};
use crate::error::{Error, Result};

/// Parameters of the synthetic PPG generator used in place of a real corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_segments: usize,
    pub seed: u64,
    /// Range of the pulse fundamental in Hz.
    pub pulse_freq_range_hz: (f64, f64),
    /// Expected fraction of artifact samples.
    pub artifact_rate: f64,
    /// Burst length range in samples, inclusive.
    pub artifact_len_range_samples: (usize, usize),
    /// Segments are assigned to subjects in contiguous blocks; each subject
    /// has its own pulse rate and morphology.
    pub n_subjects: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_segments: 100,
            seed: 0,
            pulse_freq_range_hz: (0.9, 2.2),
            artifact_rate: 0.3,
            artifact_len_range_samples: (128, 640),
            n_subjects: 20,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let (f0, f1) = self.pulse_freq_range_hz;
        if !(f0 > 0.0 && f0 < f1 && f1 < 32.0) {
            return Err(Error::config(format!("pulse frequency range {f0}..{f1} Hz is degenerate")));
        }
        if !(0.0..=1.0).contains(&self.artifact_rate) {
            return Err(Error::config(format!("artifact rate {} outside [0, 1]", self.artifact_rate)));
        }
        let (l0, l1) = self.artifact_len_range_samples;
        if l0 == 0 || l0 > l1 || l1 > SEGMENT_LEN {
            return Err(Error::config(format!("artifact length range {l0}..{l1} is invalid")));
        }
        if self.n_subjects == 0 || self.n_subjects > u16::MAX as usize {
            return Err(Error::config("n_subjects must be in 1..=65535"));
        }
        Ok(())
    }
}

struct SubjectProfile {
    base_freq: f64,
    harmonics: [f64; 2],
    phases: [f64; 2],
    noise: f64,
}

fn profile(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> SubjectProfile {
    let (f0, f1) = cfg.pulse_freq_range_hz;
    SubjectProfile {
        base_freq: rng.random_range(f0..f1),
        harmonics: [rng.random_range(0.2..0.55), rng.random_range(0.05..0.25)],
        phases: [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)],
        noise: rng.random_range(0.01..0.05),
    }
}

/// Seeded synthetic segments: a quasi-periodic pulse (fundamental plus two
/// harmonics, slow rate and amplitude modulation) with artifact bursts made
/// of an amplitude jump, a random walk and a motion oscillation, and an exact
/// ground-truth mask. Each segment is min-max normalized.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<SignalSegment>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let profiles: Vec<SubjectProfile> = (0..cfg.n_subjects).map(|_| profile(&mut rng, cfg)).collect();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let (f_lo, f_hi) = cfg.pulse_freq_range_hz;
    let (len_lo, len_hi) = cfg.artifact_len_range_samples;
    let fs = super::SAMPLE_RATE_HZ as f64;

    let mut out = Vec::with_capacity(cfg.n_segments);
    let mut per_subject_index = vec![0u32; cfg.n_subjects];
    for seg in 0..cfg.n_segments {
        let subject = seg * cfg.n_subjects / cfg.n_segments.max(1);
        let prof = &profiles[subject];

        let freq = (prof.base_freq * rng.random_range(0.92..1.08)).clamp(f_lo, f_hi);
        let drift = rng.random_range(-0.1..0.1);
        let resp_freq = rng.random_range(0.15..0.35);
        let resp_depth = rng.random_range(0.05..0.2);
        let resp_phase = rng.random_range(0.0..TAU);
        let start_phase = rng.random_range(0.0..1.0);

        let mut phase = start_phase;
        let mut x = vec![0.0f64; SEGMENT_LEN];
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / fs;
            let f = freq * (1.0 + drift * (t / 30.0 - 0.5));
            phase += f / fs;
            let beat = TAU * phase;
            let wave = beat.sin()
                + prof.harmonics[0] * (2.0 * beat + prof.phases[0]).sin()
                + prof.harmonics[1] * (3.0 * beat + prof.phases[1]).sin();
            let am = 1.0 + resp_depth * (TAU * resp_freq * t + resp_phase).sin();
            *v = am * wave + prof.noise * unit.sample(&mut rng);
        }

        let mut labels = vec![0u8; SEGMENT_LEN];
        let target = if cfg.artifact_rate > 0.0 {
            (cfg.artifact_rate * SEGMENT_LEN as f64 * rng.random_range(0.5..1.5)).round() as usize
        } else {
            0
        };
        let mut covered = 0usize;
        while covered < target {
            let want = rng.random_range(len_lo..=len_hi);
            let len = want.min((target - covered).max(len_lo));
            let start = rng.random_range(0..=SEGMENT_LEN - len);
            let jump = rng.random_range(1.5..4.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let walk_sd = rng.random_range(0.05..0.2);
            let motion_amp = rng.random_range(0.3..1.5);
            let motion_freq = rng.random_range(0.5..4.0);
            let motion_phase = rng.random_range(0.0..TAU);
            let mut walk = 0.0;
            for i in start..start + len {
                walk += walk_sd * unit.sample(&mut rng);
                let t = (i - start) as f64 / fs;
                x[i] += jump + walk + motion_amp * (TAU * motion_freq * t + motion_phase).sin();
                if labels[i] == 0 {
                    labels[i] = 1;
                    covered += 1;
                }
            }
        }

        out.push(SignalSegment {
            subject_id: subject as u16,
            segment_index: per_subject_index[subject],
            samples: minmax_normalize(&x).into_iter().map(|v| v as f32).collect(),
            labels,
        });
        per_subject_index[subject] += 1;
    }
    Ok(out)
}
