use super::{RawRecording, SignalSegment, SAMPLE_RATE_HZ, SEGMENT_LEN};
use crate::error::{Error, Result};
use crate::nn::Real;

/// `(x - min) / (max - min)` elementwise; a constant input maps to zeros.
pub fn minmax_normalize<T: Real>(samples: &[T]) -> Vec<T> {
    let mut out = samples.to_vec();
    minmax_normalize_inplace(&mut out);
    out
}

pub fn minmax_normalize_inplace<T: Real>(x: &mut [T]) {
    let (lo, hi) = x
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > T::zero()) {
        x.fill(T::zero());
        return;
    }
    for v in x.iter_mut() {
        *v = (*v - lo) / range;
    }
}

/// Cuts a (filtered) 64 Hz recording into consecutive non-overlapping
/// 1920-sample windows, drops the trailing remainder and min-max normalizes
/// each window on its own.
pub fn segment_and_normalize(rec: &RawRecording) -> Result<Vec<SignalSegment>> {
    rec.validate()?;
    if rec.sample_rate_hz != SAMPLE_RATE_HZ as f64 {
        return Err(Error::config(format!(
            "segmentation expects {SAMPLE_RATE_HZ} Hz recordings, got {} Hz",
            rec.sample_rate_hz
        )));
    }
    Ok(rec
        .samples
        .chunks_exact(SEGMENT_LEN)
        .zip(rec.labels.chunks_exact(SEGMENT_LEN))
        .enumerate()
        .map(|(i, (s, l))| SignalSegment {
            subject_id: rec.subject_id,
            segment_index: i as u32,
            samples: minmax_normalize(s).into_iter().map(|v| v as f32).collect(),
            labels: l.to_vec(),
        })
        .collect())
}
