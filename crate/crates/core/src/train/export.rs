use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::SignalSegment;
use crate::error::{Error, Result};
use crate::model::TinyPpg;

/// Segments pushed through the head at once.
const CHUNK: usize = 32;

/// Writes `max_points` randomly chosen sample points (fewer if the data has
/// fewer) as CSV rows `subject_id,segment_index,position,label,e0..`.
pub fn export_embeddings(
    model: &TinyPpg<f32>,
    segments: &[SignalSegment],
    out_path: impl AsRef<Path>,
    max_points: usize,
    seed: u64,
) -> Result<usize> {
    let head = model
        .head
        .as_ref()
        .ok_or_else(|| Error::state("model has no projection head; train with the contrastive term to export embeddings"))?;
    if segments.is_empty() {
        return Err(Error::input("no segments to export"));
    }
    let len = segments[0].samples.len();
    if segments.iter().any(|s| s.samples.len() != len) {
        return Err(Error::input("segments differ in length"));
    }
    let total = segments.len() * len;
    let k = max_points.min(total);
    let mut picks: Vec<usize> = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), total, k).into_vec();
    picks.sort_unstable();

    let mut out = String::from("subject_id,segment_index,position,label");
    for d in 0..head.embed_dim() {
        let _ = write!(out, ",e{d}");
    }
    out.push('\n');
    let mut it = picks.iter().peekable();
    for (c, chunk) in segments.chunks(CHUNK).enumerate() {
        let first = c * CHUNK * len;
        let last = first + chunk.len() * len;
        if it.peek().is_none_or(|&&p| p >= last) {
            continue;
        }
        let (_, emb) = model.forward_with_embeddings(chunk)?;
        while let Some(&&p) = it.peek() {
            if p >= last {
                break;
            }
            it.next();
            let (n, t) = ((p - first) / len, (p - first) % len);
            let seg = &chunk[n];
            let _ = write!(out, "{},{},{},{}", seg.subject_id, seg.segment_index, t, seg.labels[t]);
            for v in emb.get(n, t) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    let path = out_path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(k)
}
