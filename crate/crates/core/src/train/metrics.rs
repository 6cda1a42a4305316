use std::fmt::Write as _;

use crate::data::SignalSegment;
use crate::error::{Error, Result};
use crate::model::TinyPpg;

/// Sample-point confusion counts; artifact is the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// Adds one thresholded prediction against its label.
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.true_pos += 1,
            (true, false) => self.false_pos += 1,
            (false, true) => self.false_neg += 1,
            (false, false) => self.true_neg += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }
}

/// `2TP / (2TP + FP + FN)`, or 1 when both masks are empty.
pub fn dice(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.true_pos + c.false_pos + c.false_neg;
    if denom == 0 {
        1.0
    } else {
        (2 * c.true_pos) as f64 / denom as f64
    }
}

/// Counts for one probability mask thresholded at `threshold` (inclusive).
pub fn confusion(probs: &[f32], labels: &[u8], threshold: f32) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&p, &y) in probs.iter().zip(labels) {
        c.record(p >= threshold, y != 0);
    }
    c
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentScore {
    pub subject_id: u16,
    pub segment_index: u32,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    /// DICE of the counts pooled over every evaluated sample point.
    pub dice: f64,
    pub per_segment: Vec<SegmentScore>,
}

impl EvalReport {
    pub fn from_predictions(segments: &[SignalSegment], probs: &[Vec<f32>], threshold: f32) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::input("no segments to evaluate"));
        }
        if segments.len() != probs.len() {
            return Err(Error::shape("prediction count differs from segment count"));
        }
        let mut counts = ConfusionCounts::default();
        let mut per_segment = Vec::with_capacity(segments.len());
        for (seg, p) in segments.iter().zip(probs) {
            if p.len() != seg.labels.len() {
                return Err(Error::shape("prediction length differs from label length"));
            }
            let c = confusion(p, &seg.labels, threshold);
            counts.merge(&c);
            per_segment.push(SegmentScore {
                subject_id: seg.subject_id,
                segment_index: seg.segment_index,
                dice: dice(&c),
            });
        }
        Ok(Self {
            counts,
            dice: dice(&counts),
            per_segment,
        })
    }

    /// Plain-text report: counts, overall DICE, then one line per segment.
    pub fn to_text(&self) -> String {
        let c = &self.counts;
        let mut s = String::new();
        let _ = writeln!(s, "segments\t{}", self.per_segment.len());
        let _ = writeln!(s, "tp\t{}", c.true_pos);
        let _ = writeln!(s, "fp\t{}", c.false_pos);
        let _ = writeln!(s, "fn\t{}", c.false_neg);
        let _ = writeln!(s, "tn\t{}", c.true_neg);
        let _ = writeln!(s, "dice\t{:.6}", self.dice);
        let _ = writeln!(s, "subject_id\tsegment_index\tdice");
        for p in &self.per_segment {
            let _ = writeln!(s, "{}\t{}\t{:.6}", p.subject_id, p.segment_index, p.dice);
        }
        s
    }
}

/// Eval-mode predictions for every segment, thresholded and pooled.
pub fn evaluate(model: &TinyPpg<f32>, segments: &[SignalSegment], threshold: f32) -> Result<EvalReport> {
    if segments.is_empty() {
        return Err(Error::input("no segments to evaluate"));
    }
    let probs = model.forward(segments)?;
    EvalReport::from_predictions(segments, &probs, threshold)
}
