use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::SignalSegment;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_subject_ids: Vec<u16>,
    pub test_subject_ids: Vec<u16>,
    /// Share of the training pool held out for validation, drawn per segment.
    pub val_fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<SignalSegment>,
    pub val: Vec<SignalSegment>,
    pub test: Vec<SignalSegment>,
}

/// Number of validation segments for a pool of `pool` (round half up).
pub fn val_count(pool: usize, fraction: f64) -> usize {
    ((pool as f64 * fraction) + 0.5).floor() as usize
}

/// Subject-independent split. Segments whose subject is in neither list
/// are dropped; validation is a seeded random subset of the training pool.
pub fn split_subjects(dataset: &[SignalSegment], spec: &SplitSpec) -> Result<Splits> {
    if !(0.0..1.0).contains(&spec.val_fraction) {
        return Err(Error::config(format!(
            "validation fraction must be in [0, 1), got {}",
            spec.val_fraction
        )));
    }
    let train_ids: HashSet<u16> = spec.train_subject_ids.iter().copied().collect();
    let test_ids: HashSet<u16> = spec.test_subject_ids.iter().copied().collect();
    if let Some(id) = train_ids.intersection(&test_ids).min() {
        return Err(Error::config(format!("subject {id} is listed for both training and testing")));
    }
    let mut pool = Vec::new();
    let mut test = Vec::new();
    for seg in dataset {
        if train_ids.contains(&seg.subject_id) {
            pool.push(seg.clone());
        } else if test_ids.contains(&seg.subject_id) {
            test.push(seg.clone());
        }
    }
    let n_val = val_count(pool.len(), spec.val_fraction);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let val_set: HashSet<usize> = order[..n_val].iter().copied().collect();
    let mut train = Vec::with_capacity(pool.len() - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (i, seg) in pool.into_iter().enumerate() {
        if val_set.contains(&i) {
            val.push(seg);
        } else {
            train.push(seg);
        }
    }
    Ok(Splits { train, val, test })
}
