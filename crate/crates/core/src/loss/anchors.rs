use std::collections::{HashSet, VecDeque};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ContrastStrategy, LossConfig};
use crate::error::{Error, Result};
use crate::model::Embeddings;
use crate::nn::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PointClass {
    Artifact,
    Clean,
}

impl PointClass {
    pub fn from_label(label: u8) -> Self {
        if label != 0 {
            PointClass::Artifact
        } else {
            PointClass::Clean
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hardness {
    Easy,
    Hard,
}

/// One sampled sample point with a detached copy of its embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorEntry<T: Real = f32> {
    /// Unique across every set drawn by the same sampler.
    pub id: u64,
    pub segment: usize,
    pub position: usize,
    pub class: PointClass,
    pub hardness: Hardness,
    /// Whether the entry acts as an anchor under the configured strategy.
    /// Every entry serves as a positive or negative for the others.
    pub is_anchor: bool,
    pub embedding: Vec<T>,
}

/// How the sampled entries were obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QuotaCounts {
    pub easy: usize,
    /// Clean points predicted as artifact.
    pub false_artifact: usize,
    /// Artifact points predicted as clean.
    pub missed_artifact: usize,
    /// Uniform draws that topped up under-filled quotas.
    pub fill: usize,
}

impl QuotaCounts {
    pub fn total(&self) -> usize {
        self.easy + self.false_artifact + self.missed_artifact + self.fill
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet<T: Real = f32> {
    pub entries: Vec<AnchorEntry<T>>,
    pub counts: QuotaCounts,
}

impl<T: Real> AnchorSet<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn anchors(&self) -> impl Iterator<Item = &AnchorEntry<T>> {
        self.entries.iter().filter(|e| e.is_anchor)
    }

    /// Same selection with embeddings re-read from `emb`.
    pub fn with_embeddings(&self, emb: &Embeddings<T>) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.embedding = emb.get(e.segment, e.position);
        }
        out
    }
}

/// Draws anchor sets and feeds the memory bank from one seeded stream.
#[derive(Clone, Debug)]
pub struct AnchorSampler {
    rng: ChaCha8Rng,
    next_id: u64,
}

impl AnchorSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_id: 0,
        }
    }

    /// Samples `anchors_per_batch` points pooled over the whole batch: half
    /// correctly predicted, a quarter clean points predicted as artifact and
    /// a quarter artifact points predicted as clean. Short quotas are filled
    /// uniformly from the unused points of the batch.
    pub fn sample<T: Real, L: AsRef<[u8]>>(
        &mut self,
        probs: &[Tensor<T>],
        labels: &[L],
        emb: &Embeddings<T>,
        cfg: &LossConfig,
    ) -> Result<AnchorSet<T>> {
        if probs.is_empty() {
            return Err(Error::input("cannot sample anchors from an empty batch"));
        }
        if probs.len() != labels.len() || emb.batch_len() != probs.len() {
            return Err(Error::shape("predictions, labels and embeddings disagree on batch size"));
        }
        let len = probs[0].values().len();
        if probs.iter().any(|p| p.values().len() != len)
            || labels.iter().any(|l| l.as_ref().len() != len)
            || emb.positions() != len
        {
            return Err(Error::shape("anchor sampling needs equal-length segments"));
        }
        let half = T::lit(0.5);
        let mut easy = Vec::new();
        let mut false_artifact = Vec::new();
        let mut missed_artifact = Vec::new();
        for (n, (p, y)) in probs.iter().zip(labels).enumerate() {
            for (t, (&pv, &yv)) in p.values().iter().zip(y.as_ref()).enumerate() {
                let flat = n * len + t;
                match (pv >= half, yv != 0) {
                    (a, b) if a == b => easy.push(flat),
                    (true, false) => false_artifact.push(flat),
                    _ => missed_artifact.push(flat),
                }
            }
        }
        let total_points = probs.len() * len;
        let want = cfg.anchors_per_batch.min(total_points);
        let q_easy = cfg.anchors_per_batch / 2;
        let q_fa = (cfg.anchors_per_batch - q_easy) / 2;
        let q_ma = cfg.anchors_per_batch - q_easy - q_fa;

        let mut picked: Vec<(usize, Hardness)> = Vec::with_capacity(want);
        let mut counts = QuotaCounts::default();
        for (pool, quota, hardness, slot) in [
            (&easy, q_easy, Hardness::Easy, &mut counts.easy),
            (&false_artifact, q_fa, Hardness::Hard, &mut counts.false_artifact),
            (&missed_artifact, q_ma, Hardness::Hard, &mut counts.missed_artifact),
        ] {
            let k = quota.min(pool.len());
            for i in index::sample(&mut self.rng, pool.len(), k) {
                picked.push((pool[i], hardness));
            }
            *slot = k;
        }
        if picked.len() < want {
            let mut used: HashSet<usize> = picked.iter().map(|&(f, _)| f).collect();
            let need = want - picked.len();
            let free = total_points - used.len();
            if need * 2 >= free {
                // Dense case: enumerate the free points explicitly.
                let pool: Vec<usize> = (0..total_points).filter(|f| !used.contains(f)).collect();
                for i in index::sample(&mut self.rng, pool.len(), need) {
                    picked.push((pool[i], Hardness::Easy));
                }
            } else {
                while picked.len() < want {
                    let f = self.rng.random_range(0..total_points);
                    if used.insert(f) {
                        picked.push((f, Hardness::Easy));
                    }
                }
            }
            counts.fill = need;
            for (f, h) in picked.iter_mut().rev().take(need) {
                let (n, t) = (*f / len, *f % len);
                let correct = (probs[n].values()[t] >= half) == (labels[n].as_ref()[t] != 0);
                *h = if correct { Hardness::Easy } else { Hardness::Hard };
            }
        }
        let entries = picked
            .into_iter()
            .map(|(f, hardness)| {
                let (n, t) = (f / len, f % len);
                let class = PointClass::from_label(labels[n].as_ref()[t]);
                let id = self.next_id;
                self.next_id += 1;
                AnchorEntry {
                    id,
                    segment: n,
                    position: t,
                    class,
                    hardness,
                    is_anchor: cfg.strategy.allows(class),
                    embedding: emb.get(n, t),
                }
            })
            .collect();
        Ok(AnchorSet { entries, counts })
    }

    /// Moves `bank_insert_per_batch` random entries of `set` into `bank`.
    pub fn update_bank<T: Real>(&mut self, bank: &mut MemoryBank<T>, set: &AnchorSet<T>, cfg: &LossConfig) {
        bank.update(set, cfg.bank_insert_per_batch, &mut self.rng);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankEntry<T: Real = f32> {
    pub id: u64,
    pub embedding: Vec<T>,
}

/// Per-class FIFO queues of detached embeddings from earlier batches. Bank
/// entries extend positives and negatives but are never anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank<T: Real = f32> {
    capacity: usize,
    artifact: VecDeque<BankEntry<T>>,
    clean: VecDeque<BankEntry<T>>,
}

impl<T: Real> MemoryBank<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            artifact: VecDeque::with_capacity(capacity),
            clean: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn queue(&self, class: PointClass) -> &VecDeque<BankEntry<T>> {
        match class {
            PointClass::Artifact => &self.artifact,
            PointClass::Clean => &self.clean,
        }
    }

    pub fn len(&self) -> usize {
        self.artifact.len() + self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends one entry, evicting the oldest of its class beyond capacity.
    pub fn push(&mut self, class: PointClass, entry: BankEntry<T>) {
        if self.capacity == 0 {
            return;
        }
        let q = match class {
            PointClass::Artifact => &mut self.artifact,
            PointClass::Clean => &mut self.clean,
        };
        q.push_back(entry);
        while q.len() > self.capacity {
            q.pop_front();
        }
    }

    /// Inserts `count` entries drawn without replacement from `set`.
    pub fn update<R: Rng + ?Sized>(&mut self, set: &AnchorSet<T>, count: usize, rng: &mut R) {
        let k = count.min(set.len());
        for i in index::sample(rng, set.len(), k) {
            let e = &set.entries[i];
            self.push(
                e.class,
                BankEntry {
                    id: e.id,
                    embedding: e.embedding.clone(),
                },
            );
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (PointClass, &BankEntry<T>)> {
        self.artifact
            .iter()
            .map(|e| (PointClass::Artifact, e))
            .chain(self.clean.iter().map(|e| (PointClass::Clean, e)))
    }
}

impl ContrastStrategy {
    /// Whether points of `class` may act as anchors.
    pub fn allows(self, class: PointClass) -> bool {
        match self {
            ContrastStrategy::Both => true,
            ContrastStrategy::ArtifactOnly => class == PointClass::Artifact,
            ContrastStrategy::CleanOnly => class == PointClass::Clean,
            ContrastStrategy::Off => false,
        }
    }
}
