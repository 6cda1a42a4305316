use super::*;
use crate::model::{ModelConfig, ProjectionConfig, TinyPpg};
use crate::nn::Mode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

fn embeddings(batch: usize, len: usize, dim: usize, seed: u64) -> Embeddings<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = (0..batch)
        .map(|_| Tensor::from_vec(dim, len, (0..dim * len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    Embeddings::from_base(base, 1).unwrap()
}

fn row(v: Vec<f64>) -> Tensor<f64> {
    Tensor::from_row(v).unwrap()
}

/// Builds a batch with exact category sizes: `easy` correct points, `fa`
/// clean-predicted-artifact and `ma` artifact-predicted-clean points.
fn constructed_batch(easy: usize, fa: usize, ma: usize) -> (Vec<Tensor<f64>>, Vec<Vec<u8>>) {
    let mut p = Vec::new();
    let mut y = Vec::new();
    for i in 0..easy {
        if i % 2 == 0 {
            p.push(0.9);
            y.push(1);
        } else {
            p.push(0.1);
            y.push(0);
        }
    }
    p.extend(std::iter::repeat_n(0.8, fa));
    y.extend(std::iter::repeat_n(0u8, fa));
    p.extend(std::iter::repeat_n(0.3, ma));
    y.extend(std::iter::repeat_n(1u8, ma));
    // Two segments of equal length.
    let half = p.len() / 2;
    (
        vec![row(p[..half].to_vec()), row(p[half..].to_vec())],
        vec![y[..half].to_vec(), y[half..].to_vec()],
    )
}

/// Brute-force category of every sampled entry.
fn categorize(set: &AnchorSet<f64>, probs: &[Tensor<f64>], labels: &[Vec<u8>]) -> (usize, usize, usize) {
    let mut c = (0, 0, 0);
    for e in &set.entries {
        let p = probs[e.segment].values()[e.position] >= 0.5;
        let y = labels[e.segment][e.position] != 0;
        match (p, y) {
            (a, b) if a == b => c.0 += 1,
            (true, false) => c.1 += 1,
            _ => c.2 += 1,
        }
    }
    c
}

#[test]
fn exact_quotas_when_every_category_is_large() {
    let (probs, labels) = constructed_batch(300, 120, 130);
    let emb = embeddings(2, probs[0].length(), 4, 1);
    let cfg = LossConfig::default();
    let set = AnchorSampler::new(3).sample(&probs, &labels, &emb, &cfg).unwrap();
    assert_eq!(set.len(), 200);
    assert_eq!(categorize(&set, &probs, &labels), (100, 50, 50));
    assert_eq!(
        set.counts,
        QuotaCounts {
            easy: 100,
            false_artifact: 50,
            missed_artifact: 50,
            fill: 0
        }
    );
    let unique: HashSet<_> = set.entries.iter().map(|e| (e.segment, e.position)).collect();
    assert_eq!(unique.len(), 200);
}

#[test]
fn all_correct_batch_fills_with_random_points() {
    let (probs, labels) = constructed_batch(500, 0, 0);
    let emb = embeddings(2, 250, 4, 1);
    let set = AnchorSampler::new(5).sample(&probs, &labels, &emb, &LossConfig::default()).unwrap();
    assert_eq!(set.counts.easy, 100);
    assert_eq!(set.counts.false_artifact + set.counts.missed_artifact, 0);
    assert_eq!(set.counts.fill, 100);
    assert_eq!(set.len(), 200);
    assert!(set.entries.iter().all(|e| e.hardness == Hardness::Easy));
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let (probs, labels) = constructed_batch(150, 40, 70);
    let emb = embeddings(2, 130, 4, 2);
    let cfg = LossConfig::default();
    let a = AnchorSampler::new(8).sample(&probs, &labels, &emb, &cfg).unwrap();
    let b = AnchorSampler::new(8).sample(&probs, &labels, &emb, &cfg).unwrap();
    assert_eq!(a, b);
    let c = AnchorSampler::new(9).sample(&probs, &labels, &emb, &cfg).unwrap();
    assert_ne!(a, c);
}

#[test]
fn tiny_batches_use_every_point() {
    let (probs, labels) = constructed_batch(10, 4, 6);
    let emb = embeddings(2, 10, 3, 2);
    let set = AnchorSampler::new(1).sample(&probs, &labels, &emb, &LossConfig::default()).unwrap();
    assert_eq!(set.len(), 20);
    assert_eq!(set.counts.total(), 20);
}

#[test]
fn strategies_restrict_anchor_classes() {
    let (probs, labels) = constructed_batch(300, 120, 130);
    let emb = embeddings(2, 275, 4, 1);
    for (strategy, banned) in [
        (ContrastStrategy::ArtifactOnly, PointClass::Clean),
        (ContrastStrategy::CleanOnly, PointClass::Artifact),
    ] {
        let cfg = LossConfig { strategy, ..LossConfig::default() };
        let set = AnchorSampler::new(2).sample(&probs, &labels, &emb, &cfg).unwrap();
        assert_eq!(set.len(), 200);
        assert!(set.anchors().all(|e| e.class != banned));
        assert!(set.anchors().count() > 0);
        assert!(set.entries.iter().any(|e| e.class == banned));
    }
}

#[test]
fn empty_batch_is_input_error() {
    let emb = embeddings(1, 4, 2, 0);
    let err = AnchorSampler::new(0)
        .sample::<f64, Vec<u8>>(&[], &[], &emb, &LossConfig::default())
        .unwrap_err();
    assert!(matches!(err, Error::Input(_)));
}

#[test]
fn fifo_eviction_drops_the_oldest() {
    let mut bank = MemoryBank::<f64>::new(1000);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut next = 0u64;
    for _ in 0..25 {
        let entries = (0..50)
            .map(|_| {
                next += 1;
                AnchorEntry {
                    id: next - 1,
                    segment: 0,
                    position: 0,
                    class: PointClass::Artifact,
                    hardness: Hardness::Easy,
                    is_anchor: true,
                    embedding: vec![0.0; 2],
                }
            })
            .collect();
        bank.update(&AnchorSet { entries, counts: QuotaCounts::default() }, 50, &mut rng);
    }
    let q = bank.queue(PointClass::Artifact);
    assert_eq!(q.len(), 1000);
    assert!(q.iter().all(|e| e.id >= 250));
    assert_eq!(bank.queue(PointClass::Clean).len(), 0);
}

#[test]
fn bank_entries_never_become_anchors() {
    let mut sampler = AnchorSampler::new(4);
    let mut bank = MemoryBank::new(100);
    let cfg = LossConfig { bank_enabled: true, ..LossConfig::default() };
    let mut banked: HashSet<u64> = HashSet::new();
    for step in 0..3 {
        let (probs, labels) = constructed_batch(300, 120, 130);
        let emb = embeddings(2, 275, 4, step);
        let set = sampler.sample(&probs, &labels, &emb, &cfg).unwrap();
        for e in set.anchors() {
            assert!(!banked.contains(&e.id));
        }
        sampler.update_bank(&mut bank, &set, &cfg);
        banked.extend(bank.iter().map(|(_, e)| e.id));
    }
    assert_eq!(bank.len(), 150);
}

#[test]
fn lambda_zero_is_exactly_bce() {
    let (probs, labels) = constructed_batch(30, 10, 10);
    let emb = embeddings(2, 25, 4, 1);
    let set = AnchorSampler::new(1).sample(&probs, &labels, &emb, &LossConfig::default()).unwrap();
    let (bce, _) = bce_loss(&probs, &labels).unwrap();
    let cfg = LossConfig { lambda: 0.0, ..LossConfig::default() };
    let inputs = ContrastInputs { anchors: &set, bank: None, embeddings: &emb };
    let t = total_loss(&probs, &labels, Some(inputs), &cfg).unwrap();
    assert_eq!(t.total.to_bits(), bce.to_bits());
    assert!(t.dembed.is_none());
    let off = LossConfig { strategy: ContrastStrategy::Off, ..LossConfig::default() };
    assert_eq!(total_loss(&probs, &labels, None, &off).unwrap().total.to_bits(), bce.to_bits());
}

#[test]
fn weighted_sum_arithmetic() {
    let bce = 0.5f64;
    let cl = 0.7f64;
    assert!((bce + 0.1 * cl - 0.57).abs() < 1e-12);
}

#[test]
fn strategy_parsing() {
    assert_eq!("artifact".parse::<ContrastStrategy>().unwrap(), ContrastStrategy::ArtifactOnly);
    assert_eq!("off".parse::<ContrastStrategy>().unwrap(), ContrastStrategy::Off);
    assert!("sometimes".parse::<ContrastStrategy>().unwrap_err().is_config());
    assert!(LossConfig { tau: 0.0, ..LossConfig::default() }.validate().unwrap_err().is_config());
}

fn tiny_model() -> TinyPpg<f64> {
    let cfg = ModelConfig {
        dsc_specs: vec![(3, 5), (4, 3), (5, 3), (6, 3)],
        separable: true,
        aspp_rates: vec![1, 2],
        aspp_enabled: true,
        aspp_kernel: 3,
        head_upsample_factor: 8,
        final_conv_kernel: 3,
        projection: Some(ProjectionConfig { hidden_channels: 5, embed_dim: 4, normalize: true }),
        bn_eps: 1e-5,
        bn_momentum: 0.1,
        input_len: 64,
    };
    TinyPpg::build(cfg, 17).unwrap()
}

#[test]
fn head_weight_gradient_combines_both_paths() {
    let model = tiny_model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<Tensor<f64>> = (0..2).map(|_| row((0..64).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
    let labels: Vec<Vec<u8>> = (0..2).map(|_| (0..64).map(|t| u8::from((t / 10) % 2 == 0)).collect()).collect();
    let cfg = LossConfig { anchors_per_batch: 24, tau: 0.5, ..LossConfig::default() };

    let mut m = model.clone();
    let cache = m.forward_cached(xs.clone(), Mode::Train, true).unwrap();
    let emb = cache.embeddings().unwrap().clone();
    let set = AnchorSampler::new(6).sample(cache.probs(), &labels, &emb, &cfg).unwrap();
    let inputs = ContrastInputs { anchors: &set, bank: None, embeddings: &emb };
    let t = total_loss(cache.probs(), &labels, Some(inputs), &cfg).unwrap();
    let g_total = m.backward(&cache, &t.dprobs, t.dembed.as_ref()).unwrap();

    let zero_probs: Vec<Tensor<f64>> = cache.probs().iter().map(|p| Tensor::zeros(1, p.length())).collect();
    let (_, cgrads) = contrastive_loss(&set, None, cfg.tau).unwrap();
    let mut de = EmbeddingGrads::zeros_like(&emb);
    for (e, g) in set.entries.iter().zip(&cgrads) {
        de.add(e.segment, e.position, g);
    }
    let g_con = m.backward(&cache, &zero_probs, Some(&de)).unwrap();
    let zero_emb = EmbeddingGrads::zeros_like(&emb);
    let g_bce = m.backward(&cache, &t.dprobs, Some(&zero_emb)).unwrap();

    let loss_at = |model: &TinyPpg<f64>| -> f64 {
        let mut m = model.clone();
        let c = m.forward_cached(xs.clone(), Mode::Train, true).unwrap();
        let fixed = set.with_embeddings(c.embeddings().unwrap());
        let inputs = ContrastInputs { anchors: &fixed, bank: None, embeddings: c.embeddings().unwrap() };
        total_loss(c.probs(), &labels, Some(inputs), &cfg).unwrap().total
    };
    let h = 1e-6;
    for k in [0usize, 7, 13, 29] {
        let ht = g_total.head.as_ref().unwrap().expand.weight[k];
        let hb = g_bce.head.as_ref().unwrap().expand.weight[k];
        let hc = g_con.head.as_ref().unwrap().expand.weight[k];
        assert_eq!(hb, 0.0);
        assert!((ht - (hb + 0.1 * hc)).abs() < 1e-12);
        let mut plus = model.clone();
        plus.head.as_mut().unwrap().expand.weight[k] += h;
        let mut minus = model.clone();
        minus.head.as_mut().unwrap().expand.weight[k] -= h;
        let num = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        assert!((num - ht).abs() < 1e-6 * (1.0 + num.abs()), "weight {k}: numeric {num} analytic {ht}");
    }
    // The main network sees both paths too.
    let w = 3;
    let bt = g_total.blocks[3].conv.weight[w];
    let bb = g_bce.blocks[3].conv.weight[w];
    let bc = g_con.blocks[3].conv.weight[w];
    assert!((bt - (bb + 0.1 * bc)).abs() < 1e-10);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bank_keeps_the_newest_in_order(cap in 0usize..20, ops in proptest::collection::vec(any::<bool>(), 0..80)) {
            let mut bank = MemoryBank::<f32>::new(cap);
            let mut shadow: Vec<(bool, u64)> = Vec::new();
            for (i, &artifact) in ops.iter().enumerate() {
                let class = if artifact { PointClass::Artifact } else { PointClass::Clean };
                bank.push(class, BankEntry { id: i as u64, embedding: vec![] });
                shadow.push((artifact, i as u64));
            }
            for (class, flag) in [(PointClass::Artifact, true), (PointClass::Clean, false)] {
                let all: Vec<u64> = shadow.iter().filter(|(a, _)| *a == flag).map(|&(_, id)| id).collect();
                let expect = &all[all.len().saturating_sub(cap)..];
                let got: Vec<u64> = bank.queue(class).iter().map(|e| e.id).collect();
                prop_assert_eq!(got.as_slice(), expect);
                prop_assert!(bank.queue(class).len() <= cap);
            }
        }
    }
}
