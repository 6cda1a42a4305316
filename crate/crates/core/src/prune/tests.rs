use super::*;
use crate::model::ProjectionConfig;
use crate::nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(separable: bool, seed: u64) -> TinyPpg<f64> {
    let cfg = ModelConfig {
        dsc_specs: vec![(5, 5), (6, 3), (7, 3), (9, 3)],
        separable,
        aspp_rates: vec![1, 2, 3],
        projection: Some(ProjectionConfig { hidden_channels: 4, embed_dim: 3, normalize: true }),
        input_len: 64,
        ..ModelConfig::default()
    };
    let mut m = TinyPpg::build(cfg, seed).unwrap();
    // Trained-looking batch-norm state so eval mode is not the identity.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    for b in &mut m.blocks {
        for c in 0..b.bn.channels() {
            b.bn.gamma[c] = rng.random_range(-1.5..1.5);
            b.bn.beta[c] = rng.random_range(-0.5..0.5);
            b.bn.running_mean[c] = rng.random_range(-0.3..0.3);
            b.bn.running_var[c] = rng.random_range(0.2..2.0);
        }
        if let Some(dw) = &mut b.depthwise {
            for v in &mut dw.bias {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    m
}

fn inputs(n: usize, seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Tensor::from_row((0..64).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap())
        .collect()
}

fn max_diff(a: &TinyPpg<f64>, b: &TinyPpg<f64>, xs: &[Tensor<f64>]) -> f64 {
    xs.iter()
        .map(|x| {
            let (p, q) = (a.predict(x).unwrap(), b.predict(x).unwrap());
            p.values().iter().zip(q.values()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[test]
fn ranking_example() {
    let l1 = [0.5f64, 0.01];
    let l2 = [0.2f64];
    let r = rank_scales(&[&l1[..], &l2[..]]);
    let got: Vec<(usize, usize, f64)> = r.entries.iter().map(|e| (e.layer, e.channel, e.score)).collect();
    assert_eq!(got, vec![(0, 1, 0.01), (1, 0, 0.2), (0, 0, 0.5)]);
    let neg = [-0.3f64];
    assert_eq!(rank_scales(&[&neg[..]]).entries[0].score, 0.3);
}

#[test]
fn ranking_matches_brute_force_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let layers: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..rng.random_range(1..12)).map(|_| (rng.random_range(-3i32..3) as f64) * 0.25).collect())
            .collect();
        let refs: Vec<&[f64]> = layers.iter().map(Vec::as_slice).collect();
        let r = rank_scales(&refs);
        let mut oracle = Vec::new();
        for (l, g) in layers.iter().enumerate() {
            for (c, v) in g.iter().enumerate() {
                oracle.push((v.abs(), l, c));
            }
        }
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got: Vec<(f64, usize, usize)> = r.entries.iter().map(|e| (e.score, e.layer, e.channel)).collect();
        assert_eq!(got, oracle);
    }
}

#[test]
fn zero_ratio_changes_nothing() {
    let m = small(true, 1);
    let p = apply_prune(&m, 0.0).unwrap();
    assert!(p.prune_mask.as_ref().unwrap().iter().flatten().all(|&k| k));
    for x in inputs(3, 2) {
        assert_eq!(m.predict(&x).unwrap(), p.predict(&x).unwrap());
    }
}

#[test]
fn ratio_outside_range_is_config_error() {
    let m = small(true, 1);
    for r in [1.0, 1.5, -0.1, f64::NAN] {
        assert!(apply_prune(&m, r).unwrap_err().is_config());
    }
}

#[test]
fn prunes_exact_count_with_layer_floor() {
    let m = small(true, 4);
    let total: usize = m.blocks.iter().map(|b| b.out_channels()).sum();
    for ratio in [0.1, 0.3, 0.5, 0.8, 0.95, 0.99] {
        let mask = prune_mask(&m, ratio).unwrap();
        let pruned = mask.iter().flatten().filter(|&&k| !k).count();
        let target = (ratio * total as f64).floor() as usize;
        assert_eq!(pruned, target.min(total - 4), "ratio {ratio}");
        assert!(mask.iter().all(|l| l.iter().any(|&k| k)));
    }
}

#[test]
fn surviving_channel_is_the_best_of_its_layer() {
    let mut m = small(true, 4);
    m.blocks[0].bn.gamma = vec![0.01, 0.02, 0.05, 0.03, 0.04];
    let mask = prune_mask(&m, 0.99).unwrap();
    assert_eq!(mask[0], vec![false, false, true, false, false]);
}

#[test]
fn masked_forward_equals_activation_surgery() {
    for separable in [true, false] {
        let m = small(separable, 6);
        let masked = apply_prune(&m, 0.4).unwrap();
        // Same zeroed parameters, no mask: BN output of each removed
        // channel is (x - mean) * inv * 0 + 0 = 0 in eval mode.
        let mut surgery = masked.clone();
        surgery.prune_mask = None;
        assert!(max_diff(&masked, &surgery, &inputs(4, 7)) <= 1e-6);
    }
}

#[test]
fn masked_channels_ignore_their_own_parameters() {
    let m = small(true, 8);
    let masked = apply_prune(&m, 0.5).unwrap();
    let mut poked = masked.clone();
    let mask = masked.prune_mask.clone().unwrap();
    for (b, keep) in poked.blocks.iter_mut().zip(&mask) {
        let cin = b.conv.in_channels;
        for (o, _) in keep.iter().enumerate().filter(|(_, &k)| !k) {
            b.conv.weight[o * cin] = 3.0;
            b.conv.bias[o] = -2.0;
            b.bn.gamma[o] = 5.0;
            b.bn.beta[o] = 1.0;
        }
    }
    assert_eq!(max_diff(&masked, &poked, &inputs(3, 9)), 0.0);
}

#[test]
fn compaction_matches_masked_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..20 {
        let m = small(case % 2 == 0, case);
        let mut mask: PruneMask = m.blocks.iter().map(|b| (0..b.out_channels()).map(|_| rng.random_bool(0.6)).collect()).collect();
        for l in &mut mask {
            if !l.iter().any(|&k| k) {
                l[0] = true;
            }
        }
        let mut masked = m.clone();
        masked.prune_mask = Some(mask.clone());
        let dense = compact(&masked).unwrap();
        for (b, l) in dense.blocks.iter().zip(&mask) {
            assert_eq!(b.out_channels(), l.iter().filter(|&&k| k).count());
        }
        assert!(dense.prune_mask.is_none());
        let d = max_diff(&masked, &dense, &inputs(3, case));
        assert!(d < 1e-6, "case {case}: {d}");
        assert!(dense.count_parameters() <= m.count_parameters());
    }
}

#[test]
fn compaction_of_full_mask_is_identity() {
    let m = small(true, 2);
    let p = apply_prune(&m, 0.0).unwrap();
    let c = compact(&p).unwrap();
    assert_eq!(c.config, m.config);
    assert_eq!(c.blocks, m.blocks);
    assert_eq!(c.branches, m.branches);
    assert_eq!(c.head, m.head);
}

#[test]
fn compaction_shrinks_pyramid_inputs() {
    let m = TinyPpg::<f32>::build(ModelConfig::default(), 0).unwrap();
    let mut mask: PruneMask = m.blocks.iter().map(|b| vec![true; b.out_channels()]).collect();
    for c in 158..512 {
        mask[3][c] = false;
    }
    let mut masked = m;
    masked.prune_mask = Some(mask);
    let dense = compact(&masked).unwrap();
    assert!(dense.branches.iter().all(|b| b.in_channels == 158));
    assert_eq!(dense.config.dsc_specs[3], (158, 7));
}

#[test]
fn parameter_count_decreases_with_ratio() {
    let m = small(true, 12);
    let mut prev = usize::MAX;
    for ratio in [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7] {
        let n = compact(&apply_prune(&m, ratio).unwrap()).unwrap().count_parameters();
        assert!(n < prev, "ratio {ratio}: {n} vs {prev}");
        prev = n;
    }
}

#[test]
fn compact_requires_mask() {
    let m = small(true, 1);
    assert!(matches!(compact(&m), Err(Error::State(_))));
}
