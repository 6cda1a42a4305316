//! Fixtures shared by the benchmarks in `benches/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinyppg::data::{generate_synthetic, SyntheticConfig};
use tinyppg::nn::{ConvParams, Tensor};
use tinyppg::SignalSegment;

pub fn random_tensor(channels: usize, length: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..channels * length).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(channels, length, v).expect("consistent shape")
}

pub fn standard_conv(cin: usize, cout: usize, k: usize, dilation: usize, seed: u64) -> ConvParams<f32> {
    let mut p = ConvParams::standard(cin, cout, k, dilation);
    p.init_uniform(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

pub fn depthwise_conv(channels: usize, k: usize, seed: u64) -> ConvParams<f32> {
    let mut p = ConvParams::depthwise(channels, k, 1);
    p.init_uniform(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

pub fn segments(n: usize, seed: u64) -> Vec<SignalSegment> {
    generate_synthetic(&SyntheticConfig { n_segments: n, seed, ..SyntheticConfig::default() })
        .expect("valid synthetic config")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_requested_shapes() {
        assert_eq!(random_tensor(3, 7, 0).shape(), (3, 7));
        assert_eq!(standard_conv(2, 5, 3, 1, 0).weight.len(), 30);
        assert_eq!(depthwise_conv(4, 9, 0).weight.len(), 36);
        assert_eq!(segments(2, 0).len(), 2);
    }
}
