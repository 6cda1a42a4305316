use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use tinyppg::nn::{batchnorm_forward, conv1d_backward, conv1d_forward, maxpool1d, BatchNormParams, Mode};
use tinyppg_bench::{depthwise_conv, random_tensor, standard_conv};

fn convolutions(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv");
    // the widest pointwise layer of the default network
    let x = random_tensor(128, 240, 1);
    let pw = standard_conv(128, 512, 1, 1, 2);
    g.bench_function("pointwise_128x512_len240", |b| b.iter(|| conv1d_forward(black_box(&x), &pw).unwrap()));
    let dy = random_tensor(512, 240, 3);
    g.bench_function("pointwise_128x512_len240_backward", |b| {
        b.iter(|| conv1d_backward(black_box(&x), &pw, &dy).unwrap())
    });
    let x1 = random_tensor(1, 1920, 4);
    let dw = depthwise_conv(1, 80, 5);
    g.bench_function("depthwise_k80_len1920", |b| b.iter(|| conv1d_forward(black_box(&x1), &dw).unwrap()));
    let f = random_tensor(512, 240, 6);
    let branch = standard_conv(512, 1, 3, 16, 7);
    g.bench_function("dilated_512x1_k3_len240", |b| b.iter(|| conv1d_forward(black_box(&f), &branch).unwrap()));
    g.finish();
}

fn norm_and_pool(c: &mut Criterion) {
    let xs: Vec<_> = (0..8).map(|i| random_tensor(64, 960, i)).collect();
    let mut bn = BatchNormParams::<f32>::new(64, 1e-5, 0.1);
    c.bench_function("batchnorm_train_8x64x960", |b| {
        b.iter(|| batchnorm_forward(black_box(&xs), &mut bn, Mode::Train).unwrap())
    });
    c.bench_function("maxpool_64x960", |b| b.iter(|| maxpool1d(black_box(&xs[0])).unwrap()));
}

criterion_group!(benches, convolutions, norm_and_pool);
criterion_main!(benches);
