use candle_core::{Device, Tensor};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use exprgan::datagen::{sample_dataset, DatasetSpec};
use exprgan::losses::{q_loss, tv_loss};
use exprgan::nn::conv2d_nhwc;

fn ramp(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f32> = (0..n).map(|i| ((i * 7919 % 2000) as f32 / 1000.0) - 1.0).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_nhwc");
    // encoder-like strided layer and decoder-like upsampling layer
    for (name, x, k, c_out, stride, up) in [
        ("down_32x32x32", [8, 32, 32, 32], 5, 64, 2, 1),
        ("up_16x16x64", [8, 16, 16, 64], 3, 32, 1, 2),
    ] {
        let input = ramp(&x);
        let weight = ramp(&[k * k * x[3], c_out]);
        let bias = ramp(&[c_out]);
        group.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| conv2d_nhwc(black_box(&input), &weight, Some(&bias), k, stride, k / 2, up).unwrap())
        });
        let var = candle_core::Var::from_tensor(&weight).unwrap();
        group.bench_function(BenchmarkId::new("forward_backward", name), |b| {
            b.iter(|| {
                let y = conv2d_nhwc(&input, var.as_tensor(), Some(&bias), k, stride, k / 2, up).unwrap();
                y.sqr().unwrap().mean_all().unwrap().backward().unwrap()
            })
        });
    }
    group.finish();
}

fn render(c: &mut Criterion) {
    let mut spec = DatasetSpec::desk(1);
    spec.n_identities = 2;
    spec.images_per_identity_per_class = 2;
    c.bench_function("render_12_faces_64px", |b| b.iter(|| sample_dataset(black_box(&spec)).unwrap()));
}

fn losses(c: &mut Criterion) {
    let images = ramp(&[32, 64, 64, 3]);
    c.bench_function("tv_loss_32x64x64", |b| b.iter(|| tv_loss(black_box(&images)).unwrap()));
    let mu = ramp(&[32, 5]);
    let target = (ramp(&[32, 5]) * 0.5).unwrap();
    c.bench_function("q_loss_32x5", |b| b.iter(|| q_loss(black_box(&mu), &target).unwrap()));
}

criterion_group!(benches, conv, render, losses);
criterion_main!(benches);
