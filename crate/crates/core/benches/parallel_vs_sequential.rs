//! Sequential versus rayon execution of the batch-level hot paths:
//! convolution forward and backward, batch augmentation and one training
//! step. Without the `parallel` feature only the sequential rows run.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use lvseg::augment::{augment_batch, AugmentConfig};
use lvseg::data::{synth_phantom, CineSample};
use lvseg::engine::{batch_tensors, LossKind};
use lvseg::layers::{Mode, PaddingMode};
use lvseg::model::{build, UNetSpec};
use lvseg::{Exec, Shape, Tape, Tensor};

fn strategies() -> Vec<(&'static str, Exec)> {
    let mut out = vec![("sequential", Exec::Sequential)];
    #[cfg(feature = "parallel")]
    out.push(("parallel", Exec::Parallel));
    out
}

fn conv(c: &mut Criterion) {
    let x = Tensor::from_fn(Shape::new(8, 16, 64, 64), |n, ch, h, w| ((n + 3 * ch + 5 * h + 7 * w) % 11) as f64 / 11.0);
    let w = Tensor::from_fn(Shape::new(16, 16, 3, 3), |o, i, h, k| ((o * 9 + i * 3 + h + k) % 7) as f64 / 7.0 - 0.5);
    let mut group = c.benchmark_group("conv3x3_forward_backward");
    group.sample_size(10);
    for (name, exec) in strategies() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut tape = Tape::with_exec(exec);
                let xv = tape.leaf(x.clone().with_requires_grad(true));
                let wv = tape.leaf(w.clone().with_requires_grad(true));
                let y = tape.conv2d(xv, wv, None, PaddingMode::Same).unwrap();
                let loss = tape.sum(y);
                tape.backward(loss).unwrap();
                tape.grad(wv).map(|g| g[0])
            })
        });
    }
    group.finish();
}

fn augmentation(c: &mut Criterion) {
    let samples = synth_phantom(16, 128, 1).unwrap();
    let refs: Vec<&CineSample> = samples.iter().collect();
    let indices: Vec<u64> = (0..16).collect();
    let cfg = AugmentConfig { p_elastic: 1.0, p_rotate: 1.0, p_affine: 1.0, ..AugmentConfig::default() };
    let mut group = c.benchmark_group("augment_batch_16x128");
    group.sample_size(10);
    for (name, exec) in strategies() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| augment_batch(exec, &refs, &cfg, &indices).unwrap())
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let samples = synth_phantom(8, 64, 2).unwrap();
    let refs: Vec<&CineSample> = samples.iter().collect();
    let (x, truth) = batch_tensors(&refs).unwrap();
    let model = build(&UNetSpec { depth: 3, base_channels: 8, groups: 4, ..UNetSpec::default() }, 0).unwrap();
    let mut group = c.benchmark_group("gbu_train_step_8x64");
    group.sample_size(10);
    for (name, exec) in strategies() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut tape = Tape::with_exec(exec);
                let xv = tape.constant(x.clone());
                let out = model.forward_on_tape(&mut tape, xv, Mode::Train, 0, true).unwrap();
                let loss = tape.loss(LossKind::SoftDice, out.logits, &truth).unwrap();
                tape.backward(loss).unwrap();
                tape.value(loss).item().unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, conv, augmentation, train_step);
criterion_main!(benches);
