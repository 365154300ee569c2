//! Forward/backward costs of the tensor ops that dominate training.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use fdd_bench::random_tensor;
use fdd_core::autodiff::{conv2d_raw, conv2d_transpose_raw, dense_raw, Tape};

fn bench_conv2d_forward(c: &mut Criterion) {
    let x = random_tensor(&[4, 1, 64, 64], 1);
    let w = random_tensor(&[16, 1, 3, 3], 2);
    let b = random_tensor(&[16], 3);
    c.bench_function("conv2d forward 4x1x64x64 -> 16ch s2", |bench| {
        bench.iter(|| conv2d_raw(black_box(&x), &w, &b, 2, 1).unwrap())
    });
}

fn bench_conv2d_transpose_forward(c: &mut Criterion) {
    let x = random_tensor(&[4, 16, 32, 32], 4);
    let w = random_tensor(&[16, 1, 3, 3], 5);
    let b = random_tensor(&[1], 6);
    c.bench_function("conv2d_transpose forward 4x16x32x32 -> 64px", |bench| {
        bench.iter(|| conv2d_transpose_raw(black_box(&x), &w, &b, 2, 1, 1).unwrap())
    });
}

fn bench_dense_forward(c: &mut Criterion) {
    let x = random_tensor(&[8, 4096], 7);
    let w = random_tensor(&[128, 4096], 8);
    let b = random_tensor(&[128], 9);
    c.bench_function("dense forward 8x4096 -> 128", |bench| {
        bench.iter(|| dense_raw(black_box(&x), &w, &b).unwrap())
    });
}

fn bench_conv2d_backward(c: &mut Criterion) {
    let x = random_tensor(&[2, 1, 64, 64], 10);
    let w = random_tensor(&[16, 1, 3, 3], 11);
    let b = random_tensor(&[16], 12);
    let target = random_tensor(&[2, 16, 32, 32], 13);
    c.bench_function("conv2d backward via mse 2x1x64x64", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone(), false);
            let wv = tape.leaf(w.clone(), true);
            let bv = tape.leaf(b.clone(), true);
            let tv = tape.leaf(target.clone(), false);
            let y = tape.conv2d(xv, wv, bv, 2, 1).unwrap();
            let loss = tape.mse_loss(y, tv).unwrap();
            black_box(tape.backward(loss).unwrap())
        })
    });
}

criterion_group!(
    benches,
    bench_conv2d_forward,
    bench_conv2d_transpose_forward,
    bench_dense_forward,
    bench_conv2d_backward
);
criterion_main!(benches);
