#![allow(dead_code)]

//! Seeded sweeps comparing each layer kernel with a direct loop nest. Each
//! returns the worst absolute difference, or the first shape mismatch.

use densescan::nnet::{
    conv_forward, fc_forward, lrn_forward, maxpool_forward, softmax_forward, ConvSpec, FcSpec, LrnParams, PoolSpec,
};
use densescan::{Shape, Tensor};
use densescan_oracles as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CASES: u64 = 100;
pub const TOL: f64 = 1e-6;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_, _, _| rng.gen_range(-1.0..1.0))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn max_diff(ours: &[f32], reference: &[f64]) -> f64 {
    assert_eq!(ours.len(), reference.len());
    ours.iter().zip(reference).map(|(&a, &b)| (a as f64 - b).abs()).fold(0.0, f64::max)
}

fn same_shape(seed: u64, ours: Shape, expected: Shape) -> Result<(), String> {
    if ours == expected {
        Ok(())
    } else {
        Err(format!("seed {seed}: shape {ours}, expected {expected}"))
    }
}

pub fn convolution(cases: u64) -> Result<f64, String> {
    let mut worst = 0f64;
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(1..=5);
        let stride = rng.gen_range(1..=3);
        let pad = rng.gen_range(0..k);
        let (c, o) = (rng.gen_range(1..=4), rng.gen_range(1..=5));
        let h = rng.gen_range(k..=k + 12);
        let w = rng.gen_range(k..=k + 12);
        let x = random_tensor(&mut rng, Shape::new(c, h, w));
        let weights = random_vec(&mut rng, o * c * k * k, 0.5);
        let bias = random_vec(&mut rng, o, 0.5);
        let spec = ConvSpec { kernel: k, stride, padding: pad, in_channels: c, out_channels: o, from_fc: false };
        let ours = conv_forward(&x, &spec, &weights, &bias).map_err(|e| e.to_string())?;
        let (reference, oh, ow) = oracle::conv2d(x.data(), c, h, w, &weights, &bias, k, stride, pad);
        same_shape(seed, ours.shape(), Shape::new(o, oh, ow))?;
        worst = worst.max(max_diff(ours.data(), &reference));
    }
    Ok(worst)
}

pub fn max_pooling(cases: u64) -> Result<f64, String> {
    let mut worst = 0f64;
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let k = rng.gen_range(1..=4);
        let stride = rng.gen_range(1..=3);
        let pad = rng.gen_range(0..k);
        let c = rng.gen_range(1..=4);
        let h = rng.gen_range(k..=k + 12);
        let w = rng.gen_range(k..=k + 12);
        let x = random_tensor(&mut rng, Shape::new(c, h, w));
        let ours = maxpool_forward(&x, &PoolSpec { kernel: k, stride, padding: pad }).map_err(|e| e.to_string())?;
        let (reference, oh, ow) = oracle::maxpool(x.data(), c, h, w, k, stride, pad);
        same_shape(seed, ours.shape(), Shape::new(c, oh, ow))?;
        worst = worst.max(max_diff(ours.data(), &reference));
    }
    Ok(worst)
}

pub fn fully_connected(cases: u64) -> Result<f64, String> {
    let mut worst = 0f64;
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let input = Shape::new(rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=6));
        let outputs = rng.gen_range(1..=10);
        let x = random_tensor(&mut rng, input);
        let weights = random_vec(&mut rng, outputs * input.len(), 0.3);
        let bias = random_vec(&mut rng, outputs, 0.3);
        let ours = fc_forward(&x, &FcSpec { input, outputs }, &weights, &bias).map_err(|e| e.to_string())?;
        let reference = oracle::fully_connected(x.data(), &weights, &bias);
        same_shape(seed, ours.shape(), Shape::new(outputs, 1, 1))?;
        worst = worst.max(max_diff(ours.data(), &reference));
    }
    Ok(worst)
}

pub fn local_response_norm(cases: u64) -> Result<f64, String> {
    let mut worst = 0f64;
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let shape = Shape::new(rng.gen_range(1..=9), rng.gen_range(1..=6), rng.gen_range(1..=6));
        let params = LrnParams {
            local_size: rng.gen_range(1..=7),
            alpha: rng.gen_range(1e-4..1.0),
            beta: rng.gen_range(0.5..1.0),
            k: rng.gen_range(1.0..2.0),
        };
        let x = Tensor::from_fn(shape, |_, _, _| rng.gen_range(-3.0..3.0));
        let ours = lrn_forward(&x, Some(&params)).map_err(|e| e.to_string())?;
        let reference = oracle::lrn(
            x.data(),
            shape.channels,
            shape.height,
            shape.width,
            params.local_size,
            params.alpha as f64,
            params.beta as f64,
            params.k as f64,
        );
        worst = worst.max(max_diff(ours.data(), &reference));
    }
    Ok(worst)
}

pub fn softmax(cases: u64) -> Result<f64, String> {
    let mut worst = 0f64;
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let shape = Shape::new(rng.gen_range(2..=6), rng.gen_range(1..=5), rng.gen_range(1..=5));
        let x = Tensor::from_fn(shape, |_, _, _| rng.gen_range(-20.0..20.0));
        let ours = softmax_forward(&x).map_err(|e| e.to_string())?;
        let reference = oracle::softmax(x.data(), shape.channels, shape.height, shape.width);
        worst = worst.max(max_diff(ours.data(), &reference));
    }
    Ok(worst)
}

/// Every sweep by name, in a fixed order.
pub type Sweep = fn(u64) -> Result<f64, String>;

pub const ALL: [(&str, Sweep); 5] = [
    ("conv", convolution),
    ("pool", max_pooling),
    ("fc", fully_connected),
    ("lrn", local_response_norm),
    ("softmax", softmax),
];
