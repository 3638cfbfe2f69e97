//! Slice-level layer kernels shared by inference (`f32` storage) and
//! training (`f64` storage). Every reduction accumulates in `f64`.

use super::layer::{ConvSpec, LrnParams, PoolSpec};
use crate::tensor::Shape;

pub trait Scalar: Copy + Default + PartialOrd + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Range of output indices `o` in `0..out` for which `o*stride + offset - pad`
/// lands inside `0..len`.
#[inline]
pub(crate) fn valid_range(out: usize, len: usize, stride: usize, offset: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > offset { (pad - offset).div_ceil(stride) } else { 0 };
    let hi = if len + pad > offset { ((len - 1 + pad - offset) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

pub fn conv2d<T: Scalar>(input: &[T], shape: Shape, weights: &[T], bias: &[T], spec: &ConvSpec, out: Shape) -> Vec<T> {
    let (h, w) = (shape.height, shape.width);
    let (oh, ow) = (out.height, out.width);
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    let ic = shape.channels;
    let mut result = Vec::with_capacity(out.len());
    let mut acc = vec![0f64; oh * ow];
    for o in 0..out.channels {
        acc.fill(bias[o].to_f64());
        for i in 0..ic {
            let plane = &input[i * h * w..(i + 1) * h * w];
            let filter = &weights[(o * ic + i) * k * k..(o * ic + i + 1) * k * k];
            for ky in 0..k {
                let (y_lo, y_hi) = valid_range(oh, h, s, ky, p);
                for kx in 0..k {
                    let wv = filter[ky * k + kx].to_f64();
                    let (x_lo, x_hi) = valid_range(ow, w, s, kx, p);
                    for oy in y_lo..y_hi {
                        let iy = oy * s + ky - p;
                        let row = &plane[iy * w..(iy + 1) * w];
                        let arow = &mut acc[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let base = kx as isize - p as isize;
                            for ox in x_lo..x_hi {
                                arow[ox] += wv * row[(ox as isize + base) as usize].to_f64();
                            }
                        } else {
                            for ox in x_lo..x_hi {
                                arow[ox] += wv * row[ox * s + kx - p].to_f64();
                            }
                        }
                    }
                }
            }
        }
        result.extend(acc.iter().map(|&v| T::from_f64(v)));
    }
    result
}

/// Max pooling; padded cells never win. When `argmax` is given it receives,
/// per output cell, the flat input index that produced the maximum.
pub fn maxpool<T: Scalar>(
    input: &[T],
    shape: Shape,
    spec: &PoolSpec,
    out: Shape,
    mut argmax: Option<&mut Vec<usize>>,
) -> Vec<T> {
    let (h, w) = (shape.height, shape.width);
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    let mut result = Vec::with_capacity(out.len());
    if let Some(a) = argmax.as_deref_mut() {
        a.clear();
        a.reserve(out.len());
    }
    for c in 0..shape.channels {
        let base = c * h * w;
        for oy in 0..out.height {
            let y0 = (oy * s).saturating_sub(p);
            let y1 = (oy * s + k).saturating_sub(p).min(h);
            for ox in 0..out.width {
                let x0 = (ox * s).saturating_sub(p);
                let x1 = (ox * s + k).saturating_sub(p).min(w);
                let mut best = base + y0 * w + x0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let idx = base + y * w + x;
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                result.push(input[best]);
                if let Some(a) = argmax.as_deref_mut() {
                    a.push(best);
                }
            }
        }
    }
    result
}

pub fn relu<T: Scalar>(input: &[T]) -> Vec<T> {
    let zero = T::default();
    input.iter().map(|&v| if v > zero { v } else { zero }).collect()
}

/// Channels `[c - (n-1)/2, c + n/2]` clipped to the valid range.
#[inline]
pub(crate) fn lrn_window(c: usize, channels: usize, n: usize) -> (usize, usize) {
    let lo = c.saturating_sub((n - 1) / 2);
    let hi = (c + n / 2 + 1).min(channels);
    (lo, hi)
}

/// Returns the normalized output plus, per element, the denominator base
/// `k + alpha/n * sum(a^2)` (needed for the backward pass).
pub fn lrn<T: Scalar>(input: &[T], shape: Shape, params: &LrnParams) -> (Vec<T>, Vec<f64>) {
    let n = params.local_size;
    let plane = shape.plane();
    let alpha_n = params.alpha as f64 / n as f64;
    let (k, beta) = (params.k as f64, params.beta as f64);
    let mut out = vec![T::default(); input.len()];
    let mut denom = vec![0f64; input.len()];
    for c in 0..shape.channels {
        let (lo, hi) = lrn_window(c, shape.channels, n);
        for i in 0..plane {
            let mut sq = 0f64;
            for cc in lo..hi {
                let a = input[cc * plane + i].to_f64();
                sq += a * a;
            }
            let d = k + alpha_n * sq;
            let idx = c * plane + i;
            denom[idx] = d;
            out[idx] = T::from_f64(input[idx].to_f64() / d.powf(beta));
        }
    }
    (out, denom)
}

/// `weights` is an `outputs x input.len()` row-major matrix.
pub fn fully_connected<T: Scalar>(input: &[T], weights: &[T], bias: &[T]) -> Vec<T> {
    let n = input.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &weights[o * n..(o + 1) * n];
            let dot: f64 = row.iter().zip(input).map(|(&w, &x)| w.to_f64() * x.to_f64()).sum();
            T::from_f64(b.to_f64() + dot)
        })
        .collect()
}

/// Softmax across channels at every spatial cell.
pub fn softmax_channels<T: Scalar>(input: &[T], shape: Shape) -> Vec<T> {
    let plane = shape.plane();
    let mut out = vec![T::default(); input.len()];
    let mut buf = vec![0f64; shape.channels];
    for i in 0..plane {
        for c in 0..shape.channels {
            buf[c] = input[c * plane + i].to_f64();
        }
        softmax_in_place(&mut buf);
        for c in 0..shape.channels {
            out[c * plane + i] = T::from_f64(buf[c]);
        }
    }
    out
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_covers_padding() {
        // input 5, kernel offset 0, pad 1, stride 1 -> outputs 1..6 read rows 0..5
        assert_eq!(valid_range(5, 5, 1, 0, 1), (1, 5));
        assert_eq!(valid_range(5, 5, 1, 2, 1), (0, 4));
        assert_eq!(valid_range(3, 7, 2, 1, 0), (0, 3));
    }

    #[test]
    fn lrn_window_clips() {
        assert_eq!(lrn_window(0, 8, 5), (0, 3));
        assert_eq!(lrn_window(4, 8, 5), (2, 7));
        assert_eq!(lrn_window(7, 8, 5), (5, 8));
        assert_eq!(lrn_window(3, 8, 1), (3, 4));
    }
}
