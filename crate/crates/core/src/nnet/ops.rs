//! Tensor-level layer forward passes.

use super::kernels;
use super::layer::{ConvSpec, FcSpec, LayerSpec, LrnParams, PoolSpec, ShapeError};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn output_shape(spec: &LayerSpec, input: Shape) -> Result<Shape> {
    spec.output_shape(input).map_err(|e| match e {
        ShapeError::TooSmall => Error::config(format!("{}: input {input} smaller than the kernel", spec.name())),
        ShapeError::Mismatch(msg) => Error::config(msg),
    })
}

pub fn conv_forward(input: &Tensor, spec: &ConvSpec, weights: &[f32], bias: &[f32]) -> Result<Tensor> {
    let layer = LayerSpec::Convolution(*spec);
    layer.check()?;
    let (nw, nb) = layer.param_counts().unwrap_or_default();
    if weights.len() != nw || bias.len() != nb {
        return Err(Error::config(format!(
            "conv needs {nw} weights and {nb} biases, got {} and {}",
            weights.len(),
            bias.len()
        )));
    }
    let out = output_shape(&layer, input.shape())?;
    Tensor::from_vec(out, kernels::conv2d(input.data(), input.shape(), weights, bias, spec, out))
}

pub fn maxpool_forward(input: &Tensor, spec: &PoolSpec) -> Result<Tensor> {
    let layer = LayerSpec::MaxPool(*spec);
    layer.check()?;
    let out = output_shape(&layer, input.shape())?;
    Tensor::from_vec(out, kernels::maxpool(input.data(), input.shape(), spec, out, None))
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    Tensor::from_vec(input.shape(), kernels::relu(input.data())).expect("shape preserved")
}

pub fn lrn_forward(input: &Tensor, params: Option<&LrnParams>) -> Result<Tensor> {
    let params = params.ok_or_else(|| Error::config("lrn layer is missing its parameters"))?;
    LayerSpec::LocalResponseNorm(*params).check()?;
    let (out, _) = kernels::lrn(input.data(), input.shape(), params);
    Tensor::from_vec(input.shape(), out)
}

pub fn fc_forward(input: &Tensor, spec: &FcSpec, weights: &[f32], bias: &[f32]) -> Result<Tensor> {
    let layer = LayerSpec::FullyConnected(*spec);
    layer.check()?;
    let (nw, nb) = layer.param_counts().unwrap_or_default();
    if weights.len() != nw || bias.len() != nb {
        return Err(Error::config(format!(
            "fc needs {nw} weights and {nb} biases, got {} and {}",
            weights.len(),
            bias.len()
        )));
    }
    let out = output_shape(&layer, input.shape())?;
    Tensor::from_vec(out, kernels::fully_connected(input.data(), weights, bias))
}

/// Softmax over a logit vector, using max-subtraction for stability.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.len() < 2 {
        return Err(Error::InvalidArgument(format!("softmax needs at least 2 logits, got {}", logits.len())));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit {bad}")));
    }
    let mut out = logits.to_vec();
    kernels::softmax_in_place(&mut out);
    Ok(out)
}

pub fn softmax_forward(input: &Tensor) -> Result<Tensor> {
    let out = output_shape(&LayerSpec::Softmax, input.shape())?;
    Tensor::from_vec(out, kernels::softmax_channels(input.data(), input.shape()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(k: usize, s: usize, p: usize, ic: usize, oc: usize) -> ConvSpec {
        ConvSpec { kernel: k, stride: s, padding: p, in_channels: ic, out_channels: oc, from_fc: false }
    }

    #[test]
    fn conv_zero_input() {
        let x = Tensor::zeros(Shape::new(1, 3, 3));
        let y = conv_forward(&x, &conv(3, 1, 0, 1, 1), &[0.3; 9], &[0.0]).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1));
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn conv_ones_sum_plus_bias() {
        let x = Tensor::filled(Shape::new(1, 3, 3), 1.0);
        let y = conv_forward(&x, &conv(3, 1, 0, 1, 1), &[1.0; 9], &[1.0]).unwrap();
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn conv_padding_and_stride_dims() {
        let x = Tensor::filled(Shape::new(2, 7, 9), 1.0);
        let spec = conv(3, 2, 1, 2, 4);
        let y = conv_forward(&x, &spec, &vec![1.0; 4 * 2 * 9], &[0.0; 4]).unwrap();
        assert_eq!(y.shape(), Shape::new(4, 4, 5));
        // corner sees a 2x2 patch per channel
        assert_eq!(y.at(0, 0, 0), 8.0);
        assert_eq!(y.at(3, 1, 1), 18.0);
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::zeros(Shape::new(2, 3, 3));
        assert!(matches!(conv_forward(&x, &conv(3, 1, 0, 1, 1), &[0.0; 9], &[0.0]), Err(Error::Config { .. })));
        let x = Tensor::zeros(Shape::new(1, 2, 2));
        assert!(conv_forward(&x, &conv(3, 1, 0, 1, 1), &[0.0; 9], &[0.0]).is_err());
        assert!(conv_forward(&x, &conv(2, 1, 0, 1, 1), &[0.0; 3], &[0.0]).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::from_vec(Shape::new(1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let spec = PoolSpec { kernel: 2, stride: 2, padding: 0 };
        assert_eq!(maxpool_forward(&x, &spec).unwrap().data(), &[4.0]);
        let c = Tensor::filled(Shape::new(3, 6, 6), -2.5);
        let y = maxpool_forward(&c, &PoolSpec { kernel: 3, stride: 2, padding: 1 }).unwrap();
        assert!(y.data().iter().all(|&v| v == -2.5));
        assert_eq!(y.shape(), Shape::new(3, 3, 3));
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::from_vec(Shape::new(1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&y), y);
        let neg = Tensor::filled(Shape::new(2, 2, 2), -3.0);
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lrn_examples() {
        let p = LrnParams { local_size: 1, alpha: 1.0, beta: 1.0, k: 1.0 };
        let x = Tensor::filled(Shape::new(1, 1, 1), 1.0);
        assert_eq!(lrn_forward(&x, Some(&p)).unwrap().data(), &[0.5]);
        let z = Tensor::zeros(Shape::new(4, 3, 3));
        assert!(lrn_forward(&z, Some(&LrnParams::default())).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(lrn_forward(&z, None), Err(Error::Config { .. })));
    }

    #[test]
    fn fc_examples() {
        let x = Tensor::from_vec(Shape::new(1, 2, 2), vec![1.0, -2.0, 3.0, 4.5]).unwrap();
        let spec = FcSpec { input: Shape::new(1, 2, 2), outputs: 4 };
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 5] = 1.0;
        }
        let y = fc_forward(&x, &spec, &eye, &[0.0; 4]).unwrap();
        assert_eq!(y.shape(), Shape::new(4, 1, 1));
        assert_eq!(y.data(), x.data());
        let spec2 = FcSpec { input: Shape::new(1, 2, 2), outputs: 2 };
        let y = fc_forward(&x, &spec2, &[0.0; 8], &[0.25, -1.0]).unwrap();
        assert_eq!(y.data(), &[0.25, -1.0]);
        let wrong = Tensor::zeros(Shape::new(1, 3, 2));
        assert!(fc_forward(&wrong, &spec2, &[0.0; 8], &[0.0; 2]).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[3f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-12 && (p[1] - 0.25).abs() < 1e-12);
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
        assert!(softmax(&[1.0]).is_err());
        assert!(matches!(softmax(&[f64::NAN, 0.0]), Err(Error::Numeric(_))));
    }
}
