use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Shape;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Set when this convolution was produced by reshaping a fully-connected layer.
    pub from_fc: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FcSpec {
    /// Shape the layer was trained on; the input is flattened in this order.
    pub input: Shape,
    pub outputs: usize,
}

/// Cross-channel local response normalization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnParams {
    pub local_size: usize,
    pub alpha: f32,
    pub beta: f32,
    pub k: f32,
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams { local_size: 5, alpha: 1e-4, beta: 0.75, k: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Convolution(ConvSpec),
    MaxPool(PoolSpec),
    Relu,
    FullyConnected(FcSpec),
    LocalResponseNorm(LrnParams),
    Softmax,
}

/// Why a shape failed to propagate through a layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum ShapeError {
    /// Spatial extent smaller than the layer's kernel.
    TooSmall,
    Mismatch(String),
}

pub(crate) fn window_output(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Convolution(_) => "conv",
            LayerSpec::MaxPool(_) => "maxpool",
            LayerSpec::Relu => "relu",
            LayerSpec::FullyConnected(_) => "fc",
            LayerSpec::LocalResponseNorm(_) => "lrn",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn stride(&self) -> usize {
        match self {
            LayerSpec::Convolution(c) => c.stride,
            LayerSpec::MaxPool(p) => p.stride,
            _ => 1,
        }
    }

    pub fn padding(&self) -> usize {
        match self {
            LayerSpec::Convolution(c) => c.padding,
            LayerSpec::MaxPool(p) => p.padding,
            _ => 0,
        }
    }

    /// `(weight count, bias count)` for parameterised layers.
    pub fn param_counts(&self) -> Option<(usize, usize)> {
        match self {
            LayerSpec::Convolution(c) => Some((c.out_channels * c.in_channels * c.kernel * c.kernel, c.out_channels)),
            LayerSpec::FullyConnected(f) => Some((f.outputs * f.input.len(), f.outputs)),
            _ => None,
        }
    }

    /// Checks the layer's own hyper-parameters, independent of its input.
    pub fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::config(format!("{}: {msg}", self.name())));
        match self {
            LayerSpec::Convolution(c) => {
                if c.kernel == 0 || c.stride == 0 {
                    return bad("kernel and stride must be >= 1");
                }
                if c.in_channels == 0 || c.out_channels == 0 {
                    return bad("channel counts must be >= 1");
                }
            }
            LayerSpec::MaxPool(p) => {
                if p.kernel == 0 || p.stride == 0 {
                    return bad("kernel and stride must be >= 1");
                }
                if p.padding >= p.kernel {
                    return bad("padding must be smaller than the kernel");
                }
            }
            LayerSpec::FullyConnected(f) => {
                if f.outputs == 0 || f.input.is_empty() {
                    return bad("input shape and output count must be non-empty");
                }
            }
            LayerSpec::LocalResponseNorm(l) => {
                if l.local_size == 0 {
                    return bad("local size must be >= 1");
                }
            }
            LayerSpec::Relu | LayerSpec::Softmax => {}
        }
        Ok(())
    }

    pub(crate) fn output_shape(&self, input: Shape) -> std::result::Result<Shape, ShapeError> {
        match self {
            LayerSpec::Convolution(c) => {
                if input.channels != c.in_channels {
                    return Err(ShapeError::Mismatch(format!(
                        "conv expects {} input channels, got {}",
                        c.in_channels, input.channels
                    )));
                }
                let h = window_output(input.height, c.kernel, c.stride, c.padding);
                let w = window_output(input.width, c.kernel, c.stride, c.padding);
                match (h, w) {
                    (Some(h), Some(w)) => Ok(Shape::new(c.out_channels, h, w)),
                    _ => Err(ShapeError::TooSmall),
                }
            }
            LayerSpec::MaxPool(p) => {
                let h = window_output(input.height, p.kernel, p.stride, p.padding);
                let w = window_output(input.width, p.kernel, p.stride, p.padding);
                match (h, w) {
                    (Some(h), Some(w)) => Ok(Shape::new(input.channels, h, w)),
                    _ => Err(ShapeError::TooSmall),
                }
            }
            LayerSpec::FullyConnected(f) => {
                if input == f.input {
                    return Ok(Shape::new(f.outputs, 1, 1));
                }
                if input.channels == f.input.channels && (input.height < f.input.height || input.width < f.input.width)
                {
                    return Err(ShapeError::TooSmall);
                }
                Err(ShapeError::Mismatch(format!("fully-connected layer expects input {}, got {input}", f.input)))
            }
            LayerSpec::Softmax => {
                if input.channels < 2 {
                    Err(ShapeError::Mismatch(format!("softmax needs >= 2 classes, got {}", input.channels)))
                } else {
                    Ok(input)
                }
            }
            LayerSpec::Relu | LayerSpec::LocalResponseNorm(_) => Ok(input),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Convolution(c) => write!(
                f,
                "conv {}x{} /{} pad {} {}->{}{}",
                c.kernel,
                c.kernel,
                c.stride,
                c.padding,
                c.in_channels,
                c.out_channels,
                if c.from_fc { " (from fc)" } else { "" }
            ),
            LayerSpec::MaxPool(p) => write!(f, "maxpool {}x{} /{} pad {}", p.kernel, p.kernel, p.stride, p.padding),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::FullyConnected(fc) => write!(f, "fc {} -> {}", fc.input, fc.outputs),
            LayerSpec::LocalResponseNorm(l) => {
                write!(f, "lrn size {} alpha {} beta {} k {}", l.local_size, l.alpha, l.beta, l.k)
            }
            LayerSpec::Softmax => write!(f, "softmax"),
        }
    }
}

/// Learned parameters of a convolution or fully-connected layer.
///
/// Convolution weights are laid out output-channel major, then input
/// channel, then row-major over the kernel. Fully-connected weights are an
/// `outputs x inputs` row-major matrix over the flattened input.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Option<Params>,
}

impl Layer {
    pub fn new(spec: LayerSpec) -> Self {
        Layer { spec, params: None }
    }

    pub fn with_params(spec: LayerSpec, weights: Vec<f32>, bias: Vec<f32>) -> Self {
        Layer { spec, params: Some(Params { weights, bias }) }
    }

    pub(crate) fn check_params(&self) -> Result<()> {
        match (self.spec.param_counts(), &self.params) {
            (None, None) => Ok(()),
            (None, Some(_)) => Err(Error::config(format!("{} layer takes no parameters", self.spec.name()))),
            (Some(_), None) => Err(Error::config(format!("{} layer is missing parameters", self.spec.name()))),
            (Some((nw, nb)), Some(p)) => {
                if p.weights.len() != nw || p.bias.len() != nb {
                    Err(Error::config(format!(
                        "{} layer needs {nw} weights and {nb} biases, got {} and {}",
                        self.spec.name(),
                        p.weights.len(),
                        p.bias.len()
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }
}
