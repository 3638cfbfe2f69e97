use super::geometry::{receptive_geometry, ScanGeometry};
use super::kernels;
use super::layer::{ConvSpec, Layer, LayerSpec, Params, ShapeError};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Per-channel mean subtraction followed by a scalar scale, applied to the
/// raw input before the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocess {
    pub mean: Vec<f32>,
    pub scale: f32,
}

impl Preprocess {
    pub fn identity(channels: usize) -> Self {
        Preprocess { mean: vec![0.0; channels], scale: 1.0 }
    }

    pub(crate) fn apply(&self, input: &Tensor) -> Tensor {
        let plane = input.shape().plane();
        let mut out = input.clone();
        for (c, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let m = self.mean[c];
            for v in chunk {
                *v = (*v - m) * self.scale;
            }
        }
        out
    }
}

/// Strictly sequential feed-forward network ending in a softmax.
///
/// Class index 1 of the softmax is the positive ("face") class.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub input_channels: usize,
    pub preprocess: Preprocess,
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(input_channels: usize, preprocess: Preprocess, layers: Vec<Layer>) -> Result<Self> {
        let net = Network { input_channels, preprocess, layers };
        net.validate()?;
        Ok(net)
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    /// Checks parameter sizes and shape consistency. On failure the error
    /// names the first inconsistent layer.
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::config("network needs at least one input channel"));
        }
        if self.preprocess.mean.len() != self.input_channels {
            return Err(Error::config(format!(
                "preprocessing has {} means for {} input channels",
                self.preprocess.mean.len(),
                self.input_channels
            )));
        }
        if !self.preprocess.scale.is_finite() || self.preprocess.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::config("preprocessing constants must be finite"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.spec.check().map_err(|e| e.at_layer(i))?;
            layer.check_params().map_err(|e| e.at_layer(i))?;
        }
        match self.layers.last() {
            Some(Layer { spec: LayerSpec::Softmax, .. }) => {}
            _ => {
                return Err(Error::Config {
                    layer: Some(self.layers.len().saturating_sub(1)),
                    msg: "final layer must be a softmax".into(),
                })
            }
        }
        let geometry = receptive_geometry(&self.layer_specs())?;
        let out = self.propagate(Shape::new(self.input_channels, geometry.window, geometry.window))?;
        if out.height != 1 || out.width != 1 {
            return Err(Error::config(format!("training window yields output {out}, expected 1x1")));
        }
        Ok(())
    }

    /// Output shape for an input shape, naming the first failing layer.
    pub fn propagate(&self, input: Shape) -> Result<Shape> {
        let mut shape = input;
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer.spec.output_shape(shape) {
                Ok(s) => s,
                Err(ShapeError::TooSmall) => {
                    return Err(match receptive_geometry(&self.layer_specs()) {
                        Ok(g) => Error::ImageTooSmall { required: g.window, height: input.height, width: input.width },
                        Err(e) => e,
                    })
                }
                Err(ShapeError::Mismatch(msg)) => return Err(Error::Config { layer: Some(i), msg }),
            };
        }
        Ok(shape)
    }

    pub fn geometry(&self) -> Result<ScanGeometry> {
        receptive_geometry(&self.layer_specs())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().filter_map(|l| l.params.as_ref()).map(|p| p.weights.len() + p.bias.len()).sum()
    }

    pub fn is_fully_convolutional(&self) -> bool {
        !self.layers.iter().any(|l| matches!(l.spec, LayerSpec::FullyConnected(_)))
    }

    /// Index of the first layer that was converted from a fully-connected
    /// layer; its input is the final convolutional feature map.
    pub fn feature_layer(&self) -> Option<usize> {
        self.layers.iter().position(|l| match &l.spec {
            LayerSpec::Convolution(c) => c.from_fc,
            LayerSpec::FullyConnected(_) => true,
            _ => false,
        })
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.run(input, None).map(|(out, _)| out)
    }

    /// Forward pass that also returns the activation entering layer `capture`.
    pub fn forward_capture(&self, input: &Tensor, capture: usize) -> Result<(Tensor, Tensor)> {
        if capture >= self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "capture layer {capture} out of range for {} layers",
                self.layers.len()
            )));
        }
        let (out, captured) = self.run(input, Some(capture))?;
        Ok((out, captured.expect("capture requested")))
    }

    fn run(&self, input: &Tensor, capture: Option<usize>) -> Result<(Tensor, Option<Tensor>)> {
        if input.channels() != self.input_channels {
            return Err(Error::config(format!(
                "network expects {} input channels, got {}",
                self.input_channels,
                input.channels()
            )));
        }
        self.propagate(input.shape())?;
        let mut x = self.preprocess.apply(input);
        let mut captured = None;
        for (i, layer) in self.layers.iter().enumerate() {
            if capture == Some(i) {
                captured = Some(x.clone());
            }
            x = forward_layer(layer, &x).map_err(|e| e.at_layer(i))?;
        }
        Ok((x, captured))
    }

    /// Rewrites every fully-connected layer as an equivalent convolution so
    /// the network accepts inputs of any size at least the training window.
    pub fn fc_to_conv(&self) -> Result<Network> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let converted = match &layer.spec {
                LayerSpec::FullyConnected(fc) => {
                    if fc.input.height != fc.input.width {
                        return Err(Error::Config {
                            layer: Some(i),
                            msg: format!("cannot convert fc over non-square input {}", fc.input),
                        });
                    }
                    let spec = LayerSpec::Convolution(ConvSpec {
                        kernel: fc.input.height,
                        stride: 1,
                        padding: 0,
                        in_channels: fc.input.channels,
                        out_channels: fc.outputs,
                        from_fc: true,
                    });
                    // Row-major (out x c*h*w) is already the conv filter layout.
                    Layer { spec, params: layer.params.clone() }
                }
                _ => layer.clone(),
            };
            layers.push(converted);
        }
        Network::new(self.input_channels, self.preprocess.clone(), layers)
    }
}

fn params(layer: &Layer) -> Result<&Params> {
    layer.params.as_ref().ok_or_else(|| Error::config(format!("{} layer is missing parameters", layer.spec.name())))
}

fn forward_layer(layer: &Layer, x: &Tensor) -> Result<Tensor> {
    let shape = x.shape();
    let out_shape = layer.spec.output_shape(shape).map_err(|e| match e {
        ShapeError::TooSmall => Error::config(format!("input {shape} smaller than kernel")),
        ShapeError::Mismatch(m) => Error::config(m),
    })?;
    let data = match &layer.spec {
        LayerSpec::Convolution(c) => {
            let p = params(layer)?;
            kernels::conv2d(x.data(), shape, &p.weights, &p.bias, c, out_shape)
        }
        LayerSpec::MaxPool(p) => kernels::maxpool(x.data(), shape, p, out_shape, None),
        LayerSpec::Relu => kernels::relu(x.data()),
        LayerSpec::FullyConnected(_) => {
            let p = params(layer)?;
            kernels::fully_connected(x.data(), &p.weights, &p.bias)
        }
        LayerSpec::LocalResponseNorm(l) => kernels::lrn(x.data(), shape, l).0,
        LayerSpec::Softmax => kernels::softmax_channels(x.data(), shape),
    };
    Tensor::from_vec(out_shape, data)
}
