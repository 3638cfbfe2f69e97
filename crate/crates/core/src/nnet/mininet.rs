//! Small reference network used as a desk-scale fixture: window 35, stride 4,
//! one input channel.

use super::init::init_uniform;
use super::layer::{ConvSpec, FcSpec, Layer, LayerSpec, PoolSpec};
use super::network::{Network, Preprocess};
use crate::tensor::Shape;

pub const WINDOW: usize = 35;
pub const STRIDE: usize = 4;
pub const CONV1_CHANNELS: usize = 8;
pub const CONV2_CHANNELS: usize = 8;
pub const HIDDEN: usize = 16;

pub fn layer_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Convolution(ConvSpec {
            kernel: 5,
            stride: 2,
            padding: 0,
            in_channels: 1,
            out_channels: CONV1_CHANNELS,
            from_fc: false,
        }),
        LayerSpec::Relu,
        LayerSpec::MaxPool(PoolSpec { kernel: 2, stride: 2, padding: 0 }),
        LayerSpec::Convolution(ConvSpec {
            kernel: 3,
            stride: 1,
            padding: 0,
            in_channels: CONV1_CHANNELS,
            out_channels: CONV2_CHANNELS,
            from_fc: false,
        }),
        LayerSpec::Relu,
        LayerSpec::FullyConnected(FcSpec { input: Shape::new(CONV2_CHANNELS, 6, 6), outputs: HIDDEN }),
        LayerSpec::Relu,
        LayerSpec::FullyConnected(FcSpec { input: Shape::new(HIDDEN, 1, 1), outputs: 2 }),
        LayerSpec::Softmax,
    ]
}

/// Pixel values in `[0, 255]` are mapped to roughly `[-1, 1]`.
pub fn preprocess() -> Preprocess {
    Preprocess { mean: vec![128.0], scale: 1.0 / 128.0 }
}

/// MiniNet with seeded fan-in-scaled uniform weights.
pub fn mininet(seed: u64) -> Network {
    let mut layers: Vec<Layer> = layer_specs().into_iter().map(Layer::new).collect();
    init_uniform(&mut layers, seed);
    Network::new(1, preprocess(), layers).expect("mininet is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::receptive_geometry;

    #[test]
    fn geometry_is_35_by_4() {
        let g = receptive_geometry(&layer_specs()).unwrap();
        assert_eq!((g.window, g.stride, g.valid), (WINDOW, STRIDE, true));
        let net = mininet(1);
        assert_eq!(net.geometry().unwrap(), g);
        assert_eq!(net.fc_to_conv().unwrap().geometry().unwrap(), g);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        assert_eq!(mininet(7), mininet(7));
        assert_ne!(mininet(7), mininet(8));
    }
}
