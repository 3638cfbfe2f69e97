//! Minimal sequential convolutional network: layer kernels, whole-network
//! forward, fully-connected to convolution conversion and scan geometry.

mod geometry;
pub mod init;
pub mod kernels;
mod layer;
pub mod mininet;
mod network;
mod ops;

pub use geometry::{output_extent, receptive_geometry, ScanGeometry, MAX_WINDOW};
pub use layer::{ConvSpec, FcSpec, Layer, LayerSpec, LrnParams, Params, PoolSpec};
pub use network::{Network, Preprocess};
pub use ops::{conv_forward, fc_forward, lrn_forward, maxpool_forward, relu_forward, softmax, softmax_forward};
