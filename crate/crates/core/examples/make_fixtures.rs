//! Regenerates the files in `fixtures/`.
//!
//! `cargo run -p densescan --example make_fixtures`

use std::path::Path;

use densescan::model_io::{manifest_text, save_model_prefix};
use densescan::nnet::{mininet, ConvSpec, FcSpec, Layer, LayerSpec, LrnParams, Network, PoolSpec, Preprocess};
use densescan::Shape;

/// Seed of the MiniNet weights in `fixtures/mininet.*`.
const MININET_SEED: u64 = 1;

fn conv(kernel: usize, stride: usize, padding: usize, in_channels: usize, out_channels: usize) -> LayerSpec {
    LayerSpec::Convolution(ConvSpec { kernel, stride, padding, in_channels, out_channels, from_fc: false })
}

fn pool() -> LayerSpec {
    LayerSpec::MaxPool(PoolSpec { kernel: 3, stride: 2, padding: 0 })
}

/// The eight-layer AlexNet stack with a two-way classifier. Parameters are
/// absent; only the manifest is written.
fn alexnet() -> Network {
    let specs = vec![
        conv(11, 4, 0, 3, 96),
        LayerSpec::Relu,
        LayerSpec::LocalResponseNorm(LrnParams::default()),
        pool(),
        conv(5, 1, 2, 96, 256),
        LayerSpec::Relu,
        LayerSpec::LocalResponseNorm(LrnParams::default()),
        pool(),
        conv(3, 1, 1, 256, 384),
        LayerSpec::Relu,
        conv(3, 1, 1, 384, 384),
        LayerSpec::Relu,
        conv(3, 1, 1, 384, 256),
        LayerSpec::Relu,
        pool(),
        LayerSpec::FullyConnected(FcSpec { input: Shape::new(256, 6, 6), outputs: 4096 }),
        LayerSpec::Relu,
        LayerSpec::FullyConnected(FcSpec { input: Shape::new(4096, 1, 1), outputs: 4096 }),
        LayerSpec::Relu,
        LayerSpec::FullyConnected(FcSpec { input: Shape::new(4096, 1, 1), outputs: 2 }),
        LayerSpec::Softmax,
    ];
    Network {
        input_channels: 3,
        preprocess: Preprocess { mean: vec![104.0, 117.0, 123.0], scale: 1.0 },
        layers: specs.into_iter().map(Layer::new).collect(),
    }
}

fn main() -> densescan::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir)?;
    save_model_prefix(&mininet::mininet(MININET_SEED), dir.join("mininet"))?;
    std::fs::write(dir.join("alexnet.manifest"), manifest_text(&alexnet()))?;
    Ok(())
}
