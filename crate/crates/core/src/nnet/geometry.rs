use super::layer::{window_output, LayerSpec};
use crate::error::{Error, Result};

/// Largest square input considered when searching for the receptive window.
pub const MAX_WINDOW: usize = 10_000;

/// Input window scored by one output cell, and the spacing between cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanGeometry {
    pub window: usize,
    pub stride: usize,
    /// False when some layer pads its input, in which case `window` and
    /// `stride` are nominal rather than exact.
    pub valid: bool,
}

/// Spatial size after `layers`, treating fully-connected layers as
/// convolutions whose kernel spans their recorded input.
fn propagate(layers: &[LayerSpec], mut size: usize) -> Option<usize> {
    for layer in layers {
        size = match layer {
            LayerSpec::Convolution(c) => window_output(size, c.kernel, c.stride, c.padding)?,
            LayerSpec::MaxPool(p) => window_output(size, p.kernel, p.stride, p.padding)?,
            LayerSpec::FullyConnected(f) => {
                if f.input.height != f.input.width {
                    return None;
                }
                window_output(size, f.input.height, 1, 0)?
            }
            LayerSpec::Relu | LayerSpec::LocalResponseNorm(_) | LayerSpec::Softmax => size,
        };
    }
    Some(size)
}

/// Effective stride and smallest square window that maps to a single
/// output cell.
pub fn receptive_geometry(layers: &[LayerSpec]) -> Result<ScanGeometry> {
    let stride: usize = layers.iter().map(LayerSpec::stride).product();
    let valid = layers.iter().all(|l| l.padding() == 0);
    let window = (1..=MAX_WINDOW)
        .find(|&w| propagate(layers, w) == Some(1))
        .ok_or_else(|| Error::config(format!("no square input up to {MAX_WINDOW} pixels yields a 1x1 output")))?;
    if window < stride {
        return Err(Error::config(format!("receptive window {window} is smaller than the effective stride {stride}")));
    }
    Ok(ScanGeometry { window, stride, valid })
}

/// Output grid extent for an input of `size` pixels, if any.
pub fn output_extent(layers: &[LayerSpec], size: usize) -> Option<usize> {
    propagate(layers, size)
}
