//! Multi-scale image pyramid: one upscale jump, then repeated shrinking by a
//! fixed per-level ratio until the smaller side drops below the scan window.

use crate::error::{Error, Result};
use crate::image::{round_half_up, Image};

/// Per-level downscale ratios compared when choosing the pyramid density:
/// 2, 3, 5 and 7 levels per octave.
pub const CANDIDATE_RATIOS: [f64; 4] =
    [0.707_106_781_186_547_5, 0.793_700_525_984_099_7, 0.870_550_563_296_124_1, 0.905_723_664_263_906_3];

/// Three levels per octave.
pub fn default_ratio() -> f64 {
    0.5f64.cbrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidConfig {
    /// Scale of level 0 relative to the original image.
    pub upscale: f64,
    /// Ratio between consecutive levels, in `(0, 1)`.
    pub ratio: f64,
    /// Smallest allowed level side; normally the network window.
    pub min_dim: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig { upscale: 5.0, ratio: default_ratio(), min_dim: 227 }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::InvalidArgument(format!("level ratio must be in (0, 1), got {}", self.ratio)));
        }
        if !(self.upscale.is_finite() && self.upscale >= 1.0) {
            return Err(Error::InvalidArgument(format!("upscale must be >= 1, got {}", self.upscale)));
        }
        if self.min_dim == 0 {
            return Err(Error::InvalidArgument("min_dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Smallest object side (original pixels) a level-0 window covers.
    pub fn min_object_size(&self) -> f64 {
        self.min_dim as f64 / self.upscale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub index: usize,
    /// Level resolution over original resolution.
    pub scale: f64,
    pub image: Image,
}

/// Planned `(scale, height, width)` of every level, without resampling.
pub fn plan_levels(height: usize, width: usize, cfg: &PyramidConfig) -> Result<Vec<(f64, usize, usize)>> {
    cfg.validate()?;
    let mut levels = Vec::new();
    for k in 0.. {
        let scale = cfg.upscale * cfg.ratio.powi(k);
        let h = round_half_up(height as f64 * scale);
        let w = round_half_up(width as f64 * scale);
        if h.min(w) < cfg.min_dim {
            break;
        }
        levels.push((scale, h, w));
    }
    Ok(levels)
}

/// Every level is resampled directly from `img`. An empty result means the
/// image is too small even at level 0.
pub fn build_pyramid(img: &Image, cfg: &PyramidConfig) -> Result<Vec<PyramidLevel>> {
    plan_levels(img.height(), img.width(), cfg)?
        .into_iter()
        .enumerate()
        .map(|(index, (scale, h, w))| {
            let image = img.resize_bilinear(scale)?;
            debug_assert_eq!((image.height(), image.width()), (h, w));
            Ok(PyramidLevel { index, scale, image })
        })
        .collect()
}
