//! Dense multi-scale scanning: the fully-convolutional network is run on
//! every pyramid level and each score-map cell becomes a candidate box.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::image::{round_half_up, Image};
use crate::nms::{suppress, NmsConfig};
use crate::nnet::{LayerSpec, Network, ScanGeometry};
use crate::pyramid::{build_pyramid, PyramidConfig, PyramidLevel};
use crate::regressor::{apply_regressor, RegressorModel};

/// Output channel holding the face probability.
pub const FACE_CLASS: usize = 1;
pub const DEFAULT_SCORE_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Original-image coordinates.
    pub bbox: BBox,
    pub score: f64,
    /// Pyramid level the window came from.
    pub level: usize,
}

/// Face probabilities of one pyramid level, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub level: usize,
    pub scale: f64,
    pub rows: usize,
    pub cols: usize,
    pub scores: Vec<f32>,
    pub geometry: ScanGeometry,
    /// Original image `(height, width)`, used to clamp boxes.
    pub image_dims: (usize, usize),
}

impl HeatMap {
    pub fn score(&self, row: usize, col: usize) -> f32 {
        self.scores[row * self.cols + col]
    }

    /// Window of cell `(row, col)` in original coordinates, before clamping.
    pub fn cell_box(&self, row: usize, col: usize) -> BBox {
        let g = &self.geometry;
        BBox::new((col * g.stride) as f64, (row * g.stride) as f64, g.window as f64, g.window as f64)
            .scaled(1.0 / self.scale)
    }
}

/// Cells scoring at least `floor` (compared in `f32`), in row-major order.
pub fn cells_to_boxes(map: &HeatMap, floor: f64) -> Vec<Detection> {
    let (h, w) = map.image_dims;
    let mut out = Vec::new();
    for r in 0..map.rows {
        for c in 0..map.cols {
            let score = map.score(r, c);
            if score >= floor as f32 {
                out.push(Detection {
                    bbox: map.cell_box(r, c).clamp_to(w as f64, h as f64),
                    score: score as f64,
                    level: map.level,
                });
            }
        }
    }
    out
}

/// Grayscale rendering of a heat map, `round_half_up(255 * score)`.
pub fn render_heatmap(map: &HeatMap) -> Image {
    Image::from_fn(1, map.rows, map.cols, |_, y, x| {
        round_half_up(255.0 * map.score(y, x).clamp(0.0, 1.0) as f64) as f32
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectConfig {
    /// `min_dim` is replaced by the network window.
    pub pyramid: PyramidConfig,
    pub score_floor: f64,
    pub nms: NmsConfig,
    pub threads: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            pyramid: PyramidConfig::default(),
            score_floor: DEFAULT_SCORE_FLOOR,
            nms: NmsConfig::default(),
            threads: 1,
        }
    }
}

pub struct Detector {
    net: Network,
    geometry: ScanGeometry,
    cfg: DetectConfig,
    regressor: Option<RegressorModel>,
    feature_layer: Option<usize>,
    pool: Option<rayon::ThreadPool>,
}

struct LevelOutput {
    map: HeatMap,
    /// Per-cell feature vectors, present only when requested.
    features: Option<Vec<Vec<f32>>>,
}

impl Detector {
    /// Accepts a classifier in either form; fully-connected layers are
    /// converted once here.
    pub fn new(net: &Network, mut cfg: DetectConfig) -> Result<Self> {
        let geometry = net.geometry()?;
        let net = if net.is_fully_convolutional() { net.clone() } else { net.fc_to_conv()? };
        if !matches!(net.layers.last().map(|l| &l.spec), Some(LayerSpec::Softmax)) {
            return Err(Error::config("detector network must end in softmax"));
        }
        cfg.pyramid.min_dim = geometry.window;
        cfg.pyramid.validate()?;
        if cfg.threads == 0 {
            return Err(Error::InvalidArgument("threads must be >= 1".into()));
        }
        let pool = if cfg.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        let feature_layer = net.feature_layer();
        Ok(Detector { net, geometry, cfg, regressor: None, feature_layer, pool })
    }

    pub fn with_regressor(mut self, model: RegressorModel) -> Result<Self> {
        let dim = self.feature_dim()?;
        if model.feature_dim != dim {
            return Err(Error::config(format!(
                "regressor expects {} features but the network yields {dim}",
                model.feature_dim
            )));
        }
        self.regressor = Some(model);
        Ok(self)
    }

    pub fn geometry(&self) -> ScanGeometry {
        self.geometry
    }

    pub fn config(&self) -> &DetectConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Length of the per-window feature vector fed to the box regressor.
    pub fn feature_dim(&self) -> Result<usize> {
        match self.feature_layer.map(|i| &self.net.layers[i].spec) {
            Some(LayerSpec::Convolution(c)) => Ok(c.in_channels * c.kernel * c.kernel),
            _ => Err(Error::config("network has no converted fully-connected layer to take features from")),
        }
    }

    pub fn pyramid(&self, img: &Image) -> Result<Vec<PyramidLevel>> {
        let img = img.with_channels(self.net.input_channels)?;
        build_pyramid(&img, &self.cfg.pyramid)
    }

    fn run_level(&self, level: &PyramidLevel, dims: (usize, usize), with_features: bool) -> Result<LevelOutput> {
        let input = level.image.to_tensor();
        let (out, captured) = match (with_features, self.feature_layer) {
            (true, Some(i)) => {
                let (o, c) = self.net.forward_capture(&input, i)?;
                (o, Some(c))
            }
            (true, None) => return Err(Error::config("network has no feature layer")),
            (false, _) => (self.net.forward(&input)?, None),
        };
        let (rows, cols) = (out.height(), out.width());
        let map = HeatMap {
            level: level.index,
            scale: level.scale,
            rows,
            cols,
            scores: out.channel(FACE_CLASS).to_vec(),
            geometry: self.geometry,
            image_dims: dims,
        };
        let features = match captured {
            Some(f) => {
                let k = f.height() + 1 - rows;
                let mut all = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for c in 0..cols {
                        all.push(f.crop(c, r, k, k)?.data().to_vec());
                    }
                }
                Some(all)
            }
            None => None,
        };
        Ok(LevelOutput { map, features })
    }

    fn run_levels(&self, img: &Image, with_features: bool) -> Result<Vec<LevelOutput>> {
        let levels = self.pyramid(img)?;
        let dims = (img.height(), img.width());
        let work = || -> Result<Vec<LevelOutput>> {
            match &self.pool {
                Some(_) => levels.par_iter().map(|l| self.run_level(l, dims, with_features)).collect(),
                None => levels.iter().map(|l| self.run_level(l, dims, with_features)).collect(),
            }
        };
        match &self.pool {
            Some(pool) => pool.install(work),
            None => work(),
        }
    }

    pub fn heatmaps(&self, img: &Image) -> Result<Vec<HeatMap>> {
        Ok(self.run_levels(img, false)?.into_iter().map(|l| l.map).collect())
    }

    /// Every window at or above the score floor with its feature vector.
    pub fn candidates_with_features(&self, img: &Image) -> Result<Vec<(Detection, Vec<f32>)>> {
        let mut out = Vec::new();
        for level in self.run_levels(img, true)? {
            let feats = level.features.expect("features requested");
            let (h, w) = level.map.image_dims;
            for (i, f) in feats.into_iter().enumerate() {
                let (r, c) = (i / level.map.cols, i % level.map.cols);
                let score = level.map.scores[i];
                if score >= self.cfg.score_floor as f32 {
                    let det = Detection {
                        bbox: level.map.cell_box(r, c).clamp_to(w as f64, h as f64),
                        score: score as f64,
                        level: level.map.level,
                    };
                    out.push((det, f));
                }
            }
        }
        Ok(out)
    }

    /// Candidates before suppression, already box-regressed if a regressor
    /// is attached.
    pub fn raw_detections(&self, img: &Image) -> Result<Vec<Detection>> {
        match &self.regressor {
            Some(model) => {
                let (h, w) = (img.height() as f64, img.width() as f64);
                let cands = self.candidates_with_features(img)?;
                Ok(apply_regressor(model, &cands)?
                    .into_iter()
                    .map(|d| Detection { bbox: d.bbox.clamp_to(w, h), ..d })
                    .collect())
            }
            None => Ok(self.heatmaps(img)?.iter().flat_map(|m| cells_to_boxes(m, self.cfg.score_floor)).collect()),
        }
    }

    /// Final detections, highest score first.
    pub fn detect(&self, img: &Image) -> Result<Vec<Detection>> {
        let mut dets = suppress(&self.raw_detections(img)?, &self.cfg.nms);
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(dets)
    }
}

pub fn detect(net: &Network, img: &Image, cfg: &DetectConfig) -> Result<Vec<Detection>> {
    Detector::new(net, cfg.clone())?.detect(img)
}

/// One line of detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image: String,
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub score: f64,
}

impl DetectionRecord {
    pub fn new(image: &str, det: &Detection) -> Self {
        DetectionRecord {
            image: image.to_string(),
            x: det.bbox.x,
            y: det.bbox.y,
            width: det.bbox.width,
            height: det.bbox.height,
            score: det.score,
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(self.x, self.y, self.width, self.height)
    }
}

pub fn write_jsonl<W: Write>(out: &mut W, image: &str, dets: &[Detection]) -> Result<()> {
    for d in dets {
        let line = serde_json::to_string(&DetectionRecord::new(image, d))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn parse_jsonl(text: &str, source: &str) -> Result<Vec<DetectionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(source, i + 1, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::mininet;

    fn map(rows: usize, cols: usize, scale: f64, scores: Vec<f32>) -> HeatMap {
        HeatMap {
            level: 0,
            scale,
            rows,
            cols,
            scores,
            geometry: ScanGeometry { window: 35, stride: 4, valid: true },
            image_dims: (1000, 1000),
        }
    }

    #[test]
    fn cell_geometry() {
        let m = map(4, 4, 2.0, vec![0.5; 16]);
        let b = cells_to_boxes(&m, 0.0);
        assert_eq!(b.len(), 16);
        let cell = &b[3 * 4 + 2];
        assert_eq!(cell.bbox, BBox::new(4.0, 6.0, 17.5, 17.5));
        assert_eq!(b[0].bbox, BBox::new(0.0, 0.0, 17.5, 17.5));
    }

    #[test]
    fn floor_filters_cells() {
        let m = map(1, 3, 1.0, vec![0.005, 0.01, 0.9]);
        let b = cells_to_boxes(&m, 0.01);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1].score, 0.9f32 as f64);
    }

    #[test]
    fn boxes_clamp_to_image() {
        let mut m = map(1, 2, 1.0, vec![1.0, 1.0]);
        m.image_dims = (30, 36);
        let b = cells_to_boxes(&m, 0.0);
        assert_eq!(b[1].bbox, BBox::new(4.0, 0.0, 32.0, 30.0));
    }

    #[test]
    fn heatmap_rendering() {
        let m = map(1, 4, 1.0, vec![0.0, 0.5, 1.0, 0.25]);
        let img = render_heatmap(&m);
        assert_eq!(img.data(), &[0.0, 128.0, 255.0, 64.0]);
    }

    #[test]
    fn single_level_heat_map_size() {
        let det = Detector::new(
            &mininet::mininet(1),
            DetectConfig { pyramid: PyramidConfig { upscale: 1.0, ..Default::default() }, ..Default::default() },
        )
        .unwrap();
        let maps = det.heatmaps(&Image::filled(1, 43, 47, 100.0)).unwrap();
        assert_eq!((maps[0].rows, maps[0].cols), (3, 4));
        assert!(maps.iter().all(|m| m.scores.iter().all(|s| (0.0..=1.0).contains(s))));
    }

    #[test]
    fn threads_do_not_change_output() {
        let net = mininet::mininet(5);
        let img = Image::from_fn(1, 80, 90, |_, y, x| ((x * 7 + y * 13) % 256) as f32);
        let base = DetectConfig {
            pyramid: PyramidConfig { upscale: 2.0, ..Default::default() },
            score_floor: 0.0,
            ..Default::default()
        };
        let one = detect(&net, &img, &base).unwrap();
        let four = detect(&net, &img, &DetectConfig { threads: 4, ..base }).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn small_image_yields_nothing() {
        let det = Detector::new(
            &mininet::mininet(1),
            DetectConfig { pyramid: PyramidConfig { upscale: 1.0, ..Default::default() }, ..Default::default() },
        )
        .unwrap();
        assert!(det.detect(&Image::filled(1, 20, 20, 0.0)).unwrap().is_empty());
    }

    #[test]
    fn feature_vectors_match_window_crops() {
        let det = Detector::new(
            &mininet::mininet(2),
            DetectConfig {
                pyramid: PyramidConfig { upscale: 1.0, ..Default::default() },
                score_floor: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(det.feature_dim().unwrap(), 8 * 6 * 6);
        let img = Image::from_fn(1, 43, 39, |_, y, x| ((x * 31 + y * 17) % 256) as f32);
        let cands = det.candidates_with_features(&img).unwrap();
        assert_eq!(cands.len(), 3 * 2);
        let fl = det.network().feature_layer().unwrap();
        let (_, f) = det.network().forward_capture(&img.to_tensor().crop(4, 8, 35, 35).unwrap(), fl).unwrap();
        assert_eq!(cands[2 * 2 + 1].1, f.data());
    }

    #[test]
    fn jsonl_roundtrip() {
        let d = Detection { bbox: BBox::new(1.5, 2.0, 30.0, 31.0), score: 0.75, level: 2 };
        let mut buf = Vec::new();
        write_jsonl(&mut buf, "a.pgm", &[d.clone(), d]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(r#"{"image":"a.pgm","x":1.5,"y":2.0,"width":30.0,"height":31.0,"score":0.75}"#));
        let back = parse_jsonl(&text, "t").unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].bbox(), BBox::new(1.5, 2.0, 30.0, 31.0));
        assert!(parse_jsonl("{bad", "t").is_err());
    }
}
