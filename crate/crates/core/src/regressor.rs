//! Box regression: proposal-relative delta encoding and a ridge-regressed
//! linear model from detection features to deltas.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::bbox::BBox;
use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::model_io::{records, KeyValues, ModelPaths};

pub const DEFAULT_LAMBDA: f64 = 1000.0;
/// Proposals are paired with a ground-truth box for training only above this IOU.
pub const PAIRING_IOU: f64 = 0.6;

/// Centre offsets in proposal units and log size ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDeltas {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxDeltas {
    pub const ZERO: BoxDeltas = BoxDeltas { tx: 0.0, ty: 0.0, tw: 0.0, th: 0.0 };

    pub fn as_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BoxDeltas { tx: a[0], ty: a[1], tw: a[2], th: a[3] }
    }
}

fn positive(b: &BBox, what: &str) -> Result<()> {
    if b.width > 0.0 && b.height > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} box must have positive size, got {b:?}")))
    }
}

pub fn encode_targets(proposal: &BBox, gt: &BBox) -> Result<BoxDeltas> {
    positive(proposal, "proposal")?;
    positive(gt, "ground-truth")?;
    let (pcx, pcy) = proposal.center();
    let (gcx, gcy) = gt.center();
    Ok(BoxDeltas {
        tx: (gcx - pcx) / proposal.width,
        ty: (gcy - pcy) / proposal.height,
        tw: (gt.width / proposal.width).ln(),
        th: (gt.height / proposal.height).ln(),
    })
}

/// Inverse of [`encode_targets`].
pub fn decode(proposal: &BBox, d: &BoxDeltas) -> BBox {
    let (pcx, pcy) = proposal.center();
    let w = proposal.width * d.tw.exp();
    let h = proposal.height * d.th.exp();
    let cx = pcx + d.tx * proposal.width;
    let cy = pcy + d.ty * proposal.height;
    BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSample {
    pub features: Vec<f64>,
    pub proposal: BBox,
    pub gt: BBox,
}

/// One linear predictor per delta component.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    pub feature_dim: usize,
    pub lambda: f64,
    pub weights: [Vec<f64>; 4],
    pub bias: [f64; 4],
}

impl RegressorModel {
    pub fn zeros(feature_dim: usize, lambda: f64) -> Self {
        RegressorModel { feature_dim, lambda, weights: std::array::from_fn(|_| vec![0.0; feature_dim]), bias: [0.0; 4] }
    }

    pub fn predict(&self, features: &[f64]) -> Result<BoxDeltas> {
        if features.len() != self.feature_dim {
            return Err(Error::InvalidArgument(format!(
                "regressor expects {} features, got {}",
                self.feature_dim,
                features.len()
            )));
        }
        Ok(BoxDeltas::from_array(std::array::from_fn(|k| {
            self.bias[k] + self.weights[k].iter().zip(features).map(|(w, x)| w * x).sum::<f64>()
        })))
    }
}

/// Keeps `(features, proposal, gt)` triples whose proposal overlaps its
/// best ground-truth box with IOU >= `min_iou`.
pub fn pair_samples(candidates: &[(Detection, Vec<f32>)], gts: &[BBox], min_iou: f64) -> Vec<RegressionSample> {
    candidates
        .iter()
        .filter_map(|(det, feats)| {
            let (best, iou) =
                gts.iter().map(|g| (g, det.bbox.iou(g))).fold(None, |acc: Option<(&BBox, f64)>, cur| match acc {
                    Some(a) if a.1 >= cur.1 => Some(a),
                    _ => Some(cur),
                })?;
            (iou >= min_iou && det.bbox.width > 0.0 && det.bbox.height > 0.0).then(|| RegressionSample {
                features: feats.iter().map(|&v| v as f64).collect(),
                proposal: det.bbox,
                gt: *best,
            })
        })
        .collect()
}

/// Solves `(Xc^T Xc + lambda I) w = Xc^T tc` for each delta on mean-centred
/// features and targets; the bias absorbs the means and is not regularised.
pub fn train_regressor(samples: &[RegressionSample], lambda: f64) -> Result<RegressorModel> {
    let first = samples.first().ok_or_else(|| Error::InvalidArgument("regressor needs at least one sample".into()))?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let dim = first.features.len();
    let n = samples.len();
    if let Some(s) = samples.iter().find(|s| s.features.len() != dim) {
        return Err(Error::InvalidArgument(format!("feature dimension {} differs from {dim}", s.features.len())));
    }
    let mut x = DMatrix::<f64>::zeros(n, dim);
    let mut t = DMatrix::<f64>::zeros(n, 4);
    for (i, s) in samples.iter().enumerate() {
        for (j, &v) in s.features.iter().enumerate() {
            x[(i, j)] = v;
        }
        let d = encode_targets(&s.proposal, &s.gt)?.as_array();
        for k in 0..4 {
            t[(i, k)] = d[k];
        }
    }
    let x_mean: DVector<f64> = x.row_mean().transpose();
    let t_mean: DVector<f64> = t.row_mean().transpose();
    for i in 0..n {
        for j in 0..dim {
            x[(i, j)] -= x_mean[j];
        }
        for k in 0..4 {
            t[(i, k)] -= t_mean[k];
        }
    }
    let mut a = x.transpose() * &x;
    for j in 0..dim {
        a[(j, j)] += lambda;
    }
    let b = x.transpose() * &t;
    let w = if dim == 0 {
        DMatrix::<f64>::zeros(0, 4)
    } else {
        let max_diag = (0..dim).map(|j| a[(j, j)]).fold(0.0, f64::max);
        let chol = a.clone().cholesky().ok_or(Error::IllConditioned)?;
        let l = chol.l();
        let min_pivot = (0..dim).map(|j| l[(j, j)] * l[(j, j)]).fold(f64::INFINITY, f64::min);
        // also rejects a NaN pivot
        if min_pivot.partial_cmp(&(1e-12 * max_diag)) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::IllConditioned);
        }
        chol.solve(&b)
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("ridge solution is not finite".into()));
    }
    let bias = std::array::from_fn(|k| t_mean[k] - (0..dim).map(|j| x_mean[j] * w[(j, k)]).sum::<f64>());
    Ok(RegressorModel {
        feature_dim: dim,
        lambda,
        weights: std::array::from_fn(|k| w.column(k).iter().copied().collect()),
        bias,
    })
}

/// Replaces each box by its regressed box; scores are untouched.
pub fn apply_regressor(model: &RegressorModel, dets: &[(Detection, Vec<f32>)]) -> Result<Vec<Detection>> {
    dets.iter()
        .map(|(det, feats)| {
            let f: Vec<f64> = feats.iter().map(|&v| v as f64).collect();
            let d = model.predict(&f)?;
            Ok(Detection { bbox: decode(&det.bbox, &d), ..det.clone() })
        })
        .collect()
}

pub const REGRESSOR_MAGIC: &str = "densescan-regressor";
const DELTA_NAMES: [&str; 4] = ["tx", "ty", "tw", "th"];

/// Manifest text in the same record style as network manifests; each
/// delta's span holds its weights followed by its bias as little-endian f32.
pub fn regressor_manifest(model: &RegressorModel) -> String {
    let count = model.feature_dim as u64 + 1;
    let mut out = format!("{REGRESSOR_MAGIC} 1\nfeature_dim {}\nlambda {}\n", model.feature_dim, model.lambda);
    for (k, name) in DELTA_NAMES.iter().enumerate() {
        out.push_str(&format!("delta {name} offset={} count={count}\n", k as u64 * 4 * count));
    }
    out.push_str(&format!("blob_bytes {}\nend\n", 16 * count));
    out
}

pub fn save_regressor(model: &RegressorModel, prefix: impl AsRef<Path>) -> Result<ModelPaths> {
    let paths = ModelPaths::from_prefix(prefix);
    std::fs::write(&paths.manifest, regressor_manifest(model))?;
    let mut w = BufWriter::new(File::create(&paths.weights)?);
    for k in 0..4 {
        for v in model.weights[k].iter().chain(std::iter::once(&model.bias[k])) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(paths)
}

pub fn load_regressor(prefix: impl AsRef<Path>) -> Result<RegressorModel> {
    let paths = ModelPaths::from_prefix(prefix);
    let source = paths.manifest.display().to_string();
    let text = std::fs::read_to_string(&paths.manifest)?;
    let mut recs = records(&text);
    match recs.next() {
        Some(r) if r.head == REGRESSOR_MAGIC => {
            let v: u32 = r.words.first().and_then(|v| v.parse().ok()).unwrap_or(0);
            if v != 1 {
                return Err(Error::UnsupportedVersion(v));
            }
        }
        _ => return Err(Error::BadMagic { expected: REGRESSOR_MAGIC }),
    }
    let mut dim = None;
    let mut lambda = DEFAULT_LAMBDA;
    let mut deltas = 0;
    for rec in recs {
        let value = || {
            rec.words
                .first()
                .copied()
                .ok_or_else(|| Error::parse(&source, rec.line, format!("`{}` needs a value", rec.head)))
        };
        match rec.head {
            "feature_dim" => {
                dim = Some(value()?.parse::<usize>().map_err(|_| Error::parse(&source, rec.line, "bad feature_dim"))?)
            }
            "lambda" => lambda = value()?.parse().map_err(|_| Error::parse(&source, rec.line, "bad lambda"))?,
            "delta" => {
                let d = dim.ok_or_else(|| Error::parse(&source, rec.line, "delta before feature_dim"))?;
                if rec.words.first() != Some(&DELTA_NAMES[deltas.min(3)]) {
                    return Err(Error::parse(&source, rec.line, "deltas must be tx, ty, tw, th in order"));
                }
                let mut kv = KeyValues::parse(&source, rec.line, &rec.words[1..])?;
                let offset: u64 = kv.take("offset")?;
                let count: u64 = kv.take("count")?;
                kv.finish()?;
                if count != d as u64 + 1 || offset != deltas as u64 * 4 * count {
                    return Err(Error::config(format!(
                        "delta {} span does not match feature_dim {d}",
                        DELTA_NAMES[deltas]
                    )));
                }
                deltas += 1;
            }
            "blob_bytes" | "end" => {}
            other => return Err(Error::parse(&source, rec.line, format!("unknown record `{other}`"))),
        }
    }
    let dim = dim.ok_or_else(|| Error::parse(&source, 0, "missing feature_dim"))?;
    if deltas != 4 {
        return Err(Error::parse(&source, 0, "expected four delta records"));
    }
    let mut blob = Vec::new();
    BufReader::new(File::open(&paths.weights)?).read_to_end(&mut blob)?;
    let need = 16 * (dim + 1);
    if blob.len() < need {
        return Err(Error::Truncated { layer: blob.len() / (4 * (dim + 1)) });
    }
    if blob.len() > need {
        return Err(Error::TrailingBytes { extra: (blob.len() - need) as u64 });
    }
    let vals: Vec<f64> = blob.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    let mut model = RegressorModel::zeros(dim, lambda);
    for (k, chunk) in vals.chunks(dim + 1).enumerate() {
        model.weights[k] = chunk[..dim].to_vec();
        model.bias[k] = chunk[dim];
    }
    Ok(model)
}
