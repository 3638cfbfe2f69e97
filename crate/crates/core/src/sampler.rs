//! Training patches: jittered positives, random negatives, flips, batch
//! composition, and pose histograms.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::Tensor;

pub const POSITIVE_IOU: f64 = 0.5;
pub const NEGATIVE_IOU: f64 = 0.3;
/// Positive proposals scale the gt box by a log-uniform factor in this range.
pub const JITTER_SCALE: (f64, f64) = (0.7, 1.4);
/// Positive proposals move the gt centre by up to this fraction of its size.
pub const JITTER_SHIFT: f64 = 0.5;
pub const ATTEMPTS_PER_PATCH: usize = 1000;
/// Near-gt negative proposals scale a gt box log-uniformly in this range...
pub const HARD_NEGATIVE_SCALE: (f64, f64) = (0.5, 2.5);
/// ...and move its centre by up to this fraction of its size.
pub const HARD_NEGATIVE_SHIFT: f64 = 1.0;

/// Class index in the network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Background = 0,
    Face = 1,
}

impl Label {
    pub fn class(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Background => "background",
            Label::Face => "face",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// `channels x window x window`, raw pixel values.
    pub tensor: Tensor,
    pub label: Label,
    pub source: String,
    /// Window in source-image coordinates.
    pub rect: BBox,
    pub flipped: bool,
}

/// Patch extraction parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchConfig {
    /// Output side; the network window.
    pub window: usize,
    /// Smallest negative window side in source pixels.
    pub min_negative_side: f64,
    /// Share of negative proposals drawn around a ground-truth box rather
    /// than uniformly over the image.
    pub near_gt_fraction: f64,
    pub attempts_per_patch: usize,
}

impl PatchConfig {
    pub fn new(window: usize) -> Self {
        PatchConfig { window, min_negative_side: 8.0, near_gt_fraction: 0.5, attempts_per_patch: ATTEMPTS_PER_PATCH }
    }
}

/// splitmix64 finaliser of `master + (index + 1) * golden`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn inside(r: &BBox, img: &Image) -> bool {
    r.x >= 0.0 && r.y >= 0.0 && r.right() <= img.width() as f64 && r.bottom() <= img.height() as f64
}

fn extract(img: &Image, id: &str, rect: BBox, label: Label, window: usize) -> Patch {
    let data = img.resample_rect(rect.x, rect.y, rect.width, rect.height, window, window);
    Patch { tensor: data.to_tensor(), label, source: id.to_string(), rect, flipped: false }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.gen_range(lo.ln()..hi.ln()).exp()
    }
}

/// Jittered copies of ground-truth boxes kept when their IOU with some gt
/// exceeds `iou_min`; windows lie inside the image.
pub fn sample_positives(
    img: &Image,
    id: &str,
    gts: &[BBox],
    iou_min: f64,
    count: usize,
    seed: u64,
    cfg: &PatchConfig,
) -> Result<Vec<Patch>> {
    if !(iou_min > 0.0 && iou_min <= 1.0) {
        return Err(Error::InvalidArgument(format!("iou-min must be in (0, 1], got {iou_min}")));
    }
    if gts.is_empty() {
        return Err(Error::InvalidArgument("positive sampling needs at least one ground-truth box".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = count.saturating_mul(cfg.attempts_per_patch);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        if attempts == budget {
            return Err(Error::SamplingExhausted { attempts });
        }
        attempts += 1;
        let gt = gts[rng.gen_range(0..gts.len())];
        let s = log_uniform(&mut rng, JITTER_SCALE.0, JITTER_SCALE.1);
        let (cx, cy) = gt.center();
        let cx = cx + rng.gen_range(-JITTER_SHIFT..=JITTER_SHIFT) * gt.width;
        let cy = cy + rng.gen_range(-JITTER_SHIFT..=JITTER_SHIFT) * gt.height;
        let (w, h) = (gt.width * s, gt.height * s);
        let rect = BBox::new(cx - w / 2.0, cy - h / 2.0, w, h);
        if inside(&rect, img) && gts.iter().any(|g| rect.iou(g) > iou_min) {
            out.push(extract(img, id, rect, Label::Face, cfg.window));
        }
    }
    Ok(out)
}

/// Square windows with IOU at most `iou_max` against every gt. A
/// `near_gt_fraction` share of proposals are widely jittered gt boxes (hard
/// negatives: partial and loose views of objects); the rest have a
/// log-uniform side and uniform position.
pub fn sample_negatives(
    img: &Image,
    id: &str,
    gts: &[BBox],
    iou_max: f64,
    count: usize,
    seed: u64,
    cfg: &PatchConfig,
) -> Result<Vec<Patch>> {
    if !(0.0..1.0).contains(&iou_max) {
        return Err(Error::InvalidArgument(format!("iou-max must be in [0, 1), got {iou_max}")));
    }
    let max_side = img.min_dim() as f64;
    let min_side = cfg.min_negative_side.min(max_side);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = count.saturating_mul(cfg.attempts_per_patch);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        if attempts == budget {
            return Err(Error::SamplingExhausted { attempts });
        }
        attempts += 1;
        let near = !gts.is_empty() && rng.gen_bool(cfg.near_gt_fraction);
        let rect = if near {
            let gt = gts[rng.gen_range(0..gts.len())];
            let side = log_uniform(&mut rng, HARD_NEGATIVE_SCALE.0, HARD_NEGATIVE_SCALE.1) * gt.width.max(gt.height);
            let (cx, cy) = gt.center();
            let cx = cx + rng.gen_range(-HARD_NEGATIVE_SHIFT..=HARD_NEGATIVE_SHIFT) * gt.width;
            let cy = cy + rng.gen_range(-HARD_NEGATIVE_SHIFT..=HARD_NEGATIVE_SHIFT) * gt.height;
            BBox::new(cx - side / 2.0, cy - side / 2.0, side, side)
        } else {
            let side = log_uniform(&mut rng, min_side, max_side);
            let x = rng.gen_range(0.0..=img.width() as f64 - side);
            let y = rng.gen_range(0.0..=img.height() as f64 - side);
            BBox::new(x, y, side, side)
        };
        if inside(&rect, img) && rect.width >= min_side && gts.iter().all(|g| rect.iou(g) <= iou_max) {
            out.push(extract(img, id, rect, Label::Background, cfg.window));
        }
    }
    Ok(out)
}

/// Horizontal mirror; toggles the flipped flag.
pub fn flip_patch(p: &Patch) -> Patch {
    Patch { tensor: p.tensor.flip_horizontal(), flipped: !p.flipped, ..p.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSpec {
    pub size: usize,
    pub positive_fraction: f64,
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec { size: 128, positive_fraction: 0.25 }
    }
}

impl BatchSpec {
    pub fn positives(&self) -> Result<usize> {
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "positive fraction must be in (0, 1), got {}",
                self.positive_fraction
            )));
        }
        let n = self.size as f64 * self.positive_fraction;
        if self.size == 0 || (n - n.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "batch size {} times fraction {} is not a whole number",
                self.size, self.positive_fraction
            )));
        }
        Ok(n.round() as usize)
    }
}

/// One batch slot: which pool, which index, flipped or not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSlot {
    pub label: Label,
    pub index: usize,
    pub flip: bool,
}

/// Draws the slots of one batch: uniform with replacement from each pool,
/// a fair coin per flip, then a shuffle.
pub fn plan_batch(num_pos: usize, num_neg: usize, spec: &BatchSpec, seed: u64) -> Result<Vec<BatchSlot>> {
    let npos = spec.positives()?;
    if num_pos == 0 || num_neg == 0 {
        return Err(Error::InvalidArgument("batch composition needs non-empty positive and negative pools".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<BatchSlot> = (0..spec.size)
        .map(|i| {
            let (label, n) = if i < npos { (Label::Face, num_pos) } else { (Label::Background, num_neg) };
            BatchSlot { label, index: rng.gen_range(0..n), flip: rng.gen_bool(0.5) }
        })
        .collect();
    slots.shuffle(&mut rng);
    Ok(slots)
}

pub fn compose_batch(pos: &[Patch], neg: &[Patch], spec: &BatchSpec, seed: u64) -> Result<Vec<Patch>> {
    Ok(plan_batch(pos.len(), neg.len(), spec, seed)?
        .into_iter()
        .map(|s| {
            let p = match s.label {
                Label::Face => &pos[s.index],
                Label::Background => &neg[s.index],
            };
            if s.flip {
                flip_patch(p)
            } else {
                p.clone()
            }
        })
        .collect())
}

/// Per-image sampling counts for [`build_pools`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolConfig {
    pub positives_per_image: usize,
    pub negatives_per_image: usize,
    pub iou_min: f64,
    pub iou_max: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { positives_per_image: 20, negatives_per_image: 60, iou_min: POSITIVE_IOU, iou_max: NEGATIVE_IOU }
    }
}

/// Positive and negative pools over a corpus; image `i` samples with seeds
/// `derive_seed(seed, 2i)` and `derive_seed(seed, 2i + 1)`.
pub fn build_pools(
    corpus: &[(String, Image, Vec<BBox>)],
    pool: &PoolConfig,
    cfg: &PatchConfig,
    seed: u64,
) -> Result<(Vec<Patch>, Vec<Patch>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, (id, img, gts)) in corpus.iter().enumerate() {
        let i = i as u64;
        if !gts.is_empty() {
            pos.extend(sample_positives(
                img,
                id,
                gts,
                pool.iou_min,
                pool.positives_per_image,
                derive_seed(seed, 2 * i),
                cfg,
            )?);
        }
        neg.extend(sample_negatives(
            img,
            id,
            gts,
            pool.iou_max,
            pool.negatives_per_image,
            derive_seed(seed, 2 * i + 1),
            cfg,
        )?);
    }
    Ok((pos, neg))
}

/// Writes `NNNNNN.pgm` per patch plus `index.tsv` with
/// `file label source x y width height flipped` rows.
pub fn write_patch_dump(dir: impl AsRef<Path>, patches: &[Patch]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut index = String::from("file\tlabel\tsource\tx\ty\twidth\theight\tflipped\n");
    for (i, p) in patches.iter().enumerate() {
        let name = format!("{i:06}.pgm");
        let s = p.tensor.shape();
        let img = Image::new(s.channels, s.height, s.width, p.tensor.data().to_vec())?.with_channels(1)?;
        img.save(dir.join(&name))?;
        let r = &p.rect;
        let _ = writeln!(
            index,
            "{name}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.label.name(),
            p.source,
            r.x,
            r.y,
            r.width,
            r.height,
            p.flipped as u8
        );
    }
    std::fs::write(dir.join("index.tsv"), index)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseAnnotation {
    pub id: String,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

/// Lines `id roll pitch yaw` in degrees, separated by whitespace or commas.
pub fn parse_poses(text: &str, source: &str) -> Result<Vec<PoseAnnotation>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        if f.len() != 4 {
            return Err(Error::parse(source, i + 1, "expected `id roll pitch yaw`"));
        }
        let mut a = [0.0; 3];
        for (slot, v) in a.iter_mut().zip(&f[1..]) {
            *slot = v
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::parse(source, i + 1, format!("bad angle `{v}`")))?;
        }
        out.push(PoseAnnotation { id: f[0].to_string(), roll: a[0], pitch: a[1], yaw: a[2] });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseHistograms {
    pub bin_width: f64,
    pub roll: Vec<u64>,
    pub pitch: Vec<u64>,
    pub yaw: Vec<u64>,
}

impl PoseHistograms {
    /// Lower edge of bin `i`.
    pub fn bin_start(&self, i: usize) -> f64 {
        -180.0 + i as f64 * self.bin_width
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_start,roll,pitch,yaw\n");
        for i in 0..self.roll.len() {
            let _ = writeln!(s, "{},{},{},{}", self.bin_start(i), self.roll[i], self.pitch[i], self.yaw[i]);
        }
        s
    }
}

/// Bins of width `bin_width` starting at -180; angles wrap into [-180, 180).
pub fn pose_histogram(annos: &[PoseAnnotation], bin_width: f64) -> Result<PoseHistograms> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidArgument(format!("bin width must be positive, got {bin_width}")));
    }
    let bins = (360.0 / bin_width).ceil() as usize;
    let bin = |a: f64| (((a + 180.0).rem_euclid(360.0) / bin_width).floor() as usize).min(bins - 1);
    let mut h = PoseHistograms { bin_width, roll: vec![0; bins], pitch: vec![0; bins], yaw: vec![0; bins] };
    for a in annos {
        h.roll[bin(a.roll)] += 1;
        h.pitch[bin(a.pitch)] += 1;
        h.yaw[bin(a.yaw)] += 1;
    }
    Ok(h)
}
