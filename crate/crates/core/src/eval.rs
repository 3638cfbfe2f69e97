//! Ground-truth parsing, detection matching, precision/recall and AP.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::bbox::BBox;
use crate::detector::{parse_jsonl, DetectionRecord};
use crate::error::{Error, Result};

pub const DEFAULT_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image: String,
    pub boxes: Vec<BBox>,
}

fn group(entries: Vec<(String, Option<BBox>)>) -> Vec<GroundTruth> {
    let mut out: Vec<GroundTruth> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (image, bbox) in entries {
        let i = *index.entry(image.clone()).or_insert_with(|| {
            out.push(GroundTruth { image, boxes: Vec::new() });
            out.len() - 1
        });
        out[i].boxes.extend(bbox);
    }
    out
}

/// Lines `image-id x y w h`; `#` comments and blank lines are skipped.
/// Images keep the order of their first appearance.
pub fn parse_rect_annotations(text: &str, source: &str) -> Result<Vec<GroundTruth>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::parse(source, i + 1, format!("expected `id x y w h`, got {} fields", fields.len())));
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::parse(source, i + 1, format!("bad number `{f}`")))?;
        }
        if v[2] <= 0.0 || v[3] <= 0.0 {
            return Err(Error::parse(source, i + 1, "box width and height must be positive"));
        }
        entries.push((fields[0].to_string(), Some(BBox::new(v[0], v[1], v[2], v[3]))));
    }
    Ok(group(entries))
}

/// Tight axis-aligned box of an ellipse whose major radius `ra` is vertical
/// at `theta = 0` (radians, FDDB convention).
pub fn ellipse_to_rect(ra: f64, rb: f64, theta: f64, cx: f64, cy: f64) -> BBox {
    let (s, c) = theta.sin_cos();
    let hw = (ra * ra * s * s + rb * rb * c * c).sqrt();
    let hh = (ra * ra * c * c + rb * rb * s * s).sqrt();
    BBox::new(cx - hw, cy - hh, 2.0 * hw, 2.0 * hh)
}

/// FDDB fold layout: image path, face count, then that many lines
/// `major_radius minor_radius angle cx cy 1`.
pub fn parse_fddb_ellipses(text: &str, source: &str) -> Result<Vec<GroundTruth>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut entries = Vec::new();
    while let Some((_, path)) = lines.next() {
        let path = path.trim().to_string();
        let (cl, count) = lines.next().ok_or_else(|| Error::parse(source, 0, format!("{path}: missing face count")))?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| Error::parse(source, cl + 1, format!("{path}: bad face count `{}`", count.trim())))?;
        entries.push((path.clone(), None));
        for k in 0..count {
            let (el, line) = lines
                .next()
                .ok_or_else(|| Error::parse(source, 0, format!("{path}: expected {count} ellipses, found {k}")))?;
            let nums: Option<Vec<f64>> =
                line.split_whitespace().map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite())).collect();
            match nums.as_deref() {
                Some([ra, rb, theta, cx, cy, ..]) if *ra > 0.0 && *rb > 0.0 => {
                    entries.push((path.clone(), Some(ellipse_to_rect(*ra, *rb, *theta, *cx, *cy))))
                }
                _ => {
                    return Err(Error::parse(
                        source,
                        el + 1,
                        format!("{path}: expected {count} ellipses, line {} is not one", k + 1),
                    ))
                }
            }
        }
    }
    Ok(group(entries))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtFormat {
    Rect,
    Fddb,
}

pub fn load_ground_truth(path: impl AsRef<Path>, format: GtFormat) -> Result<Vec<GroundTruth>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let source = path.display().to_string();
    match format {
        GtFormat::Rect => parse_rect_annotations(&text, &source),
        GtFormat::Fddb => parse_fddb_ellipses(&text, &source),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    TruePositive,
    FalsePositive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDetection {
    pub bbox: BBox,
    pub score: f64,
    pub verdict: Verdict,
    /// Index into the image's ground-truth boxes.
    pub matched: Option<usize>,
}

impl LabeledDetection {
    pub fn is_tp(&self) -> bool {
        self.verdict == Verdict::TruePositive
    }
}

/// Processing order: score descending, ties by box `(x, y, w, h)`, then by
/// input index, so the outcome does not depend on input order.
fn detection_order(dets: &[(BBox, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (ba, sa) = &dets[a];
        let (bb, sb) = &dets[b];
        sb.total_cmp(sa)
            .then(ba.x.total_cmp(&bb.x))
            .then(ba.y.total_cmp(&bb.y))
            .then(ba.width.total_cmp(&bb.width))
            .then(ba.height.total_cmp(&bb.height))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy matching of one image's detections, returned in processing order.
/// Each detection takes its best-IOU unmatched ground truth (lowest index on
/// ties) when that IOU is at least `iou_min`.
pub fn match_detections(dets: &[(BBox, f64)], gts: &[BBox], iou_min: f64) -> Vec<LabeledDetection> {
    let mut taken = vec![false; gts.len()];
    detection_order(dets)
        .into_iter()
        .map(|i| {
            let (bbox, score) = dets[i];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let iou = bbox.iou(gt);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, iou)) if iou >= iou_min => {
                    taken[g] = true;
                    LabeledDetection { bbox, score, verdict: Verdict::TruePositive, matched: Some(g) }
                }
                _ => LabeledDetection { bbox, score, verdict: Verdict::FalsePositive, matched: None },
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub num_gt: usize,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,recall,precision\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.threshold, p.recall, p.precision);
        }
        s
    }
}

/// One point per distinct score, counting every detection scoring at least
/// that threshold.
pub fn pr_curve(labeled: &[LabeledDetection], num_gt: usize) -> Result<PrCurve> {
    if num_gt == 0 {
        return Err(Error::InvalidArgument("precision/recall needs at least one ground-truth box".into()));
    }
    let mut sorted: Vec<&LabeledDetection> = labeled.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = Vec::new();
    let (mut tp, mut n) = (0usize, 0usize);
    for (i, d) in sorted.iter().enumerate() {
        n += 1;
        tp += d.is_tp() as usize;
        if sorted.get(i + 1).is_none_or(|next| next.score != d.score) {
            points.push(PrPoint {
                threshold: d.score,
                recall: tp as f64 / num_gt as f64,
                precision: tp as f64 / n as f64,
            });
        }
    }
    Ok(PrCurve { points, num_gt })
}

/// All-points AP: `sum (r_i - r_{i-1}) * max_{j >= i} p_j`, with `r_0 = 0`.
pub fn average_precision(curve: &PrCurve) -> f64 {
    let mut envelope: Vec<f64> = curve.points.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut prev = 0.0;
    let mut ap = 0.0;
    for (p, env) in curve.points.iter().zip(envelope) {
        ap += (p.recall - prev) * env;
        prev = p.recall;
    }
    ap
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub curve: PrCurve,
    pub average_precision: f64,
    pub images: usize,
    pub num_gt: usize,
    pub num_detections: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    /// Detection images with no ground-truth entry.
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn recall(&self) -> f64 {
        self.true_positives as f64 / self.num_gt as f64
    }

    pub fn summary(&self) -> String {
        format!(
            "images {}\nground_truth {}\ndetections {}\ntrue_positives {}\nfalse_positives {}\nrecall {}\naverage_precision {}\n",
            self.images,
            self.num_gt,
            self.num_detections,
            self.true_positives,
            self.false_positives,
            self.recall(),
            self.average_precision
        )
    }
}

/// Per-image matching pooled into one curve. Images are visited in
/// ground-truth order, then unknown detection images by name.
pub fn evaluate(dets: &[DetectionRecord], gts: &[GroundTruth], iou_min: f64) -> Result<EvalReport> {
    let num_gt: usize = gts.iter().map(|g| g.boxes.len()).sum();
    if num_gt == 0 {
        return Err(Error::InvalidArgument("ground truth contains no boxes".into()));
    }
    let mut by_image: BTreeMap<&str, Vec<(BBox, f64)>> = BTreeMap::new();
    for d in dets {
        by_image.entry(d.image.as_str()).or_default().push((d.bbox(), d.score));
    }
    let mut labeled = Vec::with_capacity(dets.len());
    for g in gts {
        if let Some(ds) = by_image.remove(g.image.as_str()) {
            labeled.extend(match_detections(&ds, &g.boxes, iou_min));
        }
    }
    let mut warnings = Vec::new();
    for (image, ds) in by_image {
        warnings.push(format!("detections for `{image}` have no ground-truth entry"));
        labeled.extend(match_detections(&ds, &[], iou_min));
    }
    let curve = pr_curve(&labeled, num_gt)?;
    let tp = labeled.iter().filter(|l| l.is_tp()).count();
    Ok(EvalReport {
        average_precision: average_precision(&curve),
        curve,
        images: gts.len(),
        num_gt,
        num_detections: labeled.len(),
        true_positives: tp,
        false_positives: labeled.len() - tp,
        warnings,
    })
}

pub fn evaluate_files(
    dets_path: impl AsRef<Path>,
    gt_path: impl AsRef<Path>,
    format: GtFormat,
    iou_min: f64,
) -> Result<EvalReport> {
    let dets_path = dets_path.as_ref();
    let dets = parse_jsonl(&std::fs::read_to_string(dets_path)?, &dets_path.display().to_string())?;
    evaluate(&dets, &load_ground_truth(gt_path, format)?, iou_min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lab(score: f64, tp: bool) -> LabeledDetection {
        LabeledDetection {
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
            score,
            verdict: if tp { Verdict::TruePositive } else { Verdict::FalsePositive },
            matched: None,
        }
    }

    #[test]
    fn rect_parsing() {
        assert!(parse_rect_annotations("", "t").unwrap().is_empty());
        let g = parse_rect_annotations("img1 10 20 30 40\n# c\n\nimg2 0 0 5 5\nimg1 1 2 3 4\n", "t").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].image, "img1");
        assert_eq!(g[0].boxes, vec![BBox::new(10.0, 20.0, 30.0, 40.0), BBox::new(1.0, 2.0, 3.0, 4.0)]);
        let e = parse_rect_annotations("a 1 2 3 4\nb 1 x 3 4\n", "gt.txt").unwrap_err();
        assert!(e.to_string().contains("gt.txt:2"), "{e}");
        assert!(parse_rect_annotations("a 1 2 0 4\n", "t").is_err());
    }

    #[test]
    fn ellipse_conversion() {
        assert_eq!(ellipse_to_rect(100.0, 60.0, 0.0, 200.0, 300.0), BBox::new(140.0, 200.0, 120.0, 200.0));
        let r = ellipse_to_rect(100.0, 60.0, std::f64::consts::FRAC_PI_2, 200.0, 300.0);
        assert!((r.width - 200.0).abs() < 1e-9 && (r.height - 120.0).abs() < 1e-9);
        for t in [0.1, 0.7, 2.0, -1.3] {
            let c = ellipse_to_rect(7.0, 7.0, t, 0.0, 0.0);
            assert!((c.width - 14.0).abs() < 1e-12 && (c.height - 14.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fddb_parsing() {
        let text = "2002/07/19/big/img_1\n1\n100 60 0 200 300 1\n2002/07/19/big/img_2\n2\n10 10 0.5 50 50  1\n20 10 0 80 80 1\n";
        let g = parse_fddb_ellipses(text, "fold").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].boxes, vec![BBox::new(140.0, 200.0, 120.0, 200.0)]);
        assert_eq!(g[1].boxes.len(), 2);
        let bad = "img_a\n2\n10 10 0 5 5 1\nimg_b\n1\n10 10 0 5 5 1\n";
        let e = parse_fddb_ellipses(bad, "fold").unwrap_err();
        assert!(e.to_string().contains("img_a"), "{e}");
        assert!(parse_fddb_ellipses("img\n3\n10 10 0 5 5 1\n", "f").is_err());
    }

    #[test]
    fn matching_cases() {
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0);
        // IOU 0.6: overlap 10*7.5 = 75, union 125
        let l = match_detections(&[(BBox::new(2.5, 0.0, 10.0, 10.0), 0.9)], &[gt], 0.5);
        assert_eq!(l[0].verdict, Verdict::TruePositive);
        assert!((BBox::new(2.5, 0.0, 10.0, 10.0).iou(&gt) - 0.6).abs() < 1e-12);
        // IOU 0.4: overlap 10*(40/7), union 200 - that, solved for 0.4
        let shift = 10.0 - 200.0 * 0.4 / 1.4 / 10.0;
        let b = BBox::new(shift, 0.0, 10.0, 10.0);
        assert!((b.iou(&gt) - 0.4).abs() < 1e-12);
        assert_eq!(match_detections(&[(b, 0.9)], &[gt], 0.5)[0].verdict, Verdict::FalsePositive);
        let two = match_detections(&[(gt, 0.5), (BBox::new(1.0, 0.0, 10.0, 10.0), 0.8)], &[gt], 0.5);
        assert_eq!(two[0].score, 0.8);
        assert!(two[0].is_tp() && !two[1].is_tp());
    }

    #[test]
    fn hand_curve() {
        let c = pr_curve(&[lab(0.9, true), lab(0.8, false), lab(0.7, true)], 2).unwrap();
        let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.recall, p.precision)).collect();
        assert_eq!(pts, vec![(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)]);
        assert!((average_precision(&c) - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);

        let single = pr_curve(&[lab(0.3, true)], 1).unwrap();
        assert_eq!(single.points, vec![PrPoint { threshold: 0.3, recall: 1.0, precision: 1.0 }]);
        assert_eq!(average_precision(&single), 1.0);

        let fp = pr_curve(&[lab(0.3, false), lab(0.2, false)], 3).unwrap();
        assert!(fp.points.iter().all(|p| p.precision == 0.0 && p.recall == 0.0));
        assert_eq!(average_precision(&fp), 0.0);
        assert!(pr_curve(&[], 0).is_err());
    }

    #[test]
    fn tied_scores_form_one_point() {
        let c = pr_curve(&[lab(0.5, false), lab(0.5, true), lab(0.4, true)], 2).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!((c.points[0].recall, c.points[0].precision), (0.5, 0.5));
    }

    #[test]
    fn evaluate_end_cases() {
        let gts = parse_rect_annotations("a 0 0 10 10\na 20 20 10 10\nb 5 5 8 8\n", "t").unwrap();
        let recs: Vec<DetectionRecord> = gts
            .iter()
            .flat_map(|g| {
                g.boxes.iter().map(|b| DetectionRecord {
                    image: g.image.clone(),
                    x: b.x,
                    y: b.y,
                    width: b.width,
                    height: b.height,
                    score: 1.0,
                })
            })
            .collect();
        let r = evaluate(&recs, &gts, 0.5).unwrap();
        assert_eq!(r.average_precision, 1.0);
        assert_eq!(r.true_positives, 3);
        let empty = evaluate(&[], &gts, 0.5).unwrap();
        assert_eq!((empty.average_precision, empty.recall()), (0.0, 0.0));
        assert!(evaluate(&recs, &[], 0.5).is_err());
        let mut stray = recs.clone();
        stray[0].image = "zzz".into();
        assert_eq!(evaluate(&stray, &gts, 0.5).unwrap().warnings.len(), 1);
    }

    #[test]
    fn csv_and_summary() {
        let c = pr_curve(&[lab(0.9, true), lab(0.8, false)], 2).unwrap();
        assert_eq!(c.to_csv(), "threshold,recall,precision\n0.9,0.5,1\n0.8,0.5,0.5\n");
    }
}
