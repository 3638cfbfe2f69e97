//! Deliberately naive reference implementations. Nothing here shares code
//! with the engine; every function is the textbook loop nest.

/// `input` is `c x h x w`, `weights` is `o x c x k x k`. Zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    input: &[f32],
    c: usize,
    h: usize,
    w: usize,
    weights: &[f32],
    bias: &[f32],
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let o = bias.len();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum = bias[oc] as f64;
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let x = input[(ic * h + iy as usize) * w + ix as usize] as f64;
                            let wt = weights[((oc * c + ic) * k + ky) * k + kx] as f64;
                            sum += x * wt;
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = sum;
            }
        }
    }
    (out, oh, ow)
}

/// Padded cells are ignored (never the maximum).
pub fn maxpool(
    input: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                            best = best.max(input[(ch * h + iy as usize) * w + ix as usize] as f64);
                        }
                    }
                }
                out[(ch * oh + oy) * ow + ox] = best;
            }
        }
    }
    (out, oh, ow)
}

/// `weights` is `outputs x input.len()`.
pub fn fully_connected(input: &[f32], weights: &[f32], bias: &[f32]) -> Vec<f64> {
    let n = input.len();
    (0..bias.len())
        .map(|o| {
            let mut s = bias[o] as f64;
            for j in 0..n {
                s += weights[o * n + j] as f64 * input[j] as f64;
            }
            s
        })
        .collect()
}

/// Cross-channel LRN over channels `[c - (n-1)/2, c + n/2]`:
/// `x / (k + alpha/n * sum x^2)^beta`.
#[allow(clippy::too_many_arguments)]
pub fn lrn(input: &[f32], c: usize, h: usize, w: usize, n: usize, alpha: f64, beta: f64, k: f64) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut sq = 0.0;
                for j in 0..c {
                    let lo = ch as isize - ((n - 1) / 2) as isize;
                    let hi = (ch + n / 2) as isize;
                    if (j as isize) < lo || j as isize > hi {
                        continue;
                    }
                    let v = input[(j * h + y) * w + x] as f64;
                    sq += v * v;
                }
                let v = input[(ch * h + y) * w + x] as f64;
                out[(ch * h + y) * w + x] = v / (k + alpha / n as f64 * sq).powf(beta);
            }
        }
    }
    out
}

/// Softmax over channels at every cell.
pub fn softmax(input: &[f32], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for y in 0..h {
        for x in 0..w {
            let vals: Vec<f64> = (0..c).map(|ch| input[(ch * h + y) * w + x] as f64).collect();
            let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = vals.iter().map(|v| (v - m).exp()).sum();
            for ch in 0..c {
                out[(ch * h + y) * w + x] = (vals[ch] - m).exp() / z;
            }
        }
    }
    out
}

/// Box as `[x, y, w, h]`.
pub type Rect = [f64; 4];

pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

/// One image: detections `(box, score)` and ground-truth boxes.
pub struct OracleImage {
    pub dets: Vec<(Rect, f64)>,
    pub gts: Vec<Rect>,
}

/// True-positive count for the detections of one image scoring at least
/// `t`, matched greedily from the highest score (ties by box, then input
/// position) to the best-IOU still-free gt.
fn true_positives_at(img: &OracleImage, t: f64, iou_min: f64) -> (usize, usize) {
    let mut kept: Vec<(usize, &(Rect, f64))> = img.dets.iter().enumerate().filter(|(_, d)| d.1 >= t).collect();
    kept.sort_by(|(ia, a), (ib, b)| {
        b.1.partial_cmp(&a.1).unwrap().then(a.0.partial_cmp(&b.0).unwrap()).then(ia.cmp(ib))
    });
    let mut free = vec![true; img.gts.len()];
    let mut tp = 0;
    for (_, (b, _)) in &kept {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in img.gts.iter().enumerate() {
            if free[g] {
                let v = iou(b, gt);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
        }
        if let Some((g, v)) = best {
            if v >= iou_min {
                free[g] = false;
                tp += 1;
            }
        }
    }
    (tp, kept.len())
}

/// AP by enumerating every distinct score as a threshold, re-matching at
/// each one, and integrating the precision envelope
/// `max { p(t') : r(t') >= r(t) }` over recall.
pub fn average_precision(images: &[OracleImage], iou_min: f64) -> f64 {
    let num_gt: usize = images.iter().map(|i| i.gts.len()).sum();
    let mut thresholds: Vec<f64> = images.iter().flat_map(|i| i.dets.iter().map(|d| d.1)).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let (tp, n) =
                images.iter().map(|img| true_positives_at(img, t, iou_min)).fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
            (tp as f64 / num_gt as f64, tp as f64 / n as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for &(r, _) in &points {
        let env = points.iter().filter(|q| q.0 >= r).map(|q| q.1).fold(0.0, f64::max);
        ap += (r - prev_r) * env;
        prev_r = r;
    }
    ap
}
