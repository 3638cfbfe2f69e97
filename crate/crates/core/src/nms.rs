//! Non-maximum suppression: greedy max-score suppression and
//! cluster-averaging.

use crate::bbox::BBox;
use crate::detector::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmsStrategy {
    /// Keep the best window, drop everything overlapping it, repeat.
    Max,
    /// Cluster overlapping windows and average the strong members.
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsConfig {
    pub strategy: NmsStrategy,
    pub overlap: f64,
    /// `Avg` only: windows below this score are dropped before clustering.
    pub confidence_floor: f64,
    /// `Avg` only: members below `keep_ratio * cluster max` are not averaged.
    pub keep_ratio: f64,
}

impl NmsConfig {
    pub const MAX_OVERLAP: f64 = 0.3;
    pub const AVG_OVERLAP: f64 = 0.2;

    pub fn max() -> Self {
        NmsConfig { strategy: NmsStrategy::Max, overlap: Self::MAX_OVERLAP, confidence_floor: 0.0, keep_ratio: 1.0 }
    }

    pub fn avg() -> Self {
        NmsConfig { strategy: NmsStrategy::Avg, overlap: Self::AVG_OVERLAP, confidence_floor: 0.2, keep_ratio: 0.9 }
    }
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig::avg()
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// Indices of `dets` sorted by descending score; ties keep input order.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy suppression: removes every detection whose IOU with a kept,
/// higher-ranked detection is strictly greater than `overlap`.
pub fn nms_max(dets: &[Detection], overlap: f64) -> Vec<Detection> {
    let order = score_order(dets);
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = &dets[i];
        if kept.iter().all(|k| k.bbox.iou(&d.bbox) <= overlap) {
            kept.push(d.clone());
        }
    }
    kept
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Connected components of the graph joining pairs with IOU >= `overlap`.
///
/// Clusters are ordered by their smallest member index and members are
/// listed in ascending index order.
pub fn cluster_by_overlap(dets: &[Detection], overlap: f64) -> Vec<Vec<usize>> {
    let n = dets.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if dets[i].bbox.iou(&dets[j].bbox) >= overlap {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    // the smaller index stays the root
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[slot[r]].push(i);
    }
    clusters
}

/// Cluster averaging: drop weak windows, cluster the rest, and emit one
/// detection per cluster whose box is the mean of the members scoring at
/// least `keep_ratio` of the cluster maximum and whose score is that maximum.
pub fn nms_avg(dets: &[Detection], cfg: &NmsConfig) -> Vec<Detection> {
    let strong: Vec<Detection> =
        score_order(dets).into_iter().map(|i| &dets[i]).filter(|d| d.score >= cfg.confidence_floor).cloned().collect();
    cluster_by_overlap(&strong, cfg.overlap)
        .into_iter()
        .map(|members| {
            // members are in score order, so the first is the maximum
            let best = &strong[members[0]];
            let cutoff = cfg.keep_ratio * best.score;
            let kept: Vec<&Detection> = members.iter().map(|&i| &strong[i]).filter(|d| d.score >= cutoff).collect();
            let n = kept.len() as f64;
            let mean = |f: fn(&BBox) -> f64| kept.iter().map(|d| f(&d.bbox)).sum::<f64>() / n;
            Detection {
                bbox: BBox::new(mean(|b| b.x), mean(|b| b.y), mean(|b| b.width), mean(|b| b.height)),
                score: best.score,
                level: best.level,
            }
        })
        .collect()
}

pub fn suppress(dets: &[Detection], cfg: &NmsConfig) -> Vec<Detection> {
    match cfg.strategy {
        NmsStrategy::Max => nms_max(dets, cfg.overlap),
        NmsStrategy::Avg => nms_avg(dets, cfg),
    }
}
