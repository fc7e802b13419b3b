use crate::error::{LpsError, Result};
use crate::geometry::{iou, BoundingBox};
use crate::synthgen::Identity;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Detections of every scene ranked by descending score; ties keep scene
/// order, then detection order.
fn rank_detections(results: &[Vec<ScoredBox>]) -> Vec<(usize, usize)> {
    let mut all: Vec<(usize, usize)> = results
        .iter()
        .enumerate()
        .flat_map(|(s, dets)| (0..dets.len()).map(move |d| (s, d)))
        .collect();
    all.sort_by(|a, b| results[b.0][b.1].score.total_cmp(&results[a.0][a.1].score));
    all
}

/// Greedy one-to-one matching in descending score order: each detection
/// takes the unmatched ground-truth box of highest IoU at or above
/// `iou_thr`. Returns the TP flag per ranked detection.
pub fn greedy_match(results: &[Vec<ScoredBox>], gts: &[Vec<BoundingBox>], iou_thr: f64) -> Vec<((usize, usize), bool)> {
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    rank_detections(results)
        .into_iter()
        .map(|(s, d)| {
            let det = &results[s][d].bbox;
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts[s].iter().enumerate() {
                let v = iou(det, gt);
                if !taken[s][g] && v >= iou_thr && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                taken[s][g] = true;
            }
            ((s, d), best.is_some())
        })
        .collect()
}

fn total_gt(gts: &[Vec<BoundingBox>]) -> Result<usize> {
    let n: usize = gts.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(LpsError::UndefinedRecall);
    }
    Ok(n)
}

/// Fraction of ground-truth boxes matched by some detection.
pub fn detection_recall(results: &[Vec<ScoredBox>], gts: &[Vec<BoundingBox>], iou_thr: f64) -> Result<f64> {
    let n = total_gt(gts)?;
    let tp = greedy_match(results, gts, iou_thr).iter().filter(|(_, t)| *t).count();
    Ok(tp as f64 / n as f64)
}

/// Area under the all-points interpolated precision/recall curve.
pub fn detection_ap(results: &[Vec<ScoredBox>], gts: &[Vec<BoundingBox>], iou_thr: f64) -> Result<f64> {
    let n = total_gt(gts)?;
    let flags: Vec<bool> = greedy_match(results, gts, iou_thr).into_iter().map(|(_, t)| t).collect();
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let mut tp = 0usize;
    for (k, &t) in flags.iter().enumerate() {
        tp += t as usize;
        recall.push(tp as f64 / n as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    Ok((1..recall.len()).map(|i| (recall[i] - recall[i - 1]) * precision[i]).sum())
}

/// Average precision of a ranked relevance list with `num_relevant`
/// relevant items in total, found or not.
pub fn average_precision(ranked: &[bool], num_relevant: usize) -> f64 {
    if num_relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in ranked.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / num_relevant as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryInput {
    pub feature: Vec<f64>,
    /// Gallery scene holding the query; excluded from its own gallery.
    pub scene: usize,
    pub identity: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GalleryScene {
    pub boxes: Vec<BoundingBox>,
    pub features: Vec<Vec<f64>>,
    pub gt_boxes: Vec<BoundingBox>,
    pub gt_identities: Vec<Identity>,
}

/// Per-query ranked relevance flags plus the mean AP.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReidOutcome {
    pub map: f64,
    pub per_query_ap: Vec<f64>,
    pub ranked: Vec<Vec<bool>>,
    /// Queries whose identity does not appear in their gallery.
    pub skipped: usize,
}

impl ReidOutcome {
    pub fn evaluated(&self) -> usize {
        self.per_query_ap.len()
    }
}

/// Ranks all gallery detections by cosine similarity to each query. In
/// every scene the highest-ranked detection overlapping the query
/// identity's box at `iou_thr` is the true positive; the rest are false
/// positives.
pub fn reid_map(queries: &[QueryInput], gallery: &[GalleryScene], iou_thr: f64) -> ReidOutcome {
    let mut out = ReidOutcome::default();
    for q in queries {
        let mut num_relevant = 0;
        let mut items: Vec<(f64, bool, usize)> = Vec::new();
        for (s, scene) in gallery.iter().enumerate() {
            if s == q.scene {
                continue;
            }
            let target = scene
                .gt_identities
                .iter()
                .position(|id| *id == Identity::Labeled(q.identity))
                .map(|g| scene.gt_boxes[g]);
            num_relevant += target.is_some() as usize;
            for (b, f) in scene.boxes.iter().zip(&scene.features) {
                let sim: f64 = f.iter().zip(&q.feature).map(|(a, c)| a * c).sum();
                let overlaps = target.is_some_and(|t| iou(b, &t) >= iou_thr);
                items.push((sim, overlaps, s));
            }
        }
        if num_relevant == 0 {
            out.skipped += 1;
            continue;
        }
        items.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut found = vec![false; gallery.len()];
        let ranked: Vec<bool> = items
            .into_iter()
            .map(|(_, overlaps, s)| {
                let tp = overlaps && !found[s];
                found[s] |= tp;
                tp
            })
            .collect();
        out.per_query_ap.push(average_precision(&ranked, num_relevant));
        out.ranked.push(ranked);
    }
    if !out.per_query_ap.is_empty() {
        out.map = out.per_query_ap.iter().sum::<f64>() / out.per_query_ap.len() as f64;
    }
    out
}

/// Fraction of evaluated queries with a true positive among the `k` most
/// similar gallery detections.
pub fn topk(outcome: &ReidOutcome, k: usize) -> f64 {
    if outcome.ranked.is_empty() {
        return 0.0;
    }
    let hits = outcome.ranked.iter().filter(|r| r.iter().take(k).any(|&t| t)).count();
    hits as f64 / outcome.ranked.len() as f64
}
