//! Anchor grid, box-delta coding and RPN target sampling.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::geometry::{iou, BoundingBox};

/// Largest log-scale change a delta may apply.
const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

#[derive(Debug, Clone)]
pub struct AnchorGrid {
    pub anchors: Vec<BoundingBox>,
    pub per_cell: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl AnchorGrid {
    /// Anchor `index = (y * grid_w + x) * per_cell + a`.
    pub fn new(grid_h: usize, grid_w: usize, stride: f64, heights: &[f64], aspect: f64) -> Self {
        let mut anchors = Vec::with_capacity(grid_h * grid_w * heights.len());
        for y in 0..grid_h {
            for x in 0..grid_w {
                let (cx, cy) = ((x as f64 + 0.5) * stride, (y as f64 + 0.5) * stride);
                for &h in heights {
                    anchors.push(BoundingBox::from_center(cx, cy, h * aspect, h));
                }
            }
        }
        Self {
            anchors,
            per_cell: heights.len(),
            grid_h,
            grid_w,
        }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// `(anchor slot, cell position)` of an anchor index.
    pub fn split(&self, index: usize) -> (usize, usize) {
        (index % self.per_cell, index / self.per_cell)
    }
}

/// Faster R-CNN box parametrization relative to an anchor.
pub fn encode(anchor: &BoundingBox, target: &BoundingBox) -> [f64; 4] {
    let (ax, ay) = anchor.center();
    let (gx, gy) = target.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    [
        (gx - ax) / aw,
        (gy - ay) / ah,
        (target.width() / aw).ln(),
        (target.height() / ah).ln(),
    ]
}

pub fn decode(anchor: &BoundingBox, deltas: &[f64; 4]) -> BoundingBox {
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = ax + deltas[0] * aw;
    let cy = ay + deltas[1] * ah;
    let w = aw * deltas[2].min(MAX_LOG_SCALE).exp();
    let h = ah * deltas[3].min(MAX_LOG_SCALE).exp();
    BoundingBox::from_center(cx, cy, w, h)
}

/// One sampled anchor for the objectness / regression objective.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTarget {
    pub anchor: usize,
    pub is_fg: bool,
    /// Regression target, present for foreground anchors.
    pub deltas: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Copy)]
pub struct AnchorSampling {
    pub fg_iou: f64,
    pub bg_iou: f64,
    pub batch: usize,
    pub fg_fraction: f64,
}

/// Labels anchors against ground truth and samples a balanced subset.
pub fn sample_anchor_targets(
    grid: &AnchorGrid,
    gt: &[BoundingBox],
    cfg: AnchorSampling,
    rng: &mut impl Rng,
) -> Vec<AnchorTarget> {
    let n = grid.len();
    let mut best = vec![(usize::MAX, 0.0f64); n];
    let mut best_per_gt = vec![0.0f64; gt.len()];
    for (i, a) in grid.anchors.iter().enumerate() {
        for (g, b) in gt.iter().enumerate() {
            let v = iou(a, b);
            if v > best[i].1 {
                best[i] = (g, v);
            }
            best_per_gt[g] = best_per_gt[g].max(v);
        }
    }
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (i, &(g, v)) in best.iter().enumerate() {
        let is_best_for_gt = g != usize::MAX && v > 0.0 && v >= best_per_gt[g] - 1e-12;
        if v >= cfg.fg_iou || is_best_for_gt {
            fg.push(i);
        } else if v < cfg.bg_iou {
            bg.push(i);
        }
    }
    fg.shuffle(rng);
    bg.shuffle(rng);
    let n_fg = fg.len().min((cfg.batch as f64 * cfg.fg_fraction) as usize);
    let n_bg = bg.len().min(cfg.batch - n_fg);
    let mut out: Vec<AnchorTarget> = fg[..n_fg]
        .iter()
        .map(|&i| AnchorTarget {
            anchor: i,
            is_fg: true,
            deltas: Some(encode(&grid.anchors[i], &gt[best[i].0])),
        })
        .chain(bg[..n_bg].iter().map(|&i| AnchorTarget {
            anchor: i,
            is_fg: false,
            deltas: None,
        }))
        .collect();
    out.sort_by_key(|t| t.anchor);
    out
}
