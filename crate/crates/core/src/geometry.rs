//! Axis-aligned boxes in pixel coordinates.

use serde::{Deserialize, Serialize};

/// Boxes with an area below this are treated as degenerate.
pub const MIN_BOX_AREA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Box from center, width and height.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2 && self.area() >= MIN_BOX_AREA
    }

    pub fn clip(&self, width: f64, height: f64) -> Self {
        Self::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }

    /// Mirror across the vertical axis of an image of the given width.
    pub fn hflip(&self, width: f64) -> Self {
        Self::new(width - self.x2, self.y1, width - self.x1, self.y2)
    }

    pub fn intersection(&self, other: &BoundingBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Intersection over union. Returns 0 when the union is empty.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Largest IoU of `b` against any box in `others`, with its index.
pub fn best_iou(b: &BoundingBox, others: &[BoundingBox]) -> Option<(usize, f64)> {
    others
        .iter()
        .map(|o| iou(b, o))
        .enumerate()
        .fold(None, |best, (i, v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((i, v)),
        })
}

/// Greedy non-maximum suppression. `order` must already be sorted by
/// descending score; returns the kept subset of `order`.
pub fn nms(boxes: &[BoundingBox], order: &[usize], iou_threshold: f64, max_keep: usize) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for &i in order {
        if keep.len() >= max_keep {
            break;
        }
        if keep.iter().all(|&k| iou(&boxes[i], &boxes[k]) <= iou_threshold) {
            keep.push(i);
        }
    }
    keep
}
