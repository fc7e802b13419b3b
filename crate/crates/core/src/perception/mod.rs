//! Toy end-to-end person-search network and the old/new model pair.

pub mod anchors;
pub mod layers;
mod network;

use std::ops::Deref;
use std::sync::Arc;

pub use network::{
    checksum_f64, sigmoid, BackbonePass, NetConfig, Network, Params, PassGrads, RoiPass, ScoreStats, FEATURE_STRIDE,
};

use crate::error::Result;
use crate::geometry::{best_iou, nms, BoundingBox};
use crate::synthgen::{Identity, Image};

/// A scored box from the objectness head, before ground-truth matching.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub bbox: BoundingBox,
    pub objectness: f64,
    /// Source anchor; `None` for boxes injected from ground truth.
    pub anchor: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Foreground(u32),
    ForegroundUnlabeled,
    Background,
}

impl Assignment {
    pub fn is_foreground(self) -> bool {
        !matches!(self, Assignment::Background)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: BoundingBox,
    pub objectness: f64,
    pub anchor: Option<usize>,
    pub assigned: Assignment,
    pub iou_with_best_gt: f64,
    /// Ground-truth box with the highest IoU, if any.
    pub gt_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSource {
    Old,
    New,
}

/// Unit-norm re-ID feature.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityFeature {
    pub vector: Vec<f64>,
    pub source: ModelSource,
}

/// Read-only snapshot of a network. There is no way to obtain a mutable
/// reference, so no optimizer step can reach it.
#[derive(Debug, Clone)]
pub struct FrozenNetwork(Arc<Network>);

impl FrozenNetwork {
    /// Trainable deep copy.
    pub fn replicate(&self) -> Network {
        (*self.0).clone()
    }
}

impl Deref for FrozenNetwork {
    type Target = Network;

    fn deref(&self) -> &Network {
        &self.0
    }
}

pub fn clone_and_freeze(net: &Network) -> FrozenNetwork {
    FrozenNetwork(Arc::new(net.clone()))
}

/// Frozen old model plus the trainable new one.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub old: Option<FrozenNetwork>,
    pub new: Network,
}

/// Top proposals of an already computed pass: pre-NMS top-k by objectness,
/// decode, clip, drop tiny boxes, greedy NMS, keep `keep`.
pub fn candidates_from_pass(net: &Network, pass: &BackbonePass, keep: usize) -> Vec<Candidate> {
    let cfg = &net.config;
    let grid = net.anchors();
    let logits: Vec<f64> = (0..grid.len()).map(|i| net.objectness_logit(pass, i)).collect();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(cfg.pre_nms_top_k);
    let (w, h) = (cfg.image_width as f64, cfg.image_height as f64);
    let boxes: Vec<BoundingBox> = order
        .iter()
        .map(|&i| anchors::decode(&grid.anchors[i], &net.anchor_deltas(pass, i)).clip(w, h))
        .collect();
    let valid: Vec<usize> = (0..order.len())
        .filter(|&k| boxes[k].width() >= cfg.min_proposal_size && boxes[k].height() >= cfg.min_proposal_size)
        .collect();
    nms(&boxes, &valid, cfg.proposal_nms_iou, keep)
        .into_iter()
        .map(|k| Candidate {
            bbox: boxes[k],
            objectness: sigmoid(logits[order[k]]),
            anchor: Some(order[k]),
        })
        .collect()
}

/// Objectness-ranked proposals for an image.
pub fn propose(net: &Network, image: &Image) -> Result<Vec<Candidate>> {
    let pass = net.forward_image(image)?;
    Ok(candidates_from_pass(net, &pass, net.config.test_proposals))
}

/// Assigns each candidate to its best ground-truth box at `fg_iou`.
pub fn match_proposals(cands: &[Candidate], gt_boxes: &[BoundingBox], gt_ids: &[Identity], fg_iou: f64) -> Vec<Proposal> {
    cands
        .iter()
        .map(|c| {
            let best = best_iou(&c.bbox, gt_boxes);
            let (gt_index, v) = best.map_or((None, 0.0), |(i, v)| (Some(i), v));
            let assigned = match gt_index {
                Some(g) if v >= fg_iou => match gt_ids[g] {
                    Identity::Labeled(id) => Assignment::Foreground(id),
                    Identity::Unlabeled => Assignment::ForegroundUnlabeled,
                },
                _ => Assignment::Background,
            };
            Proposal {
                bbox: c.bbox,
                objectness: c.objectness,
                anchor: c.anchor,
                assigned,
                iou_with_best_gt: v,
                gt_index,
            }
        })
        .collect()
}

/// Unit-norm features and detection scores for `boxes`, using running
/// norm statistics (evaluation mode).
pub fn embed(net: &Network, image: &Image, boxes: &[BoundingBox], source: ModelSource) -> Result<(Vec<IdentityFeature>, Vec<f64>)> {
    let pass = net.forward_image(image)?;
    let roi = net.roi_forward(&pass, boxes, net.score_stats)?;
    let feats = (0..roi.len())
        .map(|i| IdentityFeature {
            vector: roi.feature(i).to_vec(),
            source,
        })
        .collect();
    Ok((feats, roi.scores()))
}
