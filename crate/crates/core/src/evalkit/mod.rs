//! Detection and re-ID metrics, per-domain evaluation and forgetting
//! reports.

mod metrics;
mod report;

pub use crate::geometry::iou;
pub use metrics::{
    average_precision, detection_ap, detection_recall, greedy_match, reid_map, topk, GalleryScene, QueryInput, ReidOutcome,
    ScoredBox,
};
pub use report::{forgetting_report, render_plot_svg, render_table, DomainMetrics, ForgettingReport, MetricsReport, ModeHistory, StageMetrics};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{nms, BoundingBox};
use crate::perception::{candidates_from_pass, Network};
use crate::synthgen::{DomainDataset, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Minimum detection score kept for every metric.
    pub det_thresh: f64,
    pub iou_threshold: f64,
    /// NMS applied to scored detections.
    pub final_nms: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            det_thresh: 0.5,
            iou_threshold: 0.5,
            final_nms: 0.4,
        }
    }
}

/// Scored detections of one scene with their identity features.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneDetections {
    pub boxes: Vec<BoundingBox>,
    pub scores: Vec<f64>,
    pub features: Vec<Vec<f64>>,
}

impl SceneDetections {
    pub fn scored(&self) -> Vec<ScoredBox> {
        self.boxes.iter().zip(&self.scores).map(|(&b, &s)| ScoredBox { bbox: b, score: s }).collect()
    }
}

/// Runs the network in evaluation mode and keeps detections scoring at
/// least `cfg.det_thresh`, sorted by descending score.
pub fn detect(net: &Network, image: &Image, cfg: &EvalConfig) -> Result<SceneDetections> {
    let pass = net.forward_image(image)?;
    let cands = candidates_from_pass(net, &pass, net.config.test_proposals);
    if cands.is_empty() {
        return Ok(SceneDetections::default());
    }
    let boxes: Vec<BoundingBox> = cands.iter().map(|c| c.bbox).collect();
    let roi = net.roi_forward(&pass, &boxes, net.score_stats)?;
    let scores = roi.scores();
    let mut order: Vec<usize> = (0..boxes.len()).filter(|&i| scores[i] >= cfg.det_thresh).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let keep = nms(&boxes, &order, cfg.final_nms, usize::MAX);
    Ok(SceneDetections {
        boxes: keep.iter().map(|&i| boxes[i]).collect(),
        scores: keep.iter().map(|&i| scores[i]).collect(),
        features: keep.iter().map(|&i| roi.feature(i).to_vec()).collect(),
    })
}

/// Recall, detection AP, re-ID mAP and top-1 of `net` on a domain's test
/// split.
pub fn evaluate_domain(net: &Network, dataset: &DomainDataset, cfg: &EvalConfig) -> Result<DomainMetrics> {
    let gallery = &dataset.test_gallery;
    let dets: Vec<SceneDetections> = gallery.iter().map(|s| detect(net, &s.image, cfg)).collect::<Result<_>>()?;
    let results: Vec<Vec<ScoredBox>> = dets.iter().map(SceneDetections::scored).collect();
    let gts: Vec<Vec<BoundingBox>> = gallery.iter().map(|s| s.gt_boxes.clone()).collect();
    let recall = detection_recall(&results, &gts, cfg.iou_threshold)?;
    let ap = detection_ap(&results, &gts, cfg.iou_threshold)?;

    let scenes: Vec<GalleryScene> = gallery
        .iter()
        .zip(dets)
        .map(|(s, d)| GalleryScene {
            boxes: d.boxes,
            features: d.features,
            gt_boxes: s.gt_boxes.clone(),
            gt_identities: s.gt_identities.clone(),
        })
        .collect();
    let mut queries = Vec::with_capacity(dataset.test_queries.len());
    for q in &dataset.test_queries {
        let scene = &gallery[q.scene];
        let Some(identity) = scene.gt_identities[q.box_index].label() else {
            continue;
        };
        let pass = net.forward_image(&scene.image)?;
        let roi = net.roi_forward(&pass, &scene.gt_boxes[q.box_index..=q.box_index], net.score_stats)?;
        queries.push(QueryInput {
            feature: roi.feature(0).to_vec(),
            scene: q.scene,
            identity,
        });
    }
    let reid = reid_map(&queries, &scenes, cfg.iou_threshold);
    Ok(DomainMetrics {
        domain_id: dataset.domain_id(),
        recall,
        ap,
        map: reid.map,
        top1: topk(&reid, 1),
        evaluated_queries: reid.evaluated(),
        skipped_queries: reid.skipped,
    })
}
