use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::batch::BatchItem;
use crate::error::{LpsError, Result};
use crate::losses::{
    det_loss, dkd_loss, oim_loss, rim_loss, rkd_loss, rkd_plus_loss, total_loss, DetInputs, FeatureLoss, LossComponents,
    LossConfig, OimState,
};
use crate::memory::{collect_hard_backgrounds, HardBackgroundMemory, PrototypeLut, UnlabeledQueue};
use crate::perception::anchors::{sample_anchor_targets, AnchorSampling, AnchorTarget};
use crate::perception::{
    candidates_from_pass, match_proposals, Assignment, BackbonePass, Candidate, FrozenNetwork, Network, Params, PassGrads,
    Proposal, RoiPass, ScoreStats,
};
use crate::rng;
use crate::synthgen::SceneSample;

/// Everything one optimization step reads.
pub struct StepInputs<'a> {
    pub new: &'a Network,
    pub old: Option<&'a FrozenNetwork>,
    pub lut: &'a PrototypeLut,
    pub queue: &'a UnlabeledQueue,
    pub oim: &'a OimState,
    pub loss_cfg: &'a LossConfig,
    pub anchor_sampling: AnchorSampling,
    /// Norm statistics used instead of the batch statistics.
    pub fixed_stats: Option<ScoreStats>,
    /// Network supplying the non-differentiated quantities (proposal boxes
    /// and hard-background features) instead of the new model. Pinning them
    /// makes the step a smooth function of the new model's parameters.
    pub reference: Option<&'a Network>,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub new_scenes: usize,
    pub exemplar_scenes: usize,
    /// Foreground proposals on exemplar scenes.
    pub foreground: usize,
    pub labeled_foreground: usize,
    pub hard_backgrounds: usize,
    pub rim_skipped: usize,
    pub oim_used: usize,
    pub oim_skipped: usize,
    /// Distillation was enabled but had no reference to distill against.
    pub rkd_without_references: bool,
}

pub struct StepOutput {
    pub grads: Params,
    pub components: LossComponents,
    pub total: f64,
    pub batch_stats: Option<ScoreStats>,
    /// Detached labeled new-domain features for the OIM table update.
    pub oim_labeled: Vec<(Vec<f64>, u32)>,
    pub oim_unlabeled: Vec<Vec<f64>>,
    /// Detached unlabeled exemplar features for the rehearsal queue.
    pub rehearsal_unlabeled: Vec<Vec<f64>>,
    pub hard_backgrounds: HardBackgroundMemory,
    pub diag: StepDiagnostics,
}

struct Item<'b> {
    scene: Cow<'b, SceneSample>,
    exemplar: bool,
    pass: BackbonePass,
    targets: Vec<AnchorTarget>,
    feeds_det: bool,
    props: Vec<Proposal>,
    roi: Option<RoiPass>,
    grads: PassGrads,
}

impl Item<'_> {
    fn feature(&self, k: usize) -> &[f64] {
        self.roi.as_ref().expect("proposal implies roi").feature(k)
    }

    fn add_feature_grad(&mut self, k: usize, g: &[f64]) {
        let d = g.len();
        let buf = self.grads.features.get_or_insert_with(|| vec![0.0; self.props.len() * d]);
        for (a, b) in buf[k * d..(k + 1) * d].iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// `(item, proposal)` locations of a gathered feature list.
type Slots = Vec<(usize, usize)>;

fn scatter(items: &mut [Item<'_>], slots: &Slots, loss: &FeatureLoss) {
    for (&(i, k), g) in slots.iter().zip(&loss.grad) {
        items[i].add_feature_grad(k, g);
    }
}

/// Forward pass, every enabled loss and the backward pass over one mixed
/// batch. Nothing is mutated; memory updates are returned to the caller.
pub fn run_step(inp: &StepInputs<'_>, batch: &[BatchItem<'_>]) -> Result<StepOutput> {
    let net = inp.new;
    let cfg = &net.config;
    let lc = inp.loss_cfg;
    let active = lc.active(inp.old.is_some());
    let mut diag = StepDiagnostics::default();

    let mut items: Vec<Item<'_>> = Vec::with_capacity(batch.len());
    for (i, b) in batch.iter().enumerate() {
        let scene = b.materialize();
        let pass = net.forward_image(&scene.image)?;
        let exemplar = b.is_exemplar();
        let feeds_det = !exemplar || lc.exemplars_in_det;
        let targets = if feeds_det {
            let mut r = rng::stream(inp.seed, &[i as u64]);
            sample_anchor_targets(net.anchors(), &scene.gt_boxes, inp.anchor_sampling, &mut r)
        } else {
            Vec::new()
        };
        let mut cands = match inp.reference {
            Some(src) => candidates_from_pass(src, &src.forward_image(&scene.image)?, cfg.train_proposals),
            None => candidates_from_pass(net, &pass, cfg.train_proposals),
        };
        if !exemplar {
            cands.extend(scene.gt_boxes.iter().map(|&bbox| Candidate {
                bbox,
                objectness: 1.0,
                anchor: None,
            }));
        }
        let props = match_proposals(&cands, &scene.gt_boxes, &scene.gt_identities, cfg.fg_iou_threshold);
        let boxes: Vec<_> = props.iter().map(|p| p.bbox).collect();
        let roi = if boxes.is_empty() {
            None
        } else {
            Some(net.roi_forward(&pass, &boxes, ScoreStats::default())?)
        };
        if exemplar {
            diag.exemplar_scenes += 1;
        } else {
            diag.new_scenes += 1;
        }
        items.push(Item {
            scene,
            exemplar,
            pass,
            targets,
            feeds_det,
            props,
            roi,
            grads: PassGrads::default(),
        });
    }

    let norms: Vec<f64> = items.iter().filter_map(|it| it.roi.as_ref()).flat_map(|r| r.norms.iter().copied()).collect();
    let batch_stats = ScoreStats::from_norms(&norms);
    let stats = inp.fixed_stats.or(batch_stats).unwrap_or(net.score_stats);
    for it in &mut items {
        if let Some(roi) = it.roi.as_mut() {
            net.restandardize(roi, stats);
        }
    }

    let mut comps = LossComponents::default();

    // detection
    let n_det = items.iter().filter(|it| it.feeds_det).count().max(1) as f64;
    for it in items.iter_mut().filter(|it| it.feeds_det) {
        let objectness: Vec<(f64, bool)> = it.targets.iter().map(|t| (net.objectness_logit(&it.pass, t.anchor), t.is_fg)).collect();
        let fg: Vec<&AnchorTarget> = it.targets.iter().filter(|t| t.is_fg).collect();
        let regression: Vec<([f64; 4], [f64; 4])> = fg
            .iter()
            .map(|t| (net.anchor_deltas(&it.pass, t.anchor), t.deltas.expect("foreground anchors carry targets")))
            .collect();
        let scores: Vec<(f64, bool)> = match &it.roi {
            Some(roi) => roi.score_logits.iter().zip(&it.props).map(|(&z, p)| (z, p.assigned.is_foreground())).collect(),
            None => Vec::new(),
        };
        let l = det_loss(&DetInputs {
            objectness: &objectness,
            regression: &regression,
            scores: &scores,
        });
        comps.det += l.value / n_det;
        for (t, g) in it.targets.iter().zip(&l.grad_objectness) {
            it.grads.objectness.push((t.anchor, g / n_det));
        }
        for (t, g) in fg.iter().zip(&l.grad_regression) {
            it.grads.deltas.push((t.anchor, g.map(|v| v / n_det)));
        }
        if !scores.is_empty() {
            it.grads.score_logits = Some(l.grad_scores.iter().map(|g| g / n_det).collect());
        }
    }

    // online instance matching on the new domain
    let mut slots: Slots = Vec::new();
    let mut labels = Vec::new();
    let mut oim_unlabeled = Vec::new();
    for (i, it) in items.iter().enumerate().filter(|(_, it)| !it.exemplar) {
        for (k, p) in it.props.iter().enumerate() {
            match p.assigned {
                Assignment::Foreground(id) => {
                    slots.push((i, k));
                    labels.push(id);
                }
                Assignment::ForegroundUnlabeled => oim_unlabeled.push(it.feature(k).to_vec()),
                Assignment::Background => {}
            }
        }
    }
    let oim_labeled: Vec<(Vec<f64>, u32)>;
    {
        let feats: Vec<&[f64]> = slots.iter().map(|&(i, k)| items[i].feature(k)).collect();
        let l = oim_loss(&feats, &labels, inp.oim, lc.tau_r);
        diag.oim_used = l.used;
        diag.oim_skipped = l.skipped;
        comps.oim = l.value;
        oim_labeled = feats.iter().map(|f| f.to_vec()).zip(labels.iter().copied()).collect();
        scatter(&mut items, &slots, &l);
    }

    // rehearsal on exemplar scenes
    let mut hard = HardBackgroundMemory::default();
    let mut rehearsal_unlabeled = Vec::new();
    if let Some(old) = inp.old.filter(|_| active.any()) {
        let needs_old_pass = active.dkd || active.rkd_plus || active.rkd_basic;
        let n_ex = items.iter().filter(|it| it.exemplar).count().max(1) as f64;
        let mut f_slots: Slots = Vec::new();
        let mut f_old: Vec<Vec<f64>> = Vec::new();
        let mut l_slots: Slots = Vec::new();
        let mut l_labels = Vec::new();
        for (i, it) in items.iter_mut().enumerate().filter(|(_, it)| it.exemplar) {
            let fg: Vec<usize> = (0..it.props.len()).filter(|&k| it.props[k].assigned.is_foreground()).collect();
            diag.foreground += fg.len();
            if needs_old_pass {
                let old_pass = old.forward_image(&it.scene.image)?;
                if active.dkd {
                    let anchors: Vec<usize> = candidates_from_pass(old, &old_pass, cfg.train_proposals)
                        .iter()
                        .filter_map(|c| c.anchor)
                        .collect();
                    let old_logits: Vec<f64> = anchors.iter().map(|&a| old.objectness_logit(&old_pass, a)).collect();
                    let new_logits: Vec<f64> = anchors.iter().map(|&a| net.objectness_logit(&it.pass, a)).collect();
                    let l = dkd_loss(&old_pass.fmap, &it.pass.fmap, &old_logits, &new_logits);
                    comps.dkd += l.value / n_ex;
                    it.grads.fmap = Some(l.grad_fmap.iter().map(|g| g / n_ex).collect());
                    for (&a, g) in anchors.iter().zip(&l.grad_objectness) {
                        it.grads.objectness.push((a, g / n_ex));
                    }
                }
                if !fg.is_empty() && (active.rkd_plus || active.rkd_basic) {
                    let boxes: Vec<_> = fg.iter().map(|&k| it.props[k].bbox).collect();
                    let old_roi = old.roi_forward(&old_pass, &boxes, old.score_stats)?;
                    for (j, &k) in fg.iter().enumerate() {
                        f_slots.push((i, k));
                        f_old.push(old_roi.feature(j).to_vec());
                    }
                }
            }
            for &k in &fg {
                match it.props[k].assigned {
                    Assignment::Foreground(id) => {
                        l_slots.push((i, k));
                        l_labels.push(id);
                    }
                    _ => rehearsal_unlabeled.push(it.feature(k).to_vec()),
                }
            }
            if let Some(roi) = &it.roi {
                let pinned = match inp.reference {
                    Some(src) => Some(src.roi_forward(&src.forward_image(&it.scene.image)?, &roi.boxes, src.score_stats)?),
                    None => None,
                };
                let source = pinned.as_ref().unwrap_or(roi);
                let feats: Vec<&[f64]> = (0..source.len()).map(|k| source.feature(k)).collect();
                hard.extend(collect_hard_backgrounds(&it.props, &feats, &it.scene.gt_boxes, lc.lambda_b));
            }
        }
        diag.labeled_foreground = l_slots.len();
        diag.hard_backgrounds = hard.len();

        if (active.rkd_plus || active.rkd_basic) && !f_slots.is_empty() {
            if inp.lut.is_empty() {
                diag.rkd_without_references = true;
            } else {
                let old_refs: Vec<&[f64]> = f_old.iter().map(Vec::as_slice).collect();
                let new_refs: Vec<&[f64]> = f_slots.iter().map(|&(i, k)| items[i].feature(k)).collect();
                let protos = inp.lut.refs();
                let l = if active.rkd_plus {
                    rkd_plus_loss(&old_refs, &new_refs, &protos, &hard.refs(), lc.tau_d)?
                } else {
                    rkd_loss(&old_refs, &new_refs, &protos, lc.tau_d)?
                };
                let mut l = l;
                comps.rkd = l.value;
                for g in l.grad.iter_mut().flatten() {
                    *g *= lc.rkd_weight;
                }
                scatter(&mut items, &f_slots, &l);
            }
        }
        if active.rim && !l_slots.is_empty() {
            let feats: Vec<&[f64]> = l_slots.iter().map(|&(i, k)| items[i].feature(k)).collect();
            let queue = inp.queue.refs();
            let l = rim_loss(&feats, &l_labels, inp.lut, &queue, lc.tau_r);
            diag.rim_skipped = l.skipped;
            comps.rim = l.value;
            scatter(&mut items, &l_slots, &l);
        }
    }

    // norm gradients of the score loss, through the batch statistics when
    // they were estimated from this batch
    let gamma = net.params.score_gamma[0];
    match (inp.fixed_stats, batch_stats) {
        (None, Some(bs)) => {
            let mut dlogits = Vec::with_capacity(norms.len());
            for it in &items {
                if let Some(roi) = &it.roi {
                    match &it.grads.score_logits {
                        Some(ds) => dlogits.extend_from_slice(ds),
                        None => dlogits.extend(std::iter::repeat(0.0).take(roi.len())),
                    }
                }
            }
            let dn = bs.batch_backward(&norms, gamma, &dlogits);
            let mut offset = 0;
            for it in items.iter_mut() {
                if let Some(roi) = &it.roi {
                    it.grads.norms = Some(dn[offset..offset + roi.len()].to_vec());
                    offset += roi.len();
                }
            }
        }
        _ => {
            for it in items.iter_mut() {
                if let Some(ds) = &it.grads.score_logits {
                    it.grads.norms = Some(stats.detached_backward(gamma, ds));
                }
            }
        }
    }

    let total = total_loss(lc, &comps, inp.old.is_some());
    if !total.is_finite() {
        return Err(LpsError::Invariant(format!("non-finite loss {comps:?}")));
    }
    let mut grads = Params::zeros(cfg);
    for it in &items {
        net.backward(&it.pass, it.roi.as_ref(), &it.grads, &mut grads);
    }
    Ok(StepOutput {
        grads,
        components: comps,
        total,
        batch_stats,
        oim_labeled,
        oim_unlabeled,
        rehearsal_unlabeled,
        hard_backgrounds: hard,
        diag,
    })
}
