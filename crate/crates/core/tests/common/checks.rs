//! Randomized oracle comparisons. Each returns the worst error seen so the
//! callers can assert or report it.

use lps_core::evalkit::{self, GalleryScene, QueryInput, ScoredBox};
use lps_core::losses::{det_loss, dkd_loss, oim_loss, rim_loss, rkd_loss, rkd_plus_loss, DetInputs, OimState};
use lps_core::memory::PrototypeLut;
use lps_core::{BoundingBox, Identity};
use rand::Rng;

use super::*;

pub const LOSSES: [&str; 6] = ["rkd", "rkd_plus", "rim", "oim", "dkd", "det"];
const DIM: usize = 6;
const TAU_D: f64 = 0.3;
const TAU_R: f64 = 0.1;
const EPS: f64 = 1e-6;

/// Random small instance covering every loss.
pub struct Instance {
    pub old: Vec<Vec<f64>>,
    pub new: Vec<Vec<f64>>,
    pub protos: Vec<Vec<f64>>,
    pub proto_ids: Vec<u32>,
    pub hard: Vec<Vec<f64>>,
    pub queue: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
    pub obj: Vec<(f64, bool)>,
    pub reg: Vec<([f64; 4], [f64; 4])>,
    pub scores: Vec<(f64, bool)>,
    pub old_fmap: Vec<f64>,
    pub new_fmap: Vec<f64>,
    pub old_logits: Vec<f64>,
    pub new_logits: Vec<f64>,
}

impl Instance {
    pub fn random(rng: &mut impl Rng) -> Self {
        let nf = rng.gen_range(1..=4);
        let old = units(rng, nf, DIM);
        // half of the cases keep the new features close to the old ones
        let near = rng.gen_bool(0.5);
        let new: Vec<Vec<f64>> = old
            .iter()
            .map(|o| {
                if near {
                    let v: Vec<f64> = o.iter().map(|x| x + rng.gen_range(-0.1..0.1)).collect();
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / n).collect()
                } else {
                    unit(rng, DIM)
                }
            })
            .collect();
        let nt = rng.gen_range(1..=5);
        let mut proto_ids: Vec<u32> = Vec::new();
        while proto_ids.len() < nt {
            let id = rng.gen_range(0..20);
            if !proto_ids.contains(&id) {
                proto_ids.push(id);
            }
        }
        proto_ids.sort_unstable();
        let protos = units(rng, nt, DIM);
        let (nm, nq) = (rng.gen_range(0..=3), rng.gen_range(0..=4));
        let hard = units(rng, nm, DIM);
        let queue = units(rng, nq, DIM);
        // labels mostly hit a prototype; some are unknown and skipped
        let labels = (0..nf)
            .map(|_| {
                if rng.gen_bool(0.85) {
                    proto_ids[rng.gen_range(0..nt)]
                } else {
                    100 + rng.gen_range(0..5)
                }
            })
            .collect();
        let logit = |rng: &mut dyn rand::RngCore| rng.gen_range(-4.0..4.0);
        let obj = (0..rng.gen_range(1..=6)).map(|_| (logit(rng), rng.gen_bool(0.4))).collect();
        let reg = (0..rng.gen_range(0..=3))
            .map(|_| {
                let mut p = [0.0f64; 4];
                let mut t = [0.0f64; 4];
                for j in 0..4 {
                    t[j] = rng.gen_range(-1.0..1.0);
                    // keep clear of the smooth-L1 kink so differences are smooth
                    loop {
                        p[j] = rng.gen_range(-1.0..1.0);
                        if ((p[j] - t[j]).abs() - 1.0 / 9.0).abs() > 1e-3 {
                            break;
                        }
                    }
                }
                (p, t)
            })
            .collect();
        let scores = (0..rng.gen_range(0..=5)).map(|_| (logit(rng), rng.gen_bool(0.5))).collect();
        let nm = rng.gen_range(1..=12);
        let old_fmap: Vec<f64> = (0..nm).map(|_| rng.gen_range(0.0..2.0)).collect();
        let new_fmap = old_fmap.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
        let na = rng.gen_range(0..=5);
        let old_logits: Vec<f64> = (0..na).map(|_| logit(rng)).collect();
        let new_logits = old_logits.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
        Self {
            old,
            new,
            protos,
            proto_ids,
            hard,
            queue,
            labels,
            obj,
            reg,
            scores,
            old_fmap,
            new_fmap,
            old_logits,
            new_logits,
        }
    }

    pub fn lut(&self) -> PrototypeLut {
        PrototypeLut::from_entries(self.proto_ids.iter().copied().zip(self.protos.iter().cloned()))
    }

    pub fn oim_state(&self) -> OimState {
        let mut s = OimState::new(self.proto_ids.iter().copied(), DIM, self.queue.len(), 0.5);
        for (&id, row) in self.proto_ids.iter().zip(&self.protos) {
            s.set_row(id, row.clone());
        }
        for q in &self.queue {
            s.queue.push(q.clone());
        }
        s
    }

    fn targets(&self) -> Vec<Option<usize>> {
        self.labels.iter().map(|l| self.proto_ids.iter().position(|p| p == l)).collect()
    }

    /// Library value of a loss with the new-side inputs replaced by `x`.
    fn value(&self, loss: &str, x: &[Vec<f64>]) -> f64 {
        match loss {
            "rkd" => rkd_loss(&refs(&self.old), &refs(x), &refs(&self.protos), TAU_D).unwrap().value,
            "rkd_plus" => rkd_plus_loss(&refs(&self.old), &refs(x), &refs(&self.protos), &refs(&self.hard), TAU_D)
                .unwrap()
                .value,
            "rim" => rim_loss(&refs(x), &self.labels, &self.lut(), &refs(&self.queue), TAU_R).value,
            "oim" => oim_loss(&refs(x), &self.labels, &self.oim_state(), TAU_R).value,
            "dkd" => dkd_loss(&self.old_fmap, &x[0], &self.old_logits, &x[1]).value,
            "det" => {
                let obj: Vec<(f64, bool)> = self.obj.iter().zip(&x[0]).map(|(o, &z)| (z, o.1)).collect();
                let reg: Vec<([f64; 4], [f64; 4])> = self
                    .reg
                    .iter()
                    .zip(x[1].chunks(4))
                    .map(|(r, p)| ([p[0], p[1], p[2], p[3]], r.1))
                    .collect();
                let scores: Vec<(f64, bool)> = self.scores.iter().zip(&x[2]).map(|(s, &z)| (z, s.1)).collect();
                det_loss(&DetInputs {
                    objectness: &obj,
                    regression: &reg,
                    scores: &scores,
                })
                .value
            }
            _ => unreachable!("unknown loss {loss}"),
        }
    }

    /// Differentiated inputs of a loss at the instance point.
    fn point(&self, loss: &str) -> Vec<Vec<f64>> {
        match loss {
            "dkd" => vec![self.new_fmap.clone(), self.new_logits.clone()],
            "det" => vec![
                self.obj.iter().map(|o| o.0).collect(),
                self.reg.iter().flat_map(|r| r.0).collect(),
                self.scores.iter().map(|s| s.0).collect(),
            ],
            _ => self.new.clone(),
        }
    }

    fn analytic(&self, loss: &str) -> Vec<Vec<f64>> {
        let x = self.point(loss);
        match loss {
            "rkd" => rkd_loss(&refs(&self.old), &refs(&x), &refs(&self.protos), TAU_D).unwrap().grad,
            "rkd_plus" => rkd_plus_loss(&refs(&self.old), &refs(&x), &refs(&self.protos), &refs(&self.hard), TAU_D)
                .unwrap()
                .grad,
            "rim" => rim_loss(&refs(&x), &self.labels, &self.lut(), &refs(&self.queue), TAU_R).grad,
            "oim" => oim_loss(&refs(&x), &self.labels, &self.oim_state(), TAU_R).grad,
            "dkd" => {
                let l = dkd_loss(&self.old_fmap, &x[0], &self.old_logits, &x[1]);
                vec![l.grad_fmap, l.grad_objectness]
            }
            "det" => {
                let l = det_loss(&DetInputs {
                    objectness: &self.obj,
                    regression: &self.reg,
                    scores: &self.scores,
                });
                vec![l.grad_objectness, l.grad_regression.into_iter().flatten().collect(), l.grad_scores]
            }
            _ => unreachable!("unknown loss {loss}"),
        }
    }

    pub fn oracle(&self, loss: &str) -> f64 {
        match loss {
            "rkd" => super::rkd(&self.old, &self.new, &self.protos, TAU_D),
            "rkd_plus" => super::rkd_plus(&self.old, &self.new, &self.protos, &self.hard, TAU_D),
            "rim" | "oim" => {
                let all: Vec<Vec<f64>> = self.protos.iter().chain(&self.queue).cloned().collect();
                super::matching(&self.new, &self.targets(), &all, TAU_R)
            }
            "dkd" => super::dkd(&self.old_fmap, &self.new_fmap, &self.old_logits, &self.new_logits),
            "det" => super::det(&self.obj, &self.reg, &self.scores),
            _ => unreachable!("unknown loss {loss}"),
        }
    }

    pub fn library(&self, loss: &str) -> f64 {
        self.value(loss, &self.point(loss))
    }

    /// Worst relative error of analytic against central-difference
    /// gradients.
    pub fn gradient_error(&self, loss: &str) -> f64 {
        let analytic = self.analytic(loss);
        let mut x = self.point(loss);
        let fd = central_diff(&mut x, |p| self.value(loss, p), EPS);
        let mut worst: f64 = 0.0;
        for (a, f) in analytic.iter().zip(&fd) {
            assert_eq!(a.len(), f.len(), "{loss}: gradient shape");
            for (&a, &f) in a.iter().zip(f) {
                worst = worst.max(fd_rel_err(a, f));
            }
        }
        worst
    }
}

/// Worst value and gradient errors per loss over `cases` random instances.
pub fn loss_errors(cases: usize, seed: u64) -> Vec<(&'static str, f64, f64)> {
    let mut r = rng(seed);
    let instances: Vec<Instance> = (0..cases).map(|_| Instance::random(&mut r)).collect();
    LOSSES
        .iter()
        .map(|&loss| {
            let mut value: f64 = 0.0;
            let mut grad: f64 = 0.0;
            for inst in &instances {
                value = value.max(rel_err(inst.library(loss), inst.oracle(loss)));
                grad = grad.max(inst.gradient_error(loss));
            }
            (loss, value, grad)
        })
        .collect()
}

/// Number of cases where rkd_plus with no hard backgrounds differs from
/// rkd in any bit of its value or gradient.
pub fn reduction_mismatches(cases: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    (0..cases)
        .filter(|_| {
            let inst = Instance::random(&mut r);
            let (o, n, p) = (refs(&inst.old), refs(&inst.new), refs(&inst.protos));
            let a = rkd_loss(&o, &n, &p, TAU_D).unwrap();
            let b = rkd_plus_loss(&o, &n, &p, &[], TAU_D).unwrap();
            let bits = |l: &lps_core::losses::FeatureLoss| -> Vec<u64> {
                std::iter::once(l.value).chain(l.grad.iter().flatten().copied()).map(f64::to_bits).collect()
            };
            bits(&a) != bits(&b)
        })
        .count()
}

pub fn random_detections(rng: &mut impl Rng) -> (Vec<Vec<ScoredBox>>, Vec<Vec<BoundingBox>>) {
    loop {
        let scenes = rng.gen_range(1..=3);
        let mut results = Vec::new();
        let mut gts = Vec::new();
        let mut left = 6usize;
        for _ in 0..scenes {
            let nd = rng.gen_range(0..=left.min(4));
            left -= nd;
            results.push(
                (0..nd)
                    .map(|_| ScoredBox {
                        bbox: random_box(rng),
                        score: rng.gen_range(0.0..1.0),
                    })
                    .collect(),
            );
            gts.push((0..rng.gen_range(0..=3)).map(|_| random_box(rng)).collect::<Vec<_>>());
        }
        if gts.iter().any(|g| !g.is_empty()) {
            return (results, gts);
        }
    }
}

pub fn random_reid(rng: &mut impl Rng) -> (Vec<QueryInput>, Vec<GalleryScene>) {
    let scenes = rng.gen_range(2..=4);
    let mut left = 6usize;
    let gallery: Vec<GalleryScene> = (0..scenes)
        .map(|_| {
            let ng = rng.gen_range(1..=3);
            let gt_boxes: Vec<BoundingBox> = (0..ng).map(|_| random_box(rng)).collect();
            let mut ids: Vec<u32> = Vec::new();
            while ids.len() < ng {
                let id = rng.gen_range(0..4);
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
            let gt_identities = ids
                .into_iter()
                .map(|id| if rng.gen_bool(0.8) { Identity::Labeled(id) } else { Identity::Unlabeled })
                .collect();
            let nd = rng.gen_range(0..=left.min(3));
            left -= nd;
            let boxes: Vec<BoundingBox> = (0..nd)
                .map(|_| if rng.gen_bool(0.6) { gt_boxes[rng.gen_range(0..ng)] } else { random_box(rng) })
                .collect();
            let features = boxes.iter().map(|_| unit(rng, 4)).collect();
            GalleryScene {
                boxes,
                features,
                gt_boxes,
                gt_identities,
            }
        })
        .collect();
    let queries = (0..rng.gen_range(1..=3))
        .map(|_| QueryInput {
            feature: unit(rng, 4),
            scene: rng.gen_range(0..scenes),
            identity: rng.gen_range(0..4),
        })
        .collect();
    (queries, gallery)
}

/// Worst absolute differences `(detection AP, re-ID mAP)` against the
/// exhaustive oracles, plus the count of evaluated-query mismatches.
pub fn metric_errors(cases: usize, seed: u64) -> (f64, f64, usize) {
    let mut r = rng(seed);
    let (mut ap_err, mut map_err, mut count_err): (f64, f64, usize) = (0.0, 0.0, 0);
    for _ in 0..cases {
        let (results, gts) = random_detections(&mut r);
        let ap = evalkit::detection_ap(&results, &gts, 0.5).unwrap();
        ap_err = ap_err.max((ap - super::detection_ap(&results, &gts, 0.5)).abs());
        let (queries, gallery) = random_reid(&mut r);
        let out = evalkit::reid_map(&queries, &gallery, 0.5);
        let (map, evaluated) = super::reid_map(&queries, &gallery, 0.5);
        map_err = map_err.max((out.map - map).abs());
        count_err += (out.evaluated() != evaluated) as usize;
    }
    (ap_err, map_err, count_err)
}
