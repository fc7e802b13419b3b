//! Independent reference implementations shared by the oracle tests and the
//! acceptance suite. Sums use Neumaier compensation; softmaxes exponentiate
//! directly without a log-sum-exp shift.
#![allow(dead_code)]

use lps_core::evalkit::{GalleryScene, QueryInput, ScoredBox};
use lps_core::{iou, BoundingBox, Identity};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn units(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| unit(rng, dim)).collect()
}

pub fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

/// Compensated sum.
pub fn nsum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

pub fn inner(a: &[f64], b: &[f64]) -> f64 {
    nsum(a.iter().zip(b).map(|(x, y)| x * y))
}

pub fn softmax(x: &[f64], refs: &[Vec<f64>], tau: f64) -> Vec<f64> {
    let e: Vec<f64> = refs.iter().map(|r| (inner(x, r) / tau).exp()).collect();
    let z = nsum(e.iter().copied());
    e.into_iter().map(|v| v / z).collect()
}

/// `1/(|F||R|) sum_i sum_k q_ik ln(q_ik / p_ik)`.
pub fn kl_distill(old: &[Vec<f64>], new: &[Vec<f64>], refs: &[Vec<f64>], tau: f64) -> f64 {
    if new.is_empty() {
        return 0.0;
    }
    let per: Vec<f64> = old
        .iter()
        .zip(new)
        .map(|(o, n)| {
            let q = softmax(o, refs, tau);
            let p = softmax(n, refs, tau);
            nsum(q.iter().zip(&p).map(|(q, p)| q * (q / p).ln()))
        })
        .collect();
    nsum(per) / (new.len() as f64 * refs.len() as f64)
}

pub fn rkd(old: &[Vec<f64>], new: &[Vec<f64>], protos: &[Vec<f64>], tau: f64) -> f64 {
    kl_distill(old, new, protos, tau)
}

pub fn rkd_plus(old: &[Vec<f64>], new: &[Vec<f64>], protos: &[Vec<f64>], hard: &[Vec<f64>], tau: f64) -> f64 {
    let all: Vec<Vec<f64>> = protos.iter().chain(hard).cloned().collect();
    kl_distill(old, new, &all, tau)
}

/// Mean of `-ln p_target` over features whose target exists.
pub fn matching(new: &[Vec<f64>], targets: &[Option<usize>], refs: &[Vec<f64>], tau: f64) -> f64 {
    let terms: Vec<f64> = new
        .iter()
        .zip(targets)
        .filter_map(|(x, t)| t.map(|t| -softmax(x, refs, tau)[t].ln()))
        .collect();
    if terms.is_empty() {
        return 0.0;
    }
    nsum(terms.iter().copied()) / terms.len() as f64
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn bce(z: f64, y: bool) -> f64 {
    let p = sigmoid(z);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn smooth_l1(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        d * d / (2.0 * beta)
    } else {
        d.abs() - beta / 2.0
    }
}

pub fn det(obj: &[(f64, bool)], reg: &[([f64; 4], [f64; 4])], scores: &[(f64, bool)]) -> f64 {
    let ns = obj.len().max(1) as f64;
    let np = scores.len().max(1) as f64;
    let o = nsum(obj.iter().map(|&(z, y)| bce(z, y))) / ns;
    let r = nsum(reg.iter().flat_map(|(p, t)| (0..4).map(move |j| smooth_l1(p[j] - t[j], 1.0 / 9.0)))) / ns;
    let s = nsum(scores.iter().map(|&(z, y)| bce(z, y))) / np;
    o + r + s
}

pub fn dkd(old_fmap: &[f64], new_fmap: &[f64], old_logits: &[f64], new_logits: &[f64]) -> f64 {
    let f = nsum(old_fmap.iter().zip(new_fmap).map(|(o, n)| (n - o).powi(2))) / old_fmap.len().max(1) as f64;
    let o = nsum(old_logits.iter().zip(new_logits).map(|(&o, &n)| (sigmoid(n) - sigmoid(o)).powi(2)))
        / old_logits.len().max(1) as f64;
    f + o
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

/// Gradient check: relative error of analytic vs central-difference
/// derivative, with an absolute floor for near-zero entries.
pub fn fd_rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6)
}

/// Central difference of `f` with respect to every entry of `x`.
pub fn central_diff(x: &mut [Vec<f64>], f: impl Fn(&[Vec<f64>]) -> f64, eps: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut row = Vec::with_capacity(x[i].len());
        for j in 0..x[i].len() {
            let v = x[i][j];
            x[i][j] = v + eps;
            let up = f(x);
            x[i][j] = v - eps;
            let down = f(x);
            x[i][j] = v;
            row.push((up - down) / (2.0 * eps));
        }
        out.push(row);
    }
    out
}

/// Interpolated AP from explicit precision/recall points at every cutoff:
/// for every cutoff that raises recall, add the recall gain times the best
/// precision at this or any deeper cutoff.
pub fn detection_ap(results: &[Vec<ScoredBox>], gts: &[Vec<BoundingBox>], thr: f64) -> f64 {
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    let mut order: Vec<(usize, usize)> = Vec::new();
    for (s, dets) in results.iter().enumerate() {
        for d in 0..dets.len() {
            order.push((s, d));
        }
    }
    // selection sort keeps the earliest of equal scores first
    let mut ranked = Vec::new();
    while !order.is_empty() {
        let mut best = 0;
        for k in 1..order.len() {
            if results[order[k].0][order[k].1].score > results[order[best].0][order[best].1].score {
                best = k;
            }
        }
        ranked.push(order.remove(best));
    }
    let tp_at = |k: usize| -> usize {
        let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let mut tp = 0;
        for &(s, d) in &ranked[..k] {
            let mut best: Option<usize> = None;
            for g in 0..gts[s].len() {
                let v = iou(&results[s][d].bbox, &gts[s][g]);
                if !taken[s][g] && v >= thr && best.is_none_or(|b| v > iou(&results[s][d].bbox, &gts[s][b])) {
                    best = Some(g);
                }
            }
            if let Some(g) = best {
                taken[s][g] = true;
                tp += 1;
            }
        }
        tp
    };
    let tps: Vec<usize> = (0..=ranked.len()).map(tp_at).collect();
    let prec = |k: usize| tps[k] as f64 / k as f64;
    let mut ap = 0.0;
    for k in 1..=ranked.len() {
        if tps[k] > tps[k - 1] {
            let best = (k..=ranked.len()).map(prec).fold(0.0, f64::max);
            ap += (tps[k] - tps[k - 1]) as f64 / n_gt as f64 * best;
        }
    }
    ap
}

/// Mean over queries of the average precision of the cosine ranking, by
/// explicit prefix counting.
pub fn reid_map(queries: &[QueryInput], gallery: &[GalleryScene], thr: f64) -> (f64, usize) {
    let mut aps = Vec::new();
    for q in queries {
        let mut items: Vec<(f64, bool, usize)> = Vec::new();
        let mut relevant = 0;
        for (s, scene) in gallery.iter().enumerate() {
            if s == q.scene {
                continue;
            }
            let target = scene
                .gt_identities
                .iter()
                .zip(&scene.gt_boxes)
                .find(|(id, _)| **id == Identity::Labeled(q.identity))
                .map(|(_, b)| *b);
            if target.is_some() {
                relevant += 1;
            }
            for (b, f) in scene.boxes.iter().zip(&scene.features) {
                items.push((inner(f, &q.feature), target.is_some_and(|t| iou(b, &t) >= thr), s));
            }
        }
        if relevant == 0 {
            continue;
        }
        // stable insertion sort by descending similarity
        let mut sorted: Vec<(f64, bool, usize)> = Vec::new();
        for it in items {
            let pos = sorted.iter().position(|x| x.0 < it.0).unwrap_or(sorted.len());
            sorted.insert(pos, it);
        }
        let is_tp = |k: usize| sorted[k].1 && !sorted[..k].iter().any(|x| x.1 && x.2 == sorted[k].2);
        let mut ap = 0.0;
        for k in 0..sorted.len() {
            if is_tp(k) {
                let hits = (0..=k).filter(|&j| is_tp(j)).count();
                ap += hits as f64 / (k + 1) as f64;
            }
        }
        aps.push(ap / relevant as f64);
    }
    if aps.is_empty() {
        return (0.0, 0);
    }
    (aps.iter().sum::<f64>() / aps.len() as f64, aps.len())
}

pub fn random_box(rng: &mut impl Rng) -> BoundingBox {
    let x = rng.gen_range(0..8) as f64 * 2.0;
    let y = rng.gen_range(0..4) as f64 * 2.0;
    let w = rng.gen_range(2..7) as f64 * 2.0;
    let h = rng.gen_range(2..7) as f64 * 2.0;
    BoundingBox::new(x, y, x + w, y + h)
}

pub mod checks;
