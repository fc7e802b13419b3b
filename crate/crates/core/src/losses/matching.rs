use super::{log_softmax_logits, FeatureLoss};
use crate::memory::{PrototypeLut, UnlabeledQueue};

/// Cross-entropy of each feature against its target slot among `refs`;
/// entries with no target are skipped.
fn instance_matching(new: &[&[f64]], targets: &[Option<usize>], refs: &[&[f64]], tau: f64) -> FeatureLoss {
    assert_eq!(new.len(), targets.len(), "features and targets must align");
    let dim = new.first().map_or(0, |v| v.len());
    let mut out = FeatureLoss::zero(new.len(), dim);
    out.used = targets.iter().flatten().count();
    out.skipped = new.len() - out.used;
    if out.used == 0 {
        return out;
    }
    let scale = 1.0 / out.used as f64;
    for (i, (x, t)) in new.iter().zip(targets).enumerate() {
        let Some(t) = *t else { continue };
        let lp = log_softmax_logits(x, refs, tau);
        out.value -= scale * lp[t];
        let g = &mut out.grad[i];
        for (k, r) in refs.iter().enumerate() {
            let coef = scale * (lp[k].exp() - if k == t { 1.0 } else { 0.0 }) / tau;
            for (gd, rv) in g.iter_mut().zip(r.iter()) {
                *gd += coef * rv;
            }
        }
    }
    out
}

/// Rehearsal instance matching: each labeled exemplar feature against its
/// identity prototype, with all prototypes and queue entries as negatives.
pub fn rim_loss(new: &[&[f64]], labels: &[u32], lut: &PrototypeLut, queue: &[&[f64]], tau: f64) -> FeatureLoss {
    let refs: Vec<&[f64]> = lut.refs().into_iter().chain(queue.iter().copied()).collect();
    let targets: Vec<Option<usize>> = labels.iter().map(|&id| lut.index_of(id)).collect();
    instance_matching(new, &targets, &refs, tau)
}

/// OIM loss against the current domain's lookup table and queue.
pub fn oim_loss(new: &[&[f64]], labels: &[u32], state: &OimState, tau: f64) -> FeatureLoss {
    let refs: Vec<&[f64]> = state.rows.iter().map(Vec::as_slice).chain(state.queue.iter()).collect();
    let targets: Vec<Option<usize>> = labels.iter().map(|&id| state.index_of(id)).collect();
    instance_matching(new, &targets, &refs, tau)
}

/// Momentum-updated lookup table and unlabeled queue of the domain being
/// trained.
#[derive(Debug, Clone, PartialEq)]
pub struct OimState {
    ids: Vec<u32>,
    rows: Vec<Vec<f64>>,
    pub queue: UnlabeledQueue,
    pub momentum: f64,
}

impl OimState {
    /// Zero-initialized table over `ids`.
    pub fn new(ids: impl IntoIterator<Item = u32>, dim: usize, queue_capacity: usize, momentum: f64) -> Self {
        let mut ids: Vec<u32> = ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        let rows = vec![vec![0.0; dim]; ids.len()];
        Self {
            ids,
            rows,
            queue: UnlabeledQueue::new(queue_capacity),
            momentum,
        }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn row(&self, id: u32) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.rows[i].as_slice())
    }

    pub fn set_row(&mut self, id: u32, v: Vec<f64>) {
        if let Some(i) = self.index_of(id) {
            self.rows[i] = v;
        }
    }

    /// `row <- normalize(m * row + (1 - m) * x)` for every labeled feature.
    pub fn update(&mut self, features: &[&[f64]], labels: &[u32]) {
        let m = self.momentum;
        for (x, &id) in features.iter().zip(labels) {
            if let Some(i) = self.index_of(id) {
                let row = &mut self.rows[i];
                for (r, v) in row.iter_mut().zip(x.iter()) {
                    *r = m * *r + (1.0 - m) * v;
                }
                crate::memory::l2_normalize(row);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rim_perfect_and_symmetric() {
        let z = [1.0, 0.0];
        let lut = PrototypeLut::from_entries([(4, z.to_vec())]);
        let l = rim_loss(&[&z], &[4], &lut, &[], 0.1);
        assert_eq!(l.value, 0.0);
        let x = [0.0, 1.0];
        let q = [-1.0, 0.0];
        let l = rim_loss(&[&x], &[4], &lut, &[&q], 0.1);
        assert!((l.value - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rim_skips_unknown_identities() {
        let lut = PrototypeLut::from_entries([(4, vec![1.0, 0.0])]);
        let l = rim_loss(&[&[1.0, 0.0], &[0.0, 1.0]], &[4, 9], &lut, &[], 0.1);
        assert_eq!((l.used, l.skipped), (1, 1));
        assert!(l.grad[1].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn oim_update_moves_toward_feature() {
        let mut s = OimState::new([2, 1], 2, 10, 0.5);
        assert_eq!(s.ids(), &[1, 2]);
        s.update(&[&[1.0, 0.0]], &[2]);
        assert_eq!(s.row(2).unwrap(), &[1.0, 0.0]);
        s.update(&[&[0.0, 1.0]], &[2]);
        let r = s.row(2).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((r[0] - h).abs() < 1e-15 && (r[1] - h).abs() < 1e-15);
        let single = OimState::new([7], 2, 0, 0.5);
        let mut single = single;
        single.set_row(7, vec![0.0, 1.0]);
        assert_eq!(oim_loss(&[&[0.0, 1.0]], &[7], &single, 0.1).value, 0.0);
    }
}
