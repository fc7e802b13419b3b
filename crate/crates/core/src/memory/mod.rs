//! Rehearsal state: exemplar store, prototype lookup table, hard
//! background memory and the unlabeled-instance circular queue.

mod exemplars;
mod queue;

use std::collections::BTreeMap;

pub use exemplars::{sample_exemplar_indices, sample_exemplars, DomainExemplars, ExemplarStore, SamplingScheme};
pub use queue::{push_unlabeled, UnlabeledQueue};

use crate::error::{LpsError, Result};
use crate::geometry::{iou, BoundingBox};
use crate::perception::{self, checksum_f64, Assignment, FrozenNetwork, ModelSource, Proposal};
use crate::synthgen::SceneSample;

pub fn l2_normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Frozen identity prototypes of old-domain exemplar persons, ordered by
/// identity id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrototypeLut {
    ids: Vec<u32>,
    rows: Vec<Vec<f64>>,
    frozen: bool,
}

impl PrototypeLut {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn refs(&self) -> Vec<&[f64]> {
        self.rows.iter().map(Vec::as_slice).collect()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn get(&self, id: u32) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.rows[i].as_slice())
    }

    /// Appends the entries of `other` at a domain transition; ids already
    /// present keep their old prototype.
    pub fn append(&mut self, other: PrototypeLut) {
        let mut merged: BTreeMap<u32, Vec<f64>> = self.ids.drain(..).zip(self.rows.drain(..)).collect();
        for (id, row) in other.ids.into_iter().zip(other.rows) {
            merged.entry(id).or_insert(row);
        }
        for (id, row) in merged {
            self.ids.push(id);
            self.rows.push(row);
        }
        self.frozen = true;
    }

    pub fn checksum(&self) -> u64 {
        checksum_f64(
            self.ids
                .iter()
                .map(|&i| i as f64)
                .chain(self.rows.iter().flatten().copied()),
        )
    }

    /// Builds a table from `(id, unit vector)` pairs.
    pub fn from_entries(entries: impl IntoIterator<Item = (u32, Vec<f64>)>) -> Self {
        let map: BTreeMap<u32, Vec<f64>> = entries.into_iter().collect();
        let (ids, rows) = map.into_iter().unzip();
        Self { ids, rows, frozen: true }
    }
}

/// Prototype of each labeled exemplar identity: the L2-normalized mean of
/// its unit features, extracted by the frozen model on ground-truth boxes.
pub fn build_prototypes(model: &FrozenNetwork, exemplars: &[SceneSample]) -> Result<PrototypeLut> {
    if exemplars.is_empty() {
        return Err(LpsError::Empty("no exemplars to build prototypes from".into()));
    }
    let mut sums: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for scene in exemplars {
        if scene.gt_boxes.is_empty() {
            continue;
        }
        let (feats, _) = perception::embed(model, &scene.image, &scene.gt_boxes, ModelSource::Old)?;
        for (f, ident) in feats.iter().zip(&scene.gt_identities) {
            if let Some(id) = ident.label() {
                let acc = sums.entry(id).or_insert_with(|| vec![0.0; f.vector.len()]);
                acc.iter_mut().zip(&f.vector).for_each(|(a, b)| *a += b);
            }
        }
    }
    Ok(PrototypeLut::from_entries(sums.into_iter().map(|(id, mut v)| {
        l2_normalize(&mut v);
        (id, v)
    })))
}

/// Where a hard-background feature came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardBackgroundRecord {
    pub assigned: Assignment,
    pub max_iou: f64,
}

/// Per-iteration memory of hard background proposal features.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HardBackgroundMemory {
    pub features: Vec<Vec<f64>>,
    pub provenance: Vec<HardBackgroundRecord>,
}

impl HardBackgroundMemory {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn clear(&mut self) {
        self.features.clear();
        self.provenance.clear();
    }

    pub fn refs(&self) -> Vec<&[f64]> {
        self.features.iter().map(Vec::as_slice).collect()
    }

    pub fn extend(&mut self, other: HardBackgroundMemory) {
        self.features.extend(other.features);
        self.provenance.extend(other.provenance);
    }

    /// Re-checks the BG and IoU > lambda_b predicate of every entry.
    pub fn provenance_holds(&self, lambda_b: f64) -> bool {
        self.provenance
            .iter()
            .all(|r| r.assigned == Assignment::Background && r.max_iou > lambda_b)
    }
}

/// Background proposals whose best IoU with any ground-truth person
/// exceeds `lambda_b`. `features[i]` belongs to `proposals[i]`.
pub fn collect_hard_backgrounds(
    proposals: &[Proposal],
    features: &[&[f64]],
    gt_boxes: &[BoundingBox],
    lambda_b: f64,
) -> HardBackgroundMemory {
    let mut mem = HardBackgroundMemory::default();
    for (p, f) in proposals.iter().zip(features) {
        if p.assigned != Assignment::Background {
            continue;
        }
        let max_iou = gt_boxes.iter().map(|g| iou(&p.bbox, g)).fold(0.0, f64::max);
        if max_iou > lambda_b {
            mem.features.push(f.to_vec());
            mem.provenance.push(HardBackgroundRecord {
                assigned: p.assigned,
                max_iou,
            });
        }
    }
    mem
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{clone_and_freeze, NetConfig, Network};
    use crate::synthgen::Identity;
    use rand::SeedableRng;

    fn proposal(b: BoundingBox, assigned: Assignment, v: f64) -> Proposal {
        Proposal {
            bbox: b,
            objectness: 0.5,
            anchor: None,
            assigned,
            iou_with_best_gt: v,
            gt_index: None,
        }
    }

    #[test]
    fn hard_backgrounds_filter_by_iou() {
        let gt = vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0)];
        let hi = BoundingBox::new(0.0, 0.0, 10.0, 3.0); // inter 30, union 100 -> 0.3
        let lo = BoundingBox::new(0.0, 0.0, 10.0, 0.5); // inter 5, union 100 -> 0.05
        assert!((iou(&hi, &gt[0]) - 30.0 / 100.0).abs() < 1e-15);
        assert!((iou(&lo, &gt[0]) - 5.0 / 100.0).abs() < 1e-15);
        let props = vec![
            proposal(hi, Assignment::Background, 0.3),
            proposal(lo, Assignment::Background, 0.05),
            proposal(gt[0], Assignment::Foreground(3), 1.0),
        ];
        let f1 = vec![1.0, 0.0];
        let f2 = vec![0.0, 1.0];
        let f3 = vec![0.6, 0.8];
        let mem = collect_hard_backgrounds(&props, &[&f1, &f2, &f3], &gt, 0.1);
        assert_eq!(mem.features, vec![f1]);
        assert!(mem.provenance_holds(0.1));
    }

    #[test]
    fn no_persons_means_empty_memory() {
        let props = vec![proposal(BoundingBox::new(0.0, 0.0, 5.0, 5.0), Assignment::Background, 0.0)];
        let f = vec![1.0];
        assert!(collect_hard_backgrounds(&props, &[&f], &[], 0.1).is_empty());
    }

    #[test]
    fn lut_append_accumulates_and_orders() {
        let mut lut = PrototypeLut::from_entries([(5, vec![1.0, 0.0])]);
        lut.append(PrototypeLut::from_entries([(2, vec![0.0, 1.0]), (5, vec![0.0, 1.0])]));
        assert_eq!(lut.ids(), &[2, 5]);
        assert_eq!(lut.get(5).unwrap(), &[1.0, 0.0]);
        assert!(lut.is_frozen());
    }

    #[test]
    fn single_instance_prototype_equals_its_feature() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let net = Network::new(NetConfig::default(), &mut rng).unwrap();
        let frozen = clone_and_freeze(&net);
        let spec = crate::synthgen::DomainSpec {
            num_scenes: 4,
            num_test_scenes: 2,
            num_identities: 6,
            ..crate::synthgen::DomainSpec::preset(0, 5)
        };
        let ds = crate::synthgen::generate_domain(&spec).unwrap();
        let mut scene = ds.train[0].clone();
        scene.gt_identities = scene.gt_identities.iter().map(|_| Identity::Unlabeled).collect();
        scene.gt_identities[0] = Identity::Labeled(77);
        let lut = build_prototypes(&frozen, std::slice::from_ref(&scene)).unwrap();
        assert_eq!(lut.ids(), &[77]);
        let (feats, _) = perception::embed(&frozen, &scene.image, &scene.gt_boxes[..1], ModelSource::Old).unwrap();
        for (a, b) in lut.get(77).unwrap().iter().zip(&feats[0].vector) {
            assert!((a - b).abs() < 1e-12);
        }
        // the same scene twice gives two equal features -> same prototype
        let twice = build_prototypes(&frozen, &[scene.clone(), scene]).unwrap();
        for (a, b) in twice.get(77).unwrap().iter().zip(&feats[0].vector) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn orthonormal_pair_prototype() {
        // normalized mean of e1 and e2 is (e1 + e2) / sqrt(2)
        let mut v = vec![0.5, 0.5, 0.0];
        l2_normalize(&mut v);
        let s = 1.0 / 2f64.sqrt();
        assert!((v[0] - s).abs() < 1e-15 && (v[1] - s).abs() < 1e-15 && v[2] == 0.0);
    }
}
