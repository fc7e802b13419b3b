use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{LpsError, Result};
use crate::rng;
use crate::synthgen::{DomainDataset, SceneSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    /// Evenly spaced scene indices.
    #[default]
    Uniform,
    Random,
    /// Scenes with the most ground-truth boxes.
    MaxBbox,
    /// Scenes with the most labeled persons.
    MaxId,
}

impl FromStr for SamplingScheme {
    type Err = LpsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "random" => Ok(Self::Random),
            "max_bbox" => Ok(Self::MaxBbox),
            "max_id" => Ok(Self::MaxId),
            other => Err(LpsError::InvalidConfig(format!("unknown sampling scheme `{other}`"))),
        }
    }
}

impl fmt::Display for SamplingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Random => "random",
            Self::MaxBbox => "max_bbox",
            Self::MaxId => "max_id",
        })
    }
}

/// `round(fraction * n)`, at least one.
pub fn exemplar_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).max(1).min(n)
}

/// Sorted train-split indices chosen by `scheme`.
pub fn sample_exemplar_indices(train: &[SceneSample], scheme: SamplingScheme, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(LpsError::InvalidConfig(format!("exemplar fraction {fraction} must lie in (0, 1)")));
    }
    let n = train.len();
    if n == 0 {
        return Err(LpsError::EmptyTrainSplit);
    }
    let count = exemplar_count(n, fraction);
    let top_by = |key: &dyn Fn(&SceneSample) -> usize| {
        let mut order: Vec<usize> = (0..n).collect();
        // stable: lower scene index wins ties
        order.sort_by_key(|&i| std::cmp::Reverse(key(&train[i])));
        order.truncate(count);
        order
    };
    let mut picked = match scheme {
        SamplingScheme::Uniform => (0..count).map(|i| i * n / count).collect(),
        SamplingScheme::Random => {
            let mut r = rng::stream(seed, &[0xE7E4, n as u64]);
            index::sample(&mut r, n, count).into_vec()
        }
        SamplingScheme::MaxBbox => top_by(&|s| s.gt_boxes.len()),
        SamplingScheme::MaxId => top_by(&|s| s.num_labeled()),
    };
    picked.sort_unstable();
    Ok(picked)
}

pub fn sample_exemplars(dataset: &DomainDataset, scheme: SamplingScheme, fraction: f64, seed: u64) -> Result<Vec<SceneSample>> {
    let idx = sample_exemplar_indices(&dataset.train, scheme, fraction, seed)?;
    Ok(idx.into_iter().map(|i| dataset.train[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainExemplars {
    pub domain_id: u32,
    pub indices: Vec<usize>,
    scenes: Vec<SceneSample>,
}

impl DomainExemplars {
    pub fn scenes(&self) -> &[SceneSample] {
        &self.scenes
    }
}

/// Exemplars of every finished domain. Sampled sets are never modified.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarStore {
    pub scheme: SamplingScheme,
    pub fraction: f64,
    domains: Vec<DomainExemplars>,
}

impl ExemplarStore {
    pub fn new(scheme: SamplingScheme, fraction: f64) -> Self {
        Self {
            scheme,
            fraction,
            domains: Vec::new(),
        }
    }

    pub fn add_domain(&mut self, dataset: &DomainDataset, seed: u64) -> Result<&DomainExemplars> {
        let indices = sample_exemplar_indices(&dataset.train, self.scheme, self.fraction, seed)?;
        let scenes = indices.iter().map(|&i| dataset.train[i].clone()).collect();
        self.domains.push(DomainExemplars {
            domain_id: dataset.domain_id(),
            indices,
            scenes,
        });
        Ok(self.domains.last().expect("just pushed"))
    }

    /// Re-attaches previously sampled indices, e.g. when resuming a run.
    pub fn restore_domain(&mut self, dataset: &DomainDataset, indices: Vec<usize>) -> Result<()> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.train.len()) {
            return Err(LpsError::InvalidConfig(format!(
                "exemplar index {bad} out of range for domain {} with {} train scenes",
                dataset.domain_id(),
                dataset.train.len()
            )));
        }
        let scenes = indices.iter().map(|&i| dataset.train[i].clone()).collect();
        self.domains.push(DomainExemplars {
            domain_id: dataset.domain_id(),
            indices,
            scenes,
        });
        Ok(())
    }

    pub fn domains(&self) -> &[DomainExemplars] {
        &self.domains
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn total_scenes(&self) -> usize {
        self.domains.iter().map(|d| d.scenes.len()).sum()
    }

    pub fn all_scenes(&self) -> impl Iterator<Item = &SceneSample> {
        self.domains.iter().flat_map(|d| d.scenes.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use crate::synthgen::{Identity, Image};

    fn scenes(box_counts: &[usize]) -> Vec<SceneSample> {
        box_counts
            .iter()
            .map(|&k| SceneSample {
                image: Image::filled(2, 2, 3, 0.0),
                gt_boxes: vec![BoundingBox::new(0.0, 0.0, 1.0, 1.0); k],
                gt_identities: (0..k).map(|i| if i % 2 == 0 { Identity::Labeled(i as u32) } else { Identity::Unlabeled }).collect(),
                domain_id: 0,
            })
            .collect()
    }

    #[test]
    fn two_percent_of_100_is_2() {
        let s = scenes(&[1; 100]);
        for scheme in [SamplingScheme::Uniform, SamplingScheme::Random, SamplingScheme::MaxBbox, SamplingScheme::MaxId] {
            assert_eq!(sample_exemplar_indices(&s, scheme, 0.02, 1).unwrap().len(), 2);
        }
    }

    #[test]
    fn uniform_spacing_matches_index_arithmetic() {
        let s = scenes(&[1; 100]);
        assert_eq!(sample_exemplar_indices(&s, SamplingScheme::Uniform, 0.02, 0).unwrap(), vec![0, 50]);
        // oracle: k-th pick is floor(k * n / count)
        for n in [7usize, 33, 150, 301] {
            let s = scenes(&vec![1; n]);
            let count = exemplar_count(n, 0.02);
            let expected: Vec<usize> = (0..count).map(|k| (k as f64 * n as f64 / count as f64).floor() as usize).collect();
            assert_eq!(sample_exemplar_indices(&s, SamplingScheme::Uniform, 0.02, 0).unwrap(), expected);
        }
    }

    #[test]
    fn max_bbox_includes_largest_scene() {
        let mut counts = vec![1; 100];
        counts[0] = 5;
        let picked = sample_exemplar_indices(&scenes(&counts), SamplingScheme::MaxBbox, 0.02, 0).unwrap();
        assert!(picked.contains(&0));
        // tie among the 1-box scenes: lowest index wins
        assert_eq!(picked, vec![0, 1]);
    }

    #[test]
    fn max_id_counts_labeled_only() {
        let mut counts = vec![1; 50];
        counts[10] = 4; // 2 labeled
        counts[20] = 5; // 3 labeled
        let picked = sample_exemplar_indices(&scenes(&counts), SamplingScheme::MaxId, 0.02, 0).unwrap();
        assert_eq!(picked, vec![20]);
    }

    #[test]
    fn random_is_seed_deterministic() {
        let s = scenes(&[1; 300]);
        let a = sample_exemplar_indices(&s, SamplingScheme::Random, 0.02, 9).unwrap();
        assert_eq!(a, sample_exemplar_indices(&s, SamplingScheme::Random, 0.02, 9).unwrap());
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            sample_exemplar_indices(&[], SamplingScheme::Uniform, 0.02, 0),
            Err(LpsError::EmptyTrainSplit)
        ));
        assert!(sample_exemplar_indices(&scenes(&[1; 4]), SamplingScheme::Uniform, 1.0, 0).is_err());
        assert!(sample_exemplar_indices(&scenes(&[1; 4]), SamplingScheme::Uniform, 0.0, 0).is_err());
    }

    #[test]
    fn small_splits_keep_at_least_one() {
        assert_eq!(sample_exemplar_indices(&scenes(&[1; 10]), SamplingScheme::Uniform, 0.02, 0).unwrap(), vec![0]);
    }
}
