//! Fixtures shared by the benchmarks.

use lps_core::rng;
use lps_core::synthgen::{generate_domain, DomainDataset, DomainSpec};
use rand::Rng;

/// Random unit vectors of dimension `dim`.
pub fn unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, &[n as u64, dim as u64]);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

pub fn as_refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

/// Small two-domain sequence for step and evaluation benchmarks.
pub fn small_domains() -> Vec<DomainDataset> {
    (0..2)
        .map(|d| {
            let spec = DomainSpec {
                num_scenes: 40,
                num_test_scenes: 20,
                num_identities: 10,
                ..DomainSpec::preset(d, 1)
            };
            generate_domain(&spec).expect("preset specs are valid")
        })
        .collect()
}
