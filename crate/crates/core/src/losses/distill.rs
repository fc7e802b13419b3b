use super::{log_softmax_logits, FeatureLoss};
use crate::error::{LpsError, Result};

/// Softmax over temperature-scaled similarities to a reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDistribution {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub temperature: f64,
}

impl SimilarityDistribution {
    pub fn reference_count(&self) -> usize {
        self.probs.len()
    }
}

pub fn similarity_distribution(x: &[f64], refs: &[&[f64]], tau: f64) -> Result<SimilarityDistribution> {
    if refs.is_empty() {
        return Err(LpsError::NoReferences);
    }
    let log_probs = log_softmax_logits(x, refs, tau);
    Ok(SimilarityDistribution {
        probs: log_probs.iter().map(|l| l.exp()).collect(),
        log_probs,
        temperature: tau,
    })
}

/// Mean KL divergence between old-model and new-model similarity
/// distributions over the prototype set.
pub fn rkd_loss(old: &[&[f64]], new: &[&[f64]], prototypes: &[&[f64]], tau: f64) -> Result<FeatureLoss> {
    kl_distill(old, new, prototypes, tau)
}

/// As [`rkd_loss`] but over prototypes followed by hard-background features.
pub fn rkd_plus_loss(old: &[&[f64]], new: &[&[f64]], prototypes: &[&[f64]], hard_bg: &[&[f64]], tau: f64) -> Result<FeatureLoss> {
    let refs: Vec<&[f64]> = prototypes.iter().chain(hard_bg).copied().collect();
    kl_distill(old, new, &refs, tau)
}

fn kl_distill(old: &[&[f64]], new: &[&[f64]], refs: &[&[f64]], tau: f64) -> Result<FeatureLoss> {
    assert_eq!(old.len(), new.len(), "old and new feature lists must align");
    let dim = new.first().map_or(0, |v| v.len());
    let mut out = FeatureLoss::zero(new.len(), dim);
    if new.is_empty() {
        return Ok(out);
    }
    if refs.is_empty() {
        return Err(LpsError::NoReferences);
    }
    let scale = 1.0 / (new.len() as f64 * refs.len() as f64);
    for (i, (xo, xn)) in old.iter().zip(new).enumerate() {
        let lq = log_softmax_logits(xo, refs, tau);
        let lp = log_softmax_logits(xn, refs, tau);
        let mut kl = 0.0;
        let g = &mut out.grad[i];
        for k in 0..refs.len() {
            let q = lq[k].exp();
            if q > 0.0 {
                kl += q * (lq[k] - lp[k]);
            }
            // d/dlogit_p of sum_k q log(q/p) is p - q
            let coef = scale * (lp[k].exp() - q) / tau;
            for (gd, r) in g.iter_mut().zip(refs[k]) {
                *gd += coef * r;
            }
        }
        out.value += scale * kl;
    }
    out.used = new.len();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_and_symmetric_refs() {
        let x = [0.6, 0.8];
        let d = similarity_distribution(&x, &[&[1.0, 0.0]], 0.3).unwrap();
        assert_eq!(d.probs, vec![1.0]);
        let d = similarity_distribution(&[1.0, 0.0], &[&[0.0, 1.0], &[0.0, -1.0]], 0.3).unwrap();
        assert_eq!(d.probs, vec![0.5, 0.5]);
        assert!(matches!(similarity_distribution(&x, &[], 0.3), Err(LpsError::NoReferences)));
    }

    #[test]
    fn identical_inputs_give_zero() {
        let a = [0.6, 0.8];
        let b = [0.0, 1.0];
        let l = rkd_loss(&[&a, &b], &[&a, &b], &[&[1.0, 0.0], &b], 0.3).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.iter().flatten().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn empty_foreground_is_zero_not_error() {
        let l = rkd_loss(&[], &[], &[], 0.3).unwrap();
        assert!(l.is_empty() && l.value == 0.0);
    }
}
