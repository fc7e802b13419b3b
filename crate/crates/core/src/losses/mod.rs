//! Training objectives. Every loss returns its value together with the
//! gradient with respect to the new model's outputs; old-model inputs are
//! treated as constants.

mod detection;
mod distill;
mod matching;

use serde::{Deserialize, Serialize};

pub use detection::{det_loss, dkd_loss, smooth_l1, DetInputs, DetLoss, DkdLoss, SMOOTH_L1_BETA};
pub use distill::{rkd_loss, rkd_plus_loss, similarity_distribution, SimilarityDistribution};
pub use matching::{oim_loss, rim_loss, OimState};

use crate::error::{LpsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Distillation temperature.
    pub tau_d: f64,
    /// Instance-matching temperature, shared by the OIM loss.
    pub tau_r: f64,
    /// IoU above which a background proposal counts as hard.
    pub lambda_b: f64,
    pub use_dkd: bool,
    pub use_rkd_plus: bool,
    pub use_rkd_basic: bool,
    pub use_rim: bool,
    /// Momentum of the current-domain OIM lookup table.
    pub oim_momentum: f64,
    /// Whether exemplar scenes also feed the detection loss.
    pub exemplars_in_det: bool,
    /// Multiplier of the relation distillation term in the total loss.
    pub rkd_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_d: 0.3,
            tau_r: 0.1,
            lambda_b: 0.1,
            use_dkd: true,
            use_rkd_plus: true,
            use_rkd_basic: false,
            use_rim: true,
            oim_momentum: 0.5,
            exemplars_in_det: true,
            rkd_weight: 10.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LpsError::InvalidConfig(m));
        if !(self.tau_d > 0.0 && self.tau_r > 0.0) {
            return bad(format!("temperatures must be positive (tau_d {}, tau_r {})", self.tau_d, self.tau_r));
        }
        if !(0.0..1.0).contains(&self.lambda_b) {
            return bad(format!("lambda_b {} must lie in [0, 1)", self.lambda_b));
        }
        if self.use_rkd_plus && self.use_rkd_basic {
            return bad("use_rkd_plus and use_rkd_basic are mutually exclusive".into());
        }
        if !(self.rkd_weight >= 0.0 && self.rkd_weight.is_finite()) {
            return bad(format!("rkd_weight {} must be finite and non-negative", self.rkd_weight));
        }
        if !(0.0..1.0).contains(&self.oim_momentum) {
            return bad(format!("oim_momentum {} must lie in [0, 1)", self.oim_momentum));
        }
        Ok(())
    }

    /// Disables every rehearsal term.
    pub fn without_rehearsal(&self) -> Self {
        Self {
            use_dkd: false,
            use_rkd_plus: false,
            use_rkd_basic: false,
            use_rim: false,
            ..self.clone()
        }
    }

    /// Rehearsal terms that contribute given whether old data exists.
    pub fn active(&self, has_old_data: bool) -> ActiveTerms {
        ActiveTerms {
            dkd: has_old_data && self.use_dkd,
            rkd_plus: has_old_data && self.use_rkd_plus,
            rkd_basic: has_old_data && self.use_rkd_basic,
            rim: has_old_data && self.use_rim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveTerms {
    pub dkd: bool,
    pub rkd_plus: bool,
    pub rkd_basic: bool,
    pub rim: bool,
}

impl ActiveTerms {
    pub fn any(&self) -> bool {
        self.dkd || self.rkd_plus || self.rkd_basic || self.rim
    }
}

/// Value of a feature-level loss and its gradient per input feature.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureLoss {
    pub value: f64,
    pub grad: Vec<Vec<f64>>,
    /// Features that contributed.
    pub used: usize,
    /// Features skipped because their identity had no reference.
    pub skipped: usize,
}

impl FeatureLoss {
    fn zero(n: usize, dim: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![vec![0.0; dim]; n],
            used: 0,
            skipped: 0,
        }
    }

    /// True when no feature contributed.
    pub fn is_empty(&self) -> bool {
        self.used == 0
    }
}

/// Per-step loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub det: f64,
    pub oim: f64,
    pub dkd: f64,
    /// Either the refined or the basic distillation term, whichever is on.
    pub rkd: f64,
    pub rim: f64,
}

/// Sum of the enabled components; only the relation distillation term
/// carries a weight.
pub fn total_loss(cfg: &LossConfig, c: &LossComponents, has_old_data: bool) -> f64 {
    let a = cfg.active(has_old_data);
    let mut total = c.det + c.oim;
    if a.dkd {
        total += c.dkd;
    }
    if a.rkd_plus || a.rkd_basic {
        total += cfg.rkd_weight * c.rkd;
    }
    if a.rim {
        total += c.rim;
    }
    total
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-softmax of `<refs[k], x> / tau`.
pub(crate) fn log_softmax_logits(x: &[f64], refs: &[&[f64]], tau: f64) -> Vec<f64> {
    let logits: Vec<f64> = refs.iter().map(|r| dot(r, x) / tau).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.into_iter().map(|l| l - lse).collect()
}
