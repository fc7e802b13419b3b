//! Sequential-domain training: old/new model pair, rehearsal batches,
//! domain transitions and the fine-tune / joint reference modes.

mod batch;
pub mod checkpoint;
mod step;
mod trainer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use batch::{compose_batch, BatchItem, ExemplarCycler, Origin};
pub use step::{run_step, StepDiagnostics, StepInputs, StepOutput};
pub use trainer::{sgd_update, train_sequence, validation_view, EpochDiagnostics, StepRecord, Trainer};

use crate::error::{LpsError, Result};
use crate::memory::SamplingScheme;
use crate::perception::anchors::AnchorSampling;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Rehearsal with distillation and instance matching.
    #[default]
    Lps,
    /// Sequential training without rehearsal.
    Finetune,
    /// All domains pooled and trained once.
    Joint,
}

impl FromStr for TrainMode {
    type Err = LpsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lps" => Ok(Self::Lps),
            "finetune" => Ok(Self::Finetune),
            "joint" => Ok(Self::Joint),
            other => Err(LpsError::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lps => "lps",
            Self::Finetune => "finetune",
            Self::Joint => "joint",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub batch_new: usize,
    pub batch_old_per_domain: usize,
    pub epochs_per_domain: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Zero-based epoch from which the decayed rate applies.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    /// Linear warmup length at the start of every domain, in steps.
    pub warmup_steps: usize,
    pub first_domain_epochs: usize,
    pub first_domain_lr: f64,
    pub first_domain_decay_epoch: usize,
    /// Epochs without validation improvement before the first domain
    /// stops early; 0 disables early stopping.
    pub early_stop_patience: usize,
    /// Epochs of the pooled run in joint mode.
    pub joint_epochs: usize,
    pub exemplar_fraction: f64,
    pub sampling: SamplingScheme,
    pub queue_capacity: usize,
    /// Unlabeled queue used by OIM on the current domain.
    pub oim_queue_capacity: usize,
    pub hflip: bool,
    pub rpn_batch: usize,
    pub rpn_fg_fraction: f64,
    pub rpn_fg_iou: f64,
    pub rpn_bg_iou: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Lps,
            batch_new: 5,
            batch_old_per_domain: 2,
            epochs_per_domain: 5,
            lr: 0.003,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_decay_epoch: 3,
            lr_decay_factor: 0.1,
            warmup_steps: 50,
            first_domain_epochs: 20,
            first_domain_lr: 0.01,
            first_domain_decay_epoch: 15,
            early_stop_patience: 0,
            joint_epochs: 20,
            exemplar_fraction: 0.02,
            sampling: SamplingScheme::Uniform,
            queue_capacity: 1000,
            oim_queue_capacity: 0,
            hflip: true,
            rpn_batch: 64,
            rpn_fg_fraction: 0.5,
            rpn_fg_iou: 0.5,
            rpn_bg_iou: 0.3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LpsError::InvalidConfig(m));
        if self.batch_new == 0 || self.epochs_per_domain == 0 || self.first_domain_epochs == 0 || self.joint_epochs == 0 {
            return bad("batch and epoch counts must be positive".into());
        }
        if self.batch_old_per_domain == 0 && self.mode == TrainMode::Lps {
            return bad("batch_old_per_domain must be positive in lps mode".into());
        }
        if !(self.lr > 0.0 && self.first_domain_lr > 0.0) {
            return bad(format!("learning rates must be positive (lr {}, first_domain_lr {})", self.lr, self.first_domain_lr));
        }
        if self.lr_decay_epoch > self.epochs_per_domain {
            return bad(format!(
                "lr_decay_epoch {} exceeds epochs_per_domain {}",
                self.lr_decay_epoch, self.epochs_per_domain
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || !(self.lr_decay_factor > 0.0) {
            return bad("momentum must lie in [0, 1), weight decay be non-negative, decay factor positive".into());
        }
        if !(self.exemplar_fraction > 0.0 && self.exemplar_fraction < 1.0) {
            return bad(format!("exemplar_fraction {} must lie in (0, 1)", self.exemplar_fraction));
        }
        if self.rpn_batch == 0 || !(0.0..=1.0).contains(&self.rpn_fg_fraction) || self.rpn_bg_iou > self.rpn_fg_iou {
            return bad("invalid anchor sampling settings".into());
        }
        Ok(())
    }

    pub fn anchor_sampling(&self) -> AnchorSampling {
        AnchorSampling {
            fg_iou: self.rpn_fg_iou,
            bg_iou: self.rpn_bg_iou,
            batch: self.rpn_batch,
            fg_fraction: self.rpn_fg_fraction,
        }
    }

    /// Learning rate at `step` (within the domain) of `epoch`.
    pub fn learning_rate(&self, first_domain: bool, epoch: usize, step: usize) -> f64 {
        let (base, decay_at) = if first_domain {
            (self.first_domain_lr, self.first_domain_decay_epoch)
        } else {
            (self.lr, self.lr_decay_epoch)
        };
        let warm = if self.warmup_steps == 0 {
            1.0
        } else {
            ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        };
        let decay = if epoch >= decay_at { self.lr_decay_factor } else { 1.0 };
        base * warm * decay
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let c = TrainConfig {
            warmup_steps: 10,
            ..TrainConfig::default()
        };
        assert!((c.learning_rate(false, 0, 0) - 0.0003).abs() < 1e-15);
        assert_eq!(c.learning_rate(false, 0, 9), 0.003);
        assert_eq!(c.learning_rate(false, 2, 200), 0.003);
        assert!((c.learning_rate(false, 3, 200) - 0.0003).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            lr_decay_epoch: 9,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        assert_eq!("joint".parse::<TrainMode>().unwrap(), TrainMode::Joint);
        assert!("both".parse::<TrainMode>().is_err());
    }
}
