use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batch::{compose_batch, ExemplarCycler};
use super::step::{run_step, StepDiagnostics, StepInputs};
use super::{TrainConfig, TrainMode};
use crate::error::{LpsError, Result};
use crate::evalkit::{evaluate_domain, EvalConfig, MetricsReport, StageMetrics};
use crate::losses::{LossComponents, LossConfig, OimState};
use crate::memory::{build_prototypes, push_unlabeled, ExemplarStore, PrototypeLut, UnlabeledQueue};
use crate::perception::{clone_and_freeze, ModelPair, NetConfig, Network, Params};
use crate::rng;
use crate::synthgen::{select_queries, DomainDataset, SceneSample};

const TAG_INIT: u64 = 0x1417;
const TAG_EPOCH: u64 = 0xE90C;
const TAG_EXEMPLAR: u64 = 0xE7E4;

/// Loss values of one optimization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: usize,
    pub domain: u32,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub components: LossComponents,
    pub total: f64,
    #[serde(flatten)]
    pub diag: StepDiagnostics,
}

/// Per-epoch invariant snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDiagnostics {
    pub stage: usize,
    pub epoch: usize,
    pub steps: usize,
    pub old_model_checksum: Option<u64>,
    pub lut_checksum: u64,
    pub lut_size: usize,
    pub queue_len: usize,
    pub mean_total: f64,
    /// Times each exemplar was served so far this stage, per old domain.
    pub exemplar_serves: Vec<Vec<usize>>,
    pub validation_map: Option<f64>,
}

/// Training state carried across the domain sequence. Cloning it branches
/// a run: the branch continues exactly as the original would have.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net_config: NetConfig,
    pub cfg: TrainConfig,
    pub loss_cfg: LossConfig,
    pub eval_cfg: EvalConfig,
    pub seed: u64,
    pub models: ModelPair,
    pub exemplars: ExemplarStore,
    pub lut: PrototypeLut,
    pub queue: UnlabeledQueue,
    /// Completed stages.
    pub stage: usize,
    pub trained_domains: Vec<u32>,
    pub history: MetricsReport,
    pub log: Vec<StepRecord>,
    pub epochs: Vec<EpochDiagnostics>,
}

struct Schedule {
    first: bool,
    epochs: usize,
}

/// Momentum SGD with coupled weight decay: `v = m v + g + wd p`,
/// `p -= lr v`.
pub fn sgd_update(params: &mut Params, velocity: &mut Params, grads: &Params, lr: f64, momentum: f64, weight_decay: f64) {
    for (((_, p), (_, v)), (_, g)) in params.named_mut().into_iter().zip(velocity.named_mut()).zip(grads.named()) {
        for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
            *vi = momentum * *vi + gi + weight_decay * *pi;
            *pi -= lr * *vi;
        }
    }
}

/// Held-out style view of a training split used for early stopping: every
/// fifth train scene acts as gallery.
pub fn validation_view(dataset: &DomainDataset) -> DomainDataset {
    let gallery: Vec<SceneSample> = dataset.train.iter().step_by(5).cloned().collect();
    let queries = select_queries(&gallery);
    DomainDataset {
        spec: dataset.spec.clone(),
        train: Vec::new(),
        test_gallery: gallery,
        test_queries: queries,
    }
}

impl Trainer {
    pub fn new(net_config: NetConfig, cfg: TrainConfig, loss_cfg: LossConfig, eval_cfg: EvalConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        loss_cfg.validate()?;
        let mut r = rng::stream(seed, &[TAG_INIT]);
        let net = Network::new(net_config.clone(), &mut r)?;
        Ok(Self {
            net_config,
            exemplars: ExemplarStore::new(cfg.sampling, cfg.exemplar_fraction),
            queue: UnlabeledQueue::new(cfg.queue_capacity),
            cfg,
            loss_cfg,
            eval_cfg,
            seed,
            models: ModelPair { old: None, new: net },
            lut: PrototypeLut::new(),
            stage: 0,
            trained_domains: Vec::new(),
            history: MetricsReport::default(),
            log: Vec::new(),
            epochs: Vec::new(),
        })
    }

    /// Loss settings in effect for the configured mode.
    pub fn effective_loss_config(&self) -> LossConfig {
        match self.cfg.mode {
            TrainMode::Lps => self.loss_cfg.clone(),
            TrainMode::Finetune | TrainMode::Joint => self.loss_cfg.without_rehearsal(),
        }
    }

    /// Switches the mode of a branched trainer before its next stage.
    pub fn set_mode(&mut self, mode: TrainMode) -> Result<()> {
        if mode == TrainMode::Joint || (self.cfg.mode == TrainMode::Joint && self.stage > 0) {
            return Err(LpsError::InvalidConfig("joint mode cannot be branched into or out of".into()));
        }
        self.cfg.mode = mode;
        self.cfg.validate()
    }

    /// Freezes the current model as the old one, samples exemplars of the
    /// finished domain, appends their prototypes to the LUT and reseeds the
    /// unlabeled queue from every exemplar scene.
    pub fn advance_domain(&mut self, finished: &DomainDataset) -> Result<()> {
        let old = clone_and_freeze(&self.models.new);
        let seed = rng::derive_seed(self.seed, &[TAG_EXEMPLAR, finished.domain_id() as u64]);
        let scenes = self.exemplars.add_domain(finished, seed)?.scenes().to_vec();
        let protos = build_prototypes(&old, &scenes)?;
        self.lut.append(protos);
        self.lut.freeze();
        self.queue.clear();
        for scene in self.exemplars.all_scenes() {
            let boxes: Vec<_> = scene
                .gt_boxes
                .iter()
                .zip(&scene.gt_identities)
                .filter(|(_, id)| !id.is_labeled())
                .map(|(b, _)| *b)
                .collect();
            if boxes.is_empty() {
                continue;
            }
            let pass = old.forward_image(&scene.image)?;
            let roi = old.roi_forward(&pass, &boxes, old.score_stats)?;
            push_unlabeled(&mut self.queue, (0..roi.len()).map(|k| roi.feature(k).to_vec()));
        }
        self.models.old = Some(old);
        Ok(())
    }

    /// Trains the next domain of `sequence` (sequential modes) and records
    /// its evaluation on every domain seen so far.
    pub fn train_stage(&mut self, sequence: &[DomainDataset]) -> Result<()> {
        if self.cfg.mode == TrainMode::Joint {
            return Err(LpsError::InvalidConfig("joint mode trains through train_joint".into()));
        }
        let stage = self.stage;
        let dataset = sequence
            .get(stage)
            .ok_or_else(|| LpsError::Empty(format!("no domain left for stage {}", stage + 1)))?;
        if stage > 0 && self.cfg.mode == TrainMode::Lps {
            self.advance_domain(&sequence[stage - 1])?;
        }
        let scenes: Vec<&SceneSample> = dataset.train.iter().collect();
        let schedule = Schedule {
            first: stage == 0,
            epochs: if stage == 0 {
                self.cfg.first_domain_epochs
            } else {
                self.cfg.epochs_per_domain
            },
        };
        let val = (stage == 0 && self.cfg.early_stop_patience > 0).then(|| validation_view(dataset));
        self.run_domain(dataset.domain_id(), &scenes, dataset.train_identities(), schedule, val.as_ref())?;
        self.trained_domains.push(dataset.domain_id());
        self.finish_stage(&sequence[..=stage], vec![dataset.domain_id()])
    }

    /// Pools every domain and trains once.
    pub fn train_joint(&mut self, sequence: &[DomainDataset]) -> Result<()> {
        if self.stage > 0 {
            return Err(LpsError::InvalidConfig("joint training runs as a single stage".into()));
        }
        let scenes: Vec<&SceneSample> = sequence.iter().flat_map(|d| d.train.iter()).collect();
        let ids: BTreeSet<u32> = sequence.iter().flat_map(|d| d.train_identities()).collect();
        let schedule = Schedule {
            first: true,
            epochs: self.cfg.joint_epochs,
        };
        self.run_domain(u32::MAX, &scenes, ids, schedule, None)?;
        let trained: Vec<u32> = sequence.iter().map(DomainDataset::domain_id).collect();
        self.trained_domains.extend(&trained);
        self.finish_stage(sequence, trained)
    }

    fn finish_stage(&mut self, seen: &[DomainDataset], trained: Vec<u32>) -> Result<()> {
        let per_domain = seen
            .iter()
            .map(|d| evaluate_domain(&self.models.new, d, &self.eval_cfg))
            .collect::<Result<Vec<_>>>()?;
        self.history.stages.push(StageMetrics {
            stage: self.stage,
            trained_domains: trained,
            per_domain,
        });
        self.stage += 1;
        Ok(())
    }

    fn run_domain(
        &mut self,
        domain: u32,
        scenes: &[&SceneSample],
        ids: BTreeSet<u32>,
        schedule: Schedule,
        val: Option<&DomainDataset>,
    ) -> Result<()> {
        let cfg = self.cfg.clone();
        let loss_cfg = self.effective_loss_config();
        let steps_per_epoch = scenes.len() / cfg.batch_new;
        if steps_per_epoch == 0 {
            return Err(LpsError::EmptyTrainSplit);
        }
        let dim = self.net_config.embed_dim;
        let mut oim = OimState::new(ids, dim, cfg.oim_queue_capacity, loss_cfg.oim_momentum);
        let mut velocity = Params::zeros(&self.net_config);
        let exemplar_sets: Vec<Vec<SceneSample>> = if cfg.mode == TrainMode::Lps {
            self.exemplars.domains().iter().map(|d| d.scenes().to_vec()).collect()
        } else {
            Vec::new()
        };
        let mut cyclers: Vec<ExemplarCycler<'_>> = exemplar_sets.iter().enumerate().map(|(i, s)| ExemplarCycler::new(i, s)).collect();
        let expected_batch = cfg.batch_new + cfg.batch_old_per_domain * cyclers.len();
        let old_checksum = self.models.old.as_ref().map(|o| o.params.checksum());
        let lut_checksum = self.lut.checksum();
        let stage = self.stage;
        let mut step_in_domain = 0usize;
        let mut best_val = f64::NEG_INFINITY;
        let mut stale = 0usize;

        for epoch in 0..schedule.epochs {
            let mut r = rng::stream(self.seed, &[TAG_EPOCH, stage as u64, epoch as u64]);
            let mut order: Vec<usize> = (0..scenes.len()).collect();
            order.shuffle(&mut r);
            let mut new_iter = order.iter().map(|&i| scenes[i]);
            let mut total_sum = 0.0;
            for _ in 0..steps_per_epoch {
                let mut batch = compose_batch(&mut new_iter, &mut cyclers, cfg.batch_new, cfg.batch_old_per_domain)?;
                if batch.len() != expected_batch {
                    return Err(LpsError::Invariant(format!("batch holds {} scenes, expected {expected_batch}", batch.len())));
                }
                if cfg.hflip {
                    for item in &mut batch {
                        item.flip = r.gen_bool(0.5);
                    }
                }
                let lr = cfg.learning_rate(schedule.first, epoch, step_in_domain);
                let out = {
                    let inp = StepInputs {
                        new: &self.models.new,
                        old: self.models.old.as_ref(),
                        lut: &self.lut,
                        queue: &self.queue,
                        oim: &oim,
                        loss_cfg: &loss_cfg,
                        anchor_sampling: cfg.anchor_sampling(),
                        fixed_stats: None,
                        reference: None,
                        seed: r.gen(),
                    };
                    run_step(&inp, &batch)?
                };
                sgd_update(&mut self.models.new.params, &mut velocity, &out.grads, lr, cfg.momentum, cfg.weight_decay);
                if let Some(stats) = out.batch_stats {
                    let m = self.net_config.score_momentum;
                    self.models.new.score_stats.blend(&stats, m);
                }
                let (feats, labels): (Vec<Vec<f64>>, Vec<u32>) = out.oim_labeled.into_iter().unzip();
                let refs: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
                oim.update(&refs, &labels);
                push_unlabeled(&mut oim.queue, out.oim_unlabeled);
                push_unlabeled(&mut self.queue, out.rehearsal_unlabeled);
                total_sum += out.total;
                self.log.push(StepRecord {
                    stage,
                    domain,
                    epoch,
                    step: step_in_domain,
                    lr,
                    components: out.components,
                    total: out.total,
                    diag: out.diag,
                });
                step_in_domain += 1;
            }

            let old_now = self.models.old.as_ref().map(|o| o.params.checksum());
            if old_now != old_checksum || self.lut.checksum() != lut_checksum {
                return Err(LpsError::Invariant(format!("old model or LUT changed during stage {stage} epoch {epoch}")));
            }
            let validation_map = match val {
                Some(v) => Some(evaluate_domain(&self.models.new, v, &self.eval_cfg)?.map),
                None => None,
            };
            self.epochs.push(EpochDiagnostics {
                stage,
                epoch,
                steps: steps_per_epoch,
                old_model_checksum: old_now,
                lut_checksum,
                lut_size: self.lut.len(),
                queue_len: self.queue.len(),
                mean_total: total_sum / steps_per_epoch as f64,
                exemplar_serves: cyclers.iter().map(|c| c.served().to_vec()).collect(),
                validation_map,
            });
            if let Some(m) = validation_map {
                if m > best_val + 1e-9 {
                    best_val = m;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.early_stop_patience {
                        break;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Trains `domains` in order under `cfg.mode`; the returned trainer holds
/// the final model and the per-stage history.
pub fn train_sequence(
    domains: &[DomainDataset],
    net_config: NetConfig,
    cfg: TrainConfig,
    loss_cfg: LossConfig,
    eval_cfg: EvalConfig,
    seed: u64,
) -> Result<Trainer> {
    if domains.is_empty() {
        return Err(LpsError::Empty("domain list is empty".into()));
    }
    let mut t = Trainer::new(net_config, cfg, loss_cfg, eval_cfg, seed)?;
    if t.cfg.mode == TrainMode::Joint {
        t.train_joint(domains)?;
    } else {
        while t.stage < domains.len() {
            t.train_stage(domains)?;
        }
    }
    Ok(t)
}
