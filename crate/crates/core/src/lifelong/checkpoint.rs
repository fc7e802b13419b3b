//! Checkpoint layout: `checkpoint.json` manifest plus one little-endian
//! f64 file per parameter tensor of each model.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{TrainConfig, Trainer};
use crate::error::{LpsError, Result};
use crate::evalkit::{EvalConfig, MetricsReport};
use crate::losses::LossConfig;
use crate::memory::{ExemplarStore, PrototypeLut, UnlabeledQueue};
use crate::perception::{clone_and_freeze, ModelPair, NetConfig, Network, Params, ScoreStats};
use crate::synthgen::io::{read_file, sha256_hex, write_file};
use crate::synthgen::DomainDataset;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub score_stats: ScoreStats,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarEntry {
    pub domain_id: u32,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config_hash: String,
    pub net_config: NetConfig,
    pub train_config: TrainConfig,
    pub loss_config: LossConfig,
    pub eval_config: EvalConfig,
    pub seed: u64,
    /// Completed stages.
    pub stage: usize,
    pub trained_domains: Vec<u32>,
    pub new_model: ModelEntry,
    pub old_model: Option<ModelEntry>,
    pub lut_ids: Vec<u32>,
    pub lut_rows: Vec<Vec<f64>>,
    pub lut_frozen: bool,
    pub queue_capacity: usize,
    /// Oldest first.
    pub queue: Vec<Vec<f64>>,
    pub exemplars: Vec<ExemplarEntry>,
    pub history: MetricsReport,
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    net: &'a NetConfig,
    train: &'a TrainConfig,
    loss: &'a LossConfig,
    eval: &'a EvalConfig,
    seed: u64,
}

/// SHA-256 of the canonical JSON of every setting that shapes a run.
pub fn config_hash(net: &NetConfig, train: &TrainConfig, loss: &LossConfig, eval: &EvalConfig, seed: u64) -> String {
    let cfg = HashedConfig {
        net,
        train,
        loss,
        eval,
        seed,
    };
    sha256_hex(&serde_json::to_vec(&cfg).expect("configs serialize"))
}

fn save_model(net: &Network, dir: &Path, prefix: &str) -> Result<ModelEntry> {
    let sub = dir.join(prefix);
    fs::create_dir_all(&sub).map_err(|e| LpsError::io(&sub, e))?;
    let shapes = Params::shapes(&net.config);
    let tensors = net
        .params
        .named()
        .iter()
        .zip(shapes)
        .map(|((name, values), (_, shape))| {
            let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            let file = format!("{prefix}/{name}.bin");
            write_file(&dir.join(&file), &bytes)?;
            Ok(TensorEntry {
                name: name.to_string(),
                shape,
                file,
                sha256: sha256_hex(&bytes),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelEntry {
        score_stats: net.score_stats,
        tensors,
    })
}

fn load_model(entry: &ModelEntry, config: &NetConfig, dir: &Path) -> Result<Network> {
    let mut params = Params::zeros(config);
    let expected = Params::shapes(config);
    if entry.tensors.len() != expected.len() {
        return Err(LpsError::CheckpointMismatch {
            name: "tensors".into(),
            reason: format!("expected {} tensors, found {}", expected.len(), entry.tensors.len()),
        });
    }
    for ((t, (name, shape)), (_, buf)) in entry.tensors.iter().zip(expected).zip(params.named_mut()) {
        let mismatch = |reason: String| LpsError::CheckpointMismatch {
            name: t.name.clone(),
            reason,
        };
        if t.name != name {
            return Err(mismatch(format!("expected tensor `{name}`")));
        }
        if t.shape != shape {
            return Err(mismatch(format!("shape {:?}, model expects {shape:?}", t.shape)));
        }
        let bytes = read_file(&dir.join(&t.file))?;
        if sha256_hex(&bytes) != t.sha256 {
            return Err(mismatch("sha256 differs from manifest".into()));
        }
        if bytes.len() != buf.len() * 8 {
            return Err(mismatch(format!("{} bytes for {} values", bytes.len(), buf.len())));
        }
        for (v, chunk) in buf.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    config.validate()?;
    Ok(Network::from_parts(config.clone(), params, entry.score_stats))
}

/// Writes the full trainer state to `dir`.
pub fn save_checkpoint(trainer: &Trainer, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LpsError::io(dir, e))?;
    let new_model = save_model(&trainer.models.new, dir, "new")?;
    let old_model = match &trainer.models.old {
        Some(old) => Some(save_model(old, dir, "old")?),
        None => None,
    };
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config_hash: config_hash(
            &trainer.net_config,
            &trainer.cfg,
            &trainer.loss_cfg,
            &trainer.eval_cfg,
            trainer.seed,
        ),
        net_config: trainer.net_config.clone(),
        train_config: trainer.cfg.clone(),
        loss_config: trainer.loss_cfg.clone(),
        eval_config: trainer.eval_cfg.clone(),
        seed: trainer.seed,
        stage: trainer.stage,
        trained_domains: trainer.trained_domains.clone(),
        new_model,
        old_model,
        lut_ids: trainer.lut.ids().to_vec(),
        lut_rows: trainer.lut.rows().to_vec(),
        lut_frozen: trainer.lut.is_frozen(),
        queue_capacity: trainer.queue.capacity(),
        queue: trainer.queue.iter().map(<[f64]>::to_vec).collect(),
        exemplars: trainer
            .exemplars
            .domains()
            .iter()
            .map(|d| ExemplarEntry {
                domain_id: d.domain_id,
                indices: d.indices.clone(),
            })
            .collect(),
        history: trainer.history.clone(),
    };
    let path = dir.join(CHECKPOINT_FILE);
    let text = serde_json::to_vec_pretty(&manifest).map_err(|e| LpsError::serde(&path, e))?;
    write_file(&path, &text)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(CHECKPOINT_FILE);
    if !path.exists() {
        return Err(LpsError::MissingManifest(dir.to_path_buf()));
    }
    let bytes = read_file(&path)?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| LpsError::serde(&path, e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(LpsError::CheckpointMismatch {
            name: CHECKPOINT_FILE.into(),
            reason: format!("format version {}, expected {FORMAT_VERSION}", manifest.format_version),
        });
    }
    Ok(manifest)
}

/// The trained (new) model of a checkpoint.
pub fn load_network(dir: &Path) -> Result<Network> {
    let m = read_manifest(dir)?;
    load_model(&m.new_model, &m.net_config, dir)
}

/// Rebuilds a trainer from a checkpoint. `datasets` must contain every
/// domain with stored exemplars; the step log and epoch diagnostics start
/// empty.
pub fn resume(dir: &Path, datasets: &[DomainDataset]) -> Result<Trainer> {
    let m = read_manifest(dir)?;
    let new = load_model(&m.new_model, &m.net_config, dir)?;
    let old = match &m.old_model {
        Some(entry) => Some(clone_and_freeze(&load_model(entry, &m.net_config, dir)?)),
        None => None,
    };
    let mut exemplars = ExemplarStore::new(m.train_config.sampling, m.train_config.exemplar_fraction);
    for e in &m.exemplars {
        let ds = datasets
            .iter()
            .find(|d| d.domain_id() == e.domain_id)
            .ok_or_else(|| LpsError::CheckpointMismatch {
                name: format!("exemplars of domain {}", e.domain_id),
                reason: "domain dataset not provided".into(),
            })?;
        exemplars.restore_domain(ds, e.indices.clone())?;
    }
    if m.lut_ids.len() != m.lut_rows.len() {
        return Err(LpsError::CheckpointMismatch {
            name: "lut".into(),
            reason: format!("{} ids for {} rows", m.lut_ids.len(), m.lut_rows.len()),
        });
    }
    let lut = if m.lut_frozen {
        PrototypeLut::from_entries(m.lut_ids.iter().copied().zip(m.lut_rows.iter().cloned()))
    } else {
        PrototypeLut::new()
    };
    let mut queue = UnlabeledQueue::new(m.queue_capacity);
    for f in m.queue {
        queue.push(f);
    }
    Ok(Trainer {
        net_config: m.net_config,
        cfg: m.train_config,
        loss_cfg: m.loss_config,
        eval_cfg: m.eval_config,
        seed: m.seed,
        models: ModelPair { old, new },
        exemplars,
        lut,
        queue,
        stage: m.stage,
        trained_domains: m.trained_domains,
        history: m.history,
        log: Vec::new(),
        epochs: Vec::new(),
    })
}

/// Directory name of the checkpoint written after `stage` completed stages.
pub fn stage_dir(root: &Path, stage: usize) -> PathBuf {
    root.join(format!("stage_{stage:02}"))
}
