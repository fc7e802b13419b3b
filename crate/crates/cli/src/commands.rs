//! The four pipeline commands. Each returns the paths it wrote.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lps_core::evalkit::{evaluate_domain, forgetting_report, MetricsReport, ModeHistory, StageMetrics};
use lps_core::lifelong::checkpoint::{load_network, read_manifest, save_checkpoint, stage_dir, CHECKPOINT_FILE};
use lps_core::lifelong::{TrainMode, Trainer};
use lps_core::synthgen::{generate_domain, load_dataset, save_dataset, DomainDataset, MANIFEST_FILE};
use serde::{Deserialize, Serialize};

use crate::config::{Ablation, Overrides, RunConfig};
use crate::error::{CliError, CliResult};

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const RESOLVED_FILE: &str = "resolved.json";
pub const STEP_LOG: &str = "steps.jsonl";
pub const EPOCH_LOG: &str = "epochs.jsonl";
pub const HISTORY_FILE: &str = "history.json";
pub const EVAL_FILE: &str = "eval.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Directory of one domain inside a data root.
pub fn domain_dir(data: &Path, domain: u32) -> PathBuf {
    data.join(format!("domain_{domain}"))
}

/// Settings of a run as actually used, written next to the verbatim
/// config snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub label: String,
    pub order: Vec<u32>,
    pub ablate: Vec<Ablation>,
    pub config: RunConfig,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime(anyhow::anyhow!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(CliError::runtime)
}

/// Refuses to reuse a non-empty directory unless forced, then creates it.
fn prepare_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| io_err(dir, e))?.next().is_some();
        if non_empty && !force {
            return Err(CliError::config(format!("{} exists and is not empty; pass --force to overwrite", dir.display())));
        }
        if non_empty {
            fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn load_config(path: &Path, overrides: &Overrides) -> CliResult<(String, RunConfig)> {
    let (text, mut cfg) = RunConfig::load(path)?;
    cfg.apply(overrides);
    cfg.validate()?;
    Ok((text, cfg))
}

/// Renders every configured domain into `out/domain_<id>`.
pub fn gen_data(config: &Path, overrides: &Overrides, out: &Path, force: bool) -> CliResult<Vec<PathBuf>> {
    let (_, cfg) = load_config(config, overrides)?;
    // every spec is validated before anything touches the disk
    let datasets = cfg.specs().iter().map(generate_domain).collect::<Result<Vec<_>, _>>()?;
    prepare_dir(out, force)?;
    datasets
        .iter()
        .map(|ds| {
            let dir = domain_dir(out, ds.domain_id());
            save_dataset(ds, &dir)?;
            Ok(dir)
        })
        .collect()
}

/// Loads the datasets of `ids` from a data root, in that order.
pub fn load_domains(data: &Path, ids: &[u32]) -> CliResult<Vec<DomainDataset>> {
    ids.iter()
        .map(|&id| {
            let dir = domain_dir(data, id);
            if !dir.join(MANIFEST_FILE).exists() {
                return Err(CliError::data(format!("dataset for domain {id} not found at {}", dir.display())));
            }
            let ds = load_dataset(&dir).map_err(|e| CliError::from(e).context(format!("loading domain {id}")))?;
            if ds.domain_id() != id {
                return Err(CliError::data(format!("{} holds domain {}, expected {id}", dir.display(), ds.domain_id())));
            }
            Ok(ds)
        })
        .collect()
}

fn append_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        let line = serde_json::to_string(r).map_err(CliError::runtime)?;
        writeln!(f, "{line}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Trains the configured sequence, checkpointing after every stage.
pub fn train(config: &Path, overrides: &Overrides, data: &Path, out: &Path, force: bool) -> CliResult<PathBuf> {
    let (text, cfg) = load_config(config, overrides)?;
    let order = cfg.training_order();
    let domains = load_domains(data, &order)?;
    for (ds, spec) in domains.iter().zip(order.iter().map(|id| cfg.specs().into_iter().find(|s| s.domain_id == *id))) {
        if Some(&ds.spec) != spec.as_ref() {
            return Err(CliError::data(format!(
                "dataset for domain {} was generated from a different spec; rerun gen-data",
                ds.domain_id()
            )));
        }
    }
    prepare_dir(out, force)?;
    write(&out.join(CONFIG_SNAPSHOT), &text)?;
    let resolved = ResolvedRun {
        label: cfg.label(&overrides.ablate),
        order: order.clone(),
        ablate: overrides.ablate.clone(),
        config: cfg.clone(),
    };
    write(&out.join(RESOLVED_FILE), to_json(&resolved)?)?;

    let mut trainer = Trainer::new(cfg.net.clone(), cfg.train.clone(), cfg.loss.clone(), cfg.eval.clone(), cfg.seed)?;
    let checkpoints = out.join(CHECKPOINT_DIR);
    let (mut logged, mut epochs_logged) = (0, 0);
    let stages = if cfg.train.mode == TrainMode::Joint { 1 } else { domains.len() };
    while trainer.stage < stages {
        if cfg.train.mode == TrainMode::Joint {
            trainer.train_joint(&domains)?;
        } else {
            trainer.train_stage(&domains)?;
        }
        save_checkpoint(&trainer, &stage_dir(&checkpoints, trainer.stage))?;
        append_jsonl(&out.join(STEP_LOG), &trainer.log[logged..])?;
        append_jsonl(&out.join(EPOCH_LOG), &trainer.epochs[epochs_logged..])?;
        logged = trainer.log.len();
        epochs_logged = trainer.epochs.len();
    }
    write(&out.join(HISTORY_FILE), to_json(&trainer.history)?)?;
    Ok(out.to_path_buf())
}

/// Checkpoint directory of the last completed stage of a run.
pub fn final_checkpoint(run: &Path) -> CliResult<PathBuf> {
    let root = run.join(CHECKPOINT_DIR);
    let mut stages: Vec<PathBuf> = match fs::read_dir(&root) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(CHECKPOINT_FILE).exists())
            .collect(),
        Err(_) => Vec::new(),
    };
    stages.sort();
    stages
        .pop()
        .ok_or_else(|| CliError::data(format!("no checkpoint found under {}", root.display())))
}

fn read_resolved(run: &Path) -> CliResult<ResolvedRun> {
    let path = run.join(RESOLVED_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Re-evaluates the final checkpoint on every trained domain and writes
/// the metrics to `out` (default `<run>/eval.json`).
pub fn eval(run: &Path, data: &Path, out: Option<&Path>) -> CliResult<(PathBuf, StageMetrics)> {
    let ckpt = final_checkpoint(run)?;
    let manifest = read_manifest(&ckpt)?;
    let net = load_network(&ckpt)?;
    let domains = load_domains(data, &manifest.trained_domains)?;
    let per_domain = domains
        .iter()
        .map(|d| evaluate_domain(&net, d, &manifest.eval_config))
        .collect::<Result<Vec<_>, _>>()?;
    let metrics = StageMetrics {
        stage: manifest.stage.saturating_sub(1),
        trained_domains: manifest.trained_domains.clone(),
        per_domain,
    };
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| run.join(EVAL_FILE));
    write(&path, to_json(&metrics)?)?;
    Ok((path, metrics))
}

fn read_history(run: &Path) -> CliResult<ModeHistory> {
    let path = run.join(HISTORY_FILE);
    if !path.exists() {
        return Err(CliError::data(format!("{} has no {HISTORY_FILE}; train it first", run.display())));
    }
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let report: MetricsReport = serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(ModeHistory {
        label: read_resolved(run)?.label,
        report,
    })
}

/// Writes `report.txt` and, for multi-stage runs, one SVG plot per metric.
pub fn report(runs: &[PathBuf], out: &Path) -> CliResult<Vec<PathBuf>> {
    if runs.is_empty() {
        return Err(CliError::config("report needs at least one run directory"));
    }
    let histories = runs.iter().map(|r| read_history(r)).collect::<CliResult<Vec<_>>>()?;
    let rep = forgetting_report(&histories);
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut written = vec![out.join("report.txt")];
    write(&written[0], &rep.table)?;
    for (stem, svg) in &rep.plots {
        let path = out.join(format!("{stem}.svg"));
        write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
