//! Run configuration: a TOML file with command-line overrides.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use lps_core::evalkit::EvalConfig;
use lps_core::lifelong::{TrainConfig, TrainMode};
use lps_core::losses::LossConfig;
use lps_core::memory::SamplingScheme;
use lps_core::perception::NetConfig;
use lps_core::synthgen::{DomainSpec, DomainStyle};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// One domain of the sequence: a built-in preset with optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainEntry {
    /// Domain id; also selects the built-in style.
    pub preset: u32,
    pub num_scenes: Option<usize>,
    pub num_test_scenes: Option<usize>,
    pub num_identities: Option<usize>,
    pub unlabeled_fraction: Option<f64>,
    pub style: Option<DomainStyle>,
}

impl DomainEntry {
    pub fn spec(&self, seed: u64) -> DomainSpec {
        let base = DomainSpec::preset(self.preset, seed);
        DomainSpec {
            num_scenes: self.num_scenes.unwrap_or(base.num_scenes),
            num_test_scenes: self.num_test_scenes.unwrap_or(base.num_test_scenes),
            num_identities: self.num_identities.unwrap_or(base.num_identities),
            unlabeled_fraction: self.unlabeled_fraction.unwrap_or(base.unlabeled_fraction),
            style: self.style.clone().unwrap_or(base.style),
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Training order as domain ids; defaults to the listed order.
    #[serde(default)]
    pub order: Option<Vec<u32>>,
    #[serde(rename = "domain")]
    pub domains: Vec<DomainEntry>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_seed() -> u64 {
    1
}

/// Loss-term toggles selectable on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoDkd,
    NoRkdPlus,
    RkdBasic,
    NoRim,
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "no_dkd" => Ok(Self::NoDkd),
            "no_rkd_plus" => Ok(Self::NoRkdPlus),
            "rkd_basic" => Ok(Self::RkdBasic),
            "no_rim" => Ok(Self::NoRim),
            other => Err(format!("unknown ablation `{other}` (expected no_dkd, no_rkd_plus, rkd_basic or no_rim)")),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NoDkd => "no_dkd",
            Self::NoRkdPlus => "no_rkd_plus",
            Self::RkdBasic => "rkd_basic",
            Self::NoRim => "no_rim",
        })
    }
}

impl Ablation {
    pub fn apply(self, loss: &mut LossConfig) {
        match self {
            Self::NoDkd => loss.use_dkd = false,
            Self::NoRkdPlus => loss.use_rkd_plus = false,
            Self::RkdBasic => {
                loss.use_rkd_plus = false;
                loss.use_rkd_basic = true;
            }
            Self::NoRim => loss.use_rim = false,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<TrainMode>,
    pub order: Option<Vec<u32>>,
    pub ablate: Vec<Ablation>,
    pub sampling: Option<SamplingScheme>,
}

impl RunConfig {
    /// Reads and parses a config file, returning its text verbatim as well.
    pub fn load(path: &Path) -> CliResult<(String, RunConfig)> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = Self::parse(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Ok((text, cfg))
    }

    pub fn parse(text: &str) -> Result<RunConfig, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(mode) = o.mode {
            self.train.mode = mode;
        }
        if let Some(order) = &o.order {
            self.order = Some(order.clone());
        }
        if let Some(s) = o.sampling {
            self.train.sampling = s;
        }
        for a in &o.ablate {
            a.apply(&mut self.loss);
        }
        if self.train.mode != TrainMode::Lps {
            self.loss = self.loss.without_rehearsal();
        }
    }

    pub fn specs(&self) -> Vec<DomainSpec> {
        self.domains.iter().map(|d| d.spec(self.seed)).collect()
    }

    /// Domain ids in training order.
    pub fn training_order(&self) -> Vec<u32> {
        self.order.clone().unwrap_or_else(|| self.domains.iter().map(|d| d.preset).collect())
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.domains.is_empty() {
            return Err(CliError::config("config lists no [[domain]] entries"));
        }
        let ids: BTreeSet<u32> = self.domains.iter().map(|d| d.preset).collect();
        if ids.len() != self.domains.len() {
            return Err(CliError::config("domain ids must be distinct"));
        }
        for spec in self.specs() {
            spec.validate()?;
            if (spec.style.image_height, spec.style.image_width) != (self.net.image_height, self.net.image_width) {
                return Err(CliError::config(format!(
                    "domain {} renders {}x{} images but the network expects {}x{}",
                    spec.domain_id, spec.style.image_height, spec.style.image_width, self.net.image_height, self.net.image_width
                )));
            }
        }
        let order = self.training_order();
        let seen: BTreeSet<u32> = order.iter().copied().collect();
        if order.len() != ids.len() || seen != ids {
            return Err(CliError::config(format!("order {order:?} is not a permutation of the domain ids {ids:?}")));
        }
        self.train.validate()?;
        self.loss.validate()?;
        self.net.validate()?;
        Ok(())
    }

    /// Human-readable run label, e.g. `lps` or `lps no_rim`.
    pub fn label(&self, ablate: &[Ablation]) -> String {
        let mut label = self.train.mode.to_string();
        for a in ablate {
            label.push(' ');
            label.push_str(&a.to_string());
        }
        label
    }
}
