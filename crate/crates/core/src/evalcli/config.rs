//! The artifact configuration: one TOML document with a section per
//! stage, plus dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::complexity::ProbeConfig;
use super::evaluate::{EvalConfig, SequenceSpec};
use crate::error::{Error, Result};
use crate::losscal::GridConfig;
use crate::nnarch::NetConfig;
use crate::trainer::{Tool, TrainConfig};
use crate::videopipe::{CodecAdapter, PairConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrateSection {
    /// One record CSV per subjective database.
    pub databases: Vec<PathBuf>,
    /// When no databases are given: synthetic databases to generate.
    pub synthetic_databases: usize,
    pub synthetic_records: usize,
    /// Loss index driving the synthetic scores.
    pub synthetic_driver: usize,
    pub grid: GridConfig,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        CalibrateSection {
            databases: Vec::new(),
            synthetic_databases: 3,
            synthetic_records: 40,
            synthetic_driver: 5,
            grid: GridConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    pub sources: Vec<SequenceSpec>,
    /// When no sources are given: synthetic frames to generate.
    pub synthetic_frames: usize,
    pub synthetic_size: usize,
    pub tool: Tool,
    pub pairs: PairConfig,
    /// Manifest read by the training commands; defaults to
    /// `<out_dir>/dataset/manifest.csv`.
    pub manifest: Option<PathBuf>,
    /// QP sub-group to train on; the first in the manifest when unset.
    pub qp: Option<u32>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            sources: Vec::new(),
            synthetic_frames: 2,
            synthetic_size: 192,
            tool: Tool::Pp,
            pairs: PairConfig::default(),
            manifest: None,
            qp: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhanceSection {
    pub input: Option<SequenceSpec>,
    pub checkpoint: Option<PathBuf>,
    /// Output file; `<out_dir>/enhanced.y4m` when unset.
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckSection {
    pub points: usize,
    pub dim: usize,
    pub moments: Vec<u32>,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            points: 100,
            dim: 8,
            moments: vec![1, 2, 3],
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

/// A model entry of the complexity ledger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Checkpoint { path: PathBuf },
    Generator { net: NetConfig },
    ConvStub { width: usize, depth: usize, kernel: usize, size: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComplexitySection {
    /// The first model is the baseline.
    pub models: Vec<ModelSpec>,
    pub probe: ProbeConfig,
}

impl Default for ComplexitySection {
    fn default() -> Self {
        ComplexitySection {
            models: vec![
                ModelSpec::ConvStub {
                    width: 16,
                    depth: 8,
                    kernel: 3,
                    size: 96,
                },
                ModelSpec::Generator {
                    net: NetConfig::desk(8, 96),
                },
            ],
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub codec: CodecAdapter,
    pub calibrate: CalibrateSection,
    pub dataset: DatasetSection,
    pub enhance: EnhanceSection,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckSection,
    pub complexity: ComplexitySection,
}

impl Default for ArtifactConfig {
    fn default() -> Self {
        ArtifactConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            codec: CodecAdapter::default(),
            calibrate: CalibrateSection::default(),
            dataset: DatasetSection::default(),
            enhance: EnhanceSection::default(),
            eval: EvalConfig::default(),
            gradcheck: GradcheckSection::default(),
            complexity: ComplexitySection::default(),
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling
/// back to a plain string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Merges `over` into `base`, descending into tables present in both.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `a.b.c=value` to a TOML table, creating tables on the way.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ArtifactConfig {
    /// Reads `path` over the defaults, applies overrides in order and
    /// validates. Unknown top-level keys are rejected.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("reading {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut full = toml::Table::try_from(ArtifactConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut full, table);
        let text = toml::to_string(&full).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: ArtifactConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Propagates one seed to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.net.seed = seed;
        self.train.seed = seed;
        self.dataset.pairs.seed = seed;
        self.complexity.probe.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        self.codec.validate()?;
        self.eval.codec.validate()?;
        if self.dataset.pairs.block_size != self.net.block_size {
            return Err(Error::Config(format!(
                "dataset block size {} differs from the network's {}",
                self.dataset.pairs.block_size, self.net.block_size
            )));
        }
        Ok(())
    }

    /// TOML form of the effective configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset.manifest.clone().unwrap_or_else(|| self.out_dir.join("dataset").join(crate::videopipe::MANIFEST))
    }
}
