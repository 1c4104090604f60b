//! The run configuration document: one TOML file holding the synthetic data
//! spec, model and training settings, ablation grid and output paths.
//!
//! Loading rejects unknown keys and reports the offending line. Values can
//! be overridden with `--set section.key=value` (the value is parsed as a
//! TOML literal, falling back to a bare string) and a few dedicated flags;
//! flags are applied last and win.

use std::path::{Path, PathBuf};

use famf_core::aggregation::{AggregationConfig, AggregationKind};
use famf_core::data::{Modality, SynthSpec};
use famf_core::fusion::{FusionConfig, FusionKind};
use famf_core::model::{Activation, FaceRows, FamfConfig};
use famf_core::pipeline::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Run seed: split, initialization, batch order and frame sampling.
    /// The dataset has its own seed in `[synth]`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub synth: SynthSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ablation: AblationGrid,
    #[serde(default)]
    pub inspect: InspectConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            output: OutputConfig::default(),
            data: DataConfig::default(),
            synth: SynthSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablation: AblationGrid::default(),
            inspect: InspectConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub run_dir: PathBuf,
    /// Write an extra checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            run_dir: PathBuf::from("runs/famf"),
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Precomputed features. Without it, commands read the run directory's
    /// `data/manifest.txt` if `famf synth` wrote one, and otherwise generate
    /// the `[synth]` dataset in memory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

/// Model settings minus the dimensions, which come from the dataset.
///
/// Defaults are sized for a CPU: hidden 128 rather than 4096, and MLMA
/// 32/16 so both projections fit under a 64-dimensional feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub frames: usize,
    pub hidden_dim: usize,
    pub aggregation: AggregationConfig,
    pub fusion: FusionConfig,
    pub modalities: Vec<Modality>,
    pub face_rows: FaceRows,
    pub activation: Activation,
    pub batchnorm_eps: f64,
    pub batchnorm_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let base = FamfConfig::new(1, 1);
        ModelConfig {
            frames: base.frames,
            hidden_dim: 128,
            aggregation: AggregationConfig::new(AggregationKind::AttentionVlad, 8),
            fusion: FusionConfig::new(FusionKind::Mlma, 32, 16),
            modalities: base.modalities,
            face_rows: base.face_rows,
            activation: base.activation,
            batchnorm_eps: base.batchnorm_eps,
            batchnorm_momentum: base.batchnorm_momentum,
        }
    }
}

impl ModelConfig {
    pub fn resolve(&self, dim: usize, num_classes: usize) -> Result<FamfConfig> {
        let config = FamfConfig {
            dim,
            num_classes,
            frames: self.frames,
            hidden_dim: self.hidden_dim,
            aggregation: self.aggregation.clone(),
            fusion: self.fusion.clone(),
            modalities: self.modalities.clone(),
            face_rows: self.face_rows,
            activation: self.activation,
            batchnorm_eps: self.batchnorm_eps,
            batchnorm_momentum: self.batchnorm_momentum,
        };
        config.validate().map_err(|e| Error::Config(format!("[model] {e}")))?;
        Ok(config)
    }
}

/// Axes of an ablation sweep. The grid is their cartesian product; any
/// empty axis makes an empty grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationGrid {
    pub aggregations: Vec<AggregationKind>,
    pub fusions: Vec<FusionKind>,
    pub modality_subsets: Vec<Vec<Modality>>,
    pub clusters: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        AblationGrid {
            aggregations: AggregationKind::ALL.to_vec(),
            fusions: FusionKind::ALL.to_vec(),
            modality_subsets: vec![vec![Modality::Face, Modality::Audio, Modality::Body]],
            clusters: vec![8],
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InspectConfig {
    /// Episodes to report; empty means the first `count` validation episodes.
    pub episodes: Vec<u64>,
    pub count: usize,
}

impl Default for InspectConfig {
    fn default() -> Self {
        InspectConfig { episodes: Vec::new(), count: 5 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses a config document; `origin` names it in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        Self::parse_inner(text, origin, true)
    }

    fn parse_inner(text: &str, origin: &str, with_line: bool) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .filter(|_| with_line)
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            match line {
                Some(line) => Error::Config(format!("{origin}:{line}: {}", e.message())),
                None => Error::Config(format!("{origin}: {}", e.message())),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Checks everything that does not need the dataset.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let section = |name: &str, r: famf_core::Result<()>| r.map_err(|e| Error::Config(format!("[{name}] {e}")));
        section("train", self.train.validate())?;
        if self.data.manifest.is_none() {
            section("synth", self.synth.validate())?;
            self.model.resolve(self.synth.dim, self.synth.num_classes)?;
        }
        if self.ablation.clusters.contains(&0) {
            return Err(Error::Config("[ablation] clusters must be positive".into()));
        }
        Ok(())
    }

    /// Applies `key.path=value` overrides in order.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        if sets.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for set in sets {
            let (key, raw) = set
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{set}`")))?;
            let value = parse_literal(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            if path.iter().any(|p| p.is_empty()) {
                return Err(Error::Config(format!("--set: bad key `{key}`")));
            }
            let mut node = &mut doc;
            for part in &path[..path.len() - 1] {
                let table = node
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("--set: `{key}` crosses a non-table value")))?;
                node = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            }
            node.as_table_mut()
                .ok_or_else(|| Error::Config(format!("--set: `{key}` crosses a non-table value")))?
                .insert(path[path.len() - 1].to_string(), value);
        }
        // Line numbers would point into the regenerated document, not at
        // anything the user wrote.
        let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
        Self::parse_inner(&text, "--set", false)
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// The inputs that determine trained weights. Eval settings are left out so
/// changing the cutoff or eval batch size does not orphan a checkpoint.
#[derive(Serialize)]
struct RunIdentity<'a> {
    schema_version: u32,
    model: &'a FamfConfig,
    epochs: usize,
    schedule: &'a famf_core::training::Schedule,
    adam: &'a famf_core::training::AdamConfig,
    val_fraction: f64,
    seed: u64,
    data: &'a str,
}

/// Fingerprint tying a checkpoint to its config, seed and dataset content.
pub fn run_fingerprint(model: &FamfConfig, train: &TrainConfig, seed: u64, data_digest: &str) -> Result<String> {
    fingerprint(&RunIdentity {
        schema_version: SCHEMA_VERSION,
        model,
        epochs: train.epochs,
        schedule: &train.schedule,
        adam: &train.adam,
        val_fraction: train.val_fraction,
        seed,
        data: data_digest,
    })
}

/// Well-known file locations inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn manifest(&self) -> PathBuf {
        self.0.join("data").join("manifest.txt")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.0.join("checkpoint.famf")
    }
    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.0.join(format!("checkpoint-epoch{epoch}.famf"))
    }
    pub fn metrics(&self) -> PathBuf {
        self.0.join("metrics.jsonl")
    }
    pub fn eval_report(&self) -> PathBuf {
        self.0.join("eval.json")
    }
    pub fn results(&self) -> PathBuf {
        self.0.join("ablation.tsv")
    }
    pub fn frame_weights(&self) -> PathBuf {
        self.0.join("inspect").join("frame_weights.tsv")
    }
    pub fn attention(&self, episode: u64) -> PathBuf {
        self.0.join("inspect").join(format!("attention-{episode}.tsv"))
    }
    pub fn resolved_config(&self, command: &str) -> PathBuf {
        self.0.join(format!("{command}.config.toml"))
    }
}
