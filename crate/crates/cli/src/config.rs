//! TOML run configuration with `--set key=value` overrides.

use std::path::{Path, PathBuf};

use cvsn::data::{parse_minute, SplitBounds, SplitPart, SyntheticSpec, TargetMode, DEFAULT_MAX_FILL};
use cvsn::ensemble::EnsembleSpec;
use cvsn::model::VsnVariant;
use cvsn::training::{FinetuneConfig, TrainConfig};
use cvsn::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const OUTPUT_DIR_ENV: &str = "CVSN_OUTPUT_DIR";
pub const PARALLELISM_ENV: &str = "CVSN_PARALLELISM";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization, shuffling, dropout and (as the base seed)
    /// every ensemble member.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub parallelism: usize,
    /// |SI| threshold in MW for the conditional metrics.
    pub threshold: f64,
    pub data: DataConfig,
    pub generate: SyntheticSpec,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub ensemble: EnsembleSection,
    pub finetune: FinetuneSection,
    pub predict: PredictSection,
    pub ablate: AblateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            parallelism: 0,
            threshold: cvsn::eval::DEFAULT_THRESHOLD,
            data: DataConfig::default(),
            generate: SyntheticSpec::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            ensemble: EnsembleSection::default(),
            finetune: FinetuneSection::default(),
            predict: PredictSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub csv: PathBuf,
    pub schema: PathBuf,
    pub n_c: usize,
    pub n_o: usize,
    /// Split boundaries as timestamps. When all are absent the table span is
    /// cut 70/15/15 on quarter-hour boundaries.
    pub train_start: Option<String>,
    pub val_start: Option<String>,
    pub test_start: Option<String>,
    pub end: Option<String>,
    /// Keep every k-th valid issue minute.
    pub train_stride: usize,
    pub eval_stride: usize,
    pub max_fill: usize,
    pub max_gap: usize,
    pub limited_history: Vec<LimitedFeature>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            csv: PathBuf::from("data/synthetic.csv"),
            schema: PathBuf::from("data/synthetic.schema"),
            n_c: 15,
            n_o: 3,
            train_start: None,
            val_start: None,
            test_start: None,
            end: None,
            train_stride: 1,
            eval_stride: 1,
            max_fill: DEFAULT_MAX_FILL,
            max_gap: 1440,
            limited_history: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitedFeature {
    pub feature: String,
    pub available_from: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cvsn,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub target: TargetMode,
    pub hidden: usize,
    pub inner: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub variant: VsnVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Cvsn,
            target: TargetMode::Si,
            hidden: 10,
            inner: 32,
            embed_dim: 5,
            dropout: 0.1,
            variant: VsnVariant::Constant,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub loss_weight: f64,
    pub chunk_size: usize,
    /// Features held at zero while training (the base model for fine-tuning).
    pub zero_features: Vec<String>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            patience: t.patience,
            loss_weight: t.loss_weight,
            chunk_size: t.chunk_size,
            zero_features: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub size: usize,
    pub c_min: f64,
    pub c_max: f64,
    pub alternate_targets: bool,
    pub bootstrap: bool,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        let e = EnsembleSpec::default();
        EnsembleSection {
            size: e.size,
            c_min: e.c_min,
            c_max: e.c_max,
            alternate_targets: e.alternate_targets,
            bootstrap: e.bootstrap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    /// Base checkpoint trained with `new_features` held at zero.
    pub checkpoint: PathBuf,
    pub new_features: Vec<String>,
    pub recent_days: f64,
    pub epochs: usize,
    pub reinit: bool,
    pub freeze: bool,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let f = FinetuneConfig::default();
        FinetuneSection {
            checkpoint: PathBuf::from("runs/model.ckpt"),
            new_features: f.new_features,
            recent_days: f.recent_days,
            epochs: f.epochs,
            reinit: f.reinit,
            freeze: f.freeze,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    /// A single checkpoint or an ensemble manifest (`.json`).
    pub model: PathBuf,
    pub split: SplitPart,
}

impl Default for PredictSection {
    fn default() -> Self {
        PredictSection {
            model: PathBuf::from("runs/model.ckpt"),
            split: SplitPart::Test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    /// ensembling, loss-weighting, delta-si, bootstrapping, delta-features,
    /// constant-vsn or group:<name>.
    pub toggles: Vec<String>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            toggles: vec!["delta-features".into()],
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path` (if any), apply `key=value` overrides and the environment.
    pub fn load(path: Option<&Path>, overrides: &[String], env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                text.parse().map_err(config_err)?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table).try_into().map_err(config_err)?;
        if let Some(dir) = env(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.output_dir = PathBuf::from(dir);
        }
        if let Some(p) = env(PARALLELISM_ENV).filter(|p| !p.is_empty()) {
            cfg.parallelism = p.parse().map_err(|_| config_err(format!("{PARALLELISM_ENV} must be a non-negative integer, got `{p}`")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.n_c == 0 || self.data.n_o == 0 {
            return Err(config_err("data.n_c and data.n_o must be positive"));
        }
        if self.data.train_stride == 0 || self.data.eval_stride == 0 {
            return Err(config_err("data strides must be positive"));
        }
        if !(self.threshold >= 0.0) {
            return Err(config_err("threshold must be non-negative"));
        }
        self.train_config().validate()?;
        self.ensemble_spec().validate()?;
        let given = [&self.data.train_start, &self.data.val_start, &self.data.test_start, &self.data.end];
        if given.iter().any(|g| g.is_some()) && given.iter().any(|g| g.is_none()) {
            return Err(config_err("give all four split boundaries or none"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of everything that influences results (output location and
    /// thread count excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.parallelism = 0;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Comment line that starts every CSV artifact.
    pub fn header(&self) -> String {
        format!("# config_hash: {}\n", self.hash())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            patience: t.patience,
            loss_weight: t.loss_weight,
            seed: self.seed,
            chunk_size: t.chunk_size,
        }
    }

    pub fn ensemble_spec(&self) -> EnsembleSpec {
        let e = &self.ensemble;
        EnsembleSpec {
            size: e.size,
            base_seed: self.seed,
            c_min: e.c_min,
            c_max: e.c_max,
            alternate_targets: e.alternate_targets,
            bootstrap: e.bootstrap,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        let f = &self.finetune;
        FinetuneConfig {
            new_features: f.new_features.clone(),
            recent_days: f.recent_days,
            epochs: f.epochs,
            reinit: f.reinit,
            freeze: f.freeze,
        }
    }

    /// Explicit boundaries, or a 70/15/15 cut of `[start, end)`.
    pub fn split_bounds(&self, start: i64, end: i64) -> Result<SplitBounds> {
        let d = &self.data;
        let b = match (&d.train_start, &d.val_start, &d.test_start, &d.end) {
            (Some(a), Some(b), Some(c), Some(e)) => SplitBounds {
                train_start: minute(a)?,
                val_start: minute(b)?,
                test_start: minute(c)?,
                end: minute(e)?,
            },
            _ => {
                let qh = (end - start) / 15;
                SplitBounds {
                    train_start: start,
                    val_start: start + 15 * (qh * 70 / 100),
                    test_start: start + 15 * (qh * 85 / 100),
                    end: start + 15 * qh,
                }
            }
        };
        b.validate()?;
        Ok(b)
    }
}

pub fn minute(text: &str) -> Result<i64> {
    parse_minute(text).map_err(config_err)
}

/// `a.b.c=value`; the value is read as a TOML literal, falling back to a bare
/// string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed above"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("bad override key `{key}`")));
    }
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        let entry = t.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("override `{key}`: `{p}` is not a table")))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
