//! Experiment configuration: one TOML document, every section optional,
//! unknown keys rejected.

use std::path::{Path, PathBuf};

use onestep::dataio::DataConfig;
use onestep::evalkit::AnalysisDomain;
use onestep::models::{CodecConfig, CodecKind, DenoiserConfig, DiscriminatorConfig, EmbedderConfig};
use onestep::sampler::SampleMode;
use onestep::trainer::{CodecTrainConfig, ScheduleConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train_dir: PathBuf,
    pub val_dir: PathBuf,
    /// Held-out images used by `eval` and `ablate` (all when 0).
    pub eval_images: usize,
    pub pairs: DataConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train_dir: "data/train".into(),
            val_dir: "data/val".into(),
            eval_images: 0,
            pairs: DataConfig::default(),
        }
    }
}

/// Settings of the synthetic corpus written by `make-dataset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub train_count: usize,
    pub val_count: usize,
    pub size: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { train_count: 256, val_count: 32, size: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderSection {
    #[serde(flatten)]
    pub net: EmbedderConfig,
    /// Optional checkpoint with pretrained weights under the `embedder/`
    /// prefix.
    pub weights: Option<PathBuf>,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        Self { net: EmbedderConfig::default(), weights: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Teacher sampling mode used by `eval`.
    pub teacher_mode: SampleMode,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { teacher_mode: SampleMode::Det }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub rho: f64,
    pub lowpass_frac: f64,
    pub domain: AnalysisDomain,
    /// Validation images traced.
    pub images: usize,
    /// Images rendered as PNG strips.
    pub render: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { rho: 0.5, lowpass_frac: 0.25, domain: AnalysisDomain::Pixels, images: 20, render: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Global seed for data order, noise and initialization streams.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub dataset: DatasetSection,
    pub schedule: ScheduleConfig,
    pub codec: CodecConfig,
    pub codec_train: CodecTrainConfig,
    pub denoiser: DenoiserConfig,
    pub discriminator: DiscriminatorConfig,
    pub embedder: EmbedderSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub analysis: AnalysisSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: "runs".into(),
            data: DataSection::default(),
            dataset: DatasetSection::default(),
            schedule: ScheduleConfig::default(),
            codec: CodecConfig::default(),
            codec_train: CodecTrainConfig::default(),
            denoiser: DenoiserConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            embedder: EmbedderSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {msg}"))
}

impl ExperimentConfig {
    /// Parse TOML text, apply `key.path=value` overrides, and validate.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: Self = doc.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Checks each section, then the constraints that span sections.
    pub fn validate(&self) -> Result<(), CliError> {
        let core = |name: &str, r: onestep::Result<()>| r.map_err(|e| field(name, e));
        core("data.pairs", self.data.pairs.validate())?;
        core("schedule", self.schedule.build().map(drop))?;
        core("codec_train", self.codec_train.validate())?;
        core("train", self.train.validate())?;
        let lc = match self.codec.kind {
            CodecKind::Identity => 3,
            CodecKind::Conv => self.codec.latent_channels,
        };
        let f = match self.codec.kind {
            CodecKind::Identity => 1,
            CodecKind::Conv => self.codec.spatial_factor,
        };
        if f == 0 || lc == 0 {
            return Err(field("codec", "spatial_factor and latent_channels must be positive"));
        }
        if self.denoiser.latent_channels != lc {
            return Err(field(
                "denoiser.latent_channels",
                format!("{} does not match the codec's {lc} latent channels", self.denoiser.latent_channels),
            ));
        }
        if self.discriminator.latent_channels != lc {
            return Err(field(
                "discriminator.latent_channels",
                format!("{} does not match the codec's {lc} latent channels", self.discriminator.latent_channels),
            ));
        }
        let patch = self.data.pairs.patch;
        if patch % f != 0 || (patch / f) % 4 != 0 || patch / f < 8 {
            return Err(field(
                "data.pairs.patch",
                format!("{patch} must give a latent side divisible by 4 and at least 8 (spatial factor {f})"),
            ));
        }
        if self.dataset.size < patch {
            return Err(field("dataset.size", format!("{} is smaller than the patch {patch}", self.dataset.size)));
        }
        if !(self.analysis.rho > 0.0 && self.analysis.rho < 1.0) {
            return Err(field("analysis.rho", "must lie in (0, 1)"));
        }
        if !(self.analysis.lowpass_frac > 0.0 && self.analysis.lowpass_frac < 1.0) {
            return Err(field("analysis.lowpass_frac", "must lie in (0, 1)"));
        }
        if self.analysis.images == 0 {
            return Err(field("analysis.images", "must be at least 1"));
        }
        if self.embedder.net.input_size < 8 || self.embedder.net.dim == 0 {
            return Err(field("embedder", "input_size must be >= 8 and dim >= 1"));
        }
        Ok(())
    }
}

/// Set `a.b.c = value` in a TOML table. The value is parsed as TOML and
/// taken as a bare string when that fails.
fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key {key:?} is malformed")));
    }
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {p} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
