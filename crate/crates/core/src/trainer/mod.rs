//! Codec pretraining, teacher training and one-step distillation.

mod cache;
mod codec;
mod distill;
mod log;
mod teacher;

pub use cache::TargetCache;
pub use codec::{calibrate_latent_scale, load_codec, pca_init, pretrain_codec, store_codec, CodecTrainConfig};
pub use distill::{distill, load_student, DistillOutcome, Distiller, StepInputs, StudentPass};
pub use log::TrainLog;
pub use teacher::{load_teacher, train_teacher, TeacherOutcome};

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::models::checkpoint::{Checkpoint, Meta, RngState};
use crate::models::Codec;
use crate::nn::Adam;
use crate::sampler::TeacherTarget;
use crate::scalar::Scalar;
use crate::schedule::{Schedule, ScheduleForm};
use crate::tensor::{ImageBatch, LatentBatch, Tensor};

/// Parameters from which the diffusion schedule is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub eta_min: f64,
    pub eta_max: f64,
    pub kappa: f64,
    pub form: ScheduleForm,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 15, eta_min: 0.04, eta_max: 0.999, kappa: 2.0, form: ScheduleForm::GeometricSqrt }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<Schedule> {
        Schedule::build(self.steps, self.eta_min, self.eta_max, self.kappa, self.form)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Optimisation settings for teacher training and distillation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Distillation iterations.
    pub iterations: usize,
    pub teacher_iterations: usize,
    pub batch_size: usize,
    pub lr_student: f64,
    pub lr_teacher: f64,
    pub lr_discriminator: f64,
    pub weights: LossWeights,
    /// Taken from the experiment's global seed, not from config files.
    #[serde(skip)]
    pub seed: u64,
    /// Checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
    /// Append a log line every this many iterations.
    pub log_every: usize,
    pub precision: Precision,
    /// Weight the teacher loss by `w_t` (sampling `t` from `2..=T`).
    pub weighted_teacher_loss: bool,
    pub teacher_target: TeacherTarget,
    /// Number of distinct initial-noise draws per training pair during
    /// distillation; 0 draws fresh noise every time. A finite pool lets
    /// teacher targets be cached.
    pub noise_pool: usize,
    pub cache_teacher_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            teacher_iterations: 30_000,
            batch_size: 16,
            lr_student: 5e-5,
            lr_teacher: 5e-5,
            lr_discriminator: 1e-4,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_every: 1000,
            log_every: 50,
            precision: Precision::F32,
            weighted_teacher_loss: false,
            teacher_target: TeacherTarget::MultiStep,
            noise_pool: 4,
            cache_teacher_targets: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.iterations == 0 || self.teacher_iterations == 0 {
            return bad("iterations must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        for (name, lr) in [
            ("lr_student", self.lr_student),
            ("lr_teacher", self.lr_teacher),
            ("lr_discriminator", self.lr_discriminator),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.cache_teacher_targets && self.noise_pool == 0 {
            return bad("cache_teacher_targets needs a finite noise_pool");
        }
        self.weights.validate()
    }
}

/// Uniform `t` weights normalised to mean 1 over `2..=T` (`w_1` is undefined).
pub(crate) fn teacher_loss_weights(s: &Schedule) -> Result<Vec<f64>> {
    let ws: Vec<f64> = (2..=s.steps()).map(|t| s.coeffs(t).map(|c| c.w.unwrap_or(0.0))).collect::<Result<_>>()?;
    if ws.is_empty() {
        return Err(Error::Config("weighted teacher loss needs at least 2 steps".into()));
    }
    let mean = ws.iter().sum::<f64>() / ws.len() as f64;
    Ok(ws.into_iter().map(|w| w / mean).collect())
}

/// Where a training phase writes its checkpoint and log, and the resolved
/// configuration recorded in every manifest.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub dir: PathBuf,
    pub config: serde_json::Value,
}

impl RunSpec {
    pub fn new(dir: impl Into<PathBuf>, config: serde_json::Value) -> Self {
        Self { dir: dir.into(), config }
    }

    pub(crate) fn meta(&self, s: &Schedule, iteration: u64, rng: &ChaCha8Rng, state: serde_json::Value) -> Meta {
        Meta {
            iteration,
            config: self.config.clone(),
            config_hash: config_hash(&self.config),
            etas: s.etas().to_vec(),
            kappa: s.kappa(),
            rng: Some(RngState::capture(rng)),
            state,
        }
    }
}

/// SHA-256 of the compact JSON form.
pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn finite(term: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term: term.to_string() })
    }
}

/// Encode a batch item by item through a content-hash cache; only the
/// misses go through the codec, as one batch.
pub(crate) fn encode_cached<T: Scalar>(
    codec: &Codec<T>,
    x: &ImageBatch<T>,
    cache: &mut TargetCache<T>,
) -> Result<LatentBatch<T>> {
    let n = x.batch();
    let items: Vec<Tensor<T>> = (0..n).map(|i| x.item_at(i)).collect();
    let hashes: Vec<String> = items.iter().map(Tensor::content_hash).collect();
    let mut out: Vec<Option<Tensor<T>>> = hashes.iter().map(|h| cache.get(h, 0)).collect();
    let miss: Vec<usize> = (0..n).filter(|&i| out[i].is_none()).collect();
    if !miss.is_empty() {
        let batch = Tensor::cat(&miss.iter().map(|&i| items[i].clone()).collect::<Vec<_>>())?;
        let z = codec.encode(&batch)?;
        for (j, &i) in miss.iter().enumerate() {
            let zi = z.item_at(j);
            cache.insert(&hashes[i], 0, zi.clone());
            out[i] = Some(zi);
        }
    }
    Tensor::cat(&out.into_iter().flatten().collect::<Vec<_>>())
}

pub(crate) fn save_adam<T: Scalar>(ck: &mut Checkpoint<T>, prefix: &str, opt: &Adam<T>) -> u64 {
    let (step, m, v) = opt.state();
    for (i, (m, v)) in m.iter().zip(v).enumerate() {
        ck.insert(format!("{prefix}/m/{i}"), m.clone());
        ck.insert(format!("{prefix}/v/{i}"), v.clone());
    }
    step
}

pub(crate) fn load_adam<T: Scalar>(ck: &Checkpoint<T>, prefix: &str, opt: &mut Adam<T>, step: u64) -> Result<()> {
    let n = opt.state().1.len();
    let fetch = |kind: &str, i: usize| {
        let key = format!("{prefix}/{kind}/{i}");
        ck.get(&key).cloned().ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))
    };
    let m = (0..n).map(|i| fetch("m", i)).collect::<Result<Vec<_>>>()?;
    let v = (0..n).map(|i| fetch("v", i)).collect::<Result<Vec<_>>>()?;
    opt.restore(step, m, v)
}

/// Resume bookkeeping stored in the checkpoint manifest.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub(crate) struct ResumeState {
    pub cursor: crate::dataio::PairCursor,
    #[serde(default)]
    pub opt_steps: Vec<u64>,
}

pub(crate) fn read_resume<T: Scalar>(path: &Path) -> Result<(Checkpoint<T>, ResumeState, ChaCha8Rng)> {
    let ck = Checkpoint::<T>::read(path)?;
    let state: ResumeState = serde_json::from_value(ck.manifest.state.clone())
        .map_err(|e| Error::Checkpoint(format!("{}: no resumable state ({e})", path.display())))?;
    let rng = ck
        .manifest
        .rng
        .as_ref()
        .ok_or_else(|| Error::Checkpoint(format!("{}: no rng state", path.display())))?
        .restore()?;
    Ok((ck, state, rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        TrainConfig::default().validate().unwrap();
        ScheduleConfig::default().build().unwrap();
    }

    #[test]
    fn invalid_configs() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr_student: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { noise_pool: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn loss_weights_have_unit_mean() {
        let s = ScheduleConfig::default().build().unwrap();
        let w = teacher_loss_weights(&s).unwrap();
        assert_eq!(w.len(), 14);
        assert!((w.iter().sum::<f64>() / 14.0 - 1.0).abs() < 1e-12);
    }
}
