use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{psnr, semantic_consistency, ssim, MetricsReport, MetricsRow};
use crate::dataio::{DataConfig, PairDataset};
use crate::error::{Error, Result};
use crate::models::{Codec, Denoise, Embed};
use crate::sampler::{student_infer, teacher_infer, SampleMode};
use crate::scalar::Scalar;
use crate::schedule::Schedule;
use crate::tensor::{ImageBatch, Tensor};

/// Held-out pairs with fixed degradations.
#[derive(Clone, Debug)]
pub struct EvalSet<T> {
    pub names: Vec<String>,
    pub hr: Vec<ImageBatch<T>>,
    pub lr_up: Vec<ImageBatch<T>>,
}

impl<T: Scalar> EvalSet<T> {
    /// The first `limit` images of `ds` (all when `None`), each degraded once
    /// with the pair seed `seed`.
    pub fn from_dataset(ds: &PairDataset<T>, cfg: &DataConfig, seed: u64, limit: Option<usize>) -> Result<Self> {
        let n = limit.map_or(ds.len(), |l| l.min(ds.len()));
        let mut set = Self { names: Vec::new(), hr: Vec::new(), lr_up: Vec::new() };
        for i in 0..n {
            let (hr, lr) = ds.pair(i, 0, cfg, seed)?;
            set.lr_up.push(crate::dataio::upsample(&lr, cfg.degrade.scale)?);
            set.hr.push(hr);
            let name = ds.paths()[i].file_name().map(|f| f.to_string_lossy().into_owned());
            set.names.push(name.unwrap_or_else(|| format!("image_{i:04}")));
        }
        if set.hr.is_empty() {
            return Err(Error::Config("empty evaluation set".into()));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }
}

/// What produces the super-resolved image.
pub enum Method<'a, T: Scalar> {
    /// The bicubic-upsampled input itself.
    Bicubic,
    Student(&'a dyn Denoise<T>),
    Teacher(&'a dyn Denoise<T>, SampleMode),
}

impl<T: Scalar> Method<'_, T> {
    pub fn steps(&self, s: &Schedule) -> usize {
        match self {
            Method::Bicubic => 0,
            Method::Student(_) => 1,
            Method::Teacher(..) => s.steps(),
        }
    }
}

/// Initial noise for evaluation image `i`, independent of the method.
pub fn eval_noise<T: Scalar>(shape: &[usize], seed: u64, i: usize) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    Tensor::randn(shape, &mut rng)
}

/// Super-resolve every image of `set` one at a time and score it against the
/// HR reference. `seconds` is the wall-clock time of the super-resolution
/// call alone.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<T: Scalar>(
    label: &str,
    method: &Method<'_, T>,
    codec: &Codec<T>,
    s: &Schedule,
    embedder: &dyn Embed<T>,
    set: &EvalSet<T>,
    seed: u64,
) -> Result<MetricsReport> {
    let mut rows = Vec::with_capacity(set.len());
    for (i, (hr, lr_up)) in set.hr.iter().zip(&set.lr_up).enumerate() {
        let noise = eval_noise(&codec.latent_shape(lr_up.shape())?, seed, i);
        let clock = Instant::now();
        let sr = match method {
            Method::Bicubic => lr_up.clone(),
            Method::Student(d) => student_infer(*d, codec, lr_up, s, &noise)?,
            Method::Teacher(d, mode) => teacher_infer(*d, codec, lr_up, s, &noise, *mode)?,
        };
        let seconds = clock.elapsed().as_secs_f64();
        rows.push(MetricsRow {
            image: set.names[i].clone(),
            psnr: psnr(&sr, hr)?[0],
            ssim: ssim(&sr, hr)?[0],
            semantic_consistency: semantic_consistency(&sr, hr, embedder)?[0],
            seconds,
        });
    }
    MetricsReport::new(label, method.steps(s), rows)
}
