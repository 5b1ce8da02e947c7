use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{finite, TrainLog};
use crate::autograd::Graph;
use crate::dataio::PairStream;
use crate::error::{Error, Result};
use crate::models::checkpoint::Checkpoint;
use crate::models::{Codec, CodecConfig, CodecKind};
use crate::nn::Adam;
use crate::scalar::Scalar;
use crate::tensor::{ImageBatch, Tensor};

/// Reconstruction pretraining of the convolutional codec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Peak learning rate, cosine-decayed to 5% of itself.
    pub lr: f64,
    /// Batches used to fit the principal-component initialization.
    pub pca_batches: usize,
    pub log_every: usize,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self { iterations: 1000, batch_size: 16, lr: 1e-3, pca_batches: 8, log_every: 100 }
    }
}

impl CodecTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("codec pretraining needs batch_size >= 1 and a positive lr".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct CodecLogLine {
    phase: &'static str,
    iteration: usize,
    loss: f64,
    lr: f64,
    elapsed_s: f64,
}

/// Train the codec to reconstruct both HR crops and upsampled LR inputs, then
/// calibrate its latent scale on one more batch and freeze it. Returns the
/// final training loss. The identity codec is only frozen.
pub fn pretrain_codec<T: Scalar>(
    codec: &mut Codec<T>,
    data: &mut PairStream<'_, T>,
    cfg: &CodecTrainConfig,
    log: &mut TrainLog,
) -> Result<f64> {
    cfg.validate()?;
    if codec.config().kind == CodecKind::Identity {
        codec.freeze();
        return Ok(0.0);
    }
    if codec.is_frozen() {
        return Err(Error::Config("codec is already frozen".into()));
    }
    let start = Instant::now();
    let mut sample = Vec::new();
    for _ in 0..cfg.pca_batches.max(1) {
        let b = data.next_batch()?;
        sample.push(b.hr);
        sample.push(b.lr_up);
    }
    pca_init(codec, &Tensor::cat(&sample)?)?;
    let mut opt = Adam::new(codec.store(), cfg.lr);
    let mut last = f64::NAN;
    for it in 0..cfg.iterations {
        let progress = it as f64 / cfg.iterations.max(1) as f64;
        opt.lr = cfg.lr * (0.05 + 0.95 * 0.5 * (1.0 + (PI * progress).cos()));
        let b = data.next_batch()?;
        let x = Tensor::cat(&[b.hr, b.lr_up])?;
        let g = Graph::new();
        let xi = g.input(x);
        let z = codec.encode_var(&g, xi)?;
        let loss = codec.decode_raw_var(&g, z)?.mse(xi)?;
        last = finite("codec_mse", loss.item().as_f64())?;
        let grads = g.backward(loss).for_store(codec.store());
        drop(g);
        opt.step(codec.store_mut(), &grads)?;
        if cfg.log_every > 0 && (it + 1) % cfg.log_every == 0 {
            log.write(&CodecLogLine {
                phase: "codec",
                iteration: it + 1,
                loss: last,
                lr: opt.lr,
                elapsed_s: start.elapsed().as_secs_f64(),
            })?;
        }
    }
    let b = data.next_batch()?;
    calibrate_latent_scale(codec, &Tensor::cat(&[b.hr, b.lr_up])?)?;
    codec.freeze();
    Ok(last)
}

/// Point the codec's linear path at the leading principal components of the
/// folded pixel blocks of `sample`.
pub fn pca_init<T: Scalar>(codec: &mut Codec<T>, sample: &ImageBatch<T>) -> Result<()> {
    let rows = codec.folded_blocks(sample)?;
    let d = rows.first().map_or(0, Vec::len);
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in &rows {
        let c = DVector::from_iterator(d, r.iter().zip(&mean).map(|(v, m)| v - m));
        cov.ger(1.0 / n, &c, &c, 1.0);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let basis: Vec<Vec<f64>> = order[..codec.latent_channels().min(d)]
        .iter()
        .map(|&k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            // fix the sign so the basis does not depend on the solver
            let lead = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    codec.set_linear_path(&mean, &basis)
}

/// Rescale latents to unit standard deviation over `sample`, so the
/// diffusion noise level is comparable to the signal.
pub fn calibrate_latent_scale<T: Scalar>(codec: &mut Codec<T>, sample: &ImageBatch<T>) -> Result<f64> {
    if codec.config().kind == CodecKind::Identity {
        return Ok(1.0);
    }
    codec.set_latent_scale(1.0);
    let z = codec.encode(sample)?;
    let m = z.mean().as_f64();
    let var = z.data().iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>() / z.len() as f64;
    let std = finite("latent_std", var.sqrt())?.max(1e-6);
    codec.set_latent_scale(std);
    Ok(std)
}

/// Add the codec weights and latent scale to a checkpoint.
pub fn store_codec<T: Scalar>(ck: &mut Checkpoint<T>, codec: &Codec<T>) {
    ck.insert_store("codec", codec.store());
    ck.insert("codec/latent_scale", Tensor::from_fn(&[1], |_| T::lit(codec.latent_scale())));
}

/// Rebuild a frozen codec from a checkpoint written by [`store_codec`].
pub fn load_codec<T: Scalar>(ck: &Checkpoint<T>, cfg: &CodecConfig) -> Result<Codec<T>> {
    let mut codec = match cfg.kind {
        CodecKind::Identity => Codec::identity(3),
        CodecKind::Conv => Codec::new(cfg),
    };
    if cfg.kind == CodecKind::Conv {
        ck.load_store("codec", codec.store_mut())?;
        let scale = ck
            .get("codec/latent_scale")
            .ok_or_else(|| Error::Checkpoint("missing tensor codec/latent_scale".into()))?
            .item()
            .as_f64();
        codec.set_latent_scale(scale);
    }
    codec.freeze();
    Ok(codec)
}
