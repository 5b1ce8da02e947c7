use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Denoise;
use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::nn::{Conv2d, Linear, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{LatentBatch, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    pub base_channels: usize,
    /// Width of the sinusoidal timestep features.
    pub time_features: usize,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { latent_channels: 16, base_channels: 32, time_features: 32, seed: 11 }
    }
}

/// Sinusoidal features of integer timesteps, shape `(ts.len(), dim)`.
pub fn timestep_embedding<T: Scalar>(ts: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        for i in 0..dim {
            let k = i % half.max(1);
            let freq = (-(10_000f64.ln()) * k as f64 / half.max(1) as f64).exp();
            let a = t as f64 * freq;
            out.push(T::lit(if i < half { a.sin() } else { a.cos() }));
        }
    }
    Tensor::new(&[ts.len(), dim], out).expect("shape")
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv2d,
    temb: Linear,
    conv2: Conv2d,
}

impl ResBlock {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, ch: usize, emb: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv1: Conv2d::same(store, &format!("{name}.conv1"), ch, ch, 3, rng),
            temb: Linear::new(store, &format!("{name}.temb"), emb, ch, rng),
            conv2: Conv2d::same(store, &format!("{name}.conv2"), ch, ch, 3, rng).scale_init(store, 0.5),
        }
    }

    fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
        emb: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let h = self.conv1.forward(g, store, x.silu())?;
        let h = h.add_channel_vec(self.temb.forward(g, store, emb)?)?;
        let h = self.conv2.forward(g, store, h.silu())?;
        x.add(h)
    }
}

/// Two-level U-Net predicting the clean latent from `(x_t, y, t)`.
///
/// `y` enters by channel concatenation and `t` through a sinusoidal
/// embedding injected into every residual block. The head predicts a
/// correction added to `y`, so `x0_hat = y + net(x_t, y, t)`.
#[derive(Clone, Debug)]
pub struct Denoiser<T: Scalar> {
    cfg: DenoiserConfig,
    store: ParamStore<T>,
    temb1: Linear,
    temb2: Linear,
    stem: Conv2d,
    enc0: ResBlock,
    down0: Conv2d,
    enc1: ResBlock,
    down1: Conv2d,
    mid: ResBlock,
    merge1: Conv2d,
    dec1: ResBlock,
    merge0: Conv2d,
    dec0: ResBlock,
    head: Conv2d,
}

impl<T: Scalar> Denoiser<T> {
    pub fn new(cfg: &DenoiserConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut s = ParamStore::new();
        let (lc, c, tf) = (cfg.latent_channels, cfg.base_channels, cfg.time_features);
        let e = 2 * c;
        let r = &mut rng;
        let temb1 = Linear::new(&mut s, "temb.0", tf, e, r);
        let temb2 = Linear::new(&mut s, "temb.1", e, e, r);
        let stem = Conv2d::same(&mut s, "stem", 2 * lc, c, 3, r);
        let enc0 = ResBlock::new(&mut s, "enc0", c, e, r);
        let down0 = Conv2d::new(&mut s, "down0", c, 2 * c, 3, 2, 1, r);
        let enc1 = ResBlock::new(&mut s, "enc1", 2 * c, e, r);
        let down1 = Conv2d::new(&mut s, "down1", 2 * c, 2 * c, 3, 2, 1, r);
        let mid = ResBlock::new(&mut s, "mid", 2 * c, e, r);
        let merge1 = Conv2d::same(&mut s, "merge1", 4 * c, 2 * c, 1, r);
        let dec1 = ResBlock::new(&mut s, "dec1", 2 * c, e, r);
        let merge0 = Conv2d::same(&mut s, "merge0", 3 * c, c, 1, r);
        let dec0 = ResBlock::new(&mut s, "dec0", c, e, r);
        let head = Conv2d::same(&mut s, "head", c, lc, 3, r).scale_init(&mut s, 0.1);
        Self {
            cfg: cfg.clone(),
            store: s,
            temb1,
            temb2,
            stem,
            enc0,
            down0,
            enc1,
            down1,
            mid,
            merge1,
            dec1,
            merge0,
            dec0,
            head,
        }
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Graph forward with one timestep per batch item.
    pub fn forward<'g>(
        &self,
        g: &'g Graph<T>,
        x_t: Var<'g, T>,
        y: Var<'g, T>,
        ts: &[usize],
    ) -> Result<Var<'g, T>> {
        let shape = x_t.shape();
        if shape != y.shape() {
            return shape_err(format!("denoiser: x_t {shape:?} vs y {:?}", y.shape()));
        }
        let [n, c, h, w] = shape[..] else {
            return shape_err(format!("denoiser expects rank-4 latents, got {shape:?}"));
        };
        if c != self.cfg.latent_channels {
            return shape_err(format!("denoiser expects {} channels, got {c}", self.cfg.latent_channels));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return shape_err(format!("denoiser needs latent sides divisible by 4, got {h}x{w}"));
        }
        if ts.len() != n {
            return shape_err(format!("{} timesteps for batch of {n}", ts.len()));
        }
        if ts.contains(&0) {
            return Err(Error::Config("timesteps start at 1".into()));
        }
        let s = &self.store;
        let feats = g.input(timestep_embedding(ts, self.cfg.time_features));
        let emb = self.temb1.forward(g, s, feats)?.silu();
        let emb = self.temb2.forward(g, s, emb)?;

        let inp = Var::concat_channels(&[x_t, y])?;
        let h0 = self.enc0.forward(g, s, self.stem.forward(g, s, inp)?, emb)?;
        let h1 = self.enc1.forward(g, s, self.down0.forward(g, s, h0)?, emb)?;
        let m = self.mid.forward(g, s, self.down1.forward(g, s, h1)?, emb)?;

        let u1 = Var::concat_channels(&[m.upsample_nearest(2)?, h1])?;
        let u1 = self.dec1.forward(g, s, self.merge1.forward(g, s, u1)?, emb)?;
        let u0 = Var::concat_channels(&[u1.upsample_nearest(2)?, h0])?;
        let u0 = self.dec0.forward(g, s, self.merge0.forward(g, s, u0)?, emb)?;
        let out = self.head.forward(g, s, u0.silu())?;
        y.add(out)
    }
}

impl<T: Scalar> Denoise<T> for Denoiser<T> {
    fn predict(&self, x_t: &LatentBatch<T>, y: &LatentBatch<T>, t: usize) -> Result<LatentBatch<T>> {
        let g = Graph::no_grad();
        let ts = vec![t; x_t.batch()];
        Ok(self.forward(&g, g.input(x_t.clone()), g.input(y.clone()), &ts)?.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DenoiserConfig {
        DenoiserConfig { latent_channels: 4, base_channels: 8, time_features: 8, ..Default::default() }
    }

    #[test]
    fn untrained_output_is_finite_and_shaped() {
        let d = Denoiser::<f32>::new(&small());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::randn(&[2, 4, 8, 8], &mut rng);
        let y = Tensor::randn(&[2, 4, 8, 8], &mut rng);
        let out = d.predict(&x, &y, 3).unwrap();
        assert_eq!(out.shape(), x.shape());
        assert!(out.is_finite());
        assert_eq!(out, d.predict(&x, &y, 3).unwrap());
    }

    #[test]
    fn timestep_changes_output() {
        let d = Denoiser::<f32>::new(&small());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::randn(&[1, 4, 8, 8], &mut rng);
        let y = Tensor::randn(&[1, 4, 8, 8], &mut rng);
        assert_ne!(d.predict(&x, &y, 1).unwrap(), d.predict(&x, &y, 15).unwrap());
    }

    #[test]
    fn rejects_mismatch_and_t_zero() {
        let d = Denoiser::<f32>::new(&small());
        let x = Tensor::zeros(&[1, 4, 8, 8]);
        assert!(d.predict(&x, &Tensor::zeros(&[1, 4, 4, 4]), 1).is_err());
        assert!(d.predict(&x, &x, 0).is_err());
    }

    #[test]
    fn embedding_rows_differ() {
        let e = timestep_embedding::<f64>(&[1, 2], 8);
        assert_ne!(e.item_slice(0), e.item_slice(1));
    }
}
