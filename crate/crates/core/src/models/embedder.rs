use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::Embed;
use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::nn::{Conv2d, Linear, ParamStore};
use crate::resample::{Kernel, Resampler};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    /// Side length images are resized to before the network.
    pub input_size: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self { input_size: 32, dim: 64, seed: 1234 }
    }
}

const NORM_EPS: f64 = 1e-12;

/// Frozen random-feature image embedder producing unit vectors.
#[derive(Clone, Debug)]
pub struct Embedder<T: Scalar> {
    cfg: EmbedderConfig,
    store: ParamStore<T>,
    convs: [Conv2d; 3],
    proj: Linear,
}

impl<T: Scalar> Embedder<T> {
    pub fn new(cfg: &EmbedderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut s = ParamStore::new();
        let convs = [
            Conv2d::new(&mut s, "e.0", 3, 16, 3, 2, 1, &mut rng),
            Conv2d::new(&mut s, "e.1", 16, 32, 3, 2, 1, &mut rng),
            Conv2d::new(&mut s, "e.2", 32, 64, 3, 2, 1, &mut rng),
        ];
        let proj = Linear::new(&mut s, "e.proj", 64, cfg.dim, &mut rng);
        s.set_frozen(true);
        Self { cfg: cfg.clone(), store: s, convs, proj }
    }

    /// Replace the random weights with ones saved in a checkpoint under `prefix`.
    pub fn load_weights(&mut self, path: &Path, prefix: &str) -> Result<()> {
        let ck = Checkpoint::<T>::read(path)?;
        ck.load_store(prefix, &mut self.store)
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }
}

impl<T: Scalar> Embed<T> for Embedder<T> {
    fn embed_var<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return shape_err(format!("embedder expects (n, 3, h, w) images, got {shape:?}"));
        }
        let s = self.cfg.input_size;
        let x = if (shape[2], shape[3]) == (s, s) {
            x
        } else {
            x.resample(Rc::new(Resampler::new((shape[2], shape[3]), (s, s), Kernel::Bilinear)?))?
        };
        let mut h = x.add_scalar(T::lit(-0.5));
        for conv in &self.convs {
            h = conv.forward(g, &self.store, h)?.leaky_relu(T::lit(0.2));
        }
        let v = self.proj.forward(g, &self.store, h.global_avg_pool()?)?;
        v.l2_normalize_rows(T::lit(NORM_EPS))
    }
}
