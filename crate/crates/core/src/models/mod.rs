//! Network roles: latent codec, denoiser, patch discriminator and semantic
//! embedder, plus checkpoint serialization.

pub mod checkpoint;
mod codec;
mod denoiser;
mod discriminator;
mod embedder;

pub use codec::{Codec, CodecConfig, CodecKind};
pub use denoiser::{timestep_embedding, Denoiser, DenoiserConfig};
pub use discriminator::{DiscriminatorConfig, PatchDiscriminator};
pub use embedder::{Embedder, EmbedderConfig};

use std::cell::Cell;

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{ImageBatch, LatentBatch, Tensor};

/// Image-to-embedding map usable inside a differentiable graph.
pub trait Embed<T: Scalar> {
    /// `(n, c, h, w)` images to `(n, d)` embeddings.
    fn embed_var<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>>;

    fn embed(&self, x: &ImageBatch<T>) -> Result<Tensor<T>> {
        let g = Graph::no_grad();
        Ok(self.embed_var(&g, g.input(x.clone()))?.value())
    }
}

/// Clean-latent predictor `x0_hat = f(x_t, y, t)` as seen by samplers.
pub trait Denoise<T: Scalar> {
    fn predict(&self, x_t: &LatentBatch<T>, y: &LatentBatch<T>, t: usize) -> Result<LatentBatch<T>>;
}

/// Test double that ignores its inputs and returns a stored latent.
#[derive(Clone, Debug)]
pub struct OracleDenoiser<T> {
    pub x0: LatentBatch<T>,
}

impl<T: Scalar> Denoise<T> for OracleDenoiser<T> {
    fn predict(&self, x_t: &LatentBatch<T>, _y: &LatentBatch<T>, _t: usize) -> Result<LatentBatch<T>> {
        self.x0.ensure_same_shape(x_t, "oracle denoiser")?;
        Ok(self.x0.clone())
    }
}

/// Wraps a denoiser and counts evaluations.
pub struct CountingDenoiser<'a, T: Scalar> {
    inner: &'a dyn Denoise<T>,
    calls: Cell<usize>,
}

impl<'a, T: Scalar> CountingDenoiser<'a, T> {
    pub fn new(inner: &'a dyn Denoise<T>) -> Self {
        Self { inner, calls: Cell::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl<T: Scalar> Denoise<T> for CountingDenoiser<'_, T> {
    fn predict(&self, x_t: &LatentBatch<T>, y: &LatentBatch<T>, t: usize) -> Result<LatentBatch<T>> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict(x_t, y, t)
    }
}
