use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::nn::{Conv2d, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{LatentBatch, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub latent_channels: usize,
    pub base_channels: usize,
    pub leak: f64,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { latent_channels: 16, base_channels: 32, leak: 0.2, seed: 13 }
    }
}

/// Three stride-2 `4x4` convolutions scoring overlapping latent patches.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator<T: Scalar> {
    cfg: DiscriminatorConfig,
    store: ParamStore<T>,
    convs: [Conv2d; 3],
}

impl<T: Scalar> PatchDiscriminator<T> {
    pub fn new(cfg: &DiscriminatorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut s = ParamStore::new();
        let c = cfg.base_channels;
        let convs = [
            Conv2d::new(&mut s, "d.0", cfg.latent_channels, c, 4, 2, 1, &mut rng),
            Conv2d::new(&mut s, "d.1", c, 2 * c, 4, 2, 1, &mut rng),
            Conv2d::new(&mut s, "d.2", 2 * c, 1, 4, 2, 1, &mut rng),
        ];
        Self { cfg: cfg.clone(), store: s, convs }
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Score map of shape `(n, 1, h/8, w/8)`.
    pub fn forward<'g>(&self, g: &'g Graph<T>, z: Var<'g, T>) -> Result<Var<'g, T>> {
        let shape = z.shape();
        if shape.len() != 4 || shape[1] != self.cfg.latent_channels {
            return shape_err(format!(
                "discriminator expects ({}-channel) rank-4 latents, got {shape:?}",
                self.cfg.latent_channels
            ));
        }
        if shape[2] < 8 || shape[3] < 8 {
            return shape_err(format!("discriminator needs latents of at least 8x8, got {shape:?}"));
        }
        let leak = T::lit(self.cfg.leak);
        let h = self.convs[0].forward(g, &self.store, z)?.leaky_relu(leak);
        let h = self.convs[1].forward(g, &self.store, h)?.leaky_relu(leak);
        self.convs[2].forward(g, &self.store, h)
    }

    pub fn score(&self, z: &LatentBatch<T>) -> Result<Tensor<T>> {
        let g = Graph::no_grad();
        Ok(self.forward(&g, g.input(z.clone()))?.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_map_shape() {
        let d = PatchDiscriminator::<f32>::new(&DiscriminatorConfig { latent_channels: 4, ..Default::default() });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = d.score(&Tensor::randn(&[2, 4, 16, 16], &mut rng)).unwrap();
        assert_eq!(s.shape(), &[2, 1, 2, 2]);
        assert!(s.is_finite());
    }

    #[test]
    fn zero_weights_give_zero_scores() {
        let mut d = PatchDiscriminator::<f64>::new(&DiscriminatorConfig { latent_channels: 4, ..Default::default() });
        for i in 0..d.store().len() {
            let t = d.store_mut().get_mut(i);
            *t = Tensor::zeros(t.shape());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = d.score(&Tensor::randn(&[1, 4, 16, 16], &mut rng)).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_wrong_channels() {
        let d = PatchDiscriminator::<f32>::new(&DiscriminatorConfig { latent_channels: 4, ..Default::default() });
        assert!(d.score(&Tensor::zeros(&[1, 3, 16, 16])).is_err());
    }
}
