use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::nn::{Conv2d, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{ImageBatch, LatentBatch, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    /// Pixel space: encode is the identity, decode clamps to `[0, 1]`.
    Identity,
    /// Small convolutional autoencoder.
    Conv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub kind: CodecKind,
    pub spatial_factor: usize,
    pub latent_channels: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { kind: CodecKind::Conv, spatial_factor: 4, latent_channels: 16, hidden: 32, seed: 7 }
    }
}

#[derive(Clone, Debug)]
enum Arch {
    Identity,
    Conv { proj_in: Conv2d, enc: Vec<Conv2d>, proj_out: Conv2d, dec: Vec<Conv2d> },
}

/// Frozen-after-pretraining latent codec.
///
/// The convolutional variant folds `f x f` pixel blocks into channels and
/// maps them to `latent_channels` with a linear 1x1 projection plus a small
/// convolutional residual; the decoder mirrors this. The residual branches
/// start at zero, so a codec whose linear path holds a principal-component
/// basis starts out as block PCA.
#[derive(Clone, Debug)]
pub struct Codec<T: Scalar> {
    cfg: CodecConfig,
    image_channels: usize,
    arch: Arch,
    store: ParamStore<T>,
    /// Encoder outputs are divided by this (decoder inputs multiplied), so
    /// latents have roughly unit spread.
    latent_scale: f64,
}

impl<T: Scalar> Codec<T> {
    pub fn identity(image_channels: usize) -> Self {
        Self {
            cfg: CodecConfig {
                kind: CodecKind::Identity,
                spatial_factor: 1,
                latent_channels: image_channels,
                hidden: 0,
                seed: 0,
            },
            image_channels,
            arch: Arch::Identity,
            store: ParamStore::new(),
            latent_scale: 1.0,
        }
    }

    pub fn new(cfg: &CodecConfig) -> Self {
        let image_channels = 3;
        if cfg.kind == CodecKind::Identity {
            return Self::identity(image_channels);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let (f, h, lc) = (cfg.spatial_factor, cfg.hidden, cfg.latent_channels);
        let folded = image_channels * f * f;
        let proj_in = Conv2d::same(&mut store, "enc.proj", folded, lc, 1, &mut rng);
        let enc = vec![
            Conv2d::same(&mut store, "enc.0", folded, h, 3, &mut rng),
            Conv2d::same(&mut store, "enc.1", h, h, 3, &mut rng),
            Conv2d::same(&mut store, "enc.2", h, lc, 1, &mut rng).zero_init(&mut store),
        ];
        let proj_out = Conv2d::same(&mut store, "dec.proj", lc, folded, 1, &mut rng);
        let dec = vec![
            Conv2d::same(&mut store, "dec.0", lc, h, 3, &mut rng),
            Conv2d::same(&mut store, "dec.1", h, h, 3, &mut rng),
            Conv2d::same(&mut store, "dec.2", h, folded, 3, &mut rng).zero_init(&mut store),
        ];
        let arch = Arch::Conv { proj_in, enc, proj_out, dec };
        Self { cfg: cfg.clone(), image_channels, arch, store, latent_scale: 1.0 }
    }

    pub fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    pub fn spatial_factor(&self) -> usize {
        self.cfg.spatial_factor
    }

    pub fn latent_channels(&self) -> usize {
        self.cfg.latent_channels
    }

    pub fn image_channels(&self) -> usize {
        self.image_channels
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn latent_scale(&self) -> f64 {
        self.latent_scale
    }

    pub fn set_latent_scale(&mut self, s: f64) {
        assert!(s.is_finite() && s > 0.0, "latent scale must be positive");
        self.latent_scale = s;
    }

    /// Set the linear encode/decode path to the orthonormal `basis` (one
    /// row of `channels * f * f` values per latent channel, in folded-channel
    /// order) around `mean`, measured on images shifted by -0.5.
    pub fn set_linear_path(&mut self, mean: &[f64], basis: &[Vec<f64>]) -> Result<()> {
        let Arch::Conv { proj_in, proj_out, .. } = &self.arch else {
            return Err(crate::error::Error::Config("the identity codec has no linear path".into()));
        };
        let folded = self.image_channels * self.spatial_factor() * self.spatial_factor();
        let lc = self.latent_channels();
        if mean.len() != folded || basis.len() != lc || basis.iter().any(|b| b.len() != folded) {
            return shape_err(format!("linear path needs a {folded}-mean and {lc} basis rows of {folded}"));
        }
        let (w_in, b_in) = proj_in.params();
        let (w_out, b_out) = proj_out.params();
        let s = &mut self.store;
        *s.get_mut(w_in) = Tensor::from_fn(&[lc, folded, 1, 1], |i| T::lit(basis[i / folded][i % folded]));
        let proj_mean: Vec<f64> = basis.iter().map(|b| b.iter().zip(mean).map(|(a, m)| a * m).sum()).collect();
        if let Some(b) = b_in {
            *s.get_mut(b) = Tensor::from_fn(&[lc], |k| T::lit(-proj_mean[k]));
        }
        *s.get_mut(w_out) = Tensor::from_fn(&[folded, lc, 1, 1], |i| T::lit(basis[i % lc][i / lc]));
        if let Some(b) = b_out {
            *s.get_mut(b) = Tensor::from_fn(&[folded], |k| T::lit(mean[k]));
        }
        Ok(())
    }

    /// Folded `f x f` blocks of `x - 0.5`, one row per latent position.
    pub fn folded_blocks(&self, x: &ImageBatch<T>) -> Result<Vec<Vec<f64>>> {
        let shape = self.latent_shape(x.shape())?;
        let g = Graph::no_grad();
        let u = g.input(x.clone()).add_scalar(T::lit(-0.5)).pixel_unshuffle(self.spatial_factor())?.value();
        let (n, c, h, w) = u.dims4()?;
        debug_assert_eq!((n, h, w), (shape[0], shape[2], shape[3]));
        let d = u.data();
        let mut rows = Vec::with_capacity(n * h * w);
        for i in 0..n {
            for p in 0..h * w {
                rows.push((0..c).map(|ch| d[(i * c + ch) * h * w + p].as_f64()).collect());
            }
        }
        Ok(rows)
    }

    pub fn freeze(&mut self) {
        self.store.set_frozen(true);
    }

    pub fn is_frozen(&self) -> bool {
        self.store.is_frozen() || matches!(self.arch, Arch::Identity)
    }

    /// Latent shape for an image batch shape.
    pub fn latent_shape(&self, image_shape: &[usize]) -> Result<Vec<usize>> {
        let [n, c, h, w] = image_shape[..] else {
            return shape_err(format!("expected rank-4 image shape, got {image_shape:?}"));
        };
        let f = self.spatial_factor();
        if c != self.image_channels {
            return shape_err(format!("codec expects {} image channels, got {c}", self.image_channels));
        }
        if h % f != 0 || w % f != 0 {
            return shape_err(format!("image {h}x{w} not divisible by spatial factor {f}"));
        }
        Ok(vec![n, self.latent_channels(), h / f, w / f])
    }

    pub fn encode_var<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        self.latent_shape(&x.shape())?;
        match &self.arch {
            Arch::Identity => Ok(x),
            Arch::Conv { proj_in, enc, .. } => {
                let u = x.add_scalar(T::lit(-0.5)).pixel_unshuffle(self.spatial_factor())?;
                let lin = proj_in.forward(g, &self.store, u)?;
                let mut h = enc[0].forward(g, &self.store, u)?.silu();
                h = enc[1].forward(g, &self.store, h)?.silu();
                let z = lin.add(enc[2].forward(g, &self.store, h)?)?;
                Ok(z.scale(T::lit(1.0 / self.latent_scale)))
            }
        }
    }

    /// Decoder output before clamping.
    pub fn decode_raw_var<'g>(&self, g: &'g Graph<T>, z: Var<'g, T>) -> Result<Var<'g, T>> {
        let shape = z.shape();
        if shape.len() != 4 || shape[1] != self.latent_channels() {
            return shape_err(format!("codec expects latents with {} channels, got {shape:?}", self.latent_channels()));
        }
        match &self.arch {
            Arch::Identity => Ok(z),
            Arch::Conv { proj_out, dec, .. } => {
                let z = z.scale(T::lit(self.latent_scale));
                let lin = proj_out.forward(g, &self.store, z)?;
                let mut h = dec[0].forward(g, &self.store, z)?.silu();
                h = dec[1].forward(g, &self.store, h)?.silu();
                let u = lin.add(dec[2].forward(g, &self.store, h)?)?;
                Ok(u.pixel_shuffle(self.spatial_factor())?.add_scalar(T::lit(0.5)))
            }
        }
    }

    /// Decode and clamp into `[0, 1]`.
    pub fn decode_var<'g>(&self, g: &'g Graph<T>, z: Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(self.decode_raw_var(g, z)?.clamp(T::zero(), T::one()))
    }

    pub fn encode(&self, x: &ImageBatch<T>) -> Result<LatentBatch<T>> {
        let g = Graph::no_grad();
        Ok(self.encode_var(&g, g.input(x.clone()))?.value())
    }

    pub fn decode(&self, z: &LatentBatch<T>) -> Result<ImageBatch<T>> {
        let g = Graph::no_grad();
        Ok(self.decode_var(&g, g.input(z.clone()))?.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    #[test]
    fn identity_codec_roundtrip_and_clamp() {
        let c = Codec::<f32>::identity(3);
        let x = Tensor::from_fn(&[1, 3, 4, 4], |i| (i % 5) as f32 / 4.0);
        assert_eq!(c.encode(&x).unwrap(), x);
        let z = Tensor::from_fn(&[1, 3, 2, 2], |i| i as f32 - 4.0);
        let d = c.decode(&z).unwrap();
        assert!(d.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(d, z.clamp(0.0, 1.0));
    }

    #[test]
    fn conv_codec_shapes() {
        let c = Codec::<f32>::new(&CodecConfig { latent_channels: 4, ..Default::default() });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f32>::rand_uniform(&[2, 3, 64, 64], 0.0, 1.0, &mut rng);
        let z = c.encode(&x).unwrap();
        assert_eq!(z.shape(), &[2, 4, 16, 16]);
        let d = c.decode(&z).unwrap();
        assert_eq!(d.shape(), x.shape());
        assert!(d.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn indivisible_size_is_a_shape_error() {
        let c = Codec::<f32>::new(&CodecConfig::default());
        let x = Tensor::<f32>::zeros(&[1, 3, 18, 16]);
        assert!(matches!(c.encode(&x), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn frozen_codec_is_deterministic() {
        let mut c = Codec::<f32>::new(&CodecConfig::default());
        c.freeze();
        let x = Tensor::<f32>::from_fn(&[1, 3, 16, 16], |i| (i % 7) as f32 / 7.0);
        assert_eq!(c.encode(&x).unwrap().content_hash(), c.encode(&x).unwrap().content_hash());
    }

    #[test]
    fn complete_linear_basis_reconstructs_exactly() {
        let mut c = Codec::<f64>::new(&CodecConfig { latent_channels: 48, ..Default::default() });
        let basis: Vec<Vec<f64>> = (0..48).map(|k| (0..48).map(|j| f64::from(u8::from(j == k))).collect()).collect();
        c.set_linear_path(&[0.1; 48], &basis).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::rand_uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut rng);
        let back = c.decode(&c.encode(&x).unwrap()).unwrap();
        assert!(back.sub(&x).unwrap().max_abs() < 1e-12);
        assert_eq!(c.folded_blocks(&x).unwrap().len(), 4);
        assert!(c.set_linear_path(&[0.0; 47], &basis).is_err());
    }
}
