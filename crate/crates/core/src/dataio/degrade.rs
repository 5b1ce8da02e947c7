use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, ImageFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::resample::{resize, Kernel};
use crate::scalar::Scalar;
use crate::tensor::{ImageBatch, Tensor};

/// Single-stage degradation: blur, downsample, noise, optional JPEG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeParams {
    pub scale: usize,
    /// Gaussian blur sigma range in HR pixels; 0 disables.
    pub blur_sigma: [f64; 2],
    /// Additive noise sigma range on the `[0, 1]` value scale.
    pub noise_sigma: [f64; 2],
    /// JPEG quality range, `None` to disable compression.
    pub jpeg_quality: Option<[u8; 2]>,
    pub kernels: Vec<Kernel>,
}

impl Default for DegradeParams {
    fn default() -> Self {
        Self {
            scale: 4,
            blur_sigma: [0.2, 1.2],
            noise_sigma: [0.0, 0.02],
            jpeg_quality: Some([70, 95]),
            kernels: vec![Kernel::Bicubic, Kernel::Bilinear, Kernel::Area],
        }
    }
}

impl DegradeParams {
    /// Parameters that leave images untouched.
    pub fn identity() -> Self {
        Self { scale: 1, blur_sigma: [0.0; 2], noise_sigma: [0.0; 2], jpeg_quality: None, kernels: vec![Kernel::Bicubic] }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scale == 0 {
            return bad("degradation scale must be >= 1".into());
        }
        for (name, [lo, hi]) in [("blur_sigma", self.blur_sigma), ("noise_sigma", self.noise_sigma)] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return bad(format!("{name} range [{lo}, {hi}] must satisfy 0 <= lo <= hi"));
            }
        }
        if let Some([lo, hi]) = self.jpeg_quality {
            if !(1 <= lo && lo <= hi && hi <= 100) {
                return bad(format!("jpeg_quality range [{lo}, {hi}] must lie in 1..=100 with lo <= hi"));
            }
        }
        if self.kernels.is_empty() {
            return bad("at least one resampling kernel is required".into());
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    let u: f64 = rng.random();
    if lo == hi {
        lo
    } else {
        lo + (hi - lo) * u
    }
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let taps: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / s).collect()
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable Gaussian blur with reflected borders. `sigma <= 0` is a no-op.
pub fn gaussian_blur<T: Scalar>(x: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if sigma <= 0.0 {
        return Ok(x.clone());
    }
    let taps: Vec<T> = gaussian_taps(sigma).into_iter().map(T::lit).collect();
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.data().chunks(h * w).zip(tmp.chunks_mut(h * w)) {
        for yy in 0..h {
            for xx in 0..w {
                dst[yy * w + xx] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, &tk)| tk * src[yy * w + reflect(xx as isize + k as isize - r, w)])
                    .sum();
            }
        }
    }
    for (src, dst) in tmp.chunks(h * w).zip(out.chunks_mut(h * w)) {
        for yy in 0..h {
            for xx in 0..w {
                dst[yy * w + xx] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, &tk)| tk * src[reflect(yy as isize + k as isize - r, h) * w + xx])
                    .sum();
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

fn jpeg_roundtrip<T: Scalar>(x: &Tensor<T>, quality: u8) -> Result<Tensor<T>> {
    let (_, c, h, w) = x.dims4()?;
    if c != 3 {
        return shape_err(format!("JPEG compression needs 3 channels, got {c}"));
    }
    let hw = h * w;
    let d = x.data();
    let mut rgb = Vec::with_capacity(3 * hw);
    for p in 0..hw {
        for ch in 0..3 {
            rgb.push((d[ch * hw + p].as_f64().clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode(&rgb, w as u32, h as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::Image { path: "<memory>".into(), message: e.to_string() })?;
    let img = image::load(Cursor::new(buf), ImageFormat::Jpeg)
        .map_err(|e| Error::Image { path: "<memory>".into(), message: e.to_string() })?
        .to_rgb8();
    let raw = img.as_raw();
    let mut out = vec![T::zero(); 3 * hw];
    for p in 0..hw {
        for ch in 0..3 {
            out[ch * hw + p] = T::lit(raw[3 * p + ch] as f64 / 255.0);
        }
    }
    Tensor::new(x.shape(), out)
}

/// Degrade one `(1, c, h, w)` image with parameters drawn from `rng`.
///
/// Every draw is taken whether or not the stage ends up active, so the
/// stream position after a call depends only on the parameters' shape.
pub fn degrade_one<T: Scalar>(hr: &Tensor<T>, p: &DegradeParams, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    let (_, _, h, w) = hr.dims4()?;
    if h % p.scale != 0 || w % p.scale != 0 {
        return shape_err(format!("image {h}x{w} not divisible by scale {}", p.scale));
    }
    let blur = draw(rng, p.blur_sigma);
    let kernel = p.kernels[rng.random_range(0..p.kernels.len())];
    let noise_sigma = draw(rng, p.noise_sigma);
    let quality = p.jpeg_quality.map(|[lo, hi]| rng.random_range(lo..=hi));
    let noise_seed: u64 = rng.random();

    let mut x = gaussian_blur(hr, blur)?;
    if p.scale > 1 {
        x = resize(&x, (h / p.scale, w / p.scale), kernel)?;
    }
    if noise_sigma > 0.0 {
        let mut nrng = ChaCha8Rng::seed_from_u64(noise_seed);
        let noise = Tensor::<T>::randn(x.shape(), &mut nrng);
        x.axpy(T::lit(noise_sigma), &noise)?;
    }
    x = x.clamp(T::zero(), T::one());
    if let Some(q) = quality {
        x = jpeg_roundtrip(&x, q)?;
    }
    Ok(x)
}

/// Degrade every image of a batch; item `i` uses stream `i` of `seed`.
pub fn degrade<T: Scalar>(hr: &ImageBatch<T>, p: &DegradeParams, seed: u64) -> Result<ImageBatch<T>> {
    p.validate()?;
    hr.dims4()?;
    let items = (0..hr.batch())
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            degrade_one(&hr.item_at(i), p, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::cat(&items)
}

/// Bicubic upsample by an integer factor, clipped to `[0, 1]`.
pub fn upsample<T: Scalar>(lr: &ImageBatch<T>, scale: usize) -> Result<ImageBatch<T>> {
    if scale == 0 {
        return Err(Error::Config("upsample scale must be >= 1".into()));
    }
    let (_, _, h, w) = lr.dims4()?;
    if scale == 1 {
        return Ok(lr.clone());
    }
    Ok(resize(lr, (h * scale, w * scale), Kernel::Bicubic)?.clamp(T::zero(), T::one()))
}
