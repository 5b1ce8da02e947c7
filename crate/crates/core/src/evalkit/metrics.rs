use crate::error::{shape_err, Result};
use crate::losses::embedding_cosines;
use crate::models::Embed;
use crate::scalar::Scalar;
use crate::tensor::ImageBatch;

/// Peak signal-to-noise ratio in dB per image, peak 1. Identical images give
/// `f64::INFINITY`.
pub fn psnr<T: Scalar>(x: &ImageBatch<T>, reference: &ImageBatch<T>) -> Result<Vec<f64>> {
    x.ensure_same_shape(reference, "psnr")?;
    x.dims4()?;
    Ok((0..x.batch())
        .map(|i| {
            let (a, b) = (x.item_slice(i), reference.item_slice(i));
            let mse = a.iter().zip(b).map(|(&p, &q)| (p.as_f64() - q.as_f64()).powi(2)).sum::<f64>() / a.len() as f64;
            if mse == 0.0 {
                f64::INFINITY
            } else {
                -10.0 * mse.log10()
            }
        })
        .collect())
}

const SSIM_TAPS: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gauss_window() -> [f64; SSIM_TAPS] {
    let mut w = [0.0; SSIM_TAPS];
    let c = (SSIM_TAPS / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = gauss_window();
    let (c1, c2) = ((K1 * 1.0).powi(2), (K2 * 1.0).powi(2));
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(&|x, _| x * x), h, w, &k);
    let bb = filter_valid(&prod(&|_, y| y * y), h, w, &k);
    let ab = filter_valid(&prod(&|x, y| x * y), h, w, &k);
    let n = mu_a.len();
    (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum::<f64>()
        / n as f64
}

/// Single-scale SSIM per image with an 11-tap Gaussian window (sigma 1.5),
/// averaged over the valid region and channels.
pub fn ssim<T: Scalar>(x: &ImageBatch<T>, reference: &ImageBatch<T>) -> Result<Vec<f64>> {
    x.ensure_same_shape(reference, "ssim")?;
    let (n, c, h, w) = x.dims4()?;
    if h < SSIM_TAPS || w < SSIM_TAPS {
        return shape_err(format!("ssim needs images of at least {SSIM_TAPS}x{SSIM_TAPS}, got {h}x{w}"));
    }
    let hw = h * w;
    Ok((0..n)
        .map(|i| {
            let (a, b) = (x.item_slice(i), reference.item_slice(i));
            (0..c)
                .map(|ch| {
                    let pa: Vec<f64> = a[ch * hw..(ch + 1) * hw].iter().map(|v| v.as_f64()).collect();
                    let pb: Vec<f64> = b[ch * hw..(ch + 1) * hw].iter().map(|v| v.as_f64()).collect();
                    ssim_plane(&pa, &pb, h, w)
                })
                .sum::<f64>()
                / c as f64
        })
        .collect())
}

/// Embedding cosine between super-resolved and ground-truth images.
pub fn semantic_consistency<T: Scalar>(
    x_sr: &ImageBatch<T>,
    x_gt: &ImageBatch<T>,
    e: &dyn Embed<T>,
) -> Result<Vec<f64>> {
    Ok(embedding_cosines(x_gt, x_sr, e)?.into_iter().map(|c| c.as_f64()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psnr_values() {
        let x = Tensor::<f64>::full(&[1, 3, 8, 8], 0.5);
        assert_eq!(psnr(&x, &x).unwrap(), vec![f64::INFINITY]);
        let y = x.map(|v| v + 0.1);
        assert!((psnr(&y, &x).unwrap()[0] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::<f32>::rand_uniform(&[3, 3, 8, 8], 0.0, 1.0, &mut rng);
        let b = Tensor::<f32>::rand_uniform(&[3, 3, 8, 8], 0.0, 1.0, &mut rng);
        let got = psnr(&a, &b).unwrap();
        for (i, g) in got.iter().enumerate() {
            let mut s = 0.0;
            for (p, q) in a.item_slice(i).iter().zip(b.item_slice(i)) {
                s += (*p as f64 - *q as f64).powi(2);
            }
            let want = 10.0 * (1.0 / (s / 192.0)).log10();
            assert!((g - want).abs() < 1e-6);
        }
    }

    #[test]
    fn ssim_identity_constant_and_inversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::<f64>::rand_uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut rng);
        assert!((ssim(&a, &a).unwrap()[0] - 1.0).abs() < 1e-12);
        let c = Tensor::<f64>::full(&[1, 1, 12, 12], 0.3);
        assert!((ssim(&c, &c).unwrap()[0] - 1.0).abs() < 1e-12);
        let pattern = Tensor::<f64>::from_fn(&[1, 1, 16, 16], |i| if (i / 4) % 2 == 0 { 0.9 } else { 0.1 });
        let inv = pattern.map(|v| 1.0 - v);
        assert!(ssim(&pattern, &inv).unwrap()[0] < 0.5);
    }

    #[test]
    fn ssim_rejects_small() {
        let a = Tensor::<f64>::zeros(&[1, 1, 8, 8]);
        assert!(ssim(&a, &a).is_err());
    }
}
