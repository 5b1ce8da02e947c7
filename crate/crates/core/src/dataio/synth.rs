//! Procedural high-resolution images: smooth gradients overlaid with
//! antialiased shapes, gratings and soft checkerboards, so that the corpus has
//! both low-frequency structure and fine detail without aliasing. Texture
//! periods stay above the Nyquist limit of a x4 downsampled copy, so the
//! detail is recoverable from the low-resolution input in principle.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::imageio::save_png;
use crate::error::Result;
use crate::tensor::Tensor;

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// One `(1, 3, size, size)` image, a pure function of `seed`.
pub fn synth_image(size: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let (c0, c1) = (color(&mut rng), color(&mut rng));
    let angle: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut px = vec![[0.0f64; 3]; size * size];
    for yy in 0..size {
        for xx in 0..size {
            let u = ((xx as f64 / s - 0.5) * ca + (yy as f64 / s - 0.5) * sa + 0.5).clamp(0.0, 1.0);
            for ch in 0..3 {
                px[yy * size + xx][ch] = c0[ch] * (1.0 - u) + c1[ch] * u;
            }
        }
    }

    let shapes = rng.random_range(3..7);
    for _ in 0..shapes {
        let kind = rng.random_range(0..4);
        let col = color(&mut rng);
        let cx = rng.random::<f64>() * s;
        let cy = rng.random::<f64>() * s;
        let r = s * (0.1 + 0.25 * rng.random::<f64>());
        let period = 10.0 + 14.0 * rng.random::<f64>();
        let theta: f64 = rng.random::<f64>() * std::f64::consts::PI;
        let cell = 6.0 + 6.0 * rng.random::<f64>();
        for yy in 0..size {
            for xx in 0..size {
                let (dx, dy) = (xx as f64 + 0.5 - cx, yy as f64 + 0.5 - cy);
                // signed distance to the shape boundary, negative inside
                let dist = match kind {
                    0 => (dx.abs() - r).max(dy.abs() - 0.6 * r),
                    1 => (dx * dx + dy * dy).sqrt() - r,
                    _ => (dx.abs() - r).max(dy.abs() - r),
                };
                // one-pixel antialiased coverage
                let cover = (0.5 - dist).clamp(0.0, 1.0);
                if cover == 0.0 {
                    continue;
                }
                let a = cover
                    * match kind {
                        2 => {
                            let phase = (dx * theta.cos() + dy * theta.sin()) / period;
                            0.5 + 0.5 * (std::f64::consts::TAU * phase).sin()
                        }
                        3 => {
                            let w = (std::f64::consts::PI * dx / cell).sin() * (std::f64::consts::PI * dy / cell).sin();
                            (0.5 + 2.0 * w).clamp(0.0, 1.0)
                        }
                        _ => 1.0,
                    };
                let p = &mut px[yy * size + xx];
                for ch in 0..3 {
                    p[ch] = p[ch] * (1.0 - a) + col[ch] * a;
                }
            }
        }
    }
    let hw = size * size;
    let mut data = vec![0.0f32; 3 * hw];
    for (i, p) in px.iter().enumerate() {
        for ch in 0..3 {
            data[ch * hw + i] = p[ch].clamp(0.0, 1.0) as f32;
        }
    }
    Tensor::new(&[1, 3, size, size], data).expect("shape")
}

/// Write `count` images named `hr_00000.png`, ... into `dir`.
pub fn write_synthetic_corpus(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("hr_{i:05}.png"));
            save_png(&synth_image(size, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)), &path)?;
            Ok(path)
        })
        .collect()
}
