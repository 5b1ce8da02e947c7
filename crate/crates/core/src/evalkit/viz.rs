//! PNG renderings for the spectral analysis: heat maps, step strips and a
//! small line chart.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

/// Map item `i` channel 0 of each tensor to a row of tiles. `signed` uses a
/// blue-white-red scale symmetric around zero, otherwise grayscale min-max.
pub fn save_strip(tiles: &[&Tensor<f64>], i: usize, signed: bool, path: &Path) -> Result<()> {
    let Some(first) = tiles.first() else {
        return Err(Error::Config("nothing to render".into()));
    };
    let (_, _, h, w) = first.dims4()?;
    let planes: Vec<&[f64]> = tiles.iter().map(|t| &t.item_slice(i)[..h * w]).collect();
    let (lo, hi) = planes
        .iter()
        .flat_map(|p| p.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let amp = lo.abs().max(hi.abs()).max(1e-12);
    let gap = 2;
    let mut img = RgbImage::from_pixel((planes.len() * (w + gap)) as u32, h as u32, Rgb([255, 255, 255]));
    for (k, p) in planes.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let v = p[y * w + x];
                let px = if signed {
                    let s = (v / amp).clamp(-1.0, 1.0);
                    let fade = (255.0 * (1.0 - s.abs())) as u8;
                    if s >= 0.0 {
                        Rgb([255, fade, fade])
                    } else {
                        Rgb([fade, fade, 255])
                    }
                } else {
                    let g = (255.0 * (v - lo) / (hi - lo).max(1e-12)) as u8;
                    Rgb([g, g, g])
                };
                img.put_pixel((k * (w + gap) + x) as u32, y as u32, px);
            }
        }
    }
    save(&img, path)
}

/// Row of RGB images (item `i`, values clamped to `[0, 1]`).
pub fn save_image_strip(tiles: &[&Tensor<f64>], i: usize, path: &Path) -> Result<()> {
    let Some(first) = tiles.first() else {
        return Err(Error::Config("nothing to render".into()));
    };
    let (_, c, h, w) = first.dims4()?;
    let hw = h * w;
    let gap = 2;
    let mut img = RgbImage::from_pixel((tiles.len() * (w + gap)) as u32, h as u32, Rgb([255, 255, 255]));
    for (k, t) in tiles.iter().enumerate() {
        let d = t.item_slice(i);
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let px = if c >= 3 { Rgb([q(d[p]), q(d[hw + p]), q(d[2 * hw + p])]) } else { Rgb([q(d[p]); 3]) };
                img.put_pixel((k * (w + gap) + x) as u32, y as u32, px);
            }
        }
    }
    save(&img, path)
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for s in 0..=steps {
        let x = x0 + (x1 - x0) * s / steps;
        let y = y0 + (y1 - y0) * s / steps;
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Plot several series against their index on shared axes.
pub fn save_line_plot(series: &[(&[f64], [u8; 3])], path: &Path) -> Result<()> {
    let (w, h, m) = (480i64, 320i64, 24i64);
    let mut img = RgbImage::from_pixel(w as u32, h as u32, Rgb([255, 255, 255]));
    let all: Vec<f64> = series.iter().flat_map(|(s, _)| s.iter().copied()).filter(|v| v.is_finite()).collect();
    if all.is_empty() {
        return Err(Error::Config("nothing to plot".into()));
    }
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let axis = Rgb([0, 0, 0]);
    line(&mut img, (m, h - m), (w - m, h - m), axis);
    line(&mut img, (m, m), (m, h - m), axis);
    for (s, color) in series {
        let n = s.len().max(2) as i64 - 1;
        let pt = |k: usize| {
            let x = m + (w - 2 * m) * k as i64 / n;
            let y = h - m - ((s[k] - lo) / span * (h - 2 * m) as f64) as i64;
            (x, y)
        };
        for k in 1..s.len() {
            line(&mut img, pt(k - 1), pt(k), Rgb(*color));
        }
    }
    save(&img, path)
}
