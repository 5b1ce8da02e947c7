use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ImageBatch, Tensor};

fn image_err(path: &Path, e: impl ToString) -> Error {
    Error::Image { path: path.to_path_buf(), message: e.to_string() }
}

/// Read any supported image as a `(1, 3, h, w)` batch in `[0, 1]`.
pub fn load_png<T: Scalar>(path: &Path) -> Result<ImageBatch<T>> {
    let img = image::ImageReader::open(path)
        .map_err(|e| image_err(path, e))?
        .with_guessed_format()
        .map_err(|e| image_err(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let hw = h * w;
    let mut data = vec![T::zero(); 3 * hw];
    for (p, px) in img.pixels().enumerate() {
        for ch in 0..3 {
            data[ch * hw + p] = T::lit(px.0[ch] as f64 / 255.0);
        }
    }
    Tensor::new(&[1, 3, h, w], data)
}

/// Write item `i` of a batch as an 8-bit RGB PNG (values clamped).
pub fn save_png_item<T: Scalar>(x: &ImageBatch<T>, i: usize, path: &Path) -> Result<()> {
    let (_, c, h, w) = x.dims4()?;
    if c != 3 && c != 1 {
        return Err(Error::Shape(format!("cannot save a {c}-channel image")));
    }
    let d = x.item_slice(i);
    let hw = h * w;
    let q = |v: T| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
    let img = RgbImage::from_fn(w as u32, h as u32, |xx, yy| {
        let p = yy as usize * w + xx as usize;
        if c == 1 {
            image::Rgb([q(d[p]); 3])
        } else {
            image::Rgb([q(d[p]), q(d[hw + p]), q(d[2 * hw + p])])
        }
    });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn save_png<T: Scalar>(x: &ImageBatch<T>, path: &Path) -> Result<()> {
    save_png_item(x, 0, path)
}
