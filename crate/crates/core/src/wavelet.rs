//! Single-level orthonormal 2-D Haar transform.
//!
//! For each 2x2 block `[[a, b], [c, d]]` of every channel:
//!
//! | band | meaning                | coefficient           |
//! |------|------------------------|-----------------------|
//! | LL   | approximation          | `(a + b + c + d) / 2` |
//! | LH   | horizontal detail (H)  | `(a - b + c - d) / 2` |
//! | HL   | vertical detail (V)    | `(a + b - c - d) / 2` |
//! | HH   | diagonal detail (D)    | `(a - b - c + d) / 2` |
//!
//! The transform is orthonormal, so energy is preserved and the synthesis
//! operator is the transpose of the analysis operator.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{LatentBatch, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletSubbands<T> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
}

impl<T: Scalar> WaveletSubbands<T> {
    /// Horizontal, vertical and diagonal detail bands, in that order.
    pub fn details(&self) -> [&Tensor<T>; 3] {
        [&self.lh, &self.hl, &self.hh]
    }

    pub fn energy(&self) -> T {
        self.ll.sum_sq() + self.lh.sum_sq() + self.hl.sum_sq() + self.hh.sum_sq()
    }

    fn check(&self) -> Result<(usize, usize, usize, usize)> {
        let dims = self.ll.dims4()?;
        for b in self.details() {
            if b.shape() != self.ll.shape() {
                return shape_err(format!("sub-band shapes differ: {:?} vs {:?}", b.shape(), self.ll.shape()));
            }
        }
        Ok(dims)
    }

    /// Bands concatenated along channels as `[LL | LH | HL | HH]`.
    pub fn to_stacked(&self) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.check()?;
        let plane = c * h * w;
        let mut out = Vec::with_capacity(4 * n * plane);
        for i in 0..n {
            for band in [&self.ll, &self.lh, &self.hl, &self.hh] {
                out.extend_from_slice(&band.data()[i * plane..(i + 1) * plane]);
            }
        }
        Tensor::new(&[n, 4 * c, h, w], out)
    }

    pub fn from_stacked(x: &Tensor<T>) -> Result<Self> {
        let (n, c4, h, w) = x.dims4()?;
        if c4 % 4 != 0 {
            return shape_err(format!("stacked sub-bands need 4k channels, got {c4}"));
        }
        let c = c4 / 4;
        let plane = c * h * w;
        let mut bands: [Vec<T>; 4] = Default::default();
        for i in 0..n {
            for (b, band) in bands.iter_mut().enumerate() {
                let start = (4 * i + b) * plane;
                band.extend_from_slice(&x.data()[start..start + plane]);
            }
        }
        let [ll, lh, hl, hh] = bands;
        let shape = [n, c, h, w];
        Ok(Self {
            ll: Tensor::new(&shape, ll)?,
            lh: Tensor::new(&shape, lh)?,
            hl: Tensor::new(&shape, hl)?,
            hh: Tensor::new(&shape, hh)?,
        })
    }
}

/// Analysis transform. Spatial sides must be even; there is no padding.
pub fn dwt2<T: Scalar>(x: &LatentBatch<T>) -> Result<WaveletSubbands<T>> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return shape_err(format!("dwt2 needs even non-zero spatial sides, got {h}x{w}"));
    }
    let (h2, w2) = (h / 2, w / 2);
    let half = T::lit(0.5);
    let len = n * c * h2 * w2;
    let (mut ll, mut lh, mut hl, mut hh) =
        (Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len));
    for plane in x.data().chunks(h * w) {
        for by in 0..h2 {
            let top = &plane[2 * by * w..(2 * by + 1) * w];
            let bot = &plane[(2 * by + 1) * w..(2 * by + 2) * w];
            for bx in 0..w2 {
                let (a, b) = (top[2 * bx], top[2 * bx + 1]);
                let (cc, d) = (bot[2 * bx], bot[2 * bx + 1]);
                ll.push((a + b + cc + d) * half);
                lh.push((a - b + cc - d) * half);
                hl.push((a + b - cc - d) * half);
                hh.push((a - b - cc + d) * half);
            }
        }
    }
    let shape = [n, c, h2, w2];
    Ok(WaveletSubbands {
        ll: Tensor::new(&shape, ll)?,
        lh: Tensor::new(&shape, lh)?,
        hl: Tensor::new(&shape, hl)?,
        hh: Tensor::new(&shape, hh)?,
    })
}

/// Synthesis transform, the exact inverse of [`dwt2`].
pub fn idwt2<T: Scalar>(sb: &WaveletSubbands<T>) -> Result<LatentBatch<T>> {
    let (n, c, h2, w2) = sb.check()?;
    let (h, w) = (2 * h2, 2 * w2);
    let half = T::lit(0.5);
    let mut out = vec![T::zero(); n * c * h * w];
    let bands = [sb.ll.data(), sb.lh.data(), sb.hl.data(), sb.hh.data()];
    for (p, plane) in out.chunks_mut(h * w).enumerate() {
        for by in 0..h2 {
            for bx in 0..w2 {
                let i = p * h2 * w2 + by * w2 + bx;
                let (s, hd, vd, dd) = (bands[0][i], bands[1][i], bands[2][i], bands[3][i]);
                plane[2 * by * w + 2 * bx] = (s + hd + vd + dd) * half;
                plane[2 * by * w + 2 * bx + 1] = (s - hd + vd - dd) * half;
                plane[(2 * by + 1) * w + 2 * bx] = (s + hd - vd - dd) * half;
                plane[(2 * by + 1) * w + 2 * bx + 1] = (s - hd - vd + dd) * half;
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}
