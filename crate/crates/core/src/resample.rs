//! Separable image resampling with area, bilinear and bicubic kernels.
//!
//! Weights follow the usual convolution-style formulation: output sample `o`
//! sits at input coordinate `(o + 0.5) * in / out`, the kernel is stretched by
//! the downscale factor (antialiasing), taps falling outside the image are
//! dropped and the remaining weights renormalised.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Area,
    Bilinear,
    Bicubic,
}

impl Kernel {
    fn support(self) -> f64 {
        match self {
            Kernel::Area => 0.5,
            Kernel::Bilinear => 1.0,
            Kernel::Bicubic => 2.0,
        }
    }

    fn eval(self, x: f64) -> f64 {
        let x = x.abs();
        match self {
            Kernel::Area => {
                if x < 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Bilinear => (1.0 - x).max(0.0),
            Kernel::Bicubic => {
                const A: f64 = -0.5;
                if x < 1.0 {
                    ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
                } else if x < 2.0 {
                    (((x - 5.0) * x + 8.0) * x - 4.0) * A
                } else {
                    0.0
                }
            }
        }
    }
}

/// Tap lists for one axis: `taps[o]` holds `(input index, weight)` pairs.
#[derive(Clone, Debug)]
struct AxisWeights {
    in_len: usize,
    taps: Vec<Vec<(usize, f64)>>,
}

impl AxisWeights {
    fn new(in_len: usize, out_len: usize, kernel: Kernel) -> Self {
        let ratio = in_len as f64 / out_len as f64;
        let stretch = ratio.max(1.0);
        let support = kernel.support() * stretch;
        let taps = (0..out_len)
            .map(|o| {
                let center = (o as f64 + 0.5) * ratio;
                let lo = ((center - support).floor().max(0.0)) as usize;
                let hi = ((center + support).ceil() as usize).min(in_len);
                let mut t: Vec<(usize, f64)> = (lo..hi)
                    .map(|i| (i, kernel.eval((i as f64 + 0.5 - center) / stretch)))
                    .filter(|&(_, w)| w != 0.0)
                    .collect();
                let total: f64 = t.iter().map(|&(_, w)| w).sum();
                for tap in &mut t {
                    tap.1 /= total;
                }
                t
            })
            .collect();
        Self { in_len, taps }
    }

    fn out_len(&self) -> usize {
        self.taps.len()
    }
}

/// Precomputed 2-D resampling operator `(in_h, in_w) -> (out_h, out_w)`.
#[derive(Clone, Debug)]
pub struct Resampler {
    rows: AxisWeights,
    cols: AxisWeights,
}

impl Resampler {
    pub fn new(in_hw: (usize, usize), out_hw: (usize, usize), kernel: Kernel) -> Result<Self> {
        if in_hw.0 == 0 || in_hw.1 == 0 || out_hw.0 == 0 || out_hw.1 == 0 {
            return shape_err(format!("cannot resample {in_hw:?} -> {out_hw:?}"));
        }
        Ok(Self {
            rows: AxisWeights::new(in_hw.0, out_hw.0, kernel),
            cols: AxisWeights::new(in_hw.1, out_hw.1, kernel),
        })
    }

    pub fn in_hw(&self) -> (usize, usize) {
        (self.rows.in_len, self.cols.in_len)
    }

    pub fn out_hw(&self) -> (usize, usize) {
        (self.rows.out_len(), self.cols.out_len())
    }

    /// Resample every plane of an NCHW tensor.
    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if (h, w) != self.in_hw() {
            return shape_err(format!("resampler expects {:?}, got {:?}", self.in_hw(), (h, w)));
        }
        let (oh, ow) = self.out_hw();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut tmp = vec![0.0f64; h * ow];
        for plane in x.data().chunks(h * w) {
            for y in 0..h {
                let row = &plane[y * w..(y + 1) * w];
                for (ox, taps) in self.cols.taps.iter().enumerate() {
                    tmp[y * ow + ox] = taps.iter().map(|&(i, wt)| row[i].as_f64() * wt).sum();
                }
            }
            for taps in &self.rows.taps {
                for ox in 0..ow {
                    let v: f64 = taps.iter().map(|&(i, wt)| tmp[i * ow + ox] * wt).sum();
                    out.push(T::lit(v));
                }
            }
        }
        Tensor::new(&[n, c, oh, ow], out)
    }

    /// Adjoint of [`Resampler::apply`] (maps output-shaped gradients to input shape).
    pub fn apply_transpose<T: Scalar>(&self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, oh, ow) = g.dims4()?;
        if (oh, ow) != self.out_hw() {
            return shape_err(format!("resampler adjoint expects {:?}, got {:?}", self.out_hw(), (oh, ow)));
        }
        let (h, w) = self.in_hw();
        let mut out = vec![T::zero(); n * c * h * w];
        let mut tmp = vec![0.0f64; h * ow];
        for (plane, dst) in g.data().chunks(oh * ow).zip(out.chunks_mut(h * w)) {
            tmp.iter_mut().for_each(|v| *v = 0.0);
            for (oy, taps) in self.rows.taps.iter().enumerate() {
                for &(i, wt) in taps {
                    for ox in 0..ow {
                        tmp[i * ow + ox] += plane[oy * ow + ox].as_f64() * wt;
                    }
                }
            }
            for y in 0..h {
                let mut acc = vec![0.0f64; w];
                for (ox, taps) in self.cols.taps.iter().enumerate() {
                    let gv = tmp[y * ow + ox];
                    for &(i, wt) in taps {
                        acc[i] += gv * wt;
                    }
                }
                for (d, a) in dst[y * w..(y + 1) * w].iter_mut().zip(acc) {
                    *d = T::lit(a);
                }
            }
        }
        Tensor::new(&[n, c, h, w], out)
    }
}

/// Resample an NCHW batch to `(out_h, out_w)`; the identity size is returned unchanged.
pub fn resize<T: Scalar>(x: &Tensor<T>, out_hw: (usize, usize), kernel: Kernel) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.dims4()?;
    if (h, w) == out_hw {
        return Ok(x.clone());
    }
    Resampler::new((h, w), out_hw, kernel)?.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_preserved_for_every_kernel() {
        let x = Tensor::<f64>::full(&[1, 2, 8, 12], 0.37);
        for k in [Kernel::Area, Kernel::Bilinear, Kernel::Bicubic] {
            for out in [(2, 3), (8, 12), (32, 48), (5, 7)] {
                let y = resize(&x, out, k).unwrap();
                assert_eq!(y.shape(), &[1, 2, out.0, out.1]);
                assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-12), "{k:?} {out:?}");
            }
        }
    }

    #[test]
    fn area_downsample_is_block_mean() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let y = resize(&x, (1, 1), Kernel::Area).unwrap();
        assert!((y.item() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn transpose_is_adjoint() {
        let r = Resampler::new((6, 5), (3, 9), Kernel::Bicubic).unwrap();
        let x = Tensor::<f64>::from_fn(&[2, 1, 6, 5], |i| ((i * 7 % 13) as f64).sin());
        let g = Tensor::<f64>::from_fn(&[2, 1, 3, 9], |i| ((i * 3 % 5) as f64) - 2.0);
        let lhs: f64 = r.apply(&x).unwrap().data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = r.apply_transpose(&g).unwrap().data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
