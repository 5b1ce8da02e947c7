use crate::scalar::Scalar;

pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

/// Geometry of a batched 2-D convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.n * self.oh * self.ow
    }
}

/// Unfold `x` (NCHW) into a `(c*kh*kw) x (n*oh*ow)` row-major matrix.
pub fn im2col<T: Scalar>(x: &[T], geom_n: usize, c: usize, h: usize, w: usize, k: (usize, usize), stride: usize, pad: usize) -> Vec<T> {
    let (kh, kw) = k;
    let oh = conv_out_size(h, kh, stride, pad).expect("kernel larger than padded input");
    let ow = conv_out_size(w, kw, stride, pad).expect("kernel larger than padded input");
    let g = ConvGeom { n: geom_n, c, h, w, kh, kw, stride, pad, oh, ow };
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    im2col_into(x, &g, &mut cols);
    cols
}

pub(crate) fn im2col_into<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let ncols = g.cols();
    let plane = g.oh * g.ow;
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for ni in 0..g.n {
                    let src = &x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                    let dst = &mut dst_row[ni * plane..(ni + 1) * plane];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                        if iy < 0 || iy >= g.h as isize {
                            drow.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *d = if ix >= 0 && ix < g.w as isize { srow[ix as usize] } else { T::zero() };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into an NCHW buffer.
pub fn col2im<T: Scalar>(cols: &[T], n: usize, c: usize, h: usize, w: usize, k: (usize, usize), stride: usize, pad: usize) -> Vec<T> {
    let (kh, kw) = k;
    let oh = conv_out_size(h, kh, stride, pad).expect("kernel larger than padded input");
    let ow = conv_out_size(w, kw, stride, pad).expect("kernel larger than padded input");
    let g = ConvGeom { n, c, h, w, kh, kw, stride, pad, oh, ow };
    col2im_geom(cols, &g)
}

pub(crate) fn col2im_geom<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let mut x = vec![T::zero(); g.n * g.c * g.h * g.w];
    let ncols = g.cols();
    let plane = g.oh * g.ow;
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for ni in 0..g.n {
                    let dst = &mut x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                    let src = &src_row[ni * plane..(ni + 1) * plane];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for (ox, &s) in src[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                drow[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[Co, n*hw]` (channel-major) to NCHW.
pub(crate) fn cmajor_to_nchw<T: Scalar>(m: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * hw];
    for ci in 0..c {
        for ni in 0..n {
            out[(ni * c + ci) * hw..(ni * c + ci + 1) * hw]
                .copy_from_slice(&m[ci * n * hw + ni * hw..ci * n * hw + (ni + 1) * hw]);
        }
    }
    out
}

pub(crate) fn nchw_to_cmajor<T: Scalar>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * hw];
    for ni in 0..n {
        for ci in 0..c {
            out[ci * n * hw + ni * hw..ci * n * hw + (ni + 1) * hw]
                .copy_from_slice(&x[(ni * c + ci) * hw..(ni * c + ci + 1) * hw]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (n, c, h, w) = (2, 3, 5, 6);
        let x: Vec<f64> = (0..n * c * h * w).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        for &(k, s, p) in &[(3, 1, 1), (4, 2, 1), (3, 2, 0), (1, 1, 0)] {
            let cols = im2col(&x, n, c, h, w, (k, k), s, p);
            let y: Vec<f64> = (0..cols.len()).map(|i| ((i * 13 % 7) as f64) * 0.25).collect();
            let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
            let back = col2im(&y, n, c, h, w, (k, k), s, p);
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9, "k={k} s={s} p={p}");
        }
    }

    #[test]
    fn output_sizes() {
        assert_eq!(conv_out_size(16, 4, 2, 1), Some(8));
        assert_eq!(conv_out_size(16, 3, 1, 1), Some(16));
        assert_eq!(conv_out_size(2, 5, 1, 0), None);
    }
}
