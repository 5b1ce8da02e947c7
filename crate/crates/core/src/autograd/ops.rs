use std::rc::Rc;

use super::kernels::{cmajor_to_nchw, col2im_geom, conv_out_size, im2col_into, nchw_to_cmajor, ConvGeom};
use super::Var;
use crate::error::{shape_err, Result};
use crate::resample::Resampler;
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;
use crate::wavelet::{dwt2, idwt2, WaveletSubbands};

fn same<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.clone()
}

impl<'g, T: Scalar> Var<'g, T> {
    fn check_graph(&self, other: &Var<'_, T>) {
        assert!(std::ptr::eq(self.g, other.g), "vars belong to different graphs");
    }

    fn unary(
        &self,
        value: Tensor<T>,
        bw: impl Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> Tensor<T> + 'static,
    ) -> Var<'g, T> {
        self.g.push(value, &[self.id], Box::new(move |g, inp, out, _| vec![Some(bw(g, inp[0], out))]))
    }

    // ---------------------------------------------------------------- elementwise

    pub fn add(&self, other: Var<'_, T>) -> Result<Var<'g, T>> {
        self.check_graph(&other);
        let v = self.g.value_ref(self.id).add(&self.g.value_ref(other.id))?;
        Ok(self.g.push(v, &[self.id, other.id], Box::new(|g, _, _, _| vec![Some(same(g)), Some(same(g))])))
    }

    pub fn sub(&self, other: Var<'_, T>) -> Result<Var<'g, T>> {
        self.check_graph(&other);
        let v = self.g.value_ref(self.id).sub(&self.g.value_ref(other.id))?;
        Ok(self.g.push(v, &[self.id, other.id], Box::new(|g, _, _, _| vec![Some(same(g)), Some(g.scale(-T::one()))])))
    }

    pub fn mul(&self, other: Var<'_, T>) -> Result<Var<'g, T>> {
        self.check_graph(&other);
        let v = self.g.value_ref(self.id).zip_map(&self.g.value_ref(other.id), |a, b| a * b)?;
        Ok(self.g.push(
            v,
            &[self.id, other.id],
            Box::new(|g, inp, _, needs| {
                vec![
                    needs[0].then(|| g.zip_map(inp[1], |a, b| a * b).expect("shape")),
                    needs[1].then(|| g.zip_map(inp[0], |a, b| a * b).expect("shape")),
                ]
            }),
        ))
    }

    pub fn scale(&self, c: T) -> Var<'g, T> {
        let v = self.g.value_ref(self.id).scale(c);
        self.unary(v, move |g, _, _| g.scale(c))
    }

    pub fn add_scalar(&self, c: T) -> Var<'g, T> {
        let v = self.g.value_ref(self.id).map(|x| x + c);
        self.unary(v, |g, _, _| g.clone())
    }

    pub fn neg(&self) -> Var<'g, T> {
        self.scale(-T::one())
    }

    pub fn square(&self) -> Var<'g, T> {
        let v = self.g.value_ref(self.id).map(|x| x * x);
        self.unary(v, |g, x, _| g.zip_map(x, |g, x| g * (x + x)).expect("shape"))
    }

    pub fn relu(&self) -> Var<'g, T> {
        let v = self.g.value_ref(self.id).map(|x| x.max(T::zero()));
        self.unary(v, |g, x, _| g.zip_map(x, |g, x| if x > T::zero() { g } else { T::zero() }).expect("shape"))
    }

    pub fn leaky_relu(&self, slope: T) -> Var<'g, T> {
        let v = self.g.value_ref(self.id).map(|x| if x > T::zero() { x } else { x * slope });
        self.unary(v, move |g, x, _| g.zip_map(x, |g, x| if x > T::zero() { g } else { g * slope }).expect("shape"))
    }

    pub fn silu(&self) -> Var<'g, T> {
        let v = self.g.value_ref(self.id).map(|x| x / (T::one() + (-x).exp()));
        self.unary(v, |g, x, _| {
            g.zip_map(x, |g, x| {
                let s = T::one() / (T::one() + (-x).exp());
                g * s * (T::one() + x * (T::one() - s))
            })
            .expect("shape")
        })
    }

    /// Clamp into `[lo, hi]`; the gradient passes only where the input is inside.
    pub fn clamp(&self, lo: T, hi: T) -> Var<'g, T> {
        let v = self.g.value_ref(self.id).clamp(lo, hi);
        self.unary(v, move |g, x, _| g.zip_map(x, |g, x| if x >= lo && x <= hi { g } else { T::zero() }).expect("shape"))
    }

    // ---------------------------------------------------------------- reductions

    pub fn sum(&self) -> Var<'g, T> {
        let v = Tensor::scalar(self.g.value_ref(self.id).sum());
        self.unary(v, |g, x, _| Tensor::full(x.shape(), g.item()))
    }

    pub fn mean(&self) -> Var<'g, T> {
        let x = self.g.value_ref(self.id);
        let n = T::lit(x.len() as f64);
        let v = Tensor::scalar(x.sum() / n);
        drop(x);
        self.unary(v, move |g, x, _| Tensor::full(x.shape(), g.item() / n))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&self, other: Var<'_, T>) -> Result<Var<'g, T>> {
        Ok(self.sub(other)?.square().mean())
    }

    /// `(n, c, h, w) -> (n, c)` spatial mean.
    pub fn global_avg_pool(&self) -> Result<Var<'g, T>> {
        let x = self.g.value_ref(self.id);
        let (n, c, h, w) = x.dims4()?;
        let hw = h * w;
        let data = x.data().chunks(hw).map(|p| p.iter().copied().sum::<T>() / T::lit(hw as f64)).collect();
        drop(x);
        let v = Tensor::new(&[n, c], data)?;
        Ok(self.unary(v, move |g, x, _| {
            let inv = T::one() / T::lit(hw as f64);
            let data = g.data().iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, hw)).collect();
            Tensor::new(x.shape(), data).expect("shape")
        }))
    }

    // ---------------------------------------------------------------- shape ops

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g, T>> {
        let v = self.g.value_ref(self.id).clone().reshape(shape)?;
        Ok(self.unary(v, |g, x, _| g.clone().reshape(x.shape()).expect("shape")))
    }

    /// Concatenate rank-4 tensors along the channel axis.
    pub fn concat_channels(parts: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let g0 = parts.first().expect("at least one part").g;
        let mut chans = Vec::with_capacity(parts.len());
        let (n, _, h, w) = g0.value_ref(parts[0].id).dims4()?;
        for p in parts {
            let (pn, pc, ph, pw) = g0.value_ref(p.id).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return shape_err(format!("concat_channels: {:?} vs {:?}", (pn, ph, pw), (n, h, w)));
            }
            chans.push(pc);
        }
        let ctot: usize = chans.iter().sum();
        let hw = h * w;
        let mut data = Vec::with_capacity(n * ctot * hw);
        for i in 0..n {
            for (p, &pc) in parts.iter().zip(&chans) {
                data.extend_from_slice(&g0.value_ref(p.id).data()[i * pc * hw..(i + 1) * pc * hw]);
            }
        }
        let v = Tensor::new(&[n, ctot, h, w], data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(g0.push(
            v,
            &ids,
            Box::new(move |g, _, _, needs| {
                let mut offset = 0;
                chans
                    .iter()
                    .zip(needs)
                    .map(|(&pc, &need)| {
                        let start = offset;
                        offset += pc;
                        need.then(|| {
                            let mut d = Vec::with_capacity(n * pc * hw);
                            for i in 0..n {
                                let base = (i * ctot + start) * hw;
                                d.extend_from_slice(&g.data()[base..base + pc * hw]);
                            }
                            Tensor::new(&[n, pc, h, w], d).expect("shape")
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Channels `start..start+len` of a rank-4 tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Var<'g, T>> {
        let x = self.g.value_ref(self.id);
        let (n, c, h, w) = x.dims4()?;
        if start + len > c {
            return shape_err(format!("slice {start}..{} of {c} channels", start + len));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * len * hw);
        for i in 0..n {
            let base = (i * c + start) * hw;
            data.extend_from_slice(&x.data()[base..base + len * hw]);
        }
        drop(x);
        let v = Tensor::new(&[n, len, h, w], data)?;
        Ok(self.unary(v, move |g, x, _| {
            let mut out = Tensor::zeros(x.shape());
            for i in 0..n {
                let base = (i * c + start) * hw;
                out.data_mut()[base..base + len * hw].copy_from_slice(&g.data()[i * len * hw..(i + 1) * len * hw]);
            }
            out
        }))
    }

    /// Gather `out[k] = in[perm[k]]` (a pure permutation).
    fn permute(&self, perm: Vec<usize>, out_shape: &[usize]) -> Result<Var<'g, T>> {
        let x = self.g.value_ref(self.id);
        let data = perm.iter().map(|&i| x.data()[i]).collect();
        drop(x);
        let v = Tensor::new(out_shape, data)?;
        let perm = Rc::new(perm);
        Ok(self.unary(v, move |g, x, _| {
            let mut out = Tensor::zeros(x.shape());
            for (k, &i) in perm.iter().enumerate() {
                out.data_mut()[i] = g.data()[k];
            }
            out
        }))
    }

    /// Depth-to-space: `(n, c*r*r, h, w) -> (n, c, h*r, w*r)`.
    pub fn pixel_shuffle(&self, r: usize) -> Result<Var<'g, T>> {
        let (n, cr, h, w) = self.g.value_ref(self.id).dims4()?;
        if r == 0 || cr % (r * r) != 0 {
            return shape_err(format!("pixel_shuffle({r}) of {cr} channels"));
        }
        let c = cr / (r * r);
        let (oh, ow) = (h * r, w * r);
        let mut perm = Vec::with_capacity(n * cr * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let src_c = ci * r * r + (oy % r) * r + (ox % r);
                        perm.push(((ni * cr + src_c) * h + oy / r) * w + ox / r);
                    }
                }
            }
        }
        self.permute(perm, &[n, c, oh, ow])
    }

    /// Space-to-depth: `(n, c, h*r, w*r) -> (n, c*r*r, h, w)`.
    pub fn pixel_unshuffle(&self, r: usize) -> Result<Var<'g, T>> {
        let (n, c, h, w) = self.g.value_ref(self.id).dims4()?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return shape_err(format!("pixel_unshuffle({r}) of {h}x{w}"));
        }
        let (oh, ow) = (h / r, w / r);
        let oc = c * r * r;
        let mut perm = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for co in 0..oc {
                let (ci, dy, dx) = (co / (r * r), (co / r) % r, co % r);
                for oy in 0..oh {
                    for ox in 0..ow {
                        perm.push(((ni * c + ci) * h + oy * r + dy) * w + ox * r + dx);
                    }
                }
            }
        }
        self.permute(perm, &[n, oc, oh, ow])
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&self, f: usize) -> Result<Var<'g, T>> {
        let (n, c, h, w) = self.g.value_ref(self.id).dims4()?;
        let (oh, ow) = (h * f, w * f);
        let mut perm = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    perm.push(p * h * w + (oy / f) * w + ox / f);
                }
            }
        }
        let x = self.g.value_ref(self.id);
        let data = perm.iter().map(|&i| x.data()[i]).collect();
        drop(x);
        let v = Tensor::new(&[n, c, oh, ow], data)?;
        Ok(self.unary(v, move |g, x, _| {
            let mut out = Tensor::zeros(x.shape());
            for (k, &i) in perm.iter().enumerate() {
                out.data_mut()[i] += g.data()[k];
            }
            out
        }))
    }

    /// Separable resampling with a precomputed operator.
    pub fn resample(&self, r: Rc<Resampler>) -> Result<Var<'g, T>> {
        let v = r.apply(&self.g.value_ref(self.id))?;
        Ok(self.unary(v, move |g, _, _| r.apply_transpose(g).expect("shape")))
    }

    /// Haar analysis, bands stacked along channels as `[LL | LH | HL | HH]`.
    pub fn haar_dwt(&self) -> Result<Var<'g, T>> {
        let v = dwt2(&self.g.value_ref(self.id))?.to_stacked()?;
        // orthonormal: the adjoint is the synthesis transform
        Ok(self.unary(v, |g, _, _| idwt2(&WaveletSubbands::from_stacked(g).expect("shape")).expect("shape")))
    }

    // ---------------------------------------------------------------- layers

    /// 2-D cross-correlation. `w` is `(co, ci, kh, kw)`, `bias` is `(co)`.
    pub fn conv2d(&self, w: Var<'_, T>, bias: Option<Var<'_, T>>, stride: usize, pad: usize) -> Result<Var<'g, T>> {
        self.check_graph(&w);
        let x = self.g.value_ref(self.id);
        let wt = self.g.value_ref(w.id);
        let (n, c, h, wd) = x.dims4()?;
        let (co, ci, kh, kw) = wt.dims4()?;
        if ci != c {
            return shape_err(format!("conv2d: weight expects {ci} input channels, got {c}"));
        }
        let (Some(oh), Some(ow)) = (conv_out_size(h, kh, stride, pad), conv_out_size(wd, kw, stride, pad)) else {
            return shape_err(format!("conv2d: kernel {kh}x{kw} larger than padded input {h}x{wd}"));
        };
        let geom = ConvGeom { n, c, h, w: wd, kh, kw, stride, pad, oh, ow };
        let (k, ncols) = (geom.rows(), geom.cols());
        let mut cols = vec![T::zero(); k * ncols];
        im2col_into(x.data(), &geom, &mut cols);
        let mut out = vec![T::zero(); co * ncols];
        gemm(MatRef::new(wt.data(), co, k), MatRef::new(&cols, k, ncols), T::zero(), &mut out);
        let mut parents = vec![self.id, w.id];
        if let Some(b) = bias {
            self.check_graph(&b);
            let bv = self.g.value_ref(b.id);
            if bv.len() != co {
                return shape_err(format!("conv2d: bias has {} entries, expected {co}", bv.len()));
            }
            for (row, &bb) in out.chunks_mut(ncols).zip(bv.data()) {
                row.iter_mut().for_each(|v| *v += bb);
            }
            parents.push(b.id);
        }
        drop((x, wt));
        let v = Tensor::new(&[n, co, oh, ow], cmajor_to_nchw(&out, n, co, oh * ow))?;
        let cols = Rc::new(cols);
        Ok(self.g.push(
            v,
            &parents,
            Box::new(move |g, inp, _, needs| {
                let dmat = nchw_to_cmajor(g.data(), n, co, oh * ow);
                let dx = needs[0].then(|| {
                    let mut dcols = vec![T::zero(); k * ncols];
                    gemm(MatRef::new(inp[1].data(), co, k).t(), MatRef::new(&dmat, co, ncols), T::zero(), &mut dcols);
                    Tensor::new(&[n, c, h, wd], col2im_geom(&dcols, &geom)).expect("shape")
                });
                let dw = needs[1].then(|| {
                    let mut dw = vec![T::zero(); co * k];
                    gemm(MatRef::new(&dmat, co, ncols), MatRef::new(&cols, k, ncols).t(), T::zero(), &mut dw);
                    Tensor::new(&[co, c, kh, kw], dw).expect("shape")
                });
                let mut grads = vec![dx, dw];
                if needs.len() > 2 {
                    grads.push(needs[2].then(|| {
                        Tensor::new(&[co], dmat.chunks(ncols).map(|r| r.iter().copied().sum()).collect()).expect("shape")
                    }));
                }
                grads
            }),
        ))
    }

    /// `x @ w^T + b` for `x: (n, d)`, `w: (o, d)`, `b: (o)`.
    pub fn linear(&self, w: Var<'_, T>, bias: Option<Var<'_, T>>) -> Result<Var<'g, T>> {
        self.check_graph(&w);
        let x = self.g.value_ref(self.id);
        let wt = self.g.value_ref(w.id);
        let (n, d) = x.dims2()?;
        let (o, d2) = wt.dims2()?;
        if d != d2 {
            return shape_err(format!("linear: input width {d}, weight expects {d2}"));
        }
        let mut out = vec![T::zero(); n * o];
        gemm(MatRef::new(x.data(), n, d), MatRef::new(wt.data(), o, d).t(), T::zero(), &mut out);
        let mut parents = vec![self.id, w.id];
        if let Some(b) = bias {
            let bv = self.g.value_ref(b.id);
            if bv.len() != o {
                return shape_err(format!("linear: bias has {} entries, expected {o}", bv.len()));
            }
            for row in out.chunks_mut(o) {
                row.iter_mut().zip(bv.data()).for_each(|(v, &bb)| *v += bb);
            }
            parents.push(b.id);
        }
        drop((x, wt));
        let v = Tensor::new(&[n, o], out)?;
        Ok(self.g.push(
            v,
            &parents,
            Box::new(move |g, inp, _, needs| {
                let dx = needs[0].then(|| {
                    let mut dx = vec![T::zero(); n * d];
                    gemm(MatRef::new(g.data(), n, o), MatRef::new(inp[1].data(), o, d), T::zero(), &mut dx);
                    Tensor::new(&[n, d], dx).expect("shape")
                });
                let dw = needs[1].then(|| {
                    let mut dw = vec![T::zero(); o * d];
                    gemm(MatRef::new(g.data(), n, o).t(), MatRef::new(inp[0].data(), n, d), T::zero(), &mut dw);
                    Tensor::new(&[o, d], dw).expect("shape")
                });
                let mut grads = vec![dx, dw];
                if needs.len() > 2 {
                    grads.push(needs[2].then(|| {
                        let mut db = vec![T::zero(); o];
                        for row in g.data().chunks(o) {
                            db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                        }
                        Tensor::new(&[o], db).expect("shape")
                    }));
                }
                grads
            }),
        ))
    }

    /// Add a per-sample, per-channel vector `e: (n, c)` to `x: (n, c, h, w)`.
    pub fn add_channel_vec(&self, e: Var<'_, T>) -> Result<Var<'g, T>> {
        self.check_graph(&e);
        let x = self.g.value_ref(self.id);
        let ev = self.g.value_ref(e.id);
        let (n, c, h, w) = x.dims4()?;
        if ev.shape() != [n, c] {
            return shape_err(format!("add_channel_vec: {:?} onto {:?}", ev.shape(), x.shape()));
        }
        let hw = h * w;
        let mut data = x.data().to_vec();
        for (plane, &b) in data.chunks_mut(hw).zip(ev.data()) {
            plane.iter_mut().for_each(|v| *v += b);
        }
        drop((x, ev));
        let v = Tensor::new(&[n, c, h, w], data)?;
        Ok(self.g.push(
            v,
            &[self.id, e.id],
            Box::new(move |g, _, _, needs| {
                vec![
                    needs[0].then(|| g.clone()),
                    needs[1].then(|| {
                        Tensor::new(&[n, c], g.data().chunks(hw).map(|p| p.iter().copied().sum()).collect())
                            .expect("shape")
                    }),
                ]
            }),
        ))
    }

    // ---------------------------------------------------------------- row geometry

    /// Rows of `(n, d)` divided by `max(norm, eps)`.
    pub fn l2_normalize_rows(&self, eps: T) -> Result<Var<'g, T>> {
        let x = self.g.value_ref(self.id);
        let (n, d) = x.dims2()?;
        let norms: Vec<T> = x.data().chunks(d).map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt()).collect();
        let data = x.data().chunks(d).zip(&norms).flat_map(|(r, &nr)| r.iter().map(move |&v| v / nr.max(eps))).collect();
        drop(x);
        let v = Tensor::new(&[n, d], data)?;
        Ok(self.unary(v, move |g, _, y| {
            let mut out = Vec::with_capacity(n * d);
            for ((gr, yr), &nr) in g.data().chunks(d).zip(y.data().chunks(d)).zip(&norms) {
                if nr > eps {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    out.extend(gr.iter().zip(yr).map(|(&gv, &yv)| (gv - yv * dot) / nr));
                } else {
                    out.extend(gr.iter().map(|&gv| gv / eps));
                }
            }
            Tensor::new(&[n, d], out).expect("shape")
        }))
    }

    /// Row-wise cosine similarity `<a, b> / max(|a| |b|, eps)`, shape `(n)`.
    pub fn cosine_rows(&self, other: Var<'_, T>, eps: T) -> Result<Var<'g, T>> {
        self.check_graph(&other);
        let a = self.g.value_ref(self.id);
        let b = self.g.value_ref(other.id);
        a.ensure_same_shape(&b, "cosine_rows")?;
        let (n, d) = a.dims2()?;
        let mut cos = Vec::with_capacity(n);
        for (ra, rb) in a.data().chunks(d).zip(b.data().chunks(d)) {
            let dot: T = ra.iter().zip(rb).map(|(&x, &y)| x * y).sum();
            let na = ra.iter().map(|&x| x * x).sum::<T>().sqrt();
            let nb = rb.iter().map(|&x| x * x).sum::<T>().sqrt();
            cos.push(dot / (na * nb).max(eps));
        }
        drop((a, b));
        let v = Tensor::new(&[n], cos)?;
        Ok(self.g.push(
            v,
            &[self.id, other.id],
            Box::new(move |g, inp, out, needs| {
                let (a, b) = (inp[0].data(), inp[1].data());
                let mut da = Vec::with_capacity(n * d);
                let mut db = Vec::with_capacity(n * d);
                for i in 0..n {
                    let (ra, rb) = (&a[i * d..(i + 1) * d], &b[i * d..(i + 1) * d]);
                    let na2: T = ra.iter().map(|&x| x * x).sum();
                    let nb2: T = rb.iter().map(|&x| x * x).sum();
                    let p = (na2 * nb2).sqrt();
                    let (gi, ci) = (g.data()[i], out.data()[i]);
                    if p > eps {
                        da.extend(ra.iter().zip(rb).map(|(&x, &y)| gi * (y / p - ci * x / na2)));
                        db.extend(ra.iter().zip(rb).map(|(&x, &y)| gi * (x / p - ci * y / nb2)));
                    } else {
                        da.extend(rb.iter().map(|&y| gi * y / eps));
                        db.extend(ra.iter().map(|&x| gi * x / eps));
                    }
                }
                vec![
                    needs[0].then(|| Tensor::new(&[n, d], da).expect("shape")),
                    needs[1].then(|| Tensor::new(&[n, d], db).expect("shape")),
                ]
            }),
        ))
    }
}
