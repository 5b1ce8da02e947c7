//! Parameter storage, basic layers and the Adam optimizer.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{hex, Tensor};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Named, ordered parameter tensors of one model.
///
/// Every store has a process-unique id so gradients from a graph that binds
/// several models can be routed to the right owner. Cloning a store yields a
/// new identity with equal values.
#[derive(Debug)]
pub struct ParamStore<T> {
    id: u64,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    frozen: bool,
}

impl<T: Scalar> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self { id: next_id(), names: self.names.clone(), tensors: self.tensors.clone(), frozen: self.frozen }
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { id: next_id(), names: Vec::new(), tensors: Vec::new(), frozen: false }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn get(&self, index: usize) -> &Tensor<T> {
        &self.tensors[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.tensors[index]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// SHA-256 over names, shapes and values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            h.update(t.content_hash().as_bytes());
        }
        hex(&h.finalize())
    }

    /// Replace every tensor with the same-named tensor from `other`.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let j = other
                .index_of(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            other.tensors[j].ensure_same_shape(&self.tensors[i], name)?;
            self.tensors[i] = other.tensors[j].clone();
        }
        Ok(())
    }
}

fn uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

/// 2-D convolution layer with `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation.
#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: usize,
    bias: Option<usize>,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((cin * kernel * kernel) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(&[cout, cin, kernel, kernel], bound, rng));
        let bias = Some(store.add(format!("{name}.bias"), uniform(&[cout], bound, rng)));
        Self { weight, bias, stride, pad }
    }

    /// "Same" convolution (`k` odd, stride 1).
    pub fn same<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, cin, cout, kernel, 1, kernel / 2, rng)
    }

    /// Zero the weights and bias, so the layer initially outputs zero.
    pub fn zero_init<T: Scalar>(self, store: &mut ParamStore<T>) -> Self {
        for idx in std::iter::once(self.weight).chain(self.bias) {
            let t = store.get_mut(idx);
            *t = Tensor::zeros(t.shape());
        }
        self
    }

    /// Multiply the initial weights and bias by `s`.
    pub fn scale_init<T: Scalar>(self, store: &mut ParamStore<T>, s: f64) -> Self {
        for idx in std::iter::once(self.weight).chain(self.bias) {
            let t = store.get_mut(idx);
            *t = t.scale(T::lit(s));
        }
        self
    }

    /// Store indices of the weight and bias.
    pub fn params(&self) -> (usize, Option<usize>) {
        (self.weight, self.bias)
    }

    pub fn forward<'g, T: Scalar>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        x.conv2d(w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    weight: usize,
    bias: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, din: usize, dout: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (din as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(&[dout, din], bound, rng));
        let bias = store.add(format!("{name}.bias"), uniform(&[dout], bound, rng));
        Self { weight, bias }
    }

    pub fn forward<'g, T: Scalar>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.linear(g.param(store, self.weight), Some(g.param(store, self.bias)))
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros: Vec<Tensor<T>> = store.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update; parameters with no gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        assert_eq!(grads.len(), store.len(), "one gradient slot per parameter");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let step_size = T::lit(self.lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(self.eps);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite { term: format!("gradient of {}", store.names[i]) });
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = &mut store.tensors[i];
            for (((pv, mv), vv), &gv) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                *pv -= step_size * *mv / ((*vv * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moment tensors, for checkpointing.
    pub fn state(&self) -> (u64, &[Tensor<T>], &[Tensor<T>]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::Checkpoint("optimizer state size mismatch".into()));
        }
        for (a, b) in m.iter().chain(&v).zip(self.m.iter().chain(&self.v)) {
            a.ensure_same_shape(b, "optimizer state")?;
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clone_gets_new_identity_and_equal_checksum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::<f32>::new();
        Conv2d::same(&mut s, "c", 2, 3, 3, &mut rng);
        let c = s.clone();
        assert_ne!(s.id(), c.id());
        assert_eq!(s.checksum(), c.checksum());
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut s = ParamStore::<f64>::new();
        let p = s.add("p", Tensor::new(&[2], vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(&s, 0.1);
        for _ in 0..500 {
            let g = Graph::new();
            let x = g.param(&s, p);
            let loss = x.square().sum();
            let grads = g.backward(loss).for_store(&s);
            opt.step(&mut s, &grads).unwrap();
        }
        assert!(s.get(p).max_abs() < 1e-2);
    }

    #[test]
    fn frozen_store_receives_no_gradient() {
        let mut s = ParamStore::<f64>::new();
        let p = s.add("p", Tensor::full(&[2], 1.0));
        s.set_frozen(true);
        let g = Graph::new();
        let x = g.variable(Tensor::full(&[2], 2.0));
        let loss = x.mul(g.param(&s, p)).unwrap().sum();
        let grads = g.backward(loss);
        assert!(grads.for_store(&s).iter().all(Option::is_none));
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 1.0]);
    }
}
