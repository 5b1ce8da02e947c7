//! Reverse processes: the deterministic and stochastic step, multi-step
//! teacher sampling with optional trace capture, and one-step student
//! inference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Codec, Denoise};
use crate::scalar::Scalar;
use crate::schedule::{Schedule, StepCoeffs};
use crate::tensor::{ImageBatch, LatentBatch, Tensor};

/// `k x0_hat + m x_t + j y` for explicit coefficients.
pub fn affine_step<T: Scalar>(
    x_t: &LatentBatch<T>,
    x0_hat: &LatentBatch<T>,
    y: &LatentBatch<T>,
    c: &StepCoeffs,
) -> Result<LatentBatch<T>> {
    x_t.ensure_same_shape(x0_hat, "reverse step (x_t, x0_hat)")?;
    x_t.ensure_same_shape(y, "reverse step (x_t, y)")?;
    let (k, m, j) = (T::lit(c.k), T::lit(c.m), T::lit(c.j));
    let data = x_t
        .data()
        .iter()
        .zip(x0_hat.data())
        .zip(y.data())
        .map(|((&xt, &x0), &yy)| k * x0 + m * xt + j * yy)
        .collect();
    Tensor::new(x_t.shape(), data)
}

/// Deterministic step `x_{t-1} = k_t x0_hat + m_t x_t + j_t y`.
pub fn reverse_step_det<T: Scalar>(
    x_t: &LatentBatch<T>,
    x0_hat: &LatentBatch<T>,
    y: &LatentBatch<T>,
    t: usize,
    s: &Schedule,
) -> Result<LatentBatch<T>> {
    affine_step(x_t, x0_hat, y, &s.coeffs(t)?)
}

/// Posterior sample between `eta_prev` and `eta`:
/// mean `(eta_prev/eta) x_t + (alpha/eta) x0_hat`, variance
/// `kappa^2 (eta_prev/eta) alpha`.
pub fn posterior_step<T: Scalar>(
    x_t: &LatentBatch<T>,
    x0_hat: &LatentBatch<T>,
    noise: &LatentBatch<T>,
    eta_prev: f64,
    eta: f64,
    kappa: f64,
) -> Result<LatentBatch<T>> {
    x_t.ensure_same_shape(x0_hat, "reverse step (x_t, x0_hat)")?;
    x_t.ensure_same_shape(noise, "reverse step (x_t, noise)")?;
    let alpha = eta - eta_prev;
    if alpha == 0.0 {
        return Ok(x_t.clone());
    }
    let a = T::lit(eta_prev / eta);
    let b = T::lit(alpha / eta);
    let sd = T::lit((posterior_variance(eta_prev, eta, kappa)).sqrt());
    let data = x_t
        .data()
        .iter()
        .zip(x0_hat.data())
        .zip(noise.data())
        .map(|((&xt, &x0), &e)| a * xt + b * x0 + sd * e)
        .collect();
    Tensor::new(x_t.shape(), data)
}

pub fn posterior_variance(eta_prev: f64, eta: f64, kappa: f64) -> f64 {
    kappa * kappa * (eta_prev / eta) * (eta - eta_prev)
}

/// Stochastic step at `t` of schedule `s`.
pub fn reverse_step_stoch<T: Scalar>(
    x_t: &LatentBatch<T>,
    x0_hat: &LatentBatch<T>,
    y: &LatentBatch<T>,
    t: usize,
    noise: &LatentBatch<T>,
    s: &Schedule,
) -> Result<LatentBatch<T>> {
    s.coeffs(t)?;
    x_t.ensure_same_shape(y, "reverse step (x_t, y)")?;
    posterior_step(x_t, x0_hat, noise, s.eta(t - 1), s.eta(t), s.kappa())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    #[default]
    Det,
    /// Ancestral sampling with noise drawn from a seeded stream. No noise is
    /// added on the final step.
    Stoch { seed: u64 },
}

#[derive(Clone, Debug)]
pub struct TraceStep<T> {
    pub t: usize,
    pub x0_hat: LatentBatch<T>,
    pub x_prev: LatentBatch<T>,
    /// Decoded `x0_hat`, filled by [`StepTrace::decode_with`].
    pub decoded: Option<ImageBatch<T>>,
}

/// Per-step record of a teacher run, `t` running from `T` down to 1.
#[derive(Clone, Debug)]
pub struct StepTrace<T> {
    pub steps: Vec<TraceStep<T>>,
    pub z0: LatentBatch<T>,
}

impl<T: Scalar> StepTrace<T> {
    pub fn decode_with(&mut self, codec: &Codec<T>) -> Result<()> {
        for s in &mut self.steps {
            s.decoded = Some(codec.decode(&s.x0_hat)?);
        }
        Ok(())
    }
}

fn check_finite<T: Scalar>(x: &Tensor<T>, t: usize) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::SamplingAbort { t })
    }
}

/// Run the full `T`-step reverse chain from `z_T`.
///
/// Returns `z_0` and, when `capture` is set, the per-step trace.
pub fn teacher_sample<T: Scalar>(
    d: &dyn Denoise<T>,
    z_t: &LatentBatch<T>,
    y: &LatentBatch<T>,
    s: &Schedule,
    mode: SampleMode,
    capture: bool,
) -> Result<(LatentBatch<T>, Option<StepTrace<T>>)> {
    z_t.ensure_same_shape(y, "teacher_sample(z_T, y)")?;
    let mut rng = match mode {
        SampleMode::Stoch { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        SampleMode::Det => None,
    };
    let mut x = z_t.clone();
    let mut steps = Vec::new();
    for t in (1..=s.steps()).rev() {
        let x0_hat = d.predict(&x, y, t)?;
        check_finite(&x0_hat, t)?;
        let next = match rng.as_mut() {
            Some(rng) if t > 1 => reverse_step_stoch(&x, &x0_hat, y, t, &Tensor::randn(x.shape(), rng), s)?,
            Some(_) => reverse_step_stoch(&x, &x0_hat, y, t, &Tensor::zeros(x.shape()), s)?,
            None => reverse_step_det(&x, &x0_hat, y, t, s)?,
        };
        check_finite(&next, t)?;
        if capture {
            steps.push(TraceStep { t, x0_hat, x_prev: next.clone(), decoded: None });
        }
        x = next;
    }
    let trace = capture.then(|| StepTrace { steps, z0: x.clone() });
    Ok((x, trace))
}

/// How the distillation target is produced from `z_T`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherTarget {
    /// Full deterministic `T`-step sampling.
    #[default]
    MultiStep,
    /// A single teacher evaluation at `t = T`.
    SingleCall,
}

pub fn teacher_target<T: Scalar>(
    d: &dyn Denoise<T>,
    z_t: &LatentBatch<T>,
    y: &LatentBatch<T>,
    s: &Schedule,
    target: TeacherTarget,
) -> Result<LatentBatch<T>> {
    match target {
        TeacherTarget::MultiStep => Ok(teacher_sample(d, z_t, y, s, SampleMode::Det, false)?.0),
        TeacherTarget::SingleCall => {
            let out = d.predict(z_t, y, s.steps())?;
            check_finite(&out, s.steps())?;
            Ok(out)
        }
    }
}

/// One student evaluation at `t = T` from `z_y + kappa sqrt(eta_T) noise`.
pub fn student_latent<T: Scalar>(
    student: &dyn Denoise<T>,
    z_y: &LatentBatch<T>,
    s: &Schedule,
    noise: &LatentBatch<T>,
) -> Result<LatentBatch<T>> {
    let z_t = s.init_state(z_y, noise)?;
    student.predict(&z_t, z_y, s.steps())
}

/// Super-resolve already-upsampled low-resolution images in one step.
pub fn student_infer<T: Scalar>(
    student: &dyn Denoise<T>,
    codec: &Codec<T>,
    lr_up: &ImageBatch<T>,
    s: &Schedule,
    noise: &LatentBatch<T>,
) -> Result<ImageBatch<T>> {
    let z_y = codec.encode(lr_up)?;
    codec.decode(&student_latent(student, &z_y, s, noise)?)
}

/// Teacher counterpart of [`student_infer`] running all `T` steps.
pub fn teacher_infer<T: Scalar>(
    teacher: &dyn Denoise<T>,
    codec: &Codec<T>,
    lr_up: &ImageBatch<T>,
    s: &Schedule,
    noise: &LatentBatch<T>,
    mode: SampleMode,
) -> Result<ImageBatch<T>> {
    let z_y = codec.encode(lr_up)?;
    let z_t = s.init_state(&z_y, noise)?;
    codec.decode(&teacher_sample(teacher, &z_t, &z_y, s, mode, false)?.0)
}
