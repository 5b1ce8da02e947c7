//! Shift schedule and per-step coefficient algebra of the residual-shifting
//! diffusion.
//!
//! Forward marginal: `x_t = x_0 + eta_t (y - x_0) + kappa sqrt(eta_t) eps`.
//! Deterministic reverse step: `x_{t-1} = k_t x0_hat + m_t x_t + j_t y` with
//! `m_t = sqrt(eta_{t-1} / eta_t)`, `j_t = eta_{t-1} - sqrt(eta_{t-1} eta_t)`,
//! `k_t = 1 - m_t - j_t`.
//!
//! Schedule math is always carried out in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{LatentBatch, Tensor};

/// Value stored for `eta_0` so that `m_1`, `j_1` stay finite.
pub const ETA_ZERO: f64 = 1e-6;
/// Largest admissible `eta_0`.
pub const ETA_ZERO_MAX: f64 = 1e-4;
/// Smallest admissible `eta_T`.
pub const ETA_T_MIN: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleForm {
    /// `sqrt(eta_t)` interpolated geometrically from `eta_min` to `sqrt(eta_max)`.
    GeometricSqrt,
    /// `eta_t` interpolated linearly from `eta_min^2` to `eta_max`.
    Linear,
}

impl std::str::FromStr for ScheduleForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric-sqrt" => Ok(Self::GeometricSqrt),
            "linear" => Ok(Self::Linear),
            other => Err(Error::Config(format!("unknown schedule form {other:?}"))),
        }
    }
}

/// The `eta_0..=eta_T` sequence together with `kappa`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule")]
pub struct Schedule {
    etas: Vec<f64>,
    kappa: f64,
    form: ScheduleForm,
}

#[derive(Deserialize)]
struct RawSchedule {
    etas: Vec<f64>,
    kappa: f64,
    form: ScheduleForm,
}

impl TryFrom<RawSchedule> for Schedule {
    type Error = Error;

    fn try_from(r: RawSchedule) -> Result<Self> {
        Schedule::from_etas(r.etas, r.kappa, r.form)
    }
}

/// Coefficients of step `t` (from `eta_{t-1}` and `eta_t`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCoeffs {
    pub k: f64,
    pub m: f64,
    pub j: f64,
    pub alpha: f64,
    /// Loss weight `alpha_t / (2 kappa^2 eta_{t-1} eta_t)`; `None` where undefined.
    pub w: Option<f64>,
}

impl StepCoeffs {
    /// Closed forms for a step between `eta_prev` and `eta` (`0 <= eta_prev <= eta`, `eta > 0`).
    pub fn between(eta_prev: f64, eta: f64, kappa: f64) -> Self {
        let m = (eta_prev / eta).sqrt();
        let j = eta_prev - (eta_prev * eta).sqrt();
        let k = 1.0 - m - j;
        let alpha = eta - eta_prev;
        let w = (eta_prev > 0.0).then(|| alpha / (2.0 * kappa * kappa * eta_prev * eta));
        Self { k, m, j, alpha, w }
    }
}

impl Schedule {
    /// Build a `steps`-step schedule.
    ///
    /// `eta_1 = eta_min^2`, `eta_T = eta_max` and `eta_0` is pinned to [`ETA_ZERO`].
    pub fn build(steps: usize, eta_min: f64, eta_max: f64, kappa: f64, form: ScheduleForm) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(eta_min > 0.0 && eta_min < eta_max && eta_max <= 1.0) {
            return Err(Error::Config(format!("need 0 < eta_min < eta_max <= 1, got eta_min={eta_min} eta_max={eta_max}")));
        }
        let eta_first = eta_min * eta_min;
        let mut etas = Vec::with_capacity(steps + 1);
        etas.push(ETA_ZERO);
        for t in 1..=steps {
            let eta = if t == steps {
                eta_max
            } else {
                let frac = (t - 1) as f64 / (steps - 1) as f64;
                match form {
                    ScheduleForm::GeometricSqrt => {
                        let ratio = eta_max.sqrt() / eta_min;
                        (eta_min * ratio.powf(frac)).powi(2)
                    }
                    ScheduleForm::Linear => eta_first + (eta_max - eta_first) * frac,
                }
            };
            etas.push(eta);
        }
        Self::from_etas(etas, kappa, form)
    }

    /// Adopt an explicit `eta_0..=eta_T` sequence, validating every invariant.
    pub fn from_etas(etas: Vec<f64>, kappa: f64, form: ScheduleForm) -> Result<Self> {
        let s = Self { etas, kappa, form };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.etas;
        if e.len() < 2 {
            return Err(Error::Config(format!("schedule needs at least 2 etas, got {}", e.len())));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(e[0] > 0.0 && e[0] <= ETA_ZERO_MAX) {
            return Err(Error::Config(format!("eta_0 must lie in (0, {ETA_ZERO_MAX}], got {}", e[0])));
        }
        let last = e[e.len() - 1];
        if !(ETA_T_MIN..=1.0).contains(&last) {
            return Err(Error::Config(format!("eta_T must lie in [{ETA_T_MIN}, 1], got {last}")));
        }
        if let Some(t) = e.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Config(format!("etas not strictly increasing at t={}", t + 1)));
        }
        Ok(())
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.etas.len() - 1
    }

    pub fn etas(&self) -> &[f64] {
        &self.etas
    }

    pub fn eta(&self, t: usize) -> f64 {
        self.etas[t]
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn form(&self) -> ScheduleForm {
        self.form
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Index { index: t, max: self.steps() });
        }
        Ok(())
    }

    /// Coefficients of step `t`, `1 <= t <= T`. `w_1` is reported as undefined
    /// because `eta_0` is a placeholder for zero.
    pub fn coeffs(&self, t: usize) -> Result<StepCoeffs> {
        self.check_t(t)?;
        let mut c = StepCoeffs::between(self.etas[t - 1], self.etas[t], self.kappa);
        if t == 1 {
            c.w = None;
        }
        Ok(c)
    }

    /// `x0 + eta_t (y - x0) + kappa sqrt(eta_t) noise`.
    pub fn forward_diffuse<T: Scalar>(
        &self,
        x0: &LatentBatch<T>,
        y: &LatentBatch<T>,
        t: usize,
        noise: &LatentBatch<T>,
    ) -> Result<LatentBatch<T>> {
        let ts = vec![t; x0.batch()];
        self.forward_diffuse_each(x0, y, &ts, noise)
    }

    /// [`Schedule::forward_diffuse`] with one timestep per batch item.
    pub fn forward_diffuse_each<T: Scalar>(
        &self,
        x0: &LatentBatch<T>,
        y: &LatentBatch<T>,
        ts: &[usize],
        noise: &LatentBatch<T>,
    ) -> Result<LatentBatch<T>> {
        x0.ensure_same_shape(y, "forward_diffuse(x0, y)")?;
        x0.ensure_same_shape(noise, "forward_diffuse(x0, noise)")?;
        if ts.len() != x0.batch() {
            return Err(Error::Shape(format!("{} timesteps for batch of {}", ts.len(), x0.batch())));
        }
        let per = x0.len() / x0.batch().max(1);
        let mut out = Vec::with_capacity(x0.len());
        for (i, &t) in ts.iter().enumerate() {
            self.check_t(t)?;
            let eta = T::lit(self.etas[t]);
            let sigma = T::lit(self.kappa * self.etas[t].sqrt());
            let range = i * per..(i + 1) * per;
            for ((&a, &b), &e) in x0.data()[range.clone()].iter().zip(&y.data()[range.clone()]).zip(&noise.data()[range]) {
                out.push(a + eta * (b - a) + sigma * e);
            }
        }
        Tensor::new(x0.shape(), out)
    }

    /// Initial reverse-process state `y + kappa sqrt(eta_T) noise`.
    pub fn init_state<T: Scalar>(&self, y: &LatentBatch<T>, noise: &LatentBatch<T>) -> Result<LatentBatch<T>> {
        let sigma = T::lit(self.kappa * self.etas[self.steps()].sqrt());
        y.zip_map(noise, |a, e| a + sigma * e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_schedule() -> Schedule {
        Schedule::build(15, 0.04, 0.999, 2.0, ScheduleForm::GeometricSqrt).unwrap()
    }

    #[test]
    fn build_fifteen_steps() {
        let s = default_schedule();
        assert_eq!(s.etas().len(), 16);
        assert_eq!(s.eta(0), ETA_ZERO);
        assert!((s.eta(1) - 0.0016).abs() < 1e-15);
        assert_eq!(s.eta(15), 0.999);
        assert!(s.etas().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn build_single_step() {
        let s = Schedule::build(1, 0.04, 0.999, 2.0, ScheduleForm::GeometricSqrt).unwrap();
        assert_eq!(s.etas(), &[ETA_ZERO, 0.999]);
        let s = Schedule::build(1, 0.2, 1.0, 1.0, ScheduleForm::Linear).unwrap();
        assert_eq!(s.etas(), &[ETA_ZERO, 1.0]);
    }

    #[test]
    fn build_rejects_bad_ranges() {
        assert!(matches!(
            Schedule::build(15, 0.5, 0.4, 2.0, ScheduleForm::GeometricSqrt),
            Err(Error::Config(_))
        ));
        assert!(Schedule::build(0, 0.04, 0.999, 2.0, ScheduleForm::Linear).is_err());
        assert!(Schedule::build(4, 0.04, 0.999, 0.0, ScheduleForm::Linear).is_err());
        // eta_min^2 must exceed the pinned eta_0
        assert!(Schedule::build(4, 0.0005, 0.999, 2.0, ScheduleForm::Linear).is_err());
        // eta_T must be close to one
        assert!(Schedule::build(4, 0.04, 0.9, 2.0, ScheduleForm::Linear).is_err());
    }

    #[test]
    fn linear_form_is_evenly_spaced() {
        let s = Schedule::build(5, 0.1, 1.0, 1.0, ScheduleForm::Linear).unwrap();
        let d: Vec<f64> = s.etas()[1..].windows(2).map(|w| w[1] - w[0]).collect();
        assert!(d.iter().all(|x| (x - d[0]).abs() < 1e-12));
    }

    #[test]
    fn coeffs_hand_values() {
        let c = StepCoeffs::between(0.25, 1.0, 2.0);
        assert!((c.m - 0.5).abs() < 1e-15);
        assert!((c.j + 0.25).abs() < 1e-15);
        assert!((c.k - 0.75).abs() < 1e-15);
        assert!((c.k + c.m + c.j - 1.0).abs() < 1e-15);
        assert!((c.alpha - 0.75).abs() < 1e-15);
        assert!((c.w.unwrap() - 0.375).abs() < 1e-15);

        let s = Schedule::from_etas(vec![ETA_ZERO, 0.25, 1.0], 2.0, ScheduleForm::Linear).unwrap();
        let c2 = s.coeffs(2).unwrap();
        assert_eq!(c2, c);
    }

    #[test]
    fn equal_etas_give_identity_step() {
        let c = StepCoeffs::between(0.3, 0.3, 2.0);
        assert_eq!((c.m, c.j, c.k), (1.0, 0.0, 0.0));
    }

    #[test]
    fn coeffs_index_and_sentinel() {
        let s = default_schedule();
        assert!(matches!(s.coeffs(0), Err(Error::Index { .. })));
        assert!(matches!(s.coeffs(16), Err(Error::Index { .. })));
        assert!(s.coeffs(1).unwrap().w.is_none());
        assert!(s.coeffs(2).unwrap().w.is_some());
        assert!(StepCoeffs::between(0.0, 0.5, 2.0).w.is_none());
    }

    #[test]
    fn forward_diffuse_hand_values() {
        let s = Schedule::from_etas(vec![ETA_ZERO, 0.25, 1.0], 2.0, ScheduleForm::Linear).unwrap();
        let x0 = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let y = Tensor::<f64>::full(&[1, 1, 2, 2], 1.0);
        let noise = Tensor::<f64>::full(&[1, 1, 2, 2], 1.0);
        let out = s.forward_diffuse(&x0, &y, 1, &noise).unwrap();
        assert!(out.data().iter().all(|&v| (v - 1.25).abs() < 1e-15));
        // eta_T = 1 and zero noise land exactly on y
        let out = s.forward_diffuse(&x0, &y, 2, &Tensor::zeros(&[1, 1, 2, 2])).unwrap();
        assert_eq!(out, y);
    }

    #[test]
    fn forward_diffuse_near_zero_eta_returns_x0() {
        let s = Schedule::from_etas(vec![ETA_ZERO, 1e-12 + ETA_ZERO, 1.0], 2.0, ScheduleForm::Linear).unwrap();
        let x0 = Tensor::<f64>::full(&[1, 1, 2, 2], 0.3);
        let y = Tensor::<f64>::full(&[1, 1, 2, 2], -0.7);
        let noise = Tensor::<f64>::full(&[1, 1, 2, 2], 0.9);
        let out = s.forward_diffuse(&x0, &y, 1, &noise).unwrap();
        assert!(out.sub(&x0).unwrap().max_abs() < 5e-3);
    }

    #[test]
    fn forward_diffuse_shape_mismatch() {
        let s = default_schedule();
        let a = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let b = Tensor::<f32>::zeros(&[1, 1, 2, 4]);
        assert!(matches!(s.forward_diffuse(&a, &b, 1, &a), Err(Error::Shape(_))));
        assert!(matches!(s.init_state(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn init_state_values() {
        let s = Schedule::from_etas(vec![ETA_ZERO, 0.5, 1.0], 2.0, ScheduleForm::Linear).unwrap();
        let y = Tensor::<f64>::zeros(&[1, 2, 2, 2]);
        let one = Tensor::<f64>::full(&[1, 2, 2, 2], 1.0);
        assert!(s.init_state(&y, &one).unwrap().data().iter().all(|&v| v == 2.0));
        assert_eq!(s.init_state(&one, &Tensor::zeros(&[1, 2, 2, 2])).unwrap(), one);
    }

    #[test]
    fn init_state_inverts_to_noise() {
        let s = default_schedule();
        let y = Tensor::<f64>::from_fn(&[1, 1, 3, 3], |i| i as f64 * 0.1);
        let noise = Tensor::<f64>::from_fn(&[1, 1, 3, 3], |i| (i as f64).cos());
        let z = s.init_state(&y, &noise).unwrap();
        let sigma = s.kappa() * s.eta(s.steps()).sqrt();
        let back = z.sub(&y).unwrap().scale(1.0 / sigma);
        assert!(back.sub(&noise).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn serde_roundtrip_is_bit_exact() {
        let s = default_schedule();
        let text = serde_json::to_string(&s).unwrap();
        let back: Schedule = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        for (a, b) in back.etas().iter().zip(s.etas()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
