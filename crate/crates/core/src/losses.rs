//! Student and discriminator objectives.
//!
//! Every loss exists in two forms: a value function over plain tensors, and a
//! differentiable builder in [`graph`] used by the trainers. Both share the
//! same definitions:
//!
//! * distillation: mean squared error between teacher and student latents;
//! * high-frequency perception: sum over the three Haar detail bands of the
//!   per-band mean squared error;
//! * semantic: mean over the batch of `1 - cos(v_sr, v_gt)`;
//! * generator adversarial: negative mean patch score;
//! * discriminator: mean hinge on real plus mean hinge on fake.

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::models::Embed;
use crate::scalar::Scalar;
use crate::tensor::{ImageBatch, LatentBatch, Tensor};
use crate::wavelet::dwt2;

/// Guard for the cosine denominator.
pub const COSINE_EPS: f64 = 1e-8;

/// `(lambda_hfp, lambda_sd, lambda_adv)`, all non-negative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_hfp: f64,
    pub lambda_sd: f64,
    pub lambda_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_hfp: 0.1, lambda_sd: 1.0, lambda_adv: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_hfp", self.lambda_hfp), ("lambda_sd", self.lambda_sd), ("lambda_adv", self.lambda_adv)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Unweighted student loss terms of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub distill: f64,
    pub hfp: f64,
    pub sd: f64,
    pub adv_gen: f64,
}

/// Named loss values of one training step plus the weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub distill: f64,
    pub hfp: f64,
    pub sd: f64,
    pub adv_gen: f64,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disc: Option<f64>,
}

/// Weighted total `distill + l1 hfp + l2 sd + l3 adv_gen`.
pub fn total_student_loss(parts: LossParts, w: &LossWeights) -> Result<LossReport> {
    for (name, v) in [("distill", parts.distill), ("hfp", parts.hfp), ("sd", parts.sd), ("adv_gen", parts.adv_gen)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { term: name.to_string() });
        }
    }
    let total = parts.distill + w.lambda_hfp * parts.hfp + w.lambda_sd * parts.sd + w.lambda_adv * parts.adv_gen;
    Ok(LossReport { distill: parts.distill, hfp: parts.hfp, sd: parts.sd, adv_gen: parts.adv_gen, total, disc: None })
}

pub fn distill_loss<T: Scalar>(z_tch: &LatentBatch<T>, z_stu: &LatentBatch<T>) -> Result<T> {
    Ok(z_tch.sub(z_stu)?.sum_sq() / T::lit(z_tch.len() as f64))
}

pub fn hfp_loss<T: Scalar>(z_tch: &LatentBatch<T>, z_stu: &LatentBatch<T>) -> Result<T> {
    z_tch.ensure_same_shape(z_stu, "hfp_loss")?;
    let a = dwt2(z_tch)?;
    let b = dwt2(z_stu)?;
    let mut total = T::zero();
    for (x, y) in a.details().into_iter().zip(b.details()) {
        total += distill_loss(x, y)?;
    }
    Ok(total)
}

/// Per-image cosine similarity of embeddings.
pub fn embedding_cosines<T: Scalar>(x_gt: &ImageBatch<T>, x_sr: &ImageBatch<T>, e: &dyn Embed<T>) -> Result<Vec<T>> {
    x_gt.ensure_same_shape(x_sr, "semantic_loss")?;
    let g = Graph::no_grad();
    let v_gt = e.embed_var(&g, g.input(x_gt.clone()))?;
    let v_sr = e.embed_var(&g, g.input(x_sr.clone()))?;
    Ok(v_sr.cosine_rows(v_gt, T::lit(COSINE_EPS))?.value().into_data())
}

pub fn semantic_loss<T: Scalar>(x_gt: &ImageBatch<T>, x_sr: &ImageBatch<T>, e: &dyn Embed<T>) -> Result<T> {
    let cos = embedding_cosines(x_gt, x_sr, e)?;
    let n = T::lit(cos.len() as f64);
    Ok(cos.into_iter().map(|c| T::one() - c).sum::<T>() / n)
}

pub fn gen_adv_loss<T: Scalar>(scores_fake: &Tensor<T>) -> T {
    -scores_fake.mean()
}

pub fn disc_loss<T: Scalar>(scores_real: &Tensor<T>, scores_fake: &Tensor<T>) -> T {
    let real = scores_real.map(|s| (T::one() - s).max(T::zero())).mean();
    let fake = scores_fake.map(|s| (T::one() + s).max(T::zero())).mean();
    real + fake
}

/// Differentiable versions of the losses.
pub mod graph {
    use super::*;
    use crate::autograd::Var;

    pub fn distill<'g, T: Scalar>(z_tch: Var<'g, T>, z_stu: Var<'g, T>) -> Result<Var<'g, T>> {
        z_tch.mse(z_stu)
    }

    pub fn hfp<'g, T: Scalar>(z_tch: Var<'g, T>, z_stu: Var<'g, T>) -> Result<Var<'g, T>> {
        let c = z_tch.shape()[1];
        let dt = z_tch.haar_dwt()?.slice_channels(c, 3 * c)?;
        let ds = z_stu.haar_dwt()?.slice_channels(c, 3 * c)?;
        // equal-sized bands: sum of per-band means = 3 * mean over all three
        Ok(dt.mse(ds)?.scale(T::lit(3.0)))
    }

    /// Semantic loss from embeddings `(n, d)`.
    pub fn semantic<'g, T: Scalar>(v_gt: Var<'g, T>, v_sr: Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(v_sr.cosine_rows(v_gt, T::lit(COSINE_EPS))?.neg().add_scalar(T::one()).mean())
    }

    pub fn gen_adv<'g, T: Scalar>(scores_fake: Var<'g, T>) -> Var<'g, T> {
        scores_fake.mean().neg()
    }

    pub fn disc<'g, T: Scalar>(scores_real: Var<'g, T>, scores_fake: Var<'g, T>) -> Result<Var<'g, T>> {
        let real = scores_real.neg().add_scalar(T::one()).relu().mean();
        let fake = scores_fake.add_scalar(T::one()).relu().mean();
        real.add(fake)
    }
}
