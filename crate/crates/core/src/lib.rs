//! One-step distillation of a residual-shifting diffusion super-resolution
//! model.
//!
//! A multi-step teacher is trained in the latent space of a frozen codec,
//! then distilled into a student that maps the noisy initial state to a clean
//! latent in a single network evaluation. The student is supervised by the
//! teacher's sampled output, its Haar detail bands, embedding alignment with
//! the ground truth and a patch discriminator.
//!
//! All numerical code is generic over [`Scalar`] (`f32` and `f64`); the
//! aliases below name the common instantiations.

pub mod autograd;
pub mod dataio;
pub mod error;
pub mod evalkit;
pub mod losses;
pub mod models;
pub mod nn;
pub mod resample;
pub mod sampler;
pub mod scalar;
pub mod schedule;
pub mod tensor;
pub mod trainer;
pub mod wavelet;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use schedule::{Schedule, StepCoeffs};
pub use tensor::{ImageBatch, LatentBatch, Tensor};

/// Single-precision tensor, the training default.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor, used for gradient checks.
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = autograd::Graph<f32>;
pub type Graph64 = autograd::Graph<f64>;
pub type Subbands32 = wavelet::WaveletSubbands<f32>;
pub type Subbands64 = wavelet::WaveletSubbands<f64>;
