//! Reference metrics, reports and the step-wise spectral analysis of
//! teacher traces.

mod harness;
mod metrics;
mod report;
mod spectral;
mod stats;
pub mod viz;

pub use harness::{eval_noise, evaluate, EvalSet, Method};
pub use metrics::{psnr, semantic_consistency, ssim};
pub use report::{Aggregate, MetricsReport, MetricsRow, REPORT_SCHEMA_VERSION};
pub use spectral::{
    analyze_steps, fft2, hf_energy_ratio, log_spectrum, lowpass, AnalysisDomain, SpectrumReport,
};
pub use stats::{linear_slope, mean, spearman};
