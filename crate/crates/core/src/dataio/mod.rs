//! Datasets, synthetic degradation, upsampling and deterministic pair
//! iteration.

mod degrade;
mod imageio;
mod pairs;
mod synth;

pub use degrade::{degrade, degrade_one, gaussian_blur, upsample, DegradeParams};
pub use imageio::{load_png, save_png, save_png_item};
pub use pairs::{PairBatch, PairCursor, PairDataset, PairStream, DataConfig};
pub use synth::{synth_image, write_synthetic_corpus};
