use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::degrade::{degrade_one, upsample, DegradeParams};
use super::imageio::load_png;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ImageBatch, Tensor};

/// Pair-generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// HR crop side length.
    pub patch: usize,
    pub degrade: DegradeParams,
    /// Redraw crops and degradations every epoch. When false each image
    /// always yields the same pair.
    pub fresh_per_epoch: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { patch: 64, degrade: DegradeParams::default(), fresh_per_epoch: false }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        self.degrade.validate()?;
        if self.patch == 0 || self.patch % self.degrade.scale != 0 {
            return Err(Error::Config(format!(
                "patch {} must be positive and divisible by scale {}",
                self.patch, self.degrade.scale
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PairBatch<T> {
    pub hr: ImageBatch<T>,
    pub lr: ImageBatch<T>,
    /// `lr` bicubically upsampled back to HR size.
    pub lr_up: ImageBatch<T>,
    /// Dataset indices of the items.
    pub indices: Vec<usize>,
}

impl<T: Scalar> PairBatch<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Hash over all three tensors.
    pub fn content_hash(&self) -> String {
        format!("{}{}{}", self.hr.content_hash(), self.lr.content_hash(), self.lr_up.content_hash())
    }
}

/// In-memory HR images.
#[derive(Clone, Debug)]
pub struct PairDataset<T> {
    images: Vec<Tensor<T>>,
    paths: Vec<PathBuf>,
}

const ORDER_STREAM: u64 = 1 << 63;

impl<T: Scalar> PairDataset<T> {
    /// Load every image in `dir` (sorted by name). Files that fail to decode
    /// or are smaller than `min_side` are skipped with a warning.
    pub fn open(dir: &Path, min_side: usize) -> Result<Self> {
        let entries = std::fs::read_dir(dir)
            .map_err(|e| Error::Config(format!("cannot read dataset directory {}: {e}", dir.display())))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut images = Vec::new();
        let mut paths = Vec::new();
        for path in files {
            match load_png::<T>(&path) {
                Ok(img) => {
                    let (_, _, h, w) = img.dims4()?;
                    if h < min_side || w < min_side {
                        log::warn!("skipping {}: {h}x{w} is smaller than the {min_side}px patch", path.display());
                        continue;
                    }
                    images.push(img);
                    paths.push(path);
                }
                Err(e) => log::warn!("skipping unreadable image: {e}"),
            }
        }
        Self::from_images(images, paths).map_err(|_| Error::Config(format!("no usable images in {}", dir.display())))
    }

    pub fn from_images(images: Vec<Tensor<T>>, paths: Vec<PathBuf>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Config("empty dataset".into()));
        }
        Ok(Self { images, paths })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }

    pub fn image(&self, i: usize) -> &Tensor<T> {
        &self.images[i]
    }

    pub fn batches_per_epoch(&self, batch: usize) -> usize {
        self.len().checked_div(batch).unwrap_or(0)
    }

    /// Seeded permutation of image indices for `epoch`.
    pub fn epoch_order(&self, epoch: u64, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ORDER_STREAM | epoch);
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// HR crop and its degraded LR for image `idx`; a pure function of the
    /// arguments.
    pub fn pair(&self, idx: usize, epoch: u64, cfg: &DataConfig, seed: u64) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stream = if cfg.fresh_per_epoch { (epoch << 32) | idx as u64 } else { idx as u64 };
        rng.set_stream(stream);
        let img = &self.images[idx];
        let (_, c, h, w) = img.dims4()?;
        let p = cfg.patch;
        if h < p || w < p {
            return Err(Error::Shape(format!("image {idx} is {h}x{w}, smaller than patch {p}")));
        }
        let oy = rng.random_range(0..=h - p);
        let ox = rng.random_range(0..=w - p);
        let src = img.data();
        let mut crop = Vec::with_capacity(c * p * p);
        for ch in 0..c {
            for yy in 0..p {
                let row = (ch * h + oy + yy) * w + ox;
                crop.extend_from_slice(&src[row..row + p]);
            }
        }
        let hr = Tensor::new(&[1, c, p, p], crop)?;
        let lr = degrade_one(&hr, &cfg.degrade, &mut rng)?;
        Ok((hr, lr))
    }

    /// Batches of one epoch, in order, dropping the last partial batch.
    pub fn epoch(
        &self,
        epoch: u64,
        cfg: &DataConfig,
        batch: usize,
        seed: u64,
    ) -> Result<impl Iterator<Item = Result<PairBatch<T>>> + '_> {
        let mut stream = PairStream::new(self, cfg.clone(), batch, seed)?;
        stream.seek(PairCursor { epoch, pos: 0 });
        let n = self.batches_per_epoch(batch);
        Ok((0..n).map(move |_| stream.next_batch()))
    }

    pub fn stream(&self, cfg: &DataConfig, batch: usize, seed: u64) -> Result<PairStream<'_, T>> {
        PairStream::new(self, cfg.clone(), batch, seed)
    }
}

/// Position inside an endless pair stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCursor {
    pub epoch: u64,
    /// Batch index within the epoch.
    pub pos: usize,
}

/// Endless sequence of batches over successive epochs.
pub struct PairStream<'a, T> {
    ds: &'a PairDataset<T>,
    cfg: DataConfig,
    batch: usize,
    seed: u64,
    cursor: PairCursor,
    order: Vec<usize>,
}

impl<'a, T: Scalar> PairStream<'a, T> {
    pub fn new(ds: &'a PairDataset<T>, cfg: DataConfig, batch: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if batch == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if ds.batches_per_epoch(batch) == 0 {
            return Err(Error::Config(format!("batch size {batch} exceeds dataset size {}", ds.len())));
        }
        let order = ds.epoch_order(0, seed);
        Ok(Self { ds, cfg, batch, seed, cursor: PairCursor::default(), order })
    }

    pub fn cursor(&self) -> PairCursor {
        self.cursor
    }

    pub fn seek(&mut self, cursor: PairCursor) {
        if cursor.epoch != self.cursor.epoch {
            self.order = self.ds.epoch_order(cursor.epoch, self.seed);
        }
        self.cursor = cursor;
    }

    pub fn next_batch(&mut self) -> Result<PairBatch<T>> {
        if self.cursor.pos >= self.ds.batches_per_epoch(self.batch) {
            self.seek(PairCursor { epoch: self.cursor.epoch + 1, pos: 0 });
        }
        let start = self.cursor.pos * self.batch;
        let indices = self.order[start..start + self.batch].to_vec();
        let mut hrs = Vec::with_capacity(self.batch);
        let mut lrs = Vec::with_capacity(self.batch);
        for &i in &indices {
            let (hr, lr) = self.ds.pair(i, self.cursor.epoch, &self.cfg, self.seed)?;
            hrs.push(hr);
            lrs.push(lr);
        }
        self.cursor.pos += 1;
        let lr = Tensor::cat(&lrs)?;
        let lr_up = upsample(&lr, self.cfg.degrade.scale)?;
        Ok(PairBatch { hr: Tensor::cat(&hrs)?, lr, lr_up, indices })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(n: usize) -> PairDataset<f32> {
        let imgs = (0..n).map(|i| super::super::synth_image(24, i as u64)).collect();
        PairDataset::from_images(imgs, vec![]).unwrap()
    }

    fn cfg() -> DataConfig {
        DataConfig { patch: 16, ..Default::default() }
    }

    #[test]
    fn drop_last_batch_count() {
        let ds = dataset(20);
        assert_eq!(ds.epoch(0, &cfg(), 6, 1).unwrap().count(), 3);
    }

    #[test]
    fn seeded_sequences_repeat() {
        let ds = dataset(8);
        let hashes = |seed| -> Vec<String> {
            ds.epoch(0, &cfg(), 4, seed).unwrap().map(|b| b.unwrap().content_hash()).collect()
        };
        assert_eq!(hashes(3), hashes(3));
        assert_ne!(hashes(3), hashes(4));
    }

    #[test]
    fn batch_shapes_and_ranges() {
        let ds = dataset(4);
        let b = ds.stream(&cfg(), 2, 0).unwrap().next_batch().unwrap();
        assert_eq!(b.hr.shape(), &[2, 3, 16, 16]);
        assert_eq!(b.lr.shape(), &[2, 3, 4, 4]);
        assert_eq!(b.lr_up.shape(), &[2, 3, 16, 16]);
        for t in [&b.hr, &b.lr, &b.lr_up] {
            assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn zero_batch_is_config_error() {
        let ds = dataset(4);
        assert!(matches!(ds.stream(&cfg(), 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn cursor_resume_matches() {
        let ds = dataset(6);
        let mut a = ds.stream(&cfg(), 2, 9).unwrap();
        for _ in 0..4 {
            a.next_batch().unwrap();
        }
        let cur = a.cursor();
        let next = a.next_batch().unwrap().content_hash();
        let mut b = ds.stream(&cfg(), 2, 9).unwrap();
        b.seek(cur);
        assert_eq!(b.next_batch().unwrap().content_hash(), next);
    }

    #[test]
    fn pairs_fixed_across_epochs_unless_fresh() {
        let ds = dataset(2);
        let c = cfg();
        assert_eq!(ds.pair(1, 0, &c, 5).unwrap().1, ds.pair(1, 3, &c, 5).unwrap().1);
        let fresh = DataConfig { fresh_per_epoch: true, ..cfg() };
        assert_ne!(ds.pair(1, 0, &fresh, 5).unwrap().0, ds.pair(1, 3, &fresh, 5).unwrap().0);
    }
}
