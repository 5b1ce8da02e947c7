//! Checkpoints: a JSON manifest next to a raw little-endian blob.
//!
//! `name.json` lists every tensor with its shape and element offset into
//! `name.bin`, together with the run configuration and its hash, the
//! diffusion schedule, the RNG position and the iteration counter. The
//! manifest is the compatibility contract; the blob is plain packed scalars.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements into the blob.
    pub offset: usize,
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// 128-bit word position, decimal.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: crate::tensor::hex(&rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = |what: &str| Error::Checkpoint(format!("bad rng {what}"));
        if self.seed.len() != 64 {
            return Err(bad("seed"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse::<u128>().map_err(|_| bad("word position"))?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub iteration: u64,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub etas: Vec<f64>,
    pub kappa: f64,
    pub rng: Option<RngState>,
    /// Trainer bookkeeping needed to resume (data cursor, optimizer steps).
    #[serde(default)]
    pub state: serde_json::Value,
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
}

/// Metadata supplied by the caller when writing.
#[derive(Clone, Debug, Default)]
pub struct Meta {
    pub iteration: u64,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub etas: Vec<f64>,
    pub kappa: f64,
    pub rng: Option<RngState>,
    pub state: serde_json::Value,
}

fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Named tensors read from, or about to be written to, a checkpoint.
#[derive(Clone, Debug, Default)]
pub struct Checkpoint<T> {
    pub manifest: Manifest,
    tensors: BTreeMap<String, Tensor<T>>,
    order: Vec<String>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new() -> Self {
        Self { manifest: Manifest::default(), tensors: BTreeMap::new(), order: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        if self.tensors.insert(name.clone(), t).is_none() {
            self.order.push(name);
        }
    }

    /// Add every tensor of `store` as `prefix/name`.
    pub fn insert_store(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (name, t) in store.iter() {
            self.insert(format!("{prefix}/{name}"), t.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let p = format!("{prefix}/");
        self.order.iter().any(|n| n.starts_with(&p))
    }

    /// Overwrite every tensor of `store` from `prefix/name`; all must exist
    /// with matching shapes.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        for i in 0..store.len() {
            let key = format!("{prefix}/{}", store.names()[i]);
            let t = self.tensors.get(&key).ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            if t.shape() != store.get(i).shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {key}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    store.get(i).shape()
                )));
            }
            *store.get_mut(i) = t.clone();
        }
        Ok(())
    }

    /// Write `path` (manifest) and its `.bin` sibling.
    pub fn write(&mut self, path: &Path, meta: Meta) -> Result<()> {
        let blob = blob_path(path);
        let mut bytes = Vec::new();
        let mut entries = Vec::with_capacity(self.order.len());
        let mut offset = 0;
        for name in &self.order {
            let t = &self.tensors[name];
            entries.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
            offset += t.len();
            for &v in t.data() {
                v.write_le(&mut bytes);
            }
        }
        self.manifest = Manifest {
            format_version: FORMAT_VERSION,
            dtype: T::DTYPE.to_string(),
            iteration: meta.iteration,
            config: meta.config,
            config_hash: meta.config_hash,
            etas: meta.etas,
            kappa: meta.kappa,
            rng: meta.rng,
            state: meta.state,
            blob: blob.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            tensors: entries,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        // write both files aside first so an interrupted save leaves the
        // previous checkpoint intact
        let tmp = |p: &Path| p.with_extension(format!("{}.tmp", p.extension().and_then(|e| e.to_str()).unwrap_or("")));
        fs::write(tmp(&blob), &bytes)?;
        fs::write(tmp(path), serde_json::to_string_pretty(&self.manifest)?)?;
        fs::rename(tmp(&blob), &blob)?;
        fs::rename(tmp(path), path)?;
        Ok(())
    }

    /// Read a manifest and its blob. Values stored in the other precision
    /// are converted.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read manifest {}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", manifest.format_version)));
        }
        let width = match manifest.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::Checkpoint(format!("unknown dtype {other}"))),
        };
        let blob = path.with_file_name(&manifest.blob);
        let bytes = fs::read(&blob)
            .map_err(|e| Error::Checkpoint(format!("cannot read blob {}: {e}", blob.display())))?;
        let mut ck = Self::new();
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            let (start, end) = (e.offset * width, (e.offset + n) * width);
            let Some(raw) = bytes.get(start..end) else {
                return Err(Error::Checkpoint(format!("tensor {} runs past the end of the blob", e.name)));
            };
            let data = raw
                .chunks_exact(width)
                .map(|c| if width == 4 { T::lit(f32::read_le(c) as f64) } else { T::lit(f64::read_le(c)) })
                .collect();
            ck.insert(e.name.clone(), Tensor::new(&e.shape, data)?);
        }
        ck.manifest = manifest;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn roundtrip_tensors_and_rng() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let _: u64 = rng.random();
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::randn(&[2, 3], &mut rng));
        store.add("b", Tensor::randn(&[3], &mut rng));
        let mut ck = Checkpoint::new();
        ck.insert_store("m", &store);
        let meta = Meta {
            iteration: 17,
            etas: vec![1e-6, 0.01, 0.999],
            kappa: 2.0,
            rng: Some(RngState::capture(&rng)),
            ..Default::default()
        };
        ck.write(&path, meta).unwrap();

        let back = Checkpoint::<f32>::read(&path).unwrap();
        assert_eq!(back.manifest.iteration, 17);
        assert_eq!(back.manifest.etas, vec![1e-6, 0.01, 0.999]);
        let mut fresh = ParamStore::<f32>::new();
        fresh.add("w", Tensor::zeros(&[2, 3]));
        fresh.add("b", Tensor::zeros(&[3]));
        back.load_store("m", &mut fresh).unwrap();
        assert_eq!(fresh.checksum(), store.checksum());

        let mut resumed = back.manifest.rng.as_ref().unwrap().restore().unwrap();
        let a: u64 = rng.random();
        let b: u64 = resumed.random();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_and_missing_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut ck = Checkpoint::<f64>::new();
        ck.insert("m/w", Tensor::zeros(&[2]));
        ck.write(&path, Meta::default()).unwrap();
        let back = Checkpoint::<f64>::read(&path).unwrap();
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::zeros(&[3]));
        assert!(back.load_store("m", &mut s).is_err());
        let mut s = ParamStore::<f64>::new();
        s.add("v", Tensor::zeros(&[2]));
        assert!(back.load_store("m", &mut s).is_err());
    }

    #[test]
    fn reads_across_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut ck = Checkpoint::<f64>::new();
        ck.insert("x", Tensor::new(&[2], vec![0.5, -1.25]).unwrap());
        ck.write(&path, Meta::default()).unwrap();
        let back = Checkpoint::<f32>::read(&path).unwrap();
        assert_eq!(back.get("x").unwrap().data(), &[0.5f32, -1.25]);
    }
}
