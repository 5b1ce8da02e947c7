use std::collections::HashMap;

use crate::tensor::Tensor;

/// Tensors keyed by a content hash plus a small discriminator (noise index,
/// codec role). Lookups count hits for the logs.
#[derive(Debug)]
pub struct TargetCache<T> {
    map: HashMap<(String, u64), Tensor<T>>,
    pub hits: u64,
    pub misses: u64,
}

impl<T> Default for TargetCache<T> {
    fn default() -> Self {
        Self { map: HashMap::new(), hits: 0, misses: 0 }
    }
}

impl<T: Clone> TargetCache<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&mut self, hash: &str, k: u64) -> Option<Tensor<T>> {
        let hit = self.map.get(&(hash.to_string(), k)).cloned();
        if hit.is_some() {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
        hit
    }

    pub fn insert(&mut self, hash: &str, k: u64, t: Tensor<T>) {
        self.map.insert((hash.to_string(), k), t);
    }
}
