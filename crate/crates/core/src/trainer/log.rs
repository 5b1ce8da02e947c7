use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Append-only JSON-lines log.
pub struct TrainLog {
    out: Option<BufWriter<File>>,
}

impl TrainLog {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { out: Some(BufWriter::new(f)) })
    }

    /// A log that discards everything.
    pub fn sink() -> Self {
        Self { out: None }
    }

    pub fn write<R: Serialize>(&mut self, record: &R) -> Result<()> {
        if let Some(out) = self.out.as_mut() {
            serde_json::to_writer(&mut *out, record)?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
        Ok(())
    }
}
