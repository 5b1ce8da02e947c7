use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{CliError, ExperimentConfig};

/// A freshly created, never reused output directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    seed: u64,
    config_hash: String,
    started: String,
    version: &'static str,
}

impl RunDir {
    /// Create `<parent>/<timestamp>-<command>`, adding a numeric suffix if
    /// that name is taken, and record the resolved config in it.
    pub fn create(parent: &Path, command: &str, cfg: &ExperimentConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(parent)?;
        let now = chrono::Local::now();
        let stem = format!("{}-{command}", now.format("%Y%m%d-%H%M%S"));
        let mut n = 0;
        let path = loop {
            let name = if n == 0 { stem.clone() } else { format!("{stem}-{n}") };
            let p = parent.join(name);
            match std::fs::create_dir(&p) {
                Ok(()) => break p,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(e.into()),
            }
        };
        std::fs::write(path.join("config.toml"), cfg.to_toml())?;
        let info = RunInfo {
            command,
            seed: cfg.seed,
            config_hash: onestep::trainer::config_hash(&cfg.to_json()),
            started: now.to_rfc3339(),
            version: env!("CARGO_PKG_VERSION"),
        };
        std::fs::write(path.join("run.json"), serde_json::to_string_pretty(&info)?)?;
        Ok(Self { path })
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Write `value` as pretty JSON into the run directory.
    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let p = self.join(name);
        std::fs::write(&p, serde_json::to_string_pretty(value)?)?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_never_share_a_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::default();
        let a = RunDir::create(tmp.path(), "eval", &cfg).unwrap();
        let b = RunDir::create(tmp.path(), "eval", &cfg).unwrap();
        assert_ne!(a.path, b.path);
        let text = std::fs::read_to_string(a.join("config.toml")).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text, &[]).unwrap(), cfg);
    }
}
