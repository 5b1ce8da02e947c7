use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::mean;
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// JSON cannot carry infinities; they are written as the strings `"inf"` and
/// `"-inf"`.
mod inf_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            f64::INFINITY => s.serialize_str("inf"),
            f64::NEG_INFINITY => s.serialize_str("-inf"),
            v => s.serialize_f64(v),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected a number, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub image: String,
    #[serde(with = "inf_f64")]
    pub psnr: f64,
    pub ssim: f64,
    pub semantic_consistency: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(with = "inf_f64")]
    pub psnr: f64,
    pub ssim: f64,
    pub semantic_consistency: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub method: String,
    pub steps: usize,
    /// Resolved run configuration, when known.
    #[serde(default)]
    pub config: serde_json::Value,
    pub rows: Vec<MetricsRow>,
    pub mean: Aggregate,
}

impl MetricsReport {
    pub fn new(method: impl Into<String>, steps: usize, rows: Vec<MetricsRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("a metrics report needs at least one row".into()));
        }
        let col = |f: fn(&MetricsRow) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
        let mean = Aggregate {
            psnr: col(|r| r.psnr),
            ssim: col(|r| r.ssim),
            semantic_consistency: col(|r| r.semantic_consistency),
            seconds: col(|r| r.seconds),
        };
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            method: method.into(),
            steps,
            config: serde_json::Value::Null,
            rows,
            mean,
        })
    }

    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }

    /// Check the structural invariants of a (possibly deserialized) report.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported report schema {}", self.schema_version)));
        }
        let fresh = Self::new(self.method.clone(), self.steps, self.rows.clone())?;
        let close = |a: f64, b: f64| a == b || (a - b).abs() <= 1e-9 * a.abs().max(1.0);
        let (m, f) = (&self.mean, &fresh.mean);
        if !(close(m.psnr, f.psnr) && close(m.ssim, f.ssim) && close(m.semantic_consistency, f.semantic_consistency))
        {
            return Err(Error::Config("report aggregates are not the mean of its rows".into()));
        }
        if self.rows.iter().any(|r| !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&r.semantic_consistency)) {
            return Err(Error::Config("semantic consistency outside [-1, 1]".into()));
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["method", "steps", "image", "psnr", "ssim", "semantic_consistency", "seconds"])
            .map_err(csv_err)?;
        let steps = self.steps.to_string();
        let mut row = |image: &str, p: f64, s: f64, c: f64, t: f64| {
            w.write_record([&self.method, &steps, image, &p.to_string(), &s.to_string(), &c.to_string(), &t.to_string()])
        };
        for r in &self.rows {
            row(&r.image, r.psnr, r.ssim, r.semantic_consistency, r.seconds).map_err(csv_err)?;
        }
        let m = &self.mean;
        row("MEAN", m.psnr, m.ssim, m.semantic_consistency, m.seconds).map_err(csv_err)?;
        w.flush()?;
        Ok(())
    }
}
