//! FDG vs PSMA routing from a coronal MIP.
//!
//! Two interchangeable back ends: a logistic regression over uptake features
//! ([`fit_builtin`] / [`classify`]) and a process adapter speaking a one-line
//! text protocol ([`classify_external`]).

mod features;
mod logistic;

use std::fmt;
use std::io::BufWriter;

use serde::{Deserialize, Serialize};

pub use features::{extract_features, FeatureVector, FEATURE_DIM, FRACTION_THRESHOLDS, HOT_THRESHOLD, PERCENTILES};
pub use logistic::{classify, classify_features, fit_builtin, FitConfig, LinearClassifierModel, TrainingMeta};

use crate::adapter::ExternalModelAdapter;
use crate::error::{Error, Result};
use crate::mip::MipImage;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TracerClass {
    #[serde(rename = "FDG", alias = "fdg")]
    Fdg,
    #[serde(rename = "PSMA", alias = "psma")]
    Psma,
}

impl TracerClass {
    pub const ALL: [TracerClass; 2] = [TracerClass::Fdg, TracerClass::Psma];

    pub fn as_str(self) -> &'static str {
        match self {
            TracerClass::Fdg => "FDG",
            TracerClass::Psma => "PSMA",
        }
    }
}

impl fmt::Display for TracerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TracerClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FDG" => Ok(TracerClass::Fdg),
            "PSMA" => Ok(TracerClass::Psma),
            _ => Err(Error::InvalidParameter(format!("unknown tracer `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierSource {
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub tracer: TracerClass,
    /// Probability assigned to the predicted class, in `[0, 1]`.
    pub confidence: f64,
    /// Features the builtin model saw; empty for external results.
    pub features: Vec<f64>,
    pub source: ClassifierSource,
}

/// Provenance of the out-of-repo detector: recorded with external results,
/// never used to train anything here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub input_size: [usize; 2],
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0001,
            batch_size: 16,
            epochs: 200,
            input_size: [640, 640],
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 || self.input_size.contains(&0) {
            return Err(Error::ConfigInvalid("classifier config values must be positive".into()));
        }
        Ok(())
    }
}

/// Parses an adapter reply: one line `FDG <conf>` or `PSMA <conf>` with
/// `conf` in `[0, 1]`.
pub fn parse_adapter_reply(reply: &str) -> Result<(TracerClass, f64)> {
    let line = reply.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let bad = || Error::AdapterProtocolError(format!("expected `FDG|PSMA <confidence>`, got `{line}`"));
    let mut parts = line.split_whitespace();
    let tracer = match parts.next() {
        Some("FDG") => TracerClass::Fdg,
        Some("PSMA") => TracerClass::Psma,
        _ => return Err(bad()),
    };
    let conf: f64 = parts.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
    if parts.next().is_some() || !(0.0..=1.0).contains(&conf) {
        return Err(bad());
    }
    Ok((tracer, conf))
}

/// Writes the MIP to a temporary float-grid file, runs `<cmd> <file>`, and
/// parses the reply.
pub fn classify_external<T: Scalar>(mip: &MipImage<T>, adapter: &ExternalModelAdapter) -> Result<ClassificationResult> {
    let dir = tempfile::tempdir().map_err(|e| Error::write_io(std::env::temp_dir(), e))?;
    let path = dir.path().join("mip.pfg");
    let file = std::fs::File::create(&path).map_err(|e| Error::write_io(&path, e))?;
    mip.write_pfg(BufWriter::new(file))
        .map_err(|e| Error::write_io(&path, e))?;
    let reply = adapter.invoke(&[path.as_os_str()])?;
    let (tracer, confidence) = parse_adapter_reply(&reply)?;
    Ok(ClassificationResult {
        tracer,
        confidence,
        features: Vec::new(),
        source: ClassifierSource::External,
    })
}
