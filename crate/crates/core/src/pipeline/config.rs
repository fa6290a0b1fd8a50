use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::adapter::ExternalModelAdapter;
use crate::classifier::TracerClass;
use crate::error::{Error, Result};
use crate::loss::LossParams;
use crate::metrics::EvalOptions;
use crate::mip::DEFAULT_MIP_SIZE;
use crate::preprocess::PreprocessParams;
use crate::segmenter::{DEFAULT_OVERLAP, DEFAULT_THRESHOLD};

const DEFAULT_TIMEOUT_SECS: f64 = 120.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierChoice {
    /// Builtin linear model file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// External command, split on whitespace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_mip_size")]
    pub mip_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmenterChoice {
    /// Toy network checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracerBranches {
    pub fdg: PreprocessParams,
    pub psma: PreprocessParams,
}

impl Default for TracerBranches {
    fn default() -> Self {
        Self {
            fdg: PreprocessParams::for_tracer(TracerClass::Fdg),
            psma: PreprocessParams::for_tracer(TracerClass::Psma),
        }
    }
}

impl TracerBranches {
    pub fn for_tracer(&self, tracer: TracerClass) -> &PreprocessParams {
        match tracer {
            TracerClass::Fdg => &self.fdg,
            TracerClass::Psma => &self.psma,
        }
    }
}

/// Batch run configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Concurrent studies.
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub classifier: ClassifierChoice,
    #[serde(default)]
    pub preprocess: TracerBranches,
    pub segmenter: SegmenterChoice,
    #[serde(default)]
    pub loss: LossParams,
    #[serde(default)]
    pub evaluation: EvalOptions,
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECS
}
fn default_mip_size() -> usize {
    DEFAULT_MIP_SIZE
}
fn default_overlap() -> f64 {
    DEFAULT_OVERLAP
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("pipeline-out")
}
fn default_workers() -> usize {
    1
}

/// Resolved classifier backend.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierBackend {
    Builtin(PathBuf),
    External(ExternalModelAdapter),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegmenterBackend {
    Toy(PathBuf),
    External(ExternalModelAdapter),
}

fn timeout(secs: f64, what: &str) -> Result<Duration> {
    Duration::try_from_secs_f64(secs)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| Error::ConfigInvalid(format!("{what}.timeout_secs must be positive, got {secs}")))
}

fn adapter(command: &str, secs: f64, what: &str) -> Result<ExternalModelAdapter> {
    ExternalModelAdapter::from_command_line(command, timeout(secs, what)?)
        .map_err(|_| Error::ConfigInvalid(format!("{what}.command is empty")))
}

impl ClassifierChoice {
    pub fn backend(&self) -> Result<ClassifierBackend> {
        match (&self.model, &self.command) {
            (Some(m), None) => Ok(ClassifierBackend::Builtin(m.clone())),
            (None, Some(c)) => Ok(ClassifierBackend::External(adapter(c, self.timeout_secs, "classifier")?)),
            _ => Err(Error::ConfigInvalid("classifier: set exactly one of `model` and `command`".into())),
        }
    }
}

impl SegmenterChoice {
    pub fn backend(&self) -> Result<SegmenterBackend> {
        match (&self.checkpoint, &self.command) {
            (Some(p), None) => Ok(SegmenterBackend::Toy(p.clone())),
            (None, Some(c)) => Ok(SegmenterBackend::External(adapter(c, self.timeout_secs, "segmenter")?)),
            _ => Err(Error::ConfigInvalid("segmenter: set exactly one of `checkpoint` and `command`".into())),
        }
    }
}

impl PipelineConfig {
    /// Minimal configuration with default branches and evaluation.
    pub fn new(manifest: impl Into<PathBuf>, classifier: ClassifierChoice, segmenter: SegmenterChoice) -> Self {
        Self {
            manifest: manifest.into(),
            output_dir: default_output_dir(),
            seed: 0,
            workers: default_workers(),
            classifier,
            preprocess: TracerBranches::default(),
            segmenter,
            loss: LossParams::default(),
            evaluation: EvalOptions::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.output_dir);
        if let Some(m) = self.classifier.model.as_mut() {
            fix(m);
        }
        if let Some(c) = self.segmenter.checkpoint.as_mut() {
            fix(c);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        self.classifier.backend()?;
        if self.classifier.mip_size == 0 {
            return bad("classifier.mip_size must be positive".into());
        }
        self.segmenter.backend()?;
        if !(0.0..1.0).contains(&self.segmenter.overlap) {
            return bad(format!("segmenter.overlap must lie in [0, 1), got {}", self.segmenter.overlap));
        }
        if !(self.segmenter.threshold > 0.0 && self.segmenter.threshold < 1.0) {
            return bad(format!("segmenter.threshold must lie in (0, 1), got {}", self.segmenter.threshold));
        }
        for t in TracerClass::ALL {
            let p = self.preprocess.for_tracer(t);
            if p.tracer != t {
                return bad(format!("preprocess.{} is declared for {}", t.as_str().to_lowercase(), p.tracer));
            }
            p.validate().map_err(|e| Error::ConfigInvalid(format!("preprocess.{}: {e}", t.as_str().to_lowercase())))?;
        }
        self.loss.validate().map_err(|e| Error::ConfigInvalid(format!("loss: {e}")))
    }

    /// Everything that can influence outputs; the output location and
    /// worker count are left out so reports compare equal across them.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
            obj.remove("workers");
        }
        v
    }
}
