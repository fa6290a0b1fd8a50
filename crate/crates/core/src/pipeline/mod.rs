//! Batch workflow: classify each study from its PET MIP, route it to the
//! tracer's preprocessing branch, segment, write predictions, evaluate.

mod config;
mod manifest;
pub mod phantom;
mod run;

pub use config::{ClassifierBackend, ClassifierChoice, PipelineConfig, SegmenterBackend, SegmenterChoice, TracerBranches};
pub use manifest::{StudyEntry, StudyManifest};
pub use run::{run_pipeline, RunReport, RunSummary, StudyRecord, StudyStatus, PREDICTIONS_DIR, REPORT_FILE, SUMMARY_FILE};
