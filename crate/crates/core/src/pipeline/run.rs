use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ClassifierBackend, PipelineConfig, SegmenterBackend};
use super::manifest::{StudyEntry, StudyManifest};
use crate::adapter::ExternalModelAdapter;
use crate::classifier::{classify, classify_external, ClassificationResult, ClassifierSource, LinearClassifierModel, TracerClass};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_study, EvalMode};
use crate::mip::classifier_input;
use crate::preprocess::{preprocess_study, resample_labels};
use crate::reduce::pairwise_sum_by;
use crate::segmenter::{binarize, load_checkpoint, predict_sliding_window, ToyUNet};
use crate::volume::{read_labels, read_volume, write_volume, ImageVolume, LabelVolume};
use crate::Real;

pub const REPORT_FILE: &str = "report.jsonl";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const PREDICTIONS_DIR: &str = "predictions";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub status: StudyStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tracer: Option<TracerClass>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier_source: Option<ClassifierSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub known_tracer: Option<TracerClass>,
    /// Relative to the output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_ml: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fpvol_ml: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fnvol_ml: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<EvalMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StudyRecord {
    fn failed(id: &str, known: Option<TracerClass>, err: &Error) -> Self {
        Self {
            study_id: id.to_string(),
            status: StudyStatus::Failed,
            tracer: None,
            confidence: None,
            classifier_source: None,
            known_tracer: known,
            prediction: None,
            predicted_ml: None,
            dice: None,
            fpvol_ml: None,
            fnvol_ml: None,
            mode: None,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub studies: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub evaluated: usize,
    pub mean_dice: Option<f64>,
    pub mean_fpvol_ml: Option<f64>,
    pub mean_fnvol_ml: Option<f64>,
    /// Studies with a known tracer that were classified.
    pub routing_checked: usize,
    pub routing_correct: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: serde_json::Value,
    /// Sorted by study id.
    pub records: Vec<StudyRecord>,
    pub summary: RunSummary,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportLine<'a> {
    Config { config: &'a serde_json::Value },
    Study(&'a StudyRecord),
    Summary(&'a RunSummary),
}

impl RunReport {
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![ReportLine::Config { config: &self.config }];
        lines.extend(self.records.iter().map(ReportLine::Study));
        lines.push(ReportLine::Summary(&self.summary));
        let mut out = String::new();
        for l in &lines {
            out.push_str(&serde_json::to_string(l).expect("report serializes"));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(out, "studies: {} ok, {} failed, {} evaluated", s.succeeded, s.failed, s.evaluated);
        let _ = writeln!(out, "routing: {}/{} correct where tracer known", s.routing_correct, s.routing_checked);
        let _ = writeln!(
            out,
            "mean dice {}  mean fpvol {} mL  mean fnvol {} mL",
            opt(s.mean_dice),
            opt(s.mean_fpvol_ml),
            opt(s.mean_fnvol_ml)
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<24} {:<6} {:>6} {:>8} {:>8} {:>10} {:>10}", "study", "status", "tracer", "conf", "dice", "fpvol_ml", "fnvol_ml");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{:<24} {:<6} {:>6} {:>8} {:>8} {:>10} {:>10}{}",
                r.study_id,
                if r.status == StudyStatus::Ok { "ok" } else { "failed" },
                r.tracer.map_or("-", |t| t.as_str()),
                opt(r.confidence),
                opt(r.dice),
                opt(r.fpvol_ml),
                opt(r.fnvol_ml),
                r.error.as_ref().map_or(String::new(), |e| format!("  {e}")),
            );
        }
        out
    }

    /// Writes `report.jsonl` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, body) in [(REPORT_FILE, self.to_jsonl()), (SUMMARY_FILE, self.to_text())] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::write_io(&path, e))?;
        }
        Ok(())
    }
}

enum Classifier {
    Builtin(LinearClassifierModel<Real>),
    External(ExternalModelAdapter),
}

enum Segmenter {
    Toy(ToyUNet<Real>),
    External(ExternalModelAdapter),
}

struct Context<'a> {
    config: &'a PipelineConfig,
    classifier: Classifier,
    segmenter: Segmenter,
    predictions: PathBuf,
}

fn load_models(config: &PipelineConfig) -> Result<(Classifier, Segmenter)> {
    let classifier = match config.classifier.backend()? {
        ClassifierBackend::Builtin(p) => Classifier::Builtin(LinearClassifierModel::load(&p)?),
        ClassifierBackend::External(a) => Classifier::External(a),
    };
    let segmenter = match config.segmenter.backend()? {
        SegmenterBackend::Toy(p) => Segmenter::Toy(load_checkpoint::<Real>(&p)?.0),
        SegmenterBackend::External(a) => Segmenter::External(a),
    };
    Ok((classifier, segmenter))
}

/// Runs every study of the manifest and writes predictions and reports into
/// the configured output directory. Per-study failures are recorded, not
/// propagated.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    config.validate()?;
    let manifest = StudyManifest::load(&config.manifest)?;
    let (classifier, segmenter) = load_models(config)?;
    let predictions = config.output_dir.join(PREDICTIONS_DIR);
    std::fs::create_dir_all(&predictions).map_err(|e| Error::write_io(&predictions, e))?;
    let ctx = Context {
        config,
        classifier,
        segmenter,
        predictions,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("worker pool: {e}")))?;
    let mut records: Vec<StudyRecord> = pool.install(|| {
        manifest
            .studies
            .par_iter()
            .map(|s| run_study(&ctx, s).unwrap_or_else(|e| StudyRecord::failed(&s.id, s.tracer, &e)))
            .collect()
    });
    records.sort_by(|a, b| a.study_id.cmp(&b.study_id));

    let report = RunReport {
        config: config.echo(),
        summary: summarize(&records),
        records,
    };
    report.write(&config.output_dir)?;
    Ok(report)
}

fn summarize(records: &[StudyRecord]) -> RunSummary {
    let evaluated: Vec<&StudyRecord> = records.iter().filter(|r| r.dice.is_some()).collect();
    let n = evaluated.len();
    let mean = |f: fn(&StudyRecord) -> Option<f64>| {
        (n > 0).then(|| pairwise_sum_by(n, |i| f(evaluated[i]).unwrap_or(0.0)) / n as f64)
    };
    let checked: Vec<&StudyRecord> = records.iter().filter(|r| r.tracer.is_some() && r.known_tracer.is_some()).collect();
    let succeeded = records.iter().filter(|r| r.status == StudyStatus::Ok).count();
    RunSummary {
        studies: records.len(),
        succeeded,
        failed: records.len() - succeeded,
        evaluated: n,
        mean_dice: mean(|r| r.dice),
        mean_fpvol_ml: mean(|r| r.fpvol_ml),
        mean_fnvol_ml: mean(|r| r.fnvol_ml),
        routing_checked: checked.len(),
        routing_correct: checked.iter().filter(|r| r.tracer == r.known_tracer).count(),
    }
}

/// Nonzero labels become 1.
fn to_mask(lv: &LabelVolume) -> Result<LabelVolume> {
    LabelVolume::mask_from_fn(lv.geometry().clone(), |i| lv.labels()[i] != 0)
}

fn run_study(ctx: &Context, study: &StudyEntry) -> Result<StudyRecord> {
    let cfg = ctx.config;
    let pet = read_volume::<Real>(&study.pet)?.reorient_to_canonical();
    let ct = read_volume::<Real>(&study.ct)?.reorient_to_canonical();

    let mip = classifier_input(&pet, &study.id, cfg.classifier.mip_size)?;
    let cls: ClassificationResult = match &ctx.classifier {
        Classifier::Builtin(m) => classify(&mip, m)?,
        Classifier::External(a) => classify_external(&mip, a)?,
    };
    let params = cfg.preprocess.for_tracer(cls.tracer);
    let pp = preprocess_study(&pet, &ct, params)?;

    let mask = match &ctx.segmenter {
        Segmenter::Toy(net) => {
            let prob = predict_sliding_window(net, &pp.pet, &pp.ct, cfg.segmenter.overlap)?;
            binarize(&prob, cfg.segmenter.threshold)?
        }
        Segmenter::External(a) => segment_external(a, &study.id, cls.tracer, &pp.pet, &pp.ct)?,
    };
    let native = resample_labels(&mask, pet.geometry())?;
    let file = format!("{}_pred.nii.gz", study.id);
    write_volume(&native, ctx.predictions.join(&file))?;

    let eval = match &study.lesions {
        Some(path) => {
            let gt = to_mask(&read_labels(path)?.reorient_to_canonical())?;
            Some(evaluate_study(&study.id, &native, &gt, &cfg.evaluation)?)
        }
        None => None,
    };
    Ok(StudyRecord {
        study_id: study.id.clone(),
        status: StudyStatus::Ok,
        tracer: Some(cls.tracer),
        confidence: Some(cls.confidence),
        classifier_source: Some(cls.source),
        known_tracer: study.tracer,
        prediction: Some(format!("{PREDICTIONS_DIR}/{file}")),
        predicted_ml: Some(native.foreground_count() as f64 * native.voxel_volume_ml()),
        dice: eval.as_ref().map(|e| e.dice),
        fpvol_ml: eval.as_ref().map(|e| e.fpvol_ml),
        fnvol_ml: eval.as_ref().map(|e| e.fnvol_ml),
        mode: eval.as_ref().map(|e| e.mode),
        error: None,
    })
}

/// Runs `<cmd> <study-id> <tracer> <pet.nii.gz> <ct.nii.gz> <out.nii.gz>`
/// on the preprocessed channels and reads back a label volume on the same
/// grid; nonzero labels are foreground.
fn segment_external(
    adapter: &ExternalModelAdapter,
    id: &str,
    tracer: TracerClass,
    pet: &ImageVolume<Real>,
    ct: &ImageVolume<Real>,
) -> Result<LabelVolume> {
    let dir = tempfile::tempdir().map_err(|e| Error::write_io(std::env::temp_dir(), e))?;
    let (pet_p, ct_p, out_p) = (dir.path().join("pet.nii.gz"), dir.path().join("ct.nii.gz"), dir.path().join("pred.nii.gz"));
    write_volume(pet, &pet_p)?;
    write_volume(ct, &ct_p)?;
    adapter.invoke(&[id.as_ref(), tracer.as_str().as_ref(), pet_p.as_os_str(), ct_p.as_os_str(), out_p.as_os_str()])?;
    if !out_p.exists() {
        return Err(Error::AdapterProtocolError(format!("segmenter wrote no output to {}", out_p.display())));
    }
    let lv = read_labels(&out_p)?.reorient_to_canonical();
    if !lv.geometry().same_grid(pet.geometry()) {
        return Err(Error::AdapterProtocolError("segmenter output grid differs from its input grid".into()));
    }
    to_mask(&lv)
}
