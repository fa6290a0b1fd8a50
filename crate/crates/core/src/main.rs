use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use tracerseg::classifier::{classify, classify_external, extract_features, fit_builtin, FitConfig, LinearClassifierModel, TracerClass};
use tracerseg::fusion::{fuse_labels, validate_fused, FusionPolicy, Source};
use tracerseg::metrics::{evaluate_study, Connectivity, EvalMode, EvalOptions};
use tracerseg::mip::{classifier_input, DEFAULT_MIP_SIZE};
use tracerseg::pipeline::phantom::{write_suite, SuiteSpec, MANIFEST_FILE};
use tracerseg::pipeline::{run_pipeline, PipelineConfig, StudyManifest, TracerBranches};
use tracerseg::preprocess::{preprocess_study, resample_labels};
use tracerseg::segmenter::{
    binarize, load_checkpoint, predict_sliding_window, save_checkpoint, train, SegmenterConfig, TrainConfig, TrainingCase,
    DEFAULT_OVERLAP, DEFAULT_THRESHOLD,
};
use tracerseg::volume::{read_labels, read_volume, write_volume, LabelVolume};
use tracerseg::{Error, Real};

#[derive(Parser)]
#[command(name = "tracerseg", version, about = "FDG/PSMA PET/CT lesion segmentation workflow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML file; flags given on the command line override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Predict the tracer of a PET volume from its coronal MIP.
    Classify {
        #[arg(long)]
        pet: PathBuf,
        /// Builtin model file.
        #[arg(long, conflicts_with = "command")]
        model: Option<PathBuf>,
        /// External classifier command.
        #[arg(long)]
        command: Option<String>,
        #[arg(long)]
        timeout_secs: Option<f64>,
        #[arg(long)]
        mip_size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the builtin classifier on manifest studies with known tracers.
    FitClassifier {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        mip_size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Resample and normalize one PET/CT pair with a tracer branch.
    Preprocess {
        #[arg(long)]
        pet: PathBuf,
        #[arg(long)]
        ct: PathBuf,
        #[arg(long)]
        tracer: TracerClass,
        #[command(flatten)]
        common: Common,
    },
    /// Merge bone, organ and lesion labels into one volume.
    FuseLabels {
        #[arg(long)]
        bones: PathBuf,
        #[arg(long)]
        organs: PathBuf,
        #[arg(long)]
        lesions: PathBuf,
        /// Comma-separated sources, highest priority first.
        #[arg(long, value_delimiter = ',')]
        precedence: Option<Vec<Source>>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the toy segmenter on manifest studies with lesion masks.
    TrainToy {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Sliding-window segmentation of one study with a toy checkpoint.
    Segment {
        #[arg(long)]
        pet: PathBuf,
        #[arg(long)]
        ct: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tracer: TracerClass,
        #[arg(long)]
        overlap: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a prediction against ground truth; prints one JSON record.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        mode: Option<EvalMode>,
        #[arg(long, value_parser = parse_connectivity)]
        connectivity: Option<Connectivity>,
        #[arg(long, default_value = "study")]
        id: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run the batch workflow described by a configuration file.
    Pipeline {
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic phantom suite and its manifest.
    Phantom {
        #[arg(long, default_value_t = 4)]
        fdg: usize,
        #[arg(long, default_value_t = 4)]
        psma: usize,
        #[arg(long, default_value = "phantom")]
        prefix: String,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_connectivity(s: &str) -> Result<Connectivity, String> {
    let v: u8 = s.parse().map_err(|_| format!("invalid connectivity {s:?}"))?;
    Connectivity::try_from(v).map_err(|e| e.to_string())
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Data(Error),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = std::panic::catch_unwind(|| run(cli)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(Failure::Internal(msg))
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            // invalid configuration counts as a usage error
            ExitCode::from(if matches!(e, Error::ConfigInvalid(_)) { 1 } else { 2 })
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(3)
        }
    }
}

/// Optional config-file section, looked up by key.
struct FileConfig(Option<toml::Table>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else { return Ok(Self(None)) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::ConfigInvalid(format!("{}: {}", path.display(), e.message())))?;
        Ok(Self(Some(table)))
    }

    fn section<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, Error> {
        match self.0.as_ref().and_then(|t| t.get(key)) {
            None => Ok(None),
            Some(v) => v
                .clone()
                .try_into()
                .map(Some)
                .map_err(|e: toml::de::Error| Error::ConfigInvalid(format!("[{key}]: {}", e.message()))),
        }
    }

    fn seed(&self) -> Result<Option<u64>, Error> {
        self.section("seed")
    }
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string(v).expect("serializable"));
}

fn require_out(common: &Common) -> Result<&Path, Error> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::ConfigInvalid("--out is required for this command".into()))
}

/// `fused.nii.gz` -> `fused_schema.txt` in the same directory.
fn schema_sidecar(out: &Path) -> PathBuf {
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(".gz").unwrap_or(&name);
    let stem = stem.strip_suffix(".nii").unwrap_or(stem);
    out.with_file_name(format!("{stem}_schema.txt"))
}

fn branches(file: &FileConfig) -> Result<TracerBranches, Error> {
    Ok(file.section("preprocess")?.unwrap_or_default())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Classify {
            pet,
            model,
            command,
            timeout_secs,
            mip_size,
            common,
        } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let mut choice = file.section::<tracerseg::pipeline::ClassifierChoice>("classifier")?;
            if model.is_some() || command.is_some() {
                let base = choice.clone().unwrap_or(tracerseg::pipeline::ClassifierChoice {
                    model: None,
                    command: None,
                    timeout_secs: 120.0,
                    mip_size: DEFAULT_MIP_SIZE,
                });
                choice = Some(tracerseg::pipeline::ClassifierChoice { model, command, ..base });
            }
            let mut choice = choice.ok_or_else(|| Error::ConfigInvalid("give --model or --command".into()))?;
            if let Some(t) = timeout_secs {
                choice.timeout_secs = t;
            }
            if let Some(m) = mip_size {
                choice.mip_size = m;
            }
            let vol = read_volume::<Real>(&pet)?.reorient_to_canonical();
            let mip = classifier_input(&vol, &pet.display().to_string(), choice.mip_size)?;
            let result = match choice.backend()? {
                tracerseg::pipeline::ClassifierBackend::Builtin(p) => classify(&mip, &LinearClassifierModel::load(p)?)?,
                tracerseg::pipeline::ClassifierBackend::External(a) => classify_external(&mip, &a)?,
            };
            if let Some(out) = &common.out {
                mip.save_png(out)?;
            }
            print_json(&result);
        }
        Command::FitClassifier {
            manifest,
            epochs,
            learning_rate,
            mip_size,
            common,
        } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let mut fit: FitConfig = file.section("fit")?.unwrap_or_default();
            fit.epochs = epochs.unwrap_or(fit.epochs);
            fit.learning_rate = learning_rate.unwrap_or(fit.learning_rate);
            fit.seed = common.seed.or(file.seed()?).unwrap_or(fit.seed);
            let size = mip_size.unwrap_or(DEFAULT_MIP_SIZE);
            let m = StudyManifest::load(&manifest)?;
            let mut samples = Vec::with_capacity(m.studies.len());
            for s in &m.studies {
                let tracer = s
                    .tracer
                    .ok_or_else(|| Error::ManifestUnreadable(format!("study {} has no tracer", s.id)))?;
                let vol = read_volume::<Real>(&s.pet)?.reorient_to_canonical();
                samples.push((extract_features(&classifier_input(&vol, &s.id, size)?)?, tracer));
            }
            let model = fit_builtin(&samples, &fit)?;
            let correct = samples
                .iter()
                .filter(|(f, t)| tracerseg::classifier::classify_features(f, &model).map(|r| r.tracer == *t).unwrap_or(false))
                .count();
            model.save(require_out(&common)?)?;
            print_json(&serde_json::json!({
                "studies": samples.len(),
                "training_accuracy": correct as f64 / samples.len() as f64,
                "final_loss": model.meta.final_loss,
            }));
        }
        Command::Preprocess { pet, ct, tracer, common } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let params = branches(&file)?.for_tracer(tracer).clone();
            let out = require_out(&common)?;
            std::fs::create_dir_all(out).map_err(|e| Error::IoFailure {
                path: out.to_path_buf(),
                source: e,
            })?;
            let p = read_volume::<Real>(&pet)?.reorient_to_canonical();
            let c = read_volume::<Real>(&ct)?.reorient_to_canonical();
            let pp = preprocess_study(&p, &c, &params)?;
            write_volume(&pp.pet, out.join("pet_pp.nii.gz"))?;
            write_volume(&pp.ct, out.join("ct_pp.nii.gz"))?;
            print_json(&serde_json::json!({
                "tracer": tracer,
                "dims": pp.pet.dims(),
                "pet_stats": pp.pet_stats,
                "ct_stats": pp.ct_stats,
                "ct_clip": pp.ct_clip,
            }));
        }
        Command::FuseLabels {
            bones,
            organs,
            lesions,
            precedence,
            common,
        } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let precedence = match precedence {
                Some(p) => Some(p),
                None => file.section::<Vec<Source>>("precedence")?,
            };
            let mut policy = FusionPolicy::default();
            if let Some(p) = precedence {
                policy = policy.with_precedence(p)?;
            }
            let load = |p: &Path| read_labels(p).map(|l| l.reorient_to_canonical());
            let fused = fuse_labels(&load(&bones)?, &load(&organs)?, &load(&lesions)?, &policy)?;
            let out = require_out(&common)?;
            write_volume(&fused, out)?;
            let schema_path = schema_sidecar(out);
            std::fs::write(&schema_path, policy.schema.to_text()).map_err(|source| Error::IoFailure { path: schema_path.clone(), source })?;
            print_json(&validate_fused(&fused, &policy.schema));
        }
        Command::TrainToy {
            manifest,
            epochs,
            learning_rate,
            batch_size,
            common,
        } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let mut tc: TrainConfig = file.section("train")?.unwrap_or_default();
            if let Some(loss) = file.section("loss")? {
                tc.loss = loss;
            }
            tc.epochs = epochs.unwrap_or(tc.epochs);
            tc.learning_rate = learning_rate.unwrap_or(tc.learning_rate);
            tc.batch_size = batch_size.unwrap_or(tc.batch_size);
            let seed = common.seed.or(file.seed()?);
            tc.seed = seed.unwrap_or(tc.seed);
            let mut net: SegmenterConfig = file.section("network")?.unwrap_or_default();
            net.seed = seed.unwrap_or(net.seed);
            let br = branches(&file)?;
            let out = require_out(&common)?;

            let m = StudyManifest::load(&manifest)?;
            let mut cases = Vec::with_capacity(m.studies.len());
            for s in &m.studies {
                let missing = |what: &str| Error::ManifestUnreadable(format!("study {} has no {what}", s.id));
                let tracer = s.tracer.ok_or_else(|| missing("tracer"))?;
                let lesions = s.lesions.as_ref().ok_or_else(|| missing("lesion mask"))?;
                let pet = read_volume::<Real>(&s.pet)?.reorient_to_canonical();
                let ct = read_volume::<Real>(&s.ct)?.reorient_to_canonical();
                let pp = preprocess_study(&pet, &ct, br.for_tracer(tracer))?;
                let gt = read_labels(lesions)?.reorient_to_canonical();
                let gt = LabelVolume::mask_from_fn(gt.geometry().clone(), |i| gt.labels()[i] != 0)?;
                let mask = resample_labels(&gt, pp.pet.geometry())?;
                cases.push(TrainingCase {
                    pet: pp.pet,
                    ct: pp.ct,
                    mask,
                });
            }
            let (model, report) = train(&net, &cases, &tc)?;
            save_checkpoint(&model, Some(&tc), out)?;
            for (epoch, loss) in report.losses.iter().enumerate() {
                print_json(&serde_json::json!({ "epoch": epoch, "loss": loss }));
            }
        }
        Command::Segment {
            pet,
            ct,
            checkpoint,
            tracer,
            overlap,
            threshold,
            common,
        } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let seg: Option<toml::Table> = file.section("segmenter")?;
            let get = |k: &str| seg.as_ref().and_then(|t| t.get(k)).and_then(|v| v.as_float());
            let overlap = overlap.or(get("overlap")).unwrap_or(DEFAULT_OVERLAP);
            let threshold = threshold.or(get("threshold")).unwrap_or(DEFAULT_THRESHOLD);
            let params = branches(&file)?.for_tracer(tracer).clone();
            let (net, _) = load_checkpoint::<Real>(&checkpoint)?;
            let p = read_volume::<Real>(&pet)?.reorient_to_canonical();
            let c = read_volume::<Real>(&ct)?.reorient_to_canonical();
            let pp = preprocess_study(&p, &c, &params)?;
            let prob = predict_sliding_window(&net, &pp.pet, &pp.ct, overlap)?;
            let mask = resample_labels(&binarize(&prob, threshold)?, p.geometry())?;
            write_volume(&mask, require_out(&common)?)?;
            print_json(&serde_json::json!({
                "voxels": mask.foreground_count(),
                "volume_ml": mask.foreground_count() as f64 * mask.voxel_volume_ml(),
            }));
        }
        Command::Evaluate {
            pred,
            gt,
            mode,
            connectivity,
            id,
            common,
        } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let mut opts: EvalOptions = file.section("evaluation")?.unwrap_or_default();
            opts.mode = mode.unwrap_or(opts.mode);
            opts.connectivity = connectivity.unwrap_or(opts.connectivity);
            let load = |p: &Path| -> Result<LabelVolume, Error> {
                let l = read_labels(p)?.reorient_to_canonical();
                LabelVolume::mask_from_fn(l.geometry().clone(), |i| l.labels()[i] != 0)
            };
            let report = evaluate_study(&id, &load(&pred)?, &load(&gt)?, &opts)?;
            print_json(&report);
        }
        Command::Pipeline { workers, common } => {
            let path = common
                .config
                .as_deref()
                .ok_or_else(|| Error::ConfigInvalid("pipeline needs --config".into()))?;
            let mut cfg = PipelineConfig::load(path)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(o) = common.out {
                cfg.output_dir = o;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.validate()?;
            let report = run_pipeline(&cfg)?;
            print!("{}", report.to_text());
        }
        Command::Phantom { fdg, psma, prefix, common } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let suite: SuiteSpec = file.section("phantom")?.unwrap_or_default();
            let seed = common.seed.or(file.seed()?).unwrap_or(0);
            let specs = suite.suite(fdg, psma, seed)?;
            let out = require_out(&common)?;
            let m = write_suite(&specs, out, &prefix)?;
            println!("{} studies, manifest {}", m.studies.len(), out.join(MANIFEST_FILE).display());
        }
    }
    Ok(())
}
