//! Command-line pipeline: synthetic cohort generation, dataset assembly,
//! training, evaluation and report rendering, driven by one JSON run config.
//!
//! Every subcommand writes a `run.json` record (effective config, its hash,
//! seed, versions) beside its outputs, and failures exit non-zero with a
//! single machine-parseable JSON line on stderr.
//!
//! Run-config defaulting table (any field may be omitted; unknown keys are
//! errors; `--seed` and `--work-dir` override the file):
//!
//! | key                          | default            |
//! |------------------------------|--------------------|
//! | `input_dir`                  | `<work_dir>/cohort`|
//! | `work_dir`                   | `work`             |
//! | `seed` (authoritative; overrides section seeds) | `0` |
//! | `task.mode`                  | `estimation`       |
//! | `task.horizon_s`             | none (monitoring only) |
//! | `task.vitals_window_s`       | `1800`             |
//! | `task.estimation_lab_window_s` | `3600`           |
//! | `task.min_pos` / `task.min_neg` | `10` / `10`     |
//! | `task.split_ratio`           | `[18, 1, 1]`       |
//! | `synth.*`                    | 50 patients × 4 records, 2 labels, strength 0.8, missing 0.1, 1 event/h |
//! | `encoder.model_dim`          | `32`               |
//! | `encoder.n_blocks`           | `4`                |
//! | `encoder.state_size`         | `8`                |
//! | `encoder.dropout`            | `0.0`              |
//! | `fusion.fusion_proj_dim`     | `16` (`null` = unprojected) |
//! | `fusion.prelu_init_slope`    | `0.25`             |
//! | `trainer.*`                  | lr/wd `0.001`, 20 epochs, batch 32, betas (0.9, 0.999), eps 1e-8 |
//! | `eval.n_bootstrap`           | `1000`             |
//! | `eval.ci_level`              | `0.95`             |

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use ecglab_core::cohort::{
    assemble_dataset, read_dataset, write_dataset, AbnormalityLabel, Dataset, Fold,
    ManifestRecord, RecordMeta, TaskConfig, TaskMode, FEATURE_DIM,
};
use ecglab_core::ingest::{
    parse_context, parse_events, parse_thresholds, parse_vitals, read_waveform, resample_ecg,
    EcgRecord, IngestError,
};
use ecglab_core::metrics::{evaluate, BootstrapConfig, MetricsReport};
use ecglab_core::model::{manifest_hash, Checkpoint, Model, ModelConfig};
use ecglab_core::report::{
    estimation_csv, estimation_markdown, monitoring_csv, monitoring_markdown,
};
use ecglab_core::synth::{generate, SynthConfig};
use ecglab_core::train::{predict_records, train, TrainerConfig};
use ecglab_core::util::sha256_hex;

/// Model working rate; the encoder's 250-sample segments span 2.5 s here.
const WORKING_HZ: u32 = 100;

#[derive(Parser, Debug)]
#[command(name = "ecglab", version, about = "Lab-abnormality prediction from 12-lead ECGs")]
struct Cli {
    /// JSON run config; omitted fields take the documented defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's work directory.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Zero wall-clock fields in logs so repeat runs are byte-comparable.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort into the input directory.
    Synth,
    /// Assemble targets, features and folds from the cohort files.
    Build,
    /// Fit the model; keeps the best validation-macro-AUROC checkpoint.
    Train,
    /// Score the test fold with a checkpoint and bootstrap the AUROCs.
    Eval {
        /// Checkpoint path (default: `<work_dir>/train/checkpoint.json`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render report tables from metrics files: exactly one for estimation,
    /// one per horizon for monitoring.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
}

/// Task knobs forwarded to dataset assembly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TaskSection {
    mode: TaskMode,
    horizon_s: Option<i64>,
    vitals_window_s: i64,
    estimation_lab_window_s: i64,
    min_pos: usize,
    min_neg: usize,
    split_ratio: [u32; 3],
}

impl Default for TaskSection {
    fn default() -> TaskSection {
        let base = TaskConfig::estimation();
        TaskSection {
            mode: base.mode,
            horizon_s: base.horizon_s,
            vitals_window_s: base.vitals_window_s,
            estimation_lab_window_s: base.estimation_lab_window_s,
            min_pos: base.min_pos,
            min_neg: base.min_neg,
            split_ratio: base.split_ratio,
        }
    }
}

impl TaskSection {
    fn to_task_config(&self) -> TaskConfig {
        TaskConfig {
            mode: self.mode,
            horizon_s: self.horizon_s,
            vitals_window_s: self.vitals_window_s,
            estimation_lab_window_s: self.estimation_lab_window_s,
            min_pos: self.min_pos,
            min_neg: self.min_neg,
            split_ratio: self.split_ratio,
        }
    }
}

/// Free architecture knobs; widths tied to the data (input channels, feature
/// dim, label count) are derived, not configured.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EncoderSection {
    model_dim: usize,
    n_blocks: usize,
    state_size: usize,
    dropout: f64,
}

impl Default for EncoderSection {
    fn default() -> EncoderSection {
        EncoderSection {
            model_dim: 32,
            n_blocks: 4,
            state_size: 8,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FusionSection {
    fusion_proj_dim: Option<usize>,
    prelu_init_slope: f64,
}

impl Default for FusionSection {
    fn default() -> FusionSection {
        FusionSection {
            fusion_proj_dim: Some(16),
            prelu_init_slope: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvalSection {
    n_bootstrap: usize,
    ci_level: f64,
}

impl Default for EvalSection {
    fn default() -> EvalSection {
        EvalSection {
            n_bootstrap: 1000,
            ci_level: 0.95,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    input_dir: Option<PathBuf>,
    work_dir: PathBuf,
    seed: u64,
    task: TaskSection,
    synth: SynthConfig,
    encoder: EncoderSection,
    fusion: FusionSection,
    trainer: TrainerConfig,
    eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            input_dir: None,
            work_dir: PathBuf::from("work"),
            seed: 0,
            task: TaskSection::default(),
            synth: SynthConfig::default(),
            encoder: EncoderSection::default(),
            fusion: FusionSection::default(),
            trainer: TrainerConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

struct Ctx {
    config: RunConfig,
    threads: usize,
    deterministic: bool,
}

impl Ctx {
    fn input_dir(&self) -> PathBuf {
        self.config
            .input_dir
            .clone()
            .unwrap_or_else(|| self.config.work_dir.join("cohort"))
    }

    fn dataset_dir(&self) -> PathBuf {
        self.config.work_dir.join("dataset")
    }

    fn train_dir(&self) -> PathBuf {
        self.config.work_dir.join("train")
    }

    fn eval_dir(&self) -> PathBuf {
        self.config.work_dir.join("eval")
    }

    fn report_dir(&self) -> PathBuf {
        self.config.work_dir.join("report")
    }

    /// Write the run record beside a command's outputs. Deliberately free of
    /// timestamps: repeat runs of the same config are byte-identical.
    fn write_run_record(&self, command: &str, dir: &Path, outputs: serde_json::Value) -> Result<()> {
        let config_blob = serde_json::to_string(&self.config).expect("config serializes");
        let record = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": sha256_hex(config_blob.as_bytes()),
            "seed": self.config.seed,
            "threads": self.threads,
            "deterministic": self.deterministic,
            "config": &self.config,
            "outputs": outputs,
        });
        write_json(&dir.join("run.json"), &record)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut blob = serde_json::to_string_pretty(value).context("serializing JSON")?;
    blob.push('\n');
    fs::write(path, blob).with_context(|| format!("writing {}", path.display()))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("invalid run config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.work_dir {
        config.work_dir = dir.clone();
    }
    Ok(config)
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let line = json!({ "error": format!("{err:#}") });
        eprintln!("{line}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let ctx = Ctx {
        config: load_config(&cli)?,
        threads: cli.threads,
        deterministic: cli.deterministic,
    };
    match cli.command {
        Command::Synth => cmd_synth(&ctx),
        Command::Build => cmd_build(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Eval { checkpoint } => cmd_eval(&ctx, checkpoint),
        Command::Report { metrics } => cmd_report(&ctx, &metrics),
    }
}

fn cmd_synth(ctx: &Ctx) -> Result<()> {
    let out = ctx.input_dir();
    let mut config = ctx.config.synth.clone();
    config.seed = ctx.config.seed;
    let truth = generate(&config, &out).context("generating the synthetic cohort")?;
    ctx.write_run_record(
        "synth",
        &out,
        json!({ "n_records": truth.records.len(), "label_ids": truth.label_ids }),
    )?;
    println!(
        "synth: {} records, {} labels -> {}",
        truth.records.len(),
        truth.label_ids.len(),
        out.display()
    );
    Ok(())
}

fn cmd_build(ctx: &Ctx) -> Result<()> {
    let input = ctx.input_dir();
    for name in ["labs.csv", "vitals.csv", "context.csv", "thresholds.csv"] {
        if !input.join(name).is_file() {
            bail!("missing input file {}", input.join(name).display());
        }
    }
    let wave_dir = input.join("waveforms");
    if !wave_dir.is_dir() {
        bail!("missing waveform directory {}", wave_dir.display());
    }

    let mut payloads: Vec<PathBuf> = fs::read_dir(&wave_dir)
        .with_context(|| format!("listing {}", wave_dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "f32"))
        .collect();
    payloads.sort();
    if payloads.is_empty() {
        bail!("no .f32 waveforms under {}", wave_dir.display());
    }
    let metas: Vec<RecordMeta> = payloads
        .par_iter()
        .map(|payload| {
            let sidecar = payload.with_extension("json");
            let rec = read_waveform(payload, &sidecar)?;
            Ok(RecordMeta {
                record_id: rec.record_id,
                patient_id: rec.patient_id,
                acquisition_time: rec.acquisition_time,
                payload_path: payload.clone(),
                sidecar_path: sidecar,
            })
        })
        .collect::<Result<_, IngestError>>()
        .context("reading waveforms")?;

    let events = parse_events(&input.join("labs.csv")).context("reading lab events")?;
    let vitals = parse_vitals(&input.join("vitals.csv")).context("reading vitals")?;
    let context = parse_context(&input.join("context.csv")).context("reading patient context")?;
    let thresholds =
        parse_thresholds(&input.join("thresholds.csv")).context("reading thresholds")?;

    let task = ctx.config.task.to_task_config();
    let dataset = assemble_dataset(
        &task,
        &metas,
        &events,
        &vitals,
        &context,
        thresholds,
        ctx.config.seed,
        None,
    )
    .context("assembling the dataset")?;

    let out = ctx.dataset_dir();
    write_dataset(&dataset, &out).context("writing the dataset")?;
    ctx.write_run_record(
        "build",
        &out,
        json!({
            "n_records": dataset.manifest.records.len(),
            "retained_labels": dataset.manifest.retained_labels,
            "manifest_hash": manifest_hash(&dataset.manifest),
        }),
    )?;
    println!(
        "build: {} records, {}/{} labels retained -> {}",
        dataset.manifest.records.len(),
        dataset.manifest.retained_labels.len(),
        dataset.manifest.labels.len(),
        out.display()
    );
    Ok(())
}

/// Load and resample the given manifest rows to the working rate, in order.
fn load_waveforms(records: &[&ManifestRecord]) -> Result<Vec<EcgRecord>> {
    records
        .par_iter()
        .map(|r| {
            let raw = read_waveform(&r.payload_path, &r.sidecar_path)?;
            resample_ecg(&raw, WORKING_HZ)
        })
        .collect::<Result<_, IngestError>>()
        .context("loading waveforms")
}

fn build_model(encoder: &EncoderSection, fusion: &FusionSection, n_labels: usize) -> Result<Model> {
    let mut config = ModelConfig::new(encoder.model_dim, n_labels);
    config.encoder.n_blocks = encoder.n_blocks;
    config.encoder.state_size = encoder.state_size;
    config.encoder.dropout = encoder.dropout;
    config.head.fusion_proj_dim = fusion.fusion_proj_dim;
    config.head.prelu_init_slope = fusion.prelu_init_slope;
    Model::new(config).context("building the model")
}

fn read_built_dataset(ctx: &Ctx) -> Result<Dataset> {
    let dir = ctx.dataset_dir();
    if !dir.join("manifest.json").is_file() {
        bail!("no dataset under {}; run `build` first", dir.display());
    }
    read_dataset(&dir).context("reading the dataset")
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    let dataset = read_built_dataset(ctx)?;
    let k = dataset.manifest.retained_labels.len();
    if k == 0 {
        bail!("the task filter retained no labels; relax min_pos/min_neg or grow the cohort");
    }
    let rows: Vec<&ManifestRecord> = dataset.manifest.records.iter().collect();
    let waveforms = load_waveforms(&rows)?;
    let model = build_model(&ctx.config.encoder, &ctx.config.fusion, k)?;
    let mut trainer = ctx.config.trainer.clone();
    trainer.seed = ctx.config.seed;

    let out = ctx.train_dir();
    ensure_dir(&out)?;
    let log_path = out.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(
        fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?,
    );
    let outcome = train(
        &model,
        &dataset,
        &waveforms,
        &trainer,
        ctx.deterministic,
        &mut log,
    )
    .context("training")?;
    log.flush().context("flushing the training log")?;

    let ckpt_path = out.join("checkpoint.json");
    outcome
        .checkpoint
        .save(&ckpt_path)
        .context("saving the checkpoint")?;
    ctx.write_run_record(
        "train",
        &out,
        json!({
            "best_epoch": outcome.checkpoint.best_epoch,
            "valid_macro_auroc": outcome.checkpoint.valid_macro_auroc,
            "epochs": outcome.epochs.len(),
        }),
    )?;
    println!(
        "train: best epoch {} of {}, validation macro AUROC {:.3} -> {}",
        outcome.checkpoint.best_epoch,
        outcome.epochs.len(),
        outcome.checkpoint.valid_macro_auroc,
        ckpt_path.display()
    );
    Ok(())
}

fn cmd_eval(ctx: &Ctx, checkpoint: Option<PathBuf>) -> Result<()> {
    let dataset = read_built_dataset(ctx)?;
    let hash = manifest_hash(&dataset.manifest);
    let ckpt_path = checkpoint.unwrap_or_else(|| ctx.train_dir().join("checkpoint.json"));
    if !ckpt_path.is_file() {
        bail!("no checkpoint at {}; run `train` first", ckpt_path.display());
    }
    let (ckpt, model, params) =
        Checkpoint::load(&ckpt_path, Some(&hash)).context("loading the checkpoint")?;
    if ckpt.label_ids != dataset.manifest.retained_labels {
        bail!(
            "checkpoint labels {:?} do not match the dataset's retained labels {:?}",
            ckpt.label_ids,
            dataset.manifest.retained_labels
        );
    }

    let rows = dataset.fold_rows(Fold::Test);
    if rows.is_empty() {
        bail!("the test fold is empty");
    }
    let metas: Vec<&ManifestRecord> = rows.iter().map(|&r| &dataset.manifest.records[r]).collect();
    let waveforms = load_waveforms(&metas)?;
    let dense: Vec<[f64; FEATURE_DIM]> = rows.iter().map(|&r| dataset.features[r].dense()).collect();
    let items: Vec<(&EcgRecord, &[f64])> = waveforms
        .iter()
        .zip(&dense)
        .map(|(w, f)| (w, f.as_slice()))
        .collect();
    let probs: Vec<f64> = predict_records(&model, &params, &items)
        .context("scoring the test fold")?
        .into_iter()
        .flatten()
        .collect();

    let retained_cols = dataset.retained_columns();
    let mut targets: Vec<i8> = Vec::with_capacity(rows.len() * retained_cols.len());
    for &r in &rows {
        for &c in &retained_cols {
            targets.push(dataset.targets.get(r, c));
        }
    }
    let labels: Vec<AbnormalityLabel> = dataset
        .manifest
        .retained_labels
        .iter()
        .map(|id| {
            dataset
                .manifest
                .labels
                .iter()
                .find(|l| &l.label_id == id)
                .expect("retained label exists in the label space")
                .clone()
        })
        .collect();

    let task = &dataset.manifest.config;
    let bootstrap = BootstrapConfig {
        n_iter: ctx.config.eval.n_bootstrap,
        ci_level: ctx.config.eval.ci_level,
        seed: ctx.config.seed,
    };
    let report = evaluate(&probs, &targets, &labels, task.mode, task.horizon_s, &bootstrap)
        .context("evaluating")?;

    let out = ctx.eval_dir();
    ensure_dir(&out)?;
    let name = match task.mode {
        TaskMode::Estimation => "metrics.json".to_string(),
        TaskMode::Monitoring => format!("metrics_{}s.json", task.horizon_s.unwrap_or_default()),
    };
    let metrics_path = out.join(&name);
    write_json(&metrics_path, &report)?;
    ctx.write_run_record(
        "eval",
        &out,
        json!({
            "checkpoint": ckpt_path,
            "metrics": name,
            "n_records": report.n_records,
            "macro_auroc": report.macro_auroc,
        }),
    )?;
    println!(
        "eval: {} test records, macro AUROC {:.3} ({:.3}, {:.3}) -> {}",
        report.n_records,
        report.macro_auroc,
        report.macro_ci_lo,
        report.macro_ci_hi,
        metrics_path.display()
    );
    Ok(())
}

fn cmd_report(ctx: &Ctx, metrics: &[PathBuf]) -> Result<()> {
    let mut reports: Vec<MetricsReport> = metrics
        .iter()
        .map(|path| {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading metrics {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("invalid metrics file {}", path.display()))
        })
        .collect::<Result<_>>()?;

    let (md, csv) = if reports.iter().all(|r| r.mode == TaskMode::Estimation) {
        if reports.len() != 1 {
            bail!("estimation reporting takes exactly one metrics file, got {}", reports.len());
        }
        (
            estimation_markdown(&reports[0])?,
            estimation_csv(&reports[0])?,
        )
    } else if reports.iter().all(|r| r.mode == TaskMode::Monitoring) {
        reports.sort_by_key(|r| r.horizon_s);
        (monitoring_markdown(&reports)?, monitoring_csv(&reports)?)
    } else {
        bail!("metrics files mix estimation and monitoring modes");
    };

    let out = ctx.report_dir();
    ensure_dir(&out)?;
    let md_path = out.join("report.md");
    fs::write(&md_path, &md).with_context(|| format!("writing {}", md_path.display()))?;
    let csv_path = out.join("report.csv");
    fs::write(&csv_path, &csv).with_context(|| format!("writing {}", csv_path.display()))?;
    ctx.write_run_record(
        "report",
        &out,
        json!({ "inputs": metrics, "report_md": md_path, "report_csv": csv_path }),
    )?;
    println!("report: {} metrics file(s) -> {}", metrics.len(), md_path.display());
    Ok(())
}
