//! Command front end: config resolution (profile defaults + JSON overlay +
//! seed overrides), the run-stream pipeline, sweeps, ablations, and run
//! manifests. The `cgcd` binary is a thin wrapper over [`run`]; every
//! subcommand is also callable as a library function.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::eval::{
    session_report, write_confusion_csv, write_summary_csv, EvalError, EvalReport, EvalSettings,
};
use crate::model::{load_checkpoint, snapshot_teacher, ModelConfig, ModelError, ModelState};
use crate::registry::check_all_losses;
use crate::rng::derive_seed;
use crate::sessions::{
    generate_synthetic_stream, load_embedding_dataset, train_base_session,
    train_incremental_session, EpochTrace, SessionError, SessionStream, StreamConfig, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_GRADCHECK: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("gradient check failed for {0} loss(es)")]
    GradcheckFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::GradcheckFailed(_) => EXIT_GRADCHECK,
        }
    }
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(SessionError, ModelError, EvalError, std::io::Error, crate::diffmath::DiffError);

/// Baseline configuration bundles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// CPU-scale defaults; full pipeline in seconds to minutes.
    Desk,
    /// Published full-scale hyperparameters (not meant for CPU runs).
    Paper,
}

/// Parameter sweep: one run-stream per value patched into `parameter`
/// (dotted path into the resolved config, e.g. `incremental.blend.lambda_b`).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<serde_json::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSpec {
    pub checkpoint: String,
    pub session: usize,
}

/// Fully resolved run configuration; JSON config files mirror these fields.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub stream: StreamConfig,
    pub base: TrainConfig,
    pub incremental: TrainConfig,
    pub eval: EvalSettings,
    /// Ingest a pre-exported embedding dataset instead of synthesizing one.
    #[serde(default)]
    pub dataset_path: Option<String>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    /// Ablation variant names for the `ablate` subcommand.
    #[serde(default)]
    pub ablate: Option<Vec<String>>,
    #[serde(default)]
    pub evaluate: Option<EvaluateSpec>,
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(),
            stream: StreamConfig::desk(),
            base: TrainConfig::desk_base(),
            incremental: TrainConfig::desk_incremental(),
            eval: EvalSettings::default(),
            dataset_path: None,
            sweep: None,
            ablate: None,
            evaluate: None,
        }
    }

    pub fn paper() -> Self {
        Self {
            model: ModelConfig::paper(),
            stream: StreamConfig::paper_cifar100(),
            base: TrainConfig::paper_base(),
            incremental: TrainConfig::paper_incremental(),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(cfg_err)?;
        self.stream.validate().map_err(cfg_err)?;
        self.base.validate().map_err(cfg_err)?;
        self.incremental.validate().map_err(cfg_err)?;
        Ok(())
    }

    /// Points every seed at `seed` (purpose tags decorrelate the streams).
    pub fn override_seeds(&mut self, seed: u64) {
        self.stream.seed = seed;
        self.model.seed = derive_seed(seed, "model");
        self.base.seed = derive_seed(seed, "base");
        self.incremental.seed = derive_seed(seed, "incremental");
        self.eval.seed = derive_seed(seed, "eval");
    }
}

fn cfg_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Profile defaults, overlaid with the JSON config file (field-by-field
/// merge), then seed overrides: `--seed` flag, else `CGCD_SEED`, else the
/// config's own seeds. A RunManifest file may be passed as the config; its
/// embedded resolved config is used as-is.
pub fn resolve_config(
    config_path: Option<&Path>,
    profile: Profile,
    seed_flag: Option<u64>,
) -> Result<RunConfig, CliError> {
    let base = match profile {
        Profile::Desk => RunConfig::desk(),
        Profile::Paper => RunConfig::paper(),
    };
    let mut merged = serde_json::to_value(&base).map_err(cfg_err)?;
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut overlay: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if overlay.get("command").is_some() && overlay.get("config").is_some() {
            // replaying a RunManifest: take its resolved config verbatim
            merged = overlay["config"].take();
        } else {
            merge_json(&mut merged, overlay);
        }
    }
    let mut cfg: RunConfig = serde_json::from_value(merged)
        .map_err(|e| CliError::Config(format!("config: {e}")))?;

    let env_seed = match std::env::var("CGCD_SEED") {
        Ok(v) => Some(
            v.parse::<u64>()
                .map_err(|_| CliError::Config(format!("CGCD_SEED is not a u64: {v:?}")))?,
        ),
        Err(_) => None,
    };
    if let Some(seed) = seed_flag.or(env_seed) {
        cfg.override_seeds(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn merge_json(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (key, value) in o {
                match b.get_mut(&key) {
                    Some(slot) => merge_json(slot, value),
                    None => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

/// Command provenance written at the end of every successful run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<String>,
    pub git_describe: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub exit_status: i32,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    cfg: &RunConfig,
    artifacts: Vec<String>,
    started_unix: u64,
) -> Result<(), CliError> {
    let manifest = RunManifest {
        command: command.to_string(),
        config: cfg.clone(),
        seeds: BTreeMap::from([
            ("stream".to_string(), cfg.stream.seed),
            ("model".to_string(), cfg.model.seed),
            ("base".to_string(), cfg.base.seed),
            ("incremental".to_string(), cfg.incremental.seed),
            ("eval".to_string(), cfg.eval.seed),
        ]),
        artifacts,
        git_describe: git_describe(),
        started_unix,
        finished_unix: unix_now(),
        exit_status: EXIT_OK,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    let tmp = out_dir.join("manifest.json.tmp");
    std::fs::write(&tmp, json)?;
    std::fs::rename(&tmp, out_dir.join("manifest.json"))?;
    Ok(())
}

fn build_stream(cfg: &RunConfig) -> Result<SessionStream, CliError> {
    match &cfg.dataset_path {
        Some(path) => load_embedding_dataset(Path::new(path))
            .map_err(|e| CliError::Config(format!("dataset_path {path}: {e}"))),
        None => Ok(generate_synthetic_stream(&cfg.stream)?),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_trace_csv(trace: &[EpochTrace], path: &Path) -> Result<(), CliError> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "epoch,lr,sup,unsup,ncrl,sa,ta,bckd,total,val_total")?;
    for row in trace {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.epoch,
            row.lr,
            fmt_opt(row.losses.sup),
            fmt_opt(row.losses.unsup),
            fmt_opt(row.losses.ncrl),
            fmt_opt(row.losses.sa),
            fmt_opt(row.losses.ta),
            fmt_opt(row.losses.bckd),
            row.losses.total,
            fmt_opt(row.val_total),
        )?;
    }
    Ok(())
}

/// Everything a full stream run leaves on disk, plus the in-memory reports.
pub struct StreamRunArtifacts {
    pub reports: Vec<EvalReport>,
    pub checkpoints: Vec<PathBuf>,
    pub final_model: ModelState,
    pub artifact_names: Vec<String>,
}

/// Base session + every incremental session + per-session evaluation.
/// `pretrained_base` skips base training (used by sweeps whose patches do
/// not touch the base configuration; results are bit-identical either way).
pub fn run_stream_pipeline(
    cfg: &RunConfig,
    out_dir: &Path,
    pretrained_base: Option<&ModelState>,
) -> Result<StreamRunArtifacts, CliError> {
    std::fs::create_dir_all(out_dir)?;
    let stream = build_stream(cfg)?;
    let mut artifact_names = Vec::new();
    let mut checkpoints = Vec::new();

    let ckpt0 = out_dir.join("checkpoint_session0.ckpt");
    let mut model = match pretrained_base {
        Some(m) => {
            crate::model::save_checkpoint(m, 0, &ckpt0)?;
            m.clone()
        }
        None => {
            let result = train_base_session(&stream, &cfg.model, &cfg.base, Some(&ckpt0))?;
            let trace_path = out_dir.join("loss_trace_session0.csv");
            write_trace_csv(&result.trace, &trace_path)?;
            artifact_names.push("loss_trace_session0.csv".into());
            result.model
        }
    };
    checkpoints.push(ckpt0);
    artifact_names.push("checkpoint_session0.ckpt".into());

    let mut reports = vec![session_report(&stream, &model, 0, &cfg.eval, &[])?];
    write_confusion_csv(&reports[0], &out_dir.join("confusion_session0.csv"))?;
    artifact_names.push("confusion_session0.csv".into());

    for t in 1..stream.num_sessions() {
        let teacher = snapshot_teacher(&model);
        let ckpt = out_dir.join(format!("checkpoint_session{t}.ckpt"));
        let result =
            train_incremental_session(&stream, t, model, &teacher, &cfg.incremental, Some(&ckpt))?;
        let reads = stream.sessions[t].train.hidden_labels().read_count();
        if reads != 0 {
            return Err(CliError::Runtime(format!(
                "label-hiding contract violated: {reads} hidden-label reads in session {t}"
            )));
        }
        write_trace_csv(&result.trace, &out_dir.join(format!("loss_trace_session{t}.csv")))?;
        artifact_names.push(format!("loss_trace_session{t}.csv"));
        artifact_names.push(format!("checkpoint_session{t}.ckpt"));
        checkpoints.push(ckpt);
        model = result.model;

        let report = session_report(&stream, &model, t, &cfg.eval, &reports)?;
        write_confusion_csv(&report, &out_dir.join(format!("confusion_session{t}.csv")))?;
        artifact_names.push(format!("confusion_session{t}.csv"));
        reports.push(report);
    }

    write_summary_csv(&reports, &out_dir.join("summary.csv"))?;
    artifact_names.push("summary.csv".into());
    Ok(StreamRunArtifacts {
        reports,
        checkpoints,
        final_model: model,
        artifact_names,
    })
}

/// Patches one dotted-path parameter in a resolved config.
pub fn patch_config(
    cfg: &RunConfig,
    dotted_path: &str,
    value: &serde_json::Value,
) -> Result<RunConfig, CliError> {
    let mut root = serde_json::to_value(cfg).map_err(cfg_err)?;
    {
        let mut slot = &mut root;
        for segment in dotted_path.split('.') {
            slot = slot
                .get_mut(segment)
                .ok_or_else(|| CliError::Config(format!("unknown sweep parameter {dotted_path}")))?;
        }
        *slot = value.clone();
    }
    let patched: RunConfig = serde_json::from_value(root)
        .map_err(|e| CliError::Config(format!("sweep value for {dotted_path}: {e}")))?;
    patched.validate()?;
    Ok(patched)
}

fn base_sections(cfg: &RunConfig) -> serde_json::Value {
    serde_json::json!({
        "model": cfg.model,
        "stream": cfg.stream,
        "base": cfg.base,
        "dataset_path": cfg.dataset_path,
    })
}

/// One sweep point's final-session numbers.
pub struct SweepPoint {
    pub value: serde_json::Value,
    pub out_dir: PathBuf,
    pub final_report: EvalReport,
}

/// Runs one stream per sweep value. Points whose patch leaves the model,
/// stream, and base-training sections untouched reuse one shared base
/// checkpoint; results are bit-identical to retraining it.
pub fn run_sweep_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<SweepPoint>, CliError> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep section missing from config".into()))?;
    if spec.values.is_empty() {
        return Err(CliError::Config("sweep.values is empty".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut shared_base: Option<ModelState> = None;
    let mut points = Vec::new();
    for (i, value) in spec.values.iter().enumerate() {
        let patched = patch_config(cfg, &spec.parameter, value)?;
        let point_dir = out_dir.join(format!("point_{i:02}"));
        let reuse = base_sections(&patched) == base_sections(cfg);
        let pretrained = if reuse {
            if shared_base.is_none() {
                let stream = build_stream(cfg)?;
                let result = train_base_session(&stream, &cfg.model, &cfg.base, None)?;
                shared_base = Some(result.model);
            }
            shared_base.as_ref()
        } else {
            None
        };
        let artifacts = run_stream_pipeline(&patched, &point_dir, pretrained)?;
        let final_report = artifacts
            .reports
            .last()
            .cloned()
            .ok_or_else(|| CliError::Runtime("sweep point produced no report".into()))?;
        points.push(SweepPoint {
            value: value.clone(),
            out_dir: point_dir,
            final_report,
        });
    }

    let mut out = std::fs::File::create(out_dir.join("sweep.csv"))?;
    writeln!(out, "parameter,value,final_acc_all,final_acc_old,final_acc_new,mA,mO,mN")?;
    for p in &points {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            spec.parameter,
            p.value,
            p.final_report.acc_all,
            fmt_opt(p.final_report.acc_old),
            fmt_opt(p.final_report.acc_new),
            fmt_opt(p.final_report.mean_all),
            fmt_opt(p.final_report.mean_old),
            fmt_opt(p.final_report.mean_new),
        )?;
    }
    Ok(points)
}

pub const ABLATION_VARIANTS: [&str; 3] = ["full", "no_ncrl", "no_bckd"];

/// Applies one named ablation variant to the incremental objective.
pub fn ablation_config(cfg: &RunConfig, variant: &str) -> Result<RunConfig, CliError> {
    let mut patched = cfg.clone();
    match variant {
        "full" => {}
        // the blended objective is lambda_b * ncrl + (1 - lambda_b) * bckd
        "no_ncrl" => patched.incremental.blend.lambda_b = 0.0,
        "no_bckd" => patched.incremental.blend.lambda_b = 1.0,
        other => {
            return Err(CliError::Config(format!(
                "unknown ablation variant {other:?} (expected full, no_ncrl, no_bckd)"
            )))
        }
    }
    Ok(patched)
}

/// One stream run per ablation variant, sharing the base checkpoint.
pub fn run_ablation_pipeline(
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<Vec<(String, StreamRunArtifacts)>, CliError> {
    let variants: Vec<String> = cfg
        .ablate
        .clone()
        .unwrap_or_else(|| ABLATION_VARIANTS.iter().map(|s| s.to_string()).collect());
    std::fs::create_dir_all(out_dir)?;

    let stream = build_stream(cfg)?;
    let base = train_base_session(&stream, &cfg.model, &cfg.base, None)?;
    let mut results = Vec::new();
    for variant in &variants {
        let patched = ablation_config(cfg, variant)?;
        let artifacts =
            run_stream_pipeline(&patched, &out_dir.join(variant), Some(&base.model))?;
        results.push((variant.clone(), artifacts));
    }

    let mut out = std::fs::File::create(out_dir.join("ablate.csv"))?;
    writeln!(out, "variant,final_acc_all,final_acc_old,final_acc_new,mA,mO,mN")?;
    for (variant, artifacts) in &results {
        let r = artifacts.reports.last().expect("at least the base report");
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            variant,
            r.acc_all,
            fmt_opt(r.acc_old),
            fmt_opt(r.acc_new),
            fmt_opt(r.mean_all),
            fmt_opt(r.mean_old),
            fmt_opt(r.mean_new),
        )?;
    }
    Ok(results)
}

// ---- subcommand entry points -------------------------------------------

pub fn cmd_train_base(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let started = unix_now();
    std::fs::create_dir_all(out_dir)?;
    let stream = build_stream(cfg)?;
    let ckpt = out_dir.join("checkpoint_session0.ckpt");
    let result = train_base_session(&stream, &cfg.model, &cfg.base, Some(&ckpt))?;
    write_trace_csv(&result.trace, &out_dir.join("loss_trace_session0.csv"))?;
    write_manifest(
        out_dir,
        "train-base",
        cfg,
        vec!["checkpoint_session0.ckpt".into(), "loss_trace_session0.csv".into()],
        started,
    )
}

pub fn cmd_run_stream(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let started = unix_now();
    let artifacts = run_stream_pipeline(cfg, out_dir, None)?;
    for report in &artifacts.reports {
        println!(
            "session {}: all={:.4} old={} new={}",
            report.session,
            report.acc_all,
            fmt_opt(report.acc_old.map(|v| (v * 1e4).round() / 1e4)),
            fmt_opt(report.acc_new.map(|v| (v * 1e4).round() / 1e4)),
        );
    }
    write_manifest(out_dir, "run-stream", cfg, artifacts.artifact_names, started)
}

pub fn cmd_evaluate(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let started = unix_now();
    let spec = cfg
        .evaluate
        .clone()
        .ok_or_else(|| CliError::Config("evaluate section missing from config".into()))?;
    std::fs::create_dir_all(out_dir)?;
    let stream = build_stream(cfg)?;
    if spec.session >= stream.num_sessions() {
        return Err(CliError::Config(format!(
            "evaluate.session {} out of range (stream has {} sessions)",
            spec.session,
            stream.num_sessions()
        )));
    }
    let model = load_checkpoint(Path::new(&spec.checkpoint))
        .map_err(|e| CliError::Config(format!("evaluate.checkpoint {}: {e}", spec.checkpoint)))?;
    let report = session_report(&stream, &model, spec.session, &cfg.eval, &[])?;
    println!(
        "session {}: all={:.4} old={} new={}",
        report.session,
        report.acc_all,
        fmt_opt(report.acc_old),
        fmt_opt(report.acc_new)
    );
    write_summary_csv(std::slice::from_ref(&report), &out_dir.join("summary.csv"))?;
    write_confusion_csv(
        &report,
        &out_dir.join(format!("confusion_session{}.csv", report.session)),
    )?;
    write_manifest(
        out_dir,
        "evaluate",
        cfg,
        vec![
            "summary.csv".into(),
            format!("confusion_session{}.csv", report.session),
        ],
        started,
    )
}

/// Gradient check over every registered loss on 20 seeded fixtures.
/// `CGCD_GRADCHECK_FAULT` (an f64) corrupts the backward pass; negative
/// control for the exit-code contract.
pub fn cmd_gradcheck() -> Result<(), CliError> {
    let fault = std::env::var("CGCD_GRADCHECK_FAULT")
        .ok()
        .and_then(|v| v.parse::<f64>().ok())
        .unwrap_or(0.0);
    let seeds: Vec<u64> = (0..20).collect();
    let summaries = check_all_losses(&seeds, 1e-4, 1e-4, fault)?;
    let mut failures = 0;
    for s in &summaries {
        println!(
            "{} {:<12} max_rel_error={:.3e} tolerance={:.0e}",
            if s.pass { "[ok]  " } else { "[FAIL]" },
            s.name,
            s.max_rel_error,
            s.tolerance
        );
        if !s.pass {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(CliError::GradcheckFailed(failures));
    }
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let started = unix_now();
    let points = run_sweep_pipeline(cfg, out_dir)?;
    for p in &points {
        println!(
            "{} = {}: final all={:.4}",
            cfg.sweep.as_ref().unwrap().parameter,
            p.value,
            p.final_report.acc_all
        );
    }
    let mut artifacts = vec!["sweep.csv".to_string()];
    artifacts.extend(points.iter().map(|p| {
        p.out_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }));
    write_manifest(out_dir, "sweep", cfg, artifacts, started)
}

pub fn cmd_ablate(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let started = unix_now();
    let results = run_ablation_pipeline(cfg, out_dir)?;
    for (variant, artifacts) in &results {
        let r = artifacts.reports.last().unwrap();
        println!(
            "{variant}: final all={:.4} old={} new={}",
            r.acc_all,
            fmt_opt(r.acc_old),
            fmt_opt(r.acc_new)
        );
    }
    let mut artifacts = vec!["ablate.csv".to_string()];
    artifacts.extend(results.iter().map(|(v, _)| v.clone()));
    write_manifest(out_dir, "ablate", cfg, artifacts, started)
}

// ---- argument parsing ----------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "cgcd",
    version,
    about = "Continual category discovery: contrastive base training, \
             neighborhood-commonality self-distillation, bi-level contrastive \
             distillation, and Hungarian-matched clustering evaluation"
)]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON config overlaying the profile defaults (a RunManifest also works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Overrides every seed in the config (beats CGCD_SEED).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the labelled base session and emit its checkpoint.
    TrainBase(RunArgs),
    /// Base session, every incremental session, and per-session evaluation.
    RunStream(RunArgs),
    /// Evaluate a saved checkpoint at one session.
    Evaluate(RunArgs),
    /// Finite-difference gradient check over every registered loss.
    Gradcheck,
    /// One run-stream per value of a swept parameter.
    Sweep(RunArgs),
    /// Component ablation: full, no_ncrl, no_bckd.
    Ablate(RunArgs),
}

/// Parses argv and runs one subcommand; returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let parsed = match CliArgs::try_parse_from(args) {
        Ok(p) => p,
        Err(e) => {
            // clap prints its own help/version through this path
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match parsed.command {
        Command::Gradcheck => cmd_gradcheck(),
        Command::TrainBase(ref args) => with_config(args, cmd_train_base),
        Command::RunStream(ref args) => with_config(args, cmd_run_stream),
        Command::Evaluate(ref args) => with_config(args, cmd_evaluate),
        Command::Sweep(ref args) => with_config(args, cmd_sweep),
        Command::Ablate(ref args) => with_config(args, cmd_ablate),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn with_config(
    args: &RunArgs,
    f: impl FnOnce(&RunConfig, &Path) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let cfg = resolve_config(args.config.as_deref(), args.profile, args.seed)?;
    f(&cfg, &args.out)
}
