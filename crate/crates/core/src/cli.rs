//! `dub-engine <command> --config <path> [overrides]`.
//!
//! Every command writes under the output directory: a verbatim copy of the
//! config file, the effective config after overrides, its artifacts, and a
//! `summary.json` that lists each artifact with its SHA-256 digest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::container::{Container, ContainerWriter};
use crate::error::{Error, Result};
use crate::experiment::{held_out_requests, paired_runs, RunRecord};
use crate::metrics::{evaluate, write_csv, CsvRow};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint};
use crate::model::ModelConfig;
use crate::sample::{dub, DubMode, DubRequest, SamplerConfig};
use crate::seed;
use crate::train::{LogEntry, ReferenceStrategy, StrategyKind, TrainConfig, Trainer};
use crate::world::{generate_clips, load_clips, make_dataset, render, Clip};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub const DUB_KIND: &str = "dub-engine/dub";

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Arithmetic(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Numerical(_) => EXIT_NUMERICAL,
        Error::Alignment { .. }
        | Error::TooShort { .. }
        | Error::Assembly(_)
        | Error::Shape(_)
        | Error::Infeasible(_)
        | Error::Format(_)
        | Error::Io { .. }
        | Error::Image(_) => EXIT_DATA,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub n_clips: usize,
    pub clip_len: usize,
}

impl Default for WorldSection {
    fn default() -> Self {
        Self { n_clips: 16, clip_len: 405 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Defaults to `<out>/dataset.bin`.
    pub dataset: Option<PathBuf>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub strategy: StrategyKind,
    pub near_radius_px: usize,
    pub far_min_px: usize,
    pub context_dropout_prob: f64,
    pub grad_clip: f64,
    pub log_every: usize,
    /// Also write `checkpoint_step_<n>.bin` every this many steps; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub model: ModelConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            dataset: None,
            steps: t.steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            strategy: t.strategy.kind,
            near_radius_px: t.strategy.near_radius_px,
            far_min_px: t.strategy.far_min_px,
            context_dropout_prob: t.context_dropout_prob,
            grad_clip: t.grad_clip,
            log_every: t.log_every,
            checkpoint_every: 0,
            model: t.model,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, strategy: StrategyKind, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            strategy: ReferenceStrategy {
                kind: strategy,
                near_radius_px: self.near_radius_px,
                far_min_px: self.far_min_px,
            },
            context_dropout_prob: self.context_dropout_prob,
            grad_clip: self.grad_clip,
            log_every: self.log_every,
            model: self.model,
        }
    }
}

/// Which clip of which dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRef {
    /// Defaults to `<out>/dataset.bin`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DubSection {
    /// Defaults to `<out>/checkpoint.bin`.
    pub checkpoint: Option<PathBuf>,
    /// Video to re-dub.
    pub source: ClipRef,
    /// Clip whose audio drives the dub.
    pub audio: ClipRef,
    pub ode_steps: usize,
    pub mode: DubMode,
    pub sdedit_t0: Option<f64>,
    pub render: bool,
}

impl Default for DubSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            source: ClipRef { dataset: None, index: 0 },
            audio: ClipRef { dataset: None, index: 1 },
            ode_steps: SamplerConfig::default().ode_steps,
            mode: DubMode::Streaming,
            sdedit_t0: None,
            render: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub strategies: Vec<StrategyKind>,
    pub modes: Vec<DubMode>,
    pub eval_seeds: usize,
    /// Chunks per evaluation sequence.
    pub eval_chunks: usize,
    pub ode_steps: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            strategies: StrategyKind::ALL.to_vec(),
            modes: vec![DubMode::Streaming, DubMode::I2v, DubMode::Fl2v],
            eval_seeds: 12,
            eval_chunks: 10,
            ode_steps: SamplerConfig::default().ode_steps,
        }
    }
}

/// One document for every command; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub world: WorldSection,
    pub train: TrainSection,
    pub dub: DubSection,
    pub ablate: AblateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            world: WorldSection::default(),
            train: TrainSection::default(),
            dub: DubSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.to_config(self.train.strategy, 0).validate()?;
        if self.ablate.eval_chunks == 0 || self.ablate.ode_steps == 0 || self.dub.ode_steps == 0 {
            return Err(Error::Config("eval_chunks and ode_steps must be positive".into()));
        }
        if self.ablate.strategies.is_empty() || self.ablate.modes.is_empty() {
            return Err(Error::Config("ablate needs at least one strategy and one mode".into()));
        }
        self.sampler(self.dub.mode, self.dub.ode_steps).validate()
    }

    pub fn train_seed(&self) -> u64 {
        seed::derive(self.seed, "train", 0)
    }

    pub fn sample_seed(&self) -> u64 {
        seed::derive(self.seed, "sample", 0)
    }

    fn sampler(&self, mode: DubMode, ode_steps: usize) -> SamplerConfig {
        SamplerConfig {
            ode_steps,
            mode,
            sdedit_t0: self.dub.sdedit_t0,
            seed: self.sample_seed(),
        }
    }

    fn dataset_path(&self, p: &Option<PathBuf>) -> PathBuf {
        p.clone().unwrap_or_else(|| self.out_dir.join("dataset.bin"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "dub-engine", version, about = "Streaming audio-driven video dubbing on a synthetic talking-actor world")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset file.
    GenerateData(CommonArgs),
    /// Train a velocity model on a dataset file.
    Train(CommonArgs),
    /// Re-dub one clip with another clip's audio.
    Dub(CommonArgs),
    /// Train one model per reference strategy and compare them.
    Ablate(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_clips: Option<usize>,
    #[arg(long)]
    pub clip_len: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub strategy: Option<StrategyKind>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<DubMode>,
    /// Start SDEdit at this time; 0 copies the source through.
    #[arg(long)]
    pub sdedit_t0: Option<f64>,
    /// Also write PNG frames of the dubbed video.
    #[arg(long)]
    pub render: bool,
}

/// Load the config file (if any) and apply flag overrides, last wins.
/// Returns the config, the raw file text, and a log of applied overrides.
pub fn resolve_config(args: &CommonArgs) -> Result<(RunConfig, Option<String>, Vec<String>)> {
    let raw = match &args.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut cfg = match &raw {
        Some(text) => RunConfig::from_json(text)?,
        None => RunConfig::default(),
    };
    let mut log = Vec::new();
    macro_rules! set {
        ($flag:expr, $field:expr, $name:literal) => {
            if let Some(v) = $flag.clone() {
                log.push(format!("override {} = {:?}", $name, v));
                $field = v.into();
            }
        };
    }
    set!(args.out, cfg.out_dir, "out_dir");
    set!(args.seed, cfg.seed, "seed");
    set!(args.n_clips, cfg.world.n_clips, "world.n_clips");
    set!(args.clip_len, cfg.world.clip_len, "world.clip_len");
    set!(args.steps, cfg.train.steps, "train.steps");
    set!(args.strategy, cfg.train.strategy, "train.strategy");
    set!(args.checkpoint, cfg.dub.checkpoint, "dub.checkpoint");
    set!(args.mode, cfg.dub.mode, "dub.mode");
    if let Some(t0) = args.sdedit_t0 {
        log.push(format!("override dub.sdedit_t0 = {t0}"));
        cfg.dub.sdedit_t0 = Some(t0);
    }
    if args.render {
        log.push("override dub.render = true".into());
        cfg.dub.render = true;
    }
    cfg.validate()?;
    Ok((cfg, raw, log))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Tracks artifacts written during one command.
struct Run {
    cfg: RunConfig,
    command: &'static str,
    artifacts: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
}

impl Run {
    fn start(cfg: RunConfig, raw: Option<String>, command: &'static str) -> Result<Self> {
        fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
        let mut run = Self {
            cfg,
            command,
            artifacts: BTreeMap::new(),
            inputs: BTreeMap::new(),
        };
        if let Some(text) = raw {
            run.write("config.json", text.as_bytes())?;
        }
        let effective = serde_json::to_vec_pretty(&run.cfg)?;
        run.write("config.effective.json", &effective)?;
        Ok(run)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(name);
        write_file(&p, bytes)?;
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(p)
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let p = self.path(name);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        self.artifacts.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn finish(mut self, details: serde_json::Value) -> Result<serde_json::Value> {
        let summary = json!({
            "command": self.command,
            "seed": self.cfg.seed,
            "inputs": self.inputs,
            "artifacts": self.artifacts,
            "details": details,
        });
        let bytes = serde_json::to_vec_pretty(&summary)?;
        let p = self.path("summary.json");
        write_file(&p, &bytes)?;
        self.artifacts.clear();
        Ok(summary)
    }
}

fn load_dataset(run: &mut Run, path: &Path) -> Result<Vec<Clip>> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset not found; run generate-data first"),
        ));
    }
    run.input(path)?;
    load_clips(path)
}

pub fn cmd_generate_data(cfg: RunConfig, raw: Option<String>) -> Result<serde_json::Value> {
    let mut run = Run::start(cfg, raw, "generate-data")?;
    if run.cfg.world.n_clips == 0 {
        eprintln!("warning: n_clips = 0, writing an empty dataset");
    }
    let w = run.cfg.world.clone();
    let summary = make_dataset(w.n_clips, w.clip_len, run.cfg.seed, &run.path("dataset.bin"))?;
    run.record("dataset.bin")?;
    println!(
        "dataset: {} clips, {} pixel frames, {} latent frames, {} bytes",
        summary.clips, summary.pixel_frames, summary.latent_frames, summary.bytes
    );
    run.finish(serde_json::to_value(summary)?)
}

fn log_lines(entries: &[LogEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for e in entries {
        out.extend(serde_json::to_vec(e)?);
        out.push(b'\n');
    }
    Ok(out)
}

pub fn cmd_train(cfg: RunConfig, raw: Option<String>) -> Result<serde_json::Value> {
    let mut run = Run::start(cfg, raw, "train")?;
    let path = run.cfg.dataset_path(&run.cfg.train.dataset);
    let clips = load_dataset(&mut run, &path)?;
    let tc = run.cfg.train.to_config(run.cfg.train.strategy, run.cfg.train_seed());
    let mut trainer = Trainer::new(&clips, tc.clone())?;
    println!("training {} parameters with strategy {}", trainer.model().count_params(), tc.strategy.kind);
    let every = run.cfg.train.checkpoint_every;
    let extra = json!({ "strategy": tc.strategy.kind, "train": &tc });
    while trainer.step_count() < tc.steps {
        let before = trainer.log().len();
        trainer.step()?;
        for e in &trainer.log()[before..] {
            println!("step {:>6}  loss {:.5}", e.step, e.loss);
        }
        if every > 0 && trainer.step_count() % every == 0 && trainer.step_count() < tc.steps {
            let name = format!("checkpoint_step_{}.bin", trainer.step_count());
            save_checkpoint(&run.path(&name), trainer.model(), trainer.step_count(), tc.seed, extra.clone())?;
            run.record(&name)?;
        }
    }
    let steps = trainer.step_count();
    // No steps remain; this only flushes a trailing partial log window.
    trainer.run(|e| println!("step {:>6}  loss {:.5}", e.step, e.loss))?;
    run.write("train_log.jsonl", &log_lines(trainer.log())?)?;
    save_checkpoint(&run.path("checkpoint.bin"), trainer.model(), steps, tc.seed, extra)?;
    run.record("checkpoint.bin")?;
    let details = json!({
        "steps": steps,
        "param_count": trainer.model().count_params(),
        "final_loss": trainer.log().last().map(|e| e.loss),
    });
    run.finish(details)
}

pub fn cmd_dub(cfg: RunConfig, raw: Option<String>) -> Result<serde_json::Value> {
    let mut run = Run::start(cfg, raw, "dub")?;
    let d = run.cfg.dub.clone();
    let ckpt = d.checkpoint.clone().unwrap_or_else(|| run.cfg.out_dir.join("checkpoint.bin"));
    run.input(&ckpt)?;
    let (model, meta) = load_checkpoint(&ckpt)?;
    let (source_path, audio_path) = (run.cfg.dataset_path(&d.source.dataset), run.cfg.dataset_path(&d.audio.dataset));
    let source_clips = load_dataset(&mut run, &source_path)?;
    let audio_clips = load_dataset(&mut run, &audio_path)?;
    let pick = |clips: &[Clip], r: &ClipRef| {
        clips.get(r.index).cloned().ok_or_else(|| {
            Error::Shape(format!("clip index {} out of range ({} clips)", r.index, clips.len()))
        })
    };
    let source = pick(&source_clips, &d.source)?;
    let audio = pick(&audio_clips, &d.audio)?;
    let request = DubRequest::new(source.video, audio.audio)?;
    let sampler = run.cfg.sampler(d.mode, d.ode_steps);
    let output = dub(&request, &model, &sampler)?;
    let report = evaluate(&request, &output)?;

    let mut w = ContainerWriter::new();
    w.add("latent", output.video.frames());
    let meta_json = json!({ "mode": d.mode, "sdedit_t0": d.sdedit_t0, "seed": sampler.seed, "checkpoint_step": meta.step });
    run.write("dub.bin", &w.to_bytes(DUB_KIND, meta_json)?)?;
    run.write("report.json", &serde_json::to_vec_pretty(&report)?)?;
    if d.render {
        let paths = render(&output.video, &run.path("frames"))?;
        for p in &paths {
            let name = p.strip_prefix(&run.cfg.out_dir).unwrap_or(p).display().to_string();
            run.record(&name)?;
        }
        println!("rendered {} frames", paths.len());
    }
    println!(
        "dubbed {} latent frames ({} chunks, {}): sync {:.3}, identity drift {:.4}, camera error {:.4}",
        output.video.latent_len(),
        output.chunks.len(),
        d.mode,
        report.sync_corr,
        report.identity_drift_mean,
        report.camera_error
    );
    run.finish(serde_json::to_value(&report)?)
}

/// Read the latent video back from a `dub.bin` file.
pub fn load_dub_output(path: &Path) -> Result<crate::latent::LatentVideo> {
    let mut c = Container::read(path)?;
    c.expect_kind(DUB_KIND)?;
    crate::latent::LatentVideo::new(c.take_block("latent")?)
}

fn mean_row(strategy: StrategyKind, seed: u64, records: &[&RunRecord]) -> CsvRow {
    let n = records.len().max(1) as f64;
    let avg = |f: fn(&RunRecord) -> f64| records.iter().map(|r| f(r)).sum::<f64>() / n;
    CsvRow {
        mode: DubMode::Streaming.to_string(),
        strategy: strategy.to_string(),
        seed,
        sync: avg(|r| r.report.sync_corr),
        drift: avg(|r| r.report.identity_drift_mean),
        drift_max: avg(|r| r.report.identity_drift_max),
        jerk: avg(|r| r.report.boundary_jerk_ratio.unwrap_or(f64::NAN)),
        control_strength: avg(|r| r.report.control_strength),
        camera_error: avg(|r| r.report.camera_error),
    }
}

pub fn cmd_ablate(cfg: RunConfig, raw: Option<String>) -> Result<serde_json::Value> {
    let mut run = Run::start(cfg, raw, "ablate")?;
    let c = run.cfg.clone();
    let clips = generate_clips(c.world.n_clips, c.world.clip_len, c.seed)?;
    let len = 81 + (c.ablate.eval_chunks - 1) * 72;
    let requests = held_out_requests(c.ablate.eval_seeds, len, seed::derive(c.seed, "held-out", 0))?;
    let seeds: Vec<u64> = (0..c.ablate.eval_seeds as u64)
        .map(|i| seed::derive(c.sample_seed(), "eval", i))
        .collect();
    let base = SamplerConfig {
        ode_steps: c.ablate.ode_steps,
        ..SamplerConfig::default()
    };

    let mut all = Vec::new();
    let mut table = Vec::new();
    for &kind in &c.ablate.strategies {
        let tc = c.train.to_config(kind, c.train_seed());
        let mut trainer = Trainer::new(&clips, tc.clone())
            .map_err(|e| context(e, &format!("training {kind}")))?;
        trainer.run(|_| {}).map_err(|e| context(e, &format!("training {kind}")))?;
        let name = format!("checkpoint_{kind}.bin");
        save_checkpoint(&run.path(&name), trainer.model(), tc.steps, tc.seed, json!({ "strategy": kind }))?;
        run.record(&name)?;
        run.write(&format!("train_log_{kind}.jsonl"), &log_lines(trainer.log())?)?;
        let records = paired_runs(trainer.model(), kind.name(), &requests, &seeds, &c.ablate.modes, &base)
            .map_err(|e| context(e, &format!("evaluating {kind}")))?;
        let streaming: Vec<&RunRecord> = records.iter().filter(|r| r.mode == DubMode::Streaming).collect();
        let row = mean_row(kind, c.seed, &streaming);
        println!(
            "{kind}: sync {:.3}  drift {:.4}  jerk {:.3}  control {:.4}",
            row.sync, row.drift, row.jerk, row.control_strength
        );
        table.push(row);
        all.extend(records);
    }

    let mut buf = Vec::new();
    write_csv(&table, &mut buf)?;
    run.write("ablation.csv", &buf)?;
    let rows: Vec<CsvRow> = all.iter().map(RunRecord::csv_row).collect();
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    run.write("ablation_runs.csv", &buf)?;
    run.finish(json!({ "strategies": c.ablate.strategies, "runs": rows.len() }))
}

fn context(e: Error, what: &str) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{what}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("{what}: {m}")),
        Error::Infeasible(m) => Error::Infeasible(format!("{what}: {m}")),
        Error::Shape(m) => Error::Shape(format!("{what}: {m}")),
        other => other,
    }
}

type CommandFn = fn(RunConfig, Option<String>) -> Result<serde_json::Value>;

/// Parse, dispatch, and map the outcome to an exit code.
pub fn run(cli: Cli) -> i32 {
    let (args, f): (&CommonArgs, CommandFn) = match &cli.command {
        Command::GenerateData(a) => (a, cmd_generate_data),
        Command::Train(a) => (a, cmd_train),
        Command::Dub(a) => (a, cmd_dub),
        Command::Ablate(a) => (a, cmd_ablate),
    };
    let outcome = resolve_config(args).and_then(|(cfg, raw, log)| {
        for line in log {
            eprintln!("{line}");
        }
        f(cfg, raw)
    });
    match outcome {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
