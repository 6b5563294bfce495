//! Command-line front end: `stream`, `eval`, `sweep`, `profile`, `shm-inspect`.
//!
//! Settings resolve as command line, then `ARTISTREAM_*` environment
//! variables, then the `[<subcommand>]` table of a `--config` TOML file.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::audio::{decode_wav, open_source, SourceKind};
use crate::ema::{load_trajectory, NormSpec, Space, TrajectoryWriter, EMA_DIM};
use crate::eval::{context_sweep, evaluate_files, DEFAULT_ALIGN_SHIFT};
use crate::inversion::{RemoteBackend, DEFAULT_REMOTE_TIMEOUT};
use crate::kinematics::RigConfig;
use crate::pipeline::{run_stream, BackendSpec, Pipeline, PipelineConfig, Sinks};
use crate::profiler::{load_csv, summarize, write_csv};
use crate::transport::shm::{shm_path, ShmReader, ShmWriter, DEFAULT_CAPACITY_BYTES};
use crate::transport::ws::{BridgeServer, DEFAULT_WS_PORT};
use crate::vad::VadConfig;
use crate::window::{ContextKind, ContextStrategy, WindowConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "artistream", version, about = "Stream speech audio to 100 fps articulator trajectories")]
#[command(args_override_self = true)]
pub struct Cli {
    /// TOML file with one table per subcommand, e.g. `[stream]`.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the streaming pipeline.
    Stream(StreamArgs),
    /// Correlate a predicted trajectory with a reference.
    Eval(EvalArgs),
    /// Compare artificial-context strategies on one recording.
    Sweep(SweepArgs),
    /// Summarize a latency CSV written by `stream --profile`.
    Profile(ProfileArgs),
    /// Print the state of a shared-memory frame buffer.
    ShmInspect(ShmInspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    /// WAV file to stream.
    #[arg(long, value_name = "WAV", conflicts_with = "mic", required_unless_present = "mic")]
    pub input: Option<PathBuf>,
    /// Capture from a microphone (optionally by device name).
    #[arg(long, value_name = "DEVICE", num_args = 0..=1, default_missing_value = "")]
    pub mic: Option<String>,
    /// Pace file input at 0.1 s per batch.
    #[arg(long)]
    pub realtime: bool,
    #[arg(long, value_name = "DBFS", default_value_t = -40.0, allow_negative_numbers = true)]
    pub vad_threshold: f64,
    /// Batches kept as speech after the last loud one.
    #[arg(long, value_name = "BATCHES", default_value_t = 3)]
    pub vad_hangover: u32,
    /// Active 10 ms sub-frames needed for a loud batch (0 to 10).
    #[arg(long, value_name = "FRAMES", default_value_t = 3)]
    pub vad_min_active: usize,
    /// `off` treats every batch as speech.
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub vad: OnOff,
    /// Context window length n in seconds.
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub window_secs: u32,
    /// Artificial context: none, silence, vowel, utterance or loop.
    #[arg(long, value_name = "KIND", default_value = "silence")]
    pub context: ContextKind,
    /// Recording used by `--context vowel|utterance`.
    #[arg(long, value_name = "WAV")]
    pub context_file: Option<PathBuf>,
    /// mock, replay:<csv> or remote:<host:port>.
    #[arg(long, value_name = "SPEC", default_value = "mock")]
    pub backend: BackendSpec,
    /// Per-request deadline for a remote backend.
    #[arg(long, value_name = "MS", default_value_t = DEFAULT_REMOTE_TIMEOUT.as_millis() as u64)]
    pub remote_timeout_ms: u64,
    /// Publish raw working-batch frames without seam smoothing.
    #[arg(long)]
    pub no_smoothing: bool,
    /// Pose shown before speech: 12 comma-separated normalized values or a JSON file.
    #[arg(long, value_name = "VALUES|FILE")]
    pub rest_pose: Option<String>,
    /// Shared-memory buffer name.
    #[arg(long, value_name = "NAME", env = "ARTISTREAM_SHM_NAME")]
    pub shm_name: Option<String>,
    #[arg(long, value_name = "BYTES", default_value_t = DEFAULT_CAPACITY_BYTES)]
    pub shm_capacity: usize,
    #[arg(long, value_name = "PORT", env = "ARTISTREAM_WS_PORT", default_value_t = DEFAULT_WS_PORT)]
    pub ws_port: u16,
    #[arg(long, value_name = "ADDR", default_value = "127.0.0.1")]
    pub ws_host: IpAddr,
    /// Do not start the WebSocket/HTTP bridge.
    #[arg(long)]
    pub no_ws: bool,
    /// Directory served at `/`.
    #[arg(long, value_name = "DIR")]
    pub viewer_dir: Option<PathBuf>,
    /// Write per-batch latency rows to this CSV.
    #[arg(long, value_name = "CSV")]
    pub profile: Option<PathBuf>,
    /// Write published frames (millimeters) to this CSV.
    #[arg(long, value_name = "CSV")]
    pub record: Option<PathBuf>,
    /// Per-dimension min/max JSON.
    #[arg(long, value_name = "JSON")]
    pub norm_spec: Option<PathBuf>,
    /// Avatar rig JSON (pivot, rest geometry, jaw gain).
    #[arg(long, value_name = "JSON")]
    pub rig: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted trajectory CSV (millimeters).
    #[arg(long, value_name = "CSV")]
    pub pred: PathBuf,
    /// Reference trajectory CSV (millimeters).
    #[arg(long = "ref", value_name = "CSV")]
    pub reference: PathBuf,
    /// Reference frames to leave out at the start.
    #[arg(long, value_name = "FRAMES", default_value_t = 0)]
    pub skip: usize,
    /// Prediction frame i + K is compared with reference frame i.
    #[arg(long, value_name = "K", default_value_t = DEFAULT_ALIGN_SHIFT)]
    pub align_shift: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_name = "WAV")]
    pub input: PathBuf,
    #[arg(long = "ref", value_name = "CSV")]
    pub reference: PathBuf,
    /// Comma-separated subset of none,silence,vowel,utterance,loop.
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "none,silence,vowel,utterance,loop")]
    pub strategies: Vec<ContextKind>,
    #[arg(long, value_name = "WAV")]
    pub vowel_file: Option<PathBuf>,
    #[arg(long, value_name = "WAV")]
    pub utterance_file: Option<PathBuf>,
    #[arg(long, value_name = "SPEC", default_value = "mock")]
    pub backend: BackendSpec,
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub window_secs: u32,
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub vad: OnOff,
    #[arg(long)]
    pub no_smoothing: bool,
    #[arg(long, value_name = "FRAMES", default_value_t = 0)]
    pub skip: usize,
    #[arg(long, value_name = "K", default_value_t = DEFAULT_ALIGN_SHIFT)]
    pub align_shift: usize,
    #[arg(long, value_name = "JSON")]
    pub norm_spec: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long, value_name = "CSV")]
    pub csv: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ShmInspectArgs {
    #[arg(long, value_name = "NAME", env = "ARTISTREAM_SHM_NAME", conflicts_with = "path", required_unless_present = "path")]
    pub shm_name: Option<String>,
    /// Buffer file path instead of a name.
    #[arg(long, value_name = "FILE")]
    pub path: Option<PathBuf>,
}

/// A failure, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Environment variables that override config-file keys.
const ENV_KEYS: &[(&str, &str)] = &[("shm_name", "ARTISTREAM_SHM_NAME"), ("ws_port", "ARTISTREAM_WS_PORT")];

fn find_config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn toml_value_args(flag: &str, value: &toml::Value) -> Result<Vec<String>, String> {
    Ok(match value {
        toml::Value::Boolean(true) => vec![flag.to_string()],
        toml::Value::Boolean(false) => vec![],
        toml::Value::String(s) => vec![format!("{flag}={s}")],
        toml::Value::Integer(i) => vec![format!("{flag}={i}")],
        toml::Value::Float(f) => vec![format!("{flag}={f}")],
        toml::Value::Array(items) => {
            let parts = items
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => Ok(s.clone()),
                    toml::Value::Integer(i) => Ok(i.to_string()),
                    toml::Value::Float(f) => Ok(f.to_string()),
                    _ => Err(format!("unsupported list item for {flag}")),
                })
                .collect::<Result<Vec<_>, _>>()?;
            vec![format!("{flag}={}", parts.join(","))]
        }
        _ => return Err(format!("unsupported value for {flag}")),
    })
}

/// Inserts `[<subcommand>]` settings from the config file right after the
/// subcommand token, so anything on the real command line (which comes
/// later) overrides them. Keys whose environment variable is set are left
/// out so the environment wins over the file.
pub fn apply_config_file(args: Vec<OsString>, config_text: &str) -> Result<Vec<OsString>, String> {
    let table: toml::Table = config_text.parse().map_err(|e| format!("config file: {e}"))?;
    let subcommands = ["stream", "eval", "sweep", "profile", "shm-inspect"];
    let Some(pos) = args
        .iter()
        .skip(1)
        .position(|a| subcommands.contains(&a.to_string_lossy().as_ref()))
        .map(|p| p + 1)
    else {
        return Ok(args);
    };
    let sub = args[pos].to_string_lossy().to_string();
    let Some(section) = table.get(&sub).or_else(|| table.get(&sub.replace('-', "_"))) else {
        return Ok(args);
    };
    let section = section
        .as_table()
        .ok_or_else(|| format!("config file: [{sub}] must be a table"))?;
    let mut injected = Vec::new();
    for (key, value) in section {
        let key = key.replace('-', "_");
        if ENV_KEYS.iter().any(|(k, env)| *k == key && std::env::var_os(env).is_some()) {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        injected.extend(toml_value_args(&flag, value)?);
    }
    let mut out = args;
    let tail = out.split_off(pos + 1);
    out.extend(injected.into_iter().map(OsString::from));
    out.extend(tail);
    Ok(out)
}

/// Parses `args` (including the program name), applying any config file.
pub fn parse_args(args: Vec<OsString>) -> Result<Cli, clap::Error> {
    let args = match find_config_path(&args) {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| {
                clap::Error::raw(
                    clap::error::ErrorKind::Io,
                    format!("cannot read config file {}: {e}\n", path.display()),
                )
            })?;
            apply_config_file(args, &text)
                .map_err(|e| clap::Error::raw(clap::error::ErrorKind::InvalidValue, format!("{e}\n")))?
        }
        None => args,
    };
    Cli::try_parse_from(args)
}

/// Entry point for the binary. Returns the process exit code.
pub fn run() -> i32 {
    run_with_args(std::env::args_os().collect())
}

pub fn run_with_args(args: Vec<OsString>) -> i32 {
    let cli = match parse_args(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Stream(a) => cmd_stream(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Profile(a) => cmd_profile(a),
        Command::ShmInspect(a) => cmd_shm_inspect(a),
    }
}

fn load_norm(path: Option<&Path>) -> Result<NormSpec, CliError> {
    match path {
        Some(p) => NormSpec::load(p).map_err(|e| config_err(format!("--norm-spec {}: {e}", p.display()))),
        None => {
            log::warn!("using the placeholder normalization spec; pass --norm-spec for real speaker extremes");
            Ok(NormSpec::placeholder())
        }
    }
}

/// Parses `--rest-pose`: a JSON file holding 12 numbers, or the numbers inline.
pub fn parse_rest_pose(arg: &str) -> Result<[f64; EMA_DIM], String> {
    let text = if Path::new(arg).is_file() {
        std::fs::read_to_string(arg).map_err(|e| format!("--rest-pose {arg}: {e}"))?
    } else {
        arg.to_string()
    };
    let trimmed = text.trim();
    let values: Vec<f64> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| format!("--rest-pose: {e}"))?
    } else {
        trimmed
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("--rest-pose: {e}"))?
    };
    <[f64; EMA_DIM]>::try_from(values)
        .map_err(|v| format!("--rest-pose needs {EMA_DIM} values, got {}", v.len()))
}

fn vad_config(toggle: OnOff, threshold: f64, hangover: u32, min_active: usize) -> Option<VadConfig> {
    (toggle == OnOff::On).then_some(VadConfig {
        threshold_dbfs: threshold,
        min_active_frames: min_active,
        hangover_batches: hangover,
    })
}

fn build_stream(a: &StreamArgs) -> Result<(Pipeline, SourceKind), CliError> {
    let norm = load_norm(a.norm_spec.as_deref())?;
    let rig = match &a.rig {
        Some(p) => RigConfig::load(p).map_err(|e| config_err(format!("--rig {}: {e}", p.display())))?,
        None => RigConfig::placeholder(),
    };
    if a.context.needs_file() && a.context_file.is_none() {
        return Err(config_err(format!(
            "--context {} requires --context-file",
            a.context.as_str()
        )));
    }
    let strategy = a
        .context
        .resolve(a.context_file.as_deref())
        .map_err(|e| config_err(format!("--context-file: {e}")))?;
    let rest_pose = a.rest_pose.as_deref().map(parse_rest_pose).transpose().map_err(config_err)?;
    let config = PipelineConfig {
        window: WindowConfig {
            n_seconds: a.window_secs,
            strategy,
        },
        vad: vad_config(a.vad, a.vad_threshold, a.vad_hangover, a.vad_min_active),
        smoothing: !a.no_smoothing,
        norm,
        rig,
        rest_pose,
    };
    let backend = match &a.backend {
        BackendSpec::Remote(addr) => Box::new(RemoteBackend::with_timeout(
            addr.clone(),
            Duration::from_millis(a.remote_timeout_ms),
        )),
        spec => spec.build(&config.norm).map_err(|e| config_err(format!("--backend: {e}")))?,
    };
    let pipeline = Pipeline::new(config, backend).map_err(config_err)?;
    let source = match (&a.input, &a.mic) {
        (Some(p), _) => SourceKind::WavFile(p.clone()),
        (None, Some(dev)) => SourceKind::Microphone((!dev.is_empty()).then(|| dev.clone())),
        (None, None) => return Err(config_err("one of --input or --mic is required")),
    };
    Ok((pipeline, source))
}

fn cmd_stream(a: StreamArgs) -> Result<(), CliError> {
    let (pipeline, source_kind) = build_stream(&a)?;
    let source = open_source(&source_kind, a.realtime || a.mic.is_some()).map_err(|e| match source_kind {
        SourceKind::WavFile(ref p) => config_err(format!("--input {}: {e}", p.display())),
        SourceKind::Microphone(_) => runtime_err(format!("microphone: {e}")),
    })?;

    let mut sinks = Sinks::default();
    if let Some(name) = &a.shm_name {
        let path = shm_path(name).map_err(config_err)?;
        sinks.shm = Some(ShmWriter::create(&path, a.shm_capacity, Space::Millimeters).map_err(runtime_err)?);
        log::info!("shared buffer at {}", path.display());
    }
    if !a.no_ws {
        let addr = SocketAddr::new(a.ws_host, a.ws_port);
        sinks.ws = Some(
            BridgeServer::start(addr, a.viewer_dir.clone())
                .map_err(|e| runtime_err(format!("ws bridge on {addr}: {e}")))?,
        );
    }
    if let Some(p) = &a.record {
        let file = File::create(p).map_err(|e| config_err(format!("--record {}: {e}", p.display())))?;
        sinks.record = Some(TrajectoryWriter::new(BufWriter::new(file)).map_err(runtime_err)?);
    }

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        if let Err(e) = ctrlc::set_handler(move || stop.store(true, std::sync::atomic::Ordering::Relaxed)) {
            log::debug!("no interrupt handler: {e}");
        }
    }
    eprintln!(
        "streaming with {} backend, {} s window, {} context",
        pipeline.backend_name(),
        a.window_secs,
        a.context.as_str()
    );
    let result = run_stream(source, pipeline, &mut sinks, stop);
    let report = match result {
        Ok(r) => r,
        Err(e) => return Err(runtime_err(e)),
    };
    if let Some(p) = &a.profile {
        let file = File::create(p).map_err(|e| runtime_err(format!("--profile {}: {e}", p.display())))?;
        write_csv(BufWriter::new(file), &report.latency).map_err(runtime_err)?;
    }
    println!(
        "published {} frames from {} batches ({} with speech){}",
        report.frames,
        report.batches,
        report.speech_batches,
        if report.interrupted { ", interrupted" } else { "" }
    );
    if let Ok(summary) = summarize(&report.latency) {
        println!("{summary}");
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let report = evaluate_files(&a.pred, &a.reference, a.skip, a.align_shift).map_err(runtime_err)?;
    if a.json {
        println!("{}", report.to_json());
    } else {
        println!("{report}");
    }
    Ok(())
}

fn sweep_strategy(kind: ContextKind, a: &SweepArgs) -> Result<ContextStrategy, CliError> {
    let file = match kind {
        ContextKind::Vowel => Some(a.vowel_file.as_deref().ok_or_else(|| config_err("vowel strategy requires --vowel-file"))?),
        ContextKind::Utterance => Some(
            a.utterance_file
                .as_deref()
                .ok_or_else(|| config_err("utterance strategy requires --utterance-file"))?,
        ),
        _ => None,
    };
    kind.resolve(file).map_err(config_err)
}

fn cmd_sweep(a: SweepArgs) -> Result<(), CliError> {
    let norm = load_norm(a.norm_spec.as_deref())?;
    let strategies = a
        .strategies
        .iter()
        .map(|&k| sweep_strategy(k, &a))
        .collect::<Result<Vec<_>, _>>()?;
    let audio = decode_wav(&a.input).map_err(|e| config_err(format!("--input {}: {e}", a.input.display())))?;
    let reference = load_trajectory(&a.reference, Space::Millimeters)
        .map_err(|e| config_err(format!("--ref {}: {e}", a.reference.display())))?;
    let base = PipelineConfig {
        window: WindowConfig {
            n_seconds: a.window_secs,
            strategy: ContextStrategy::Silence,
        },
        vad: vad_config(a.vad, -40.0, 3, 3),
        smoothing: !a.no_smoothing,
        norm,
        ..Default::default()
    };
    let report = context_sweep(&audio, &reference, &strategies, &a.backend, &base, a.skip, a.align_shift)
        .map_err(runtime_err)?;
    if a.json {
        println!("{}", report.to_json());
    } else {
        print!("{report}");
    }
    Ok(())
}

fn cmd_profile(a: ProfileArgs) -> Result<(), CliError> {
    let records = load_csv(&a.csv).map_err(|e| config_err(format!("--csv {}: {e}", a.csv.display())))?;
    let summary = summarize(&records).map_err(runtime_err)?;
    if a.json {
        println!("{}", summary.to_json());
    } else {
        print!("{summary}");
    }
    Ok(())
}

fn cmd_shm_inspect(a: ShmInspectArgs) -> Result<(), CliError> {
    let reader = match (&a.path, &a.shm_name) {
        (Some(p), _) => ShmReader::open(p),
        (None, Some(n)) => ShmReader::open_named(n),
        (None, None) => return Err(config_err("one of --shm-name or --path is required")),
    }
    .map_err(runtime_err)?;
    let h = reader.header();
    println!("version          {}", h.version);
    println!("record_size      {}", h.record_size);
    println!("dim              {}", h.dim);
    println!("frame_rate       {}", h.frame_rate);
    println!("space            {:?}", h.space);
    println!("capacity         {}", h.capacity);
    println!("published_count  {}", h.published_count);
    if h.published_count > 0 {
        let first = reader.record(0).expect("published");
        let last = reader.record(h.published_count - 1).expect("published");
        println!("first_seq        {}", first.seq);
        println!("last_seq         {}", last.seq);
        let ok = last.seq == h.published_count - 1 && last.values.iter().all(|v| v.is_finite());
        println!("last_record      {}", if ok { "ok" } else { "INCONSISTENT" });
        if !ok {
            return Err(runtime_err("final record does not match the published count"));
        }
    }
    Ok(())
}
