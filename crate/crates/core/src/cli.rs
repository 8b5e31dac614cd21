//! Command-line front end: `extract`, `synth`, `train`, `eval`, `analyze`.
//!
//! Exit codes: 0 success, 1 data or contract violation, 2 usage error,
//! 3 numeric failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::eval::{self, EvalError, DEFAULT_TRAIN_FRACTION};
use crate::frameio::{self, FrameError, RespirationTrace};
use crate::net::{self, Architecture, ModelParams, NetError, TrainConfig, Variant};
use crate::roi::{self, RoiError};
use crate::synth::{self, SceneSpec, SynthConfig, SynthError, SynthMode, WaveformSpec};

pub const EXIT_OK: u8 = 0;
pub const EXIT_DATA: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "respscreen",
    version,
    about = "Masked-face respiration extraction and abnormal-breathing screening"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract a normalised respiration trace from a frame directory.
    Extract(ExtractArgs),
    /// Generate a synthetic dataset or frame sequence from a config file.
    Synth(SynthArgs),
    /// Train one classifier on a dataset manifest.
    Train(TrainArgs),
    /// Score trained classifiers on the held-out split of a manifest.
    Eval(EvalArgs),
    /// Sweep a scene degradation and report trace-recovery correlation.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory with thermal_NNNNN.pgm frames and boxes.jsonl.
    pub seq_dir: PathBuf,
    /// Output trace CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub block_w: Option<u32>,
    #[arg(long)]
    pub block_h: Option<u32>,
    #[arg(long)]
    pub stride: Option<u32>,
    /// Frame rate in Hz.
    #[arg(long, default_value_t = frameio::DEFAULT_SAMPLE_RATE)]
    pub sample_rate: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// key = value config file.
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct SplitArgs {
    /// Seeds the split, the initialisation and the shuffle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    pub train_fraction: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// index.csv written by `synth`.
    pub manifest: PathBuf,
    #[arg(long, default_value = "BiGRU-AT", value_parser = parse_variant)]
    pub variant: Variant,
    /// Output checkpoint; the training log goes next to it as `.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = net::DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = net::DEFAULT_ATTN)]
    pub attn: usize,
    #[arg(long, default_value_t = net::train::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = net::train::DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = net::train::DEFAULT_BATCH)]
    pub batch: usize,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub manifest: PathBuf,
    /// Checkpoints to score; repeat for several.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Output directory for report.csv and confusion files.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeMode {
    Mask,
    Distance,
    Angle,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(value_enum)]
    pub mode: AnalyzeMode,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Scenes averaged per setting.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: NetError| e.to_string())
}

/// Error carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn net_code(e: &NetError) -> u8 {
    match e {
        NetError::Divergence { .. } => EXIT_NUMERIC,
        NetError::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

impl From<FrameError> for CliError {
    fn from(e: FrameError) -> Self {
        let code = match e {
            FrameError::NotADirectory { .. } => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<RoiError> for CliError {
    fn from(e: RoiError) -> Self {
        Self {
            code: EXIT_DATA,
            message: e.to_string(),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        let code = match e {
            SynthError::Config { .. } | SynthError::UnknownKey(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        Self {
            code: net_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let code = match &e {
            EvalError::Net(n) => net_code(n),
            EvalError::Fraction(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn require_exists(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "{}: no such file or directory",
            path.display()
        )))
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })
}

/// Runs one parsed command; returns what it printed to stdout.
pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Extract(a) => cmd_extract(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Analyze(a) => cmd_analyze(&a),
    }
}

pub fn cmd_extract(a: &ExtractArgs) -> CliResult<String> {
    require_exists(&a.seq_dir)?;
    if !(a.sample_rate.is_finite() && a.sample_rate > 0.0) {
        return Err(CliError::usage("--sample-rate must be positive"));
    }
    let seq = frameio::load_sequence_with_rate(&a.seq_dir, a.sample_rate)?;
    let masks = roi::mask_regions(&seq)?;
    let (bw, bh, stride) = roi::default_block_params(&masks);
    let selection = roi::select_roi(
        &seq,
        a.block_w.unwrap_or(bw),
        a.block_h.unwrap_or(bh),
        a.stride.unwrap_or(stride),
    )?;
    let trace = roi::extract_trace(&seq, &selection)?;
    let trace =
        roi::normalize_trace(&trace)?.with_provenance(format!("extract {}", a.seq_dir.display()));
    frameio::save_trace(&trace, &a.out)?;
    let b = selection.block;
    Ok(format!(
        "roi offset=({}, {}) of {}x{} mask, block {}x{}, variance {}, candidates {}\n",
        b.offset_x,
        b.offset_y,
        b.ref_w,
        b.ref_h,
        b.block_w,
        b.block_h,
        selection.variance,
        selection.candidates_evaluated
    ))
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<String> {
    require_exists(&a.config)?;
    let text = fs::read_to_string(&a.config)
        .map_err(|e| CliError::usage(format!("{}: {e}", a.config.display())))?;
    let cfg = SynthConfig::parse(&text)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError {
        code: EXIT_DATA,
        message: format!("{}: {e}", a.out.display()),
    })?;
    match cfg.mode {
        SynthMode::Dataset => {
            let segments = synth::gen_segments(
                &synth::DatasetProfile::default(),
                cfg.n_normal,
                cfg.n_abnormal,
                cfg.segment_len,
                cfg.seed,
            )?;
            let index = synth::write_manifest(&a.out, &segments)?;
            Ok(format!(
                "wrote {} traces, manifest {}\n",
                segments.len(),
                index.display()
            ))
        }
        SynthMode::Sequence => {
            let (seq, truth) = synth::gen_sequence(&cfg.scene, &cfg.wave)?;
            frameio::save_sequence(&seq, &a.out)?;
            frameio::save_trace(&truth, &a.out.join("truth.csv"))?;
            Ok(format!(
                "wrote {} frames to {}\n",
                seq.len(),
                a.out.display()
            ))
        }
    }
}

fn load_split(
    manifest: &Path,
    split: &SplitArgs,
) -> CliResult<(Vec<RespirationTrace>, Vec<RespirationTrace>)> {
    require_exists(manifest)?;
    let data: Vec<RespirationTrace> = synth::read_manifest(manifest)?
        .into_iter()
        .map(|s| s.trace)
        .collect();
    Ok(eval::split(&data, split.train_fraction, split.seed)?)
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<String> {
    if a.hidden == 0 || a.attn == 0 {
        return Err(CliError::usage("--hidden and --attn must be positive"));
    }
    let config = TrainConfig {
        lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.split.seed,
    };
    config.validate()?;
    let (train, test) = load_split(&a.manifest, &a.split)?;
    let init = ModelParams::init(Architecture::new(a.variant, a.hidden, a.attn), a.split.seed);
    let (model, log) = net::train(init, &train, Some(&test), &config)?;
    net::save_model(&a.out, &model)?;
    let log_path = a.out.with_extension("csv");
    write_file(&log_path, &net::train::log_to_csv(&log))?;
    let mut out = format!(
        "{}: trained on {} traces, {} held out\n",
        a.variant,
        train.len(),
        test.len()
    );
    if let Some(last) = log.iter().rev().find(|l| l.split == "val") {
        let _ = writeln!(
            out,
            "held-out accuracy {:.4} loss {:.4}",
            last.accuracy, last.loss
        );
    }
    Ok(out)
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<String> {
    let (_, test) = load_split(&a.manifest, &a.split)?;
    let mut reports = Vec::new();
    for path in &a.models {
        require_exists(path)?;
        let model = net::load_model(path)?;
        reports.push(eval::evaluate_model(&model, &test)?);
    }
    eval::write_reports(&a.out, &reports)?;
    Ok(eval::report_csv(&reports))
}

// ---------------------------------------------------------------------------
// robustness sweeps

/// Mask transmission levels swept in `mask` mode, as hotspot gains.
pub const MASK_GAINS: [f64; 3] = [300.0, 180.0, 100.0];
pub const DISTANCE_FACTORS: [f64; 8] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0];
pub const ANGLES: [f64; 4] = [0.0, 15.0, 30.0, 45.0];

/// Mean |r| for one sweep setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub axis: &'static str,
    pub value: f64,
    pub mean_r: f64,
    /// Scenes that could not be rendered or extracted; they count as r = 0.
    pub failures: usize,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Renders `scene`, runs the default extraction pipeline and returns |r|
/// between the recovered trace and the ground-truth waveform.
pub fn recovery_correlation(scene: &SceneSpec, wave: &WaveformSpec) -> Result<f64, SynthError> {
    let (seq, truth) = synth::gen_sequence(scene, wave)?;
    let masks = roi::mask_regions(&seq)?;
    let (bw, bh, stride) = roi::default_block_params(&masks);
    let selection = roi::select_roi(&seq, bw, bh, stride)?;
    let trace = roi::extract_trace(&seq, &selection)?;
    Ok(pearson(trace.values(), truth.values()).abs())
}

fn sweep_wave() -> WaveformSpec {
    WaveformSpec {
        duration: 20.0,
        ..WaveformSpec::normal()
    }
}

fn sweep_point(
    axis: &'static str,
    value: f64,
    seeds: usize,
    base_seed: u64,
    configure: impl Fn(&mut SceneSpec),
) -> SweepPoint {
    let wave = sweep_wave();
    let mut total = 0.0;
    let mut failures = 0;
    for i in 0..seeds {
        let mut scene = SceneSpec {
            seed: base_seed.wrapping_add(i as u64),
            ..SceneSpec::default()
        };
        configure(&mut scene);
        match recovery_correlation(&scene, &wave) {
            Ok(r) => total += r,
            Err(_) => failures += 1,
        }
    }
    SweepPoint {
        axis,
        value,
        mean_r: total / seeds.max(1) as f64,
        failures,
    }
}

pub fn sweep(mode: AnalyzeMode, seeds: usize, base_seed: u64) -> Vec<SweepPoint> {
    match mode {
        AnalyzeMode::Mask => MASK_GAINS
            .iter()
            .map(|&g| sweep_point("gain", g, seeds, base_seed, |s| s.hotspot_gain = g))
            .collect(),
        AnalyzeMode::Distance => DISTANCE_FACTORS
            .iter()
            .map(|&d| sweep_point("distance", d, seeds, base_seed, |s| s.distance_factor = d))
            .collect(),
        AnalyzeMode::Angle => {
            let mut out = Vec::new();
            for &a in &ANGLES {
                out.push(sweep_point("horizontal", a, seeds, base_seed, |s| {
                    s.horizontal_angle = a
                }));
            }
            for &a in &ANGLES {
                out.push(sweep_point("vertical", a, seeds, base_seed, |s| {
                    s.vertical_angle = a
                }));
            }
            out
        }
    }
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("axis,value,mean_r,failures\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.axis, p.value, p.mean_r, p.failures);
    }
    out
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> CliResult<String> {
    if a.seeds == 0 {
        return Err(CliError::usage("--seeds must be positive"));
    }
    let csv = sweep_csv(&sweep(a.mode, a.seeds, a.seed));
    write_file(&a.out, &csv)?;
    Ok(csv)
}

/// Parses `args`, runs the command, prints its output or error and
/// returns the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
