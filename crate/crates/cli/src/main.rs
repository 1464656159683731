//! `qdistill` — generate benchmarks, harvest teacher signals, train the
//! two-stage student, and evaluate it, all from one binary.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qdistill_core::ablation::AblationMode;
use qdistill_core::pipeline::{CheckpointMode, TrainConfig};
use qdistill_core::student::Split;
use qdistill_core::synth::{SynthConfig, TeacherBias};
use qdistill_core::CoreError;
use qdistill_teacher::TeacherError;

use config::RunConfig;

const EXIT_CODES: &str = "\
Exit codes:
    0   success
    2   usage error (unknown flag or subcommand, bad flag value)
    3   invalid configuration value
    4   file format / parse error
    5   cross-file id reference error
    6   missing artifact (data file or checkpoint)
    7   missing labels, or label budget rounds down to zero
    8   degenerate data (too few rows, constant values, invalid signals)
    9   training diverged
    10  i/o failure
    11  teacher response unparseable
    12  teacher transport failure
    13  harvest failed for every item

Configuration:
    --config takes a flat JSON object whose keys are the synthesis and
    training field names (see README). Flags override file values; every
    command writes the merged result to <out>/config.json, and re-running
    with --config <out>/config.json reproduces the run bit-for-bit.";

#[derive(Parser)]
#[command(
    name = "qdistill",
    version,
    about = "Distill a teacher's quality judgments into a small student scorer, \
             then calibrate it on a handful of human labels",
    after_long_help = EXIT_CODES,
    after_help = "Run with --help for the exit-code table and config-file notes."
)]
struct Cli {
    /// Flat JSON config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic benchmark bundle (features, labels, teacher signals).
    Synth {
        /// Output directory for the bundle files.
        #[arg(long)]
        out: PathBuf,
        /// Base seed for data generation.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        synth: SynthOverrides,
    },
    /// Query a teacher endpoint (or the built-in mock) for point and pair signals.
    Harvest(HarvestArgs),
    /// Stage 1: train the student on teacher signals alone (no human labels).
    Distill {
        /// Directory holding a benchmark bundle.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoint, logs, and config snapshot.
        #[arg(long)]
        out: PathBuf,
        /// Base seed for training randomness.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        train: TrainOverrides,
    },
    /// Stage 2: calibrate a stage-1 checkpoint on the visible label budget.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        /// Stage-1 checkpoint file to start from.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        train: TrainOverrides,
    },
    /// Print the evaluation report for one split as JSON on stdout.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to evaluate: train, val, or test.
        #[arg(long, default_value = "test", value_parser = commands::parse_split)]
        split: Split,
    },
    /// Label-efficiency curve: repeat the full pipeline over ratios x seeds.
    Sweep {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated label-budget ratios, e.g. 0,0.1,0.3.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        /// Number of repetition seeds (runs use seeds 0..N).
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        synth: SynthOverrides,
        #[command(flatten)]
        train: TrainOverrides,
    },
    /// Supervision-strategy grid on one fixed benchmark.
    Ablate {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated modes: cft_only, point, pair, pair_conf, point_pair, all.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<String>>,
        /// Number of repetition seeds (runs use seeds 0..N).
        #[arg(long)]
        seeds: Option<u64>,
        /// Benchmark seed (the data stays fixed across modes and seeds).
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        synth: SynthOverrides,
        #[command(flatten)]
        train: TrainOverrides,
    },
}

/// Flag overrides for the synthetic benchmark generator. Field names match
/// the config-file keys.
#[derive(Args, Clone, Default)]
struct SynthOverrides {
    /// Number of images.
    #[arg(long)]
    n: Option<usize>,
    /// Feature dimension (config key: `d`).
    #[arg(long = "dim")]
    d: Option<usize>,
    /// Leading feature dims that carry the quality signal.
    #[arg(long)]
    informative_dims: Option<usize>,
    /// Gaussian noise on informative feature dims.
    #[arg(long)]
    feature_noise: Option<f64>,
    /// Teacher bias curve as JSON, e.g. '{"kind":"compressive","gamma":0.5}'.
    #[arg(long, value_parser = parse_bias)]
    teacher_bias: Option<TeacherBias>,
    /// Noise on the teacher's internal score.
    #[arg(long)]
    teacher_noise: Option<f64>,
    /// Curvature of point logits around the teacher score.
    #[arg(long)]
    point_sharpness: Option<f64>,
    /// Scale of pair logits per unit of score gap.
    #[arg(long)]
    pair_sharpness: Option<f64>,
    /// Make near-tie pairs noisier, so confidence predicts correctness.
    #[arg(long, value_name = "BOOL")]
    hetero_pairs: Option<bool>,
    /// Gaussian noise on human labels.
    #[arg(long)]
    mos_noise: Option<f64>,
    /// Number of supervision pairs sampled from the training split.
    #[arg(long)]
    pair_count: Option<usize>,
}

impl SynthOverrides {
    fn apply(&self, c: &mut SynthConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        set!(
            n,
            d,
            informative_dims,
            feature_noise,
            teacher_bias,
            teacher_noise,
            point_sharpness,
            pair_sharpness,
            hetero_pairs,
            mos_noise,
            pair_count
        );
    }
}

/// Flag overrides for training. Field names match the config-file keys
/// (`--stage1-lr` and friends reach inside the optimizer blocks).
#[derive(Args, Clone, Default)]
struct TrainOverrides {
    /// Hidden layer widths, comma-separated, e.g. 64,32.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    stage1_epochs: Option<usize>,
    #[arg(long)]
    stage1_batch: Option<usize>,
    /// Learning rate for stage 1 (config key: `stage1_opt.lr`).
    #[arg(long)]
    stage1_lr: Option<f64>,
    /// Weight decay for stage 1 (config key: `stage1_opt.weight_decay`).
    #[arg(long)]
    stage1_weight_decay: Option<f64>,
    #[arg(long)]
    stage2_epochs: Option<usize>,
    #[arg(long)]
    stage2_batch: Option<usize>,
    /// Learning rate for stage 2 (config key: `stage2_opt.lr`).
    #[arg(long)]
    stage2_lr: Option<f64>,
    /// Weight decay for stage 2 (config key: `stage2_opt.weight_decay`).
    #[arg(long)]
    stage2_weight_decay: Option<f64>,
    /// Weight of the pair-wise term in the distillation loss.
    #[arg(long)]
    lambda_dis: Option<f64>,
    /// Weight of the correlation term in the calibration loss.
    #[arg(long)]
    lambda_cal: Option<f64>,
    /// Smooth-L1 transition point of the point-wise term.
    #[arg(long)]
    beta: Option<f64>,
    /// Confidence threshold below which pairs are dropped.
    #[arg(long)]
    tau: Option<f64>,
    /// Fraction of training images whose labels are visible.
    #[arg(long)]
    mos_ratio: Option<f64>,
    /// Fraction of the labeled subset held out for checkpoint selection.
    #[arg(long)]
    calib_holdout_frac: Option<f64>,
    /// Stage-1 checkpoint selection: mos_free or few_shot.
    #[arg(long, value_parser = parse_ckpt_mode)]
    checkpoint_mode: Option<CheckpointMode>,
    /// Update only the output layer in stage 2.
    #[arg(long, value_name = "BOOL")]
    freeze_trunk_stage2: Option<bool>,
    /// Use the point-wise distillation term.
    #[arg(long, value_name = "BOOL")]
    use_point: Option<bool>,
    /// Use the pair-wise distillation term.
    #[arg(long, value_name = "BOOL")]
    use_pairs: Option<bool>,
    /// Weight pairs by confidence and apply the tau filter.
    #[arg(long, value_name = "BOOL")]
    use_confidence: Option<bool>,
    /// Skip distillation entirely (train stage 2 from scratch).
    #[arg(long, value_name = "BOOL")]
    skip_stage1: Option<bool>,
}

impl TrainOverrides {
    fn apply(&self, c: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        set!(
            hidden,
            stage1_epochs,
            stage1_batch,
            stage2_epochs,
            stage2_batch,
            lambda_dis,
            lambda_cal,
            beta,
            tau,
            mos_ratio,
            calib_holdout_frac,
            checkpoint_mode,
            freeze_trunk_stage2,
            use_point,
            use_pairs,
            use_confidence,
            skip_stage1
        );
        if let Some(v) = self.stage1_lr {
            c.stage1_opt.lr = v;
        }
        if let Some(v) = self.stage1_weight_decay {
            c.stage1_opt.weight_decay = v;
        }
        if let Some(v) = self.stage2_lr {
            c.stage2_opt.lr = v;
        }
        if let Some(v) = self.stage2_weight_decay {
            c.stage2_opt.weight_decay = v;
        }
    }
}

#[derive(Args)]
pub struct HarvestArgs {
    /// CSV of images to score; header `id,ref`.
    #[arg(long)]
    pub images: PathBuf,
    /// CSV of pairs to compare; header `a,b` (ids must appear in --images).
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Output directory for points.jsonl / pairs.jsonl and the report.
    #[arg(long)]
    pub out: PathBuf,
    /// Teacher chat-completions endpoint URL (auth via TEACHER_API_TOKEN).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Use the built-in deterministic mock teacher instead of the network.
    #[arg(long)]
    pub mock: bool,
    /// Model name sent with each request.
    #[arg(long, default_value = "teacher-vlm")]
    pub model: String,
    /// Upper bound on simultaneously in-flight requests.
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    /// Attempts per item, including the first.
    #[arg(long, default_value_t = 3)]
    pub max_attempts: u32,
    /// First retry backoff in milliseconds; doubles per retry.
    #[arg(long, default_value_t = 500)]
    pub backoff_ms: u64,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    /// Directory with point_prompt.txt / pair_prompt.txt replacing the built-ins.
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

fn parse_bias(s: &str) -> Result<TeacherBias, String> {
    serde_json::from_str(s).map_err(|e| format!("bad teacher bias: {e}"))
}

fn parse_ckpt_mode(s: &str) -> Result<CheckpointMode, String> {
    match s {
        "mos_free" => Ok(CheckpointMode::MosFree),
        "few_shot" => Ok(CheckpointMode::FewShot),
        _ => Err(format!("unknown checkpoint mode {s:?}; expected mos_free or few_shot")),
    }
}

/// One error type for the whole binary, so every failure funnels through a
/// single exit-code table.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(CoreError),
    Teacher(TeacherError),
}

impl CliError {
    fn config(msg: String) -> CliError {
        CliError::Core(CoreError::Config(msg))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => core_exit_code(e),
            CliError::Teacher(e) => teacher_exit_code(e),
        }
    }
}

fn core_exit_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Config(_) => 3,
        CoreError::Format { .. } => 4,
        CoreError::Reference { .. } | CoreError::DanglingPair { .. } => 5,
        CoreError::MissingArtifact(_) => 6,
        CoreError::MissingLabels(_) | CoreError::BudgetTooSmall(_) => 7,
        CoreError::InvalidSignal { .. }
        | CoreError::InsufficientData(_)
        | CoreError::Shape(_)
        | CoreError::EmptyBatch(_)
        | CoreError::DegenerateBatch(_)
        | CoreError::DegenerateMetric(_)
        | CoreError::DegenerateFit(_) => 8,
        CoreError::TrainingDivergence { .. } => 9,
        CoreError::SeedRun { source, .. } => core_exit_code(source),
        CoreError::Io { .. } => 10,
    }
}

fn teacher_exit_code(e: &TeacherError) -> u8 {
    match e {
        TeacherError::Template(_) | TeacherError::Config(_) => 3,
        TeacherError::Unparseable { .. } => 11,
        TeacherError::Transport(_) => 12,
        TeacherError::Harvest(_) => 13,
        TeacherError::Core(e) => core_exit_code(e),
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Teacher(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Defaults, overlaid with the config file when given.
fn base_config(synth: SynthConfig, file: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    let mut rc = RunConfig::with_defaults(synth, TrainConfig::default());
    if let Some(path) = file {
        rc.apply_file(path)?;
    }
    Ok(rc)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::Synth { out, seed, synth } => {
            let mut rc = base_config(SynthConfig::default(), &cli.config)?;
            if let Some(s) = *seed {
                rc.set_seed(s);
            }
            synth.apply(&mut rc.synth);
            commands::cmd_synth(&rc, out)
        }
        Cmd::Harvest(args) => {
            let rc = base_config(SynthConfig::default(), &cli.config)?;
            commands::cmd_harvest(&rc, args)
        }
        Cmd::Distill {
            data,
            out,
            seed,
            train,
        } => {
            let mut rc = base_config(SynthConfig::default(), &cli.config)?;
            if let Some(s) = *seed {
                rc.set_seed(s);
            }
            train.apply(&mut rc.train);
            commands::cmd_distill(&rc, data, out)
        }
        Cmd::Calibrate {
            data,
            checkpoint,
            out,
            seed,
            train,
        } => {
            let mut rc = base_config(SynthConfig::default(), &cli.config)?;
            if let Some(s) = *seed {
                rc.set_seed(s);
            }
            train.apply(&mut rc.train);
            commands::cmd_calibrate(&rc, data, checkpoint, out)
        }
        Cmd::Eval {
            data,
            checkpoint,
            split,
        } => commands::cmd_eval(data, checkpoint, *split),
        Cmd::Sweep {
            out,
            ratios,
            seeds,
            seed,
            synth,
            train,
        } => {
            let mut rc = base_config(SynthConfig::default(), &cli.config)?;
            if let Some(s) = *seed {
                rc.set_seed(s);
            }
            synth.apply(&mut rc.synth);
            train.apply(&mut rc.train);
            if let Some(r) = ratios {
                rc.extras.ratios = Some(r.clone());
            }
            if let Some(k) = seeds {
                rc.extras.seeds = Some(*k);
            }
            commands::cmd_sweep(&rc, out)
        }
        Cmd::Ablate {
            out,
            modes,
            seeds,
            seed,
            synth,
            train,
        } => {
            // The grid compares confidence handling, so the benchmark
            // defaults to heteroscedastic pairs (overridable either way).
            let mut rc = base_config(
                SynthConfig {
                    hetero_pairs: true,
                    ..SynthConfig::default()
                },
                &cli.config,
            )?;
            if let Some(s) = *seed {
                rc.set_seed(s);
            }
            synth.apply(&mut rc.synth);
            train.apply(&mut rc.train);
            if let Some(k) = seeds {
                rc.extras.seeds = Some(*k);
            }
            let mode_names = modes
                .clone()
                .or_else(|| rc.extras.modes.clone())
                .unwrap_or_else(|| {
                    AblationMode::ALL_MODES
                        .iter()
                        .map(|m| m.slug().to_string())
                        .collect()
                });
            let parsed: Vec<AblationMode> = mode_names
                .iter()
                .map(|m| AblationMode::parse(m).map_err(|e| CliError::Usage(e.to_string())))
                .collect::<Result<_, _>>()?;
            commands::cmd_ablate(&rc, out, &parsed)
        }
    }
}
