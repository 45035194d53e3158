//! Command-line driver for beam-alignment sweeps, single-episode traces,
//! codebook dumps and RAF-versus-baseline comparisons.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use beamsearch::harness::{emit_comparison_csv, emit_csv, Simulator};
use beamsearch::protocols::DirectedFeedback;
use beamsearch::{AngleGrid, ArrayGeometry, ExperimentConfig, HierarchicalCodebook, ProtocolKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable naming the directory for default output files.
const OUTPUT_DIR_ENV: &str = "BEAMSEARCH_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "beamsearch",
    version,
    about = "Hierarchical mmWave beam alignment simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full SNR sweep and write per-(protocol, SNR) metrics as CSV.
    Sweep(SweepArgs),
    /// Run one episode of one protocol and print its event log.
    Trace(TraceArgs),
    /// Dump every codebook beam as CSV.
    Codebook(CodebookArgs),
    /// Run a paired sweep and write the candidate-versus-baseline trade-off CSV.
    Compare(CompareArgs),
}

/// Flags shared by every subcommand that simulates; each overrides the
/// corresponding field of the `--config` file.
#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// JSON file with experiment settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Antennas at each end (a power of K).
    #[arg(long)]
    n_antennas: Option<usize>,
    /// Branching factor K.
    #[arg(long)]
    k: Option<usize>,
    /// Target probability of estimation error.
    #[arg(long)]
    gamma: Option<f64>,
    /// Measurement budget per stage.
    #[arg(long)]
    m_max: Option<usize>,
    /// Stage simulated in isolation (1-based).
    #[arg(long)]
    stage: Option<usize>,
    /// Run every stage, narrowing the search window by each estimate.
    #[arg(long)]
    multistage: bool,
    /// When RAF repeats its AoD report during directed pilots.
    #[arg(long, value_enum)]
    directed_feedback: Option<DirectedFeedbackArg>,
}

#[derive(Args, Debug)]
struct SweepFlags {
    #[command(flatten)]
    model: ModelArgs,
    /// Master seed; every trial's randomness derives from it.
    #[arg(long, required = true)]
    seed: u64,
    /// Trials per SNR point.
    #[arg(long)]
    trials: Option<usize>,
    /// First SNR point in dB (SNR = P / N0).
    #[arg(long, allow_negative_numbers = true)]
    snr_db_min: Option<f64>,
    /// Last SNR point in dB, inclusive.
    #[arg(long, allow_negative_numbers = true)]
    snr_db_max: Option<f64>,
    #[arg(long)]
    snr_db_step: Option<f64>,
    /// Run trials on one thread (results are identical either way).
    #[arg(long)]
    sequential: bool,
    /// Output CSV path.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    flags: SweepFlags,
    /// Comma-separated subset of fixed, optimal, rate-adaptive, raf.
    #[arg(long, value_delimiter = ',')]
    protocols: Option<Vec<ProtocolKind>>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    flags: SweepFlags,
    #[arg(long, default_value_t = ProtocolKind::Raf)]
    candidate: ProtocolKind,
    #[arg(long, default_value_t = ProtocolKind::RateAdaptive)]
    baseline: ProtocolKind,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// One of fixed, optimal, rate-adaptive, raf.
    #[arg(long)]
    protocol: ProtocolKind,
    #[arg(long, allow_negative_numbers = true)]
    snr_db: f64,
    #[arg(long)]
    seed: u64,
    /// Trial index within the seed's stream.
    #[arg(long, default_value_t = 0)]
    trial: usize,
    /// Write the log here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CodebookArgs {
    #[arg(long, default_value_t = 64)]
    n_antennas: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum DirectedFeedbackArg {
    OnChange,
    EveryPilot,
}

impl From<DirectedFeedbackArg> for DirectedFeedback {
    fn from(arg: DirectedFeedbackArg) -> Self {
        match arg {
            DirectedFeedbackArg::OnChange => DirectedFeedback::OnChange,
            DirectedFeedbackArg::EveryPilot => DirectedFeedback::EveryPilot,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))
        }
    }
}

impl ModelArgs {
    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(n) = self.n_antennas {
            config.n_antennas = n;
        }
        if let Some(k) = self.k {
            config.k = k;
        }
        if let Some(gamma) = self.gamma {
            config.gamma = gamma;
        }
        if let Some(m_max) = self.m_max {
            config.m_max = m_max;
        }
        if let Some(stage) = self.stage {
            config.stage = stage;
        }
        if self.multistage {
            config.multistage = true;
        }
        if let Some(mode) = self.directed_feedback {
            config.directed_feedback = mode.into();
        }
    }
}

impl SweepFlags {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = load_config(self.model.config.as_deref())?;
        self.model.apply(&mut config);
        config.master_seed = self.seed;
        if let Some(trials) = self.trials {
            config.trials = trials;
        }
        if let Some(v) = self.snr_db_min {
            config.snr_db_min = v;
        }
        if let Some(v) = self.snr_db_max {
            config.snr_db_max = v;
        }
        if let Some(v) = self.snr_db_step {
            config.snr_db_step = v;
        }
        if self.sequential {
            config.parallel = false;
        }
        if let Some(path) = &self.output {
            config.output_path = Some(path.clone());
        }
        Ok(config)
    }
}

/// Explicit path if given, otherwise `file_name` in `$BEAMSEARCH_OUTPUT_DIR`
/// or the working directory.
fn resolve_output(explicit: Option<&Path>, file_name: &str) -> PathBuf {
    if let Some(path) = explicit {
        return path.to_path_buf();
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(file_name),
        _ => PathBuf::from(file_name),
    }
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut config = args.flags.config()?;
    if let Some(protocols) = args.protocols {
        config.protocols = protocols;
    }
    let path = resolve_output(config.output_path.as_deref(), "sweep.csv");
    let metrics = Simulator::new(config)?.run()?;
    emit_csv(&metrics, &path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    if args.candidate == args.baseline {
        bail!("candidate and baseline must differ");
    }
    let mut config = args.flags.config()?;
    config.protocols = vec![args.candidate, args.baseline];
    let path = resolve_output(config.output_path.as_deref(), "compare.csv");
    let metrics = Simulator::new(config)?.run()?;
    let comparison = metrics
        .compare(args.candidate, args.baseline)
        .context("sweep produced no paired points")?;
    emit_comparison_csv(&comparison, &path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn trace(args: TraceArgs) -> Result<()> {
    let mut config = load_config(args.model.config.as_deref())?;
    args.model.apply(&mut config);
    config.master_seed = args.seed;
    config.protocols = vec![args.protocol];
    config.snr_db_min = args.snr_db;
    config.snr_db_max = args.snr_db;
    config.trials = args.trial + 1;
    let simulator = Simulator::new(config)?;
    let traces = simulator.run_trial_traces(args.snr_db, 0, args.trial)?;
    let mut out: Box<dyn Write> = match &args.output {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    for trace in &traces[0] {
        if !trace.accounting_holds() {
            bail!("stage {} trace violates slot accounting", trace.stage);
        }
        trace.write_log(&mut out)?;
    }
    out.flush()?;
    Ok(())
}

fn codebook(args: CodebookArgs) -> Result<()> {
    let geom = ArrayGeometry::half_wavelength(args.n_antennas)?;
    let grid = AngleGrid::uniform_cosine(args.n_antennas);
    let codebook = HierarchicalCodebook::new(&geom, &grid, args.k)?;
    match &args.output {
        Some(path) => {
            let file =
                File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut out = BufWriter::new(file);
            codebook.write_csv(&mut out)?;
            out.flush()?;
        }
        None => codebook.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep(args) => sweep(args),
        Command::Trace(args) => trace(args),
        Command::Codebook(args) => codebook(args),
        Command::Compare(args) => compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
