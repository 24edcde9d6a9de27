use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nearfield::channel::WavefrontModel;
use nearfield::harness::{
    export_channel, export_field, load_run_config, run_all, run_experiment, Experiment,
    ExperimentKind, MatrixFormat, RunConfig, RunManifest, Sweep, DEFAULT_MODEL, DEFAULT_SEED,
};
use nearfield::statistics::{CapacityNormalization, MonteCarlo};
use nearfield::{Error, Result};

/// Near-field massive MIMO channel simulator.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    /// Worker threads for Monte Carlo realizations (default: all cores).
    #[arg(long, global = true, env = "NEARFIELD_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
#[command(rename_all = "snake_case")]
enum Command {
    /// Rayleigh distances of the reference apertures at 2.4 and 5 GHz.
    RayleighTable(RunArgs),
    /// Model error vs the spherical reference over square array sides.
    ErrorVsArray(RunArgs),
    /// Model error vs the largest subarray size.
    ErrorVsSubarray(RunArgs),
    /// Real-operation counts vs the largest subarray size.
    ComplexitySweep(RunArgs),
    /// Spatial cross-correlation over BS and MR element offsets.
    SpatialCcf(RunArgs),
    /// Temporal autocorrelation over time lags.
    TemporalAcf(RunArgs),
    /// Frequency correlation over frequency lags.
    FrequencyCf(RunArgs),
    /// Ergodic capacity vs SNR (dB) for 16x16, 32x32 and 64x64 arrays.
    CapacitySweep(RunArgs),
    /// Every experiment with its default sweep.
    All(RunArgs),
    /// Write one scatterer field as CSV.
    ExportField(ExportArgs),
    /// Write one channel matrix as CSV or raw little-endian f64 pairs.
    ExportChannel(ChannelArgs),
    /// Print the resolved scenario of a config file as JSON.
    ValidateConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON scenario file; omitted keys take reference values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// spherical, planar or subarray:HxV (default subarray:30x30, clamped to
    /// the array).
    #[arg(long)]
    model: Option<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Monte Carlo realizations (default 500).
    #[arg(long)]
    realizations: Option<usize>,
    /// Axis values: `a,b,c` or `start:step:stop`.
    #[arg(long)]
    sweep: Option<String>,
    /// Observation time, s.
    #[arg(long, default_value_t = 0.0)]
    time: f64,
    #[arg(long, value_enum, default_value_t = Normalization::Ensemble)]
    normalization: Normalization,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    /// Realization index.
    #[arg(long, default_value_t = 0)]
    stream: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ChannelArgs {
    #[command(flatten)]
    export: ExportArgs,
    #[arg(long, default_value_t = 0.0)]
    time: f64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Normalization {
    Ensemble,
    PerRealization,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Binary,
}

fn load(common: &Common) -> Result<(RunConfig, u64, WavefrontModel)> {
    let raw = match &common.config {
        Some(path) => fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        None => String::new(),
    };
    let run = load_run_config(&raw)?;
    let seed = common.seed.or(run.seed).unwrap_or(DEFAULT_SEED);
    let model = match &common.model {
        Some(text) => text.parse()?,
        // the default adapts to small arrays; explicit models are checked as given
        None => run.model.unwrap_or(DEFAULT_MODEL.clamped_to(&run.scenario)),
    };
    Ok((run, seed, model))
}

fn run(kind: Option<ExperimentKind>, args: RunArgs) -> Result<RunManifest> {
    let (run_cfg, seed, model) = load(&args.common)?;
    let mut exp = Experiment::new(kind.unwrap_or(ExperimentKind::RayleighTable), &args.out);
    exp.seed = seed;
    exp.model = model;
    exp.realizations = args
        .realizations
        .or(run_cfg.realizations)
        .unwrap_or(MonteCarlo::DEFAULT_REALIZATIONS);
    exp.t = args.time;
    exp.normalization = match args.normalization {
        Normalization::Ensemble => CapacityNormalization::Ensemble,
        Normalization::PerRealization => CapacityNormalization::PerRealization,
    };
    exp.sweep = args.sweep.as_deref().map(str::parse::<Sweep>).transpose()?;
    match kind {
        Some(_) => run_experiment(&exp, &run_cfg.scenario),
        None => run_all(&exp, &run_cfg.scenario),
    }
}

fn report(manifest: &RunManifest, out: &std::path::Path) {
    for record in &manifest.experiments {
        println!("{} ({:.2} s)", record.kind, record.wall_clock_seconds);
        for d in &record.outputs {
            println!("  {}  {}", d.sha256, out.join(&d.file).display());
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    let (kind, args) = match command {
        Command::RayleighTable(a) => (Some(ExperimentKind::RayleighTable), a),
        Command::ErrorVsArray(a) => (Some(ExperimentKind::ErrorVsArray), a),
        Command::ErrorVsSubarray(a) => (Some(ExperimentKind::ErrorVsSubarray), a),
        Command::ComplexitySweep(a) => (Some(ExperimentKind::ComplexitySweep), a),
        Command::SpatialCcf(a) => (Some(ExperimentKind::SpatialCcf), a),
        Command::TemporalAcf(a) => (Some(ExperimentKind::TemporalAcf), a),
        Command::FrequencyCf(a) => (Some(ExperimentKind::FrequencyCf), a),
        Command::CapacitySweep(a) => (Some(ExperimentKind::CapacitySweep), a),
        Command::All(a) => (None, a),
        Command::ExportField(a) => {
            let (run_cfg, seed, _) = load(&a.common)?;
            return export_field(&run_cfg.scenario, seed, a.stream, &a.out);
        }
        Command::ExportChannel(a) => {
            let (run_cfg, seed, model) = load(&a.export.common)?;
            let format = match a.format {
                Format::Csv => MatrixFormat::Csv,
                Format::Binary => MatrixFormat::Binary,
            };
            return export_channel(
                &run_cfg.scenario,
                model,
                seed,
                a.export.stream,
                a.time,
                format,
                &a.export.out,
            );
        }
        Command::ValidateConfig { config } => {
            let common = Common {
                config,
                seed: None,
                model: None,
            };
            let (run_cfg, _, _) = load(&common)?;
            println!("{}", serde_json::to_string_pretty(&run_cfg.scenario)?);
            return Ok(());
        }
    };
    let out = args.out.clone();
    let manifest = run(kind, args)?;
    report(&manifest, &out);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
