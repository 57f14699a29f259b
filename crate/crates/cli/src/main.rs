//! `pfb`: run, sweep, reproduce and replay feedback-cooling experiments.
//!
//! Exit codes: 0 success, 1 config error, 2 runtime error, 3 no trapped
//! trajectory at any point.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pfb_core::dsp::{read_count_stream, replay, write_drive_stream};
use pfb_core::experiment::{
    export_results, records_to_csv, reproduce_figure, run_sweep, sweep_to_json, ExperimentConfig, ExperimentError,
    Figure, Format, Mode, Scale, SweepResult,
};

#[derive(Parser)]
#[command(name = "pfb", version, about = "Parametric feedback cooling of a trapped atom in a cavity")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one ensemble at the configured point (any sweep section is ignored).
    Run(RunArgs),
    /// Run the configured sweep and fit phase sweeps.
    Sweep(RunArgs),
    /// Run a pre-baked figure experiment and write its tables.
    Reproduce {
        figure: String,
        #[arg(long, default_value = "desk")]
        scale: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Feed a recorded `tick_index,count` stream through the controller only.
    Replay {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Count stream CSV.
        #[arg(long)]
        counts: PathBuf,
        /// Ticks to process (default: through the last listed tick).
        #[arg(long)]
        ticks: Option<u64>,
        /// Keep every n-th drive sample.
        #[arg(long, default_value_t = 1)]
        every: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; omitted keys fall back to the preset of its `mode`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset to use when no config file is given.
    #[arg(long, value_enum, default_value_t = ModeArg::Radial)]
    mode: ModeArg,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (default: the config's `output`, else stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Stamp records with the wall-clock time (breaks byte-identical reruns).
    #[arg(long)]
    timestamp: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Radial,
    Axial,
    OpenLoop,
    NoFeedback,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Radial => Mode::Radial,
            ModeArg::Axial => Mode::Axial,
            ModeArg::OpenLoop => Mode::OpenLoop,
            ModeArg::NoFeedback => Mode::NoFeedback,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Degenerate,
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_config() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Failure::Runtime(e.into())),
        },
        None => dispatch(cli.command),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Degenerate) => {
            eprintln!("error: no trapped trajectories at any point");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(a) => run(a, false),
        Command::Sweep(a) => run(a, true),
        Command::Reproduce { figure, scale, seed, out } => reproduce(&figure, &scale, seed, &out),
        Command::Replay { config, counts, ticks, every, out } => {
            replay_counts(config.as_deref(), &counts, ticks, every, out.as_deref())
        }
    }
}

fn load_config(path: Option<&Path>, mode: Mode) -> Result<ExperimentConfig, Failure> {
    Ok(match path {
        Some(p) => ExperimentConfig::from_file(p).map_err(|e| Failure::Config(e.into()))?,
        None => ExperimentConfig::preset(mode),
    })
}

fn run(a: RunArgs, sweep: bool) -> Result<(), Failure> {
    let mut config = load_config(a.config.as_deref(), a.mode.into())?;
    if let Some(s) = a.seed {
        config.master_seed = s;
    }
    if sweep && config.sweep.is_none() {
        return Err(Failure::Config(anyhow::anyhow!("`sweep` needs a [sweep] section in the config")));
    }
    if !sweep {
        config.sweep = None;
    }
    config.validate()?;
    let mut result = run_sweep(&config)?;
    if a.timestamp {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        for r in &mut result.records {
            r.timestamp = Some(format!("unix:{now}"));
        }
    }
    report(&result);
    let out = a.out.or_else(|| config.output.clone());
    match out {
        Some(p) => {
            export_results(&result, a.format.into(), &p)?;
            eprintln!("wrote {}", p.display());
        }
        None => {
            let text = match a.format {
                FormatArg::Csv => records_to_csv(&result.records),
                FormatArg::Json => sweep_to_json(&result),
            };
            std::io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::Runtime(e.into()))?;
        }
    }
    if result.all_degenerate() {
        return Err(Failure::Degenerate);
    }
    Ok(())
}

fn report(result: &SweepResult) {
    eprintln!("config digest {}", result.config_digest);
    if let Some(f) = &result.fit {
        eprintln!("fit: optimal phase {:.3} rad", f.optimal_phase());
    }
    if let Some(n) = &result.fit_note {
        eprintln!("fit: {n}");
    }
}

fn reproduce(figure: &str, scale: &str, seed: u64, out: &Path) -> Result<(), Failure> {
    let fig: Figure = figure.parse()?;
    let scale: Scale = scale.parse()?;
    if scale == Scale::Full {
        eprintln!("note: full scale runs for hours");
    }
    let output = reproduce_figure(fig, scale, seed)?;
    for path in output.write_dir(out)? {
        eprintln!("wrote {}", path.display());
    }
    if !output.sweeps.is_empty() && output.sweeps.iter().all(SweepResult::all_degenerate) {
        return Err(Failure::Degenerate);
    }
    Ok(())
}

fn replay_counts(
    config: Option<&Path>,
    counts: &Path,
    ticks: Option<u64>,
    every: usize,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let config = load_config(config, Mode::Radial)?;
    let file = File::open(counts)
        .with_context(|| format!("{}", counts.display()))
        .map_err(Failure::Config)?;
    let stream = read_count_stream(BufReader::new(file))
        .with_context(|| format!("{}", counts.display()))
        .map_err(Failure::Config)?;
    let n_ticks = ticks.unwrap_or_else(|| stream.last().map_or(0, |&(t, _)| t + 1));
    let drive = replay(&config.controller, config.cavity.empty_detect_rate, &stream, n_ticks)
        .map_err(|e| Failure::Config(e.into()))?;
    let result = match out {
        Some(p) => File::create(p)
            .and_then(|f| write_drive_stream(std::io::BufWriter::new(f), &drive, every))
            .with_context(|| format!("{}", p.display())),
        None => write_drive_stream(std::io::stdout().lock(), &drive, every).context("stdout"),
    };
    result.map_err(Failure::Runtime)
}
