//! `pmn`: run precoder and combiner design experiments from a config file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use pmn_core::harness::config::{rx_pattern_scenario, tx_pattern_scenario, ExperimentFile, ScenarioSection};
use pmn_core::harness::{
    monte_carlo, sweep, verify_outputs, write_experiment, write_sweep, MethodSelection, SweepParameter, SweepSection,
};
use pmn_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "pmn", version, about = "Joint precoder and hybrid combiner design for perceptive mobile networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single trial of the experiment (or `--trials n`).
    Run(Common),
    /// Monte-Carlo run over the configured number of trials.
    Mc(Common),
    /// Repeat the experiment over a grid of SINR targets, powers or weights.
    Sweep(SweepArgs),
    /// Single trial on a fixed-angle scene with every method; writes beam patterns.
    Beampattern(BeamArgs),
    /// Check that every output in a directory carries its manifest hash.
    Verify {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML, or JSON with a `.json` extension).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// ao, bsyn, zf_isac or all; overrides the file.
    #[arg(long)]
    method: Option<String>,
    /// Number of trials; overrides the file.
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads.
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    GammaDb,
    PowerDbm,
    WeightComm,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Swept parameter; overrides the `[sweep]` table.
    #[arg(long, value_enum, requires = "values")]
    param: Option<Param>,
    /// Comma-separated grid values (dB for targets, dBm for power).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    values: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Tx,
    Rx,
}

#[derive(Args)]
struct BeamArgs {
    #[command(flatten)]
    common: Common,
    /// Fixed scene used when the file describes a random one.
    #[arg(long, value_enum, default_value = "tx")]
    scene: Preset,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

enum Failure {
    Config(String),
    AllFailed,
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidInput(_) => Failure::Config(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

fn load(c: &Common) -> Result<ExperimentFile, Failure> {
    let mut file = ExperimentFile::load(&c.config)?;
    if let Some(seed) = c.seed {
        file.experiment.seed = seed;
    }
    if let Some(m) = &c.method {
        file.experiment.method = m.parse::<MethodSelection>()?;
    }
    if let Some(t) = c.trials {
        file.experiment.trials = t;
    }
    Ok(file)
}

fn run_and_write(file: &ExperimentFile, c: &Common) -> Result<(), Failure> {
    let spec = file.resolve()?;
    info!("running {} trial(s) with {} worker(s)", spec.trials, c.jobs);
    let result = monte_carlo(&spec, c.jobs)?;
    write_experiment(&c.out, &result)?;
    for s in &result.summary {
        println!(
            "{:<8} ok {:>4} failed {:>4} mean SCNR {:.4} (std {:.4}) mean min SINR {:.4}",
            s.method.name(),
            s.trials_ok,
            s.trials_failed,
            s.mean_scnr,
            s.std_scnr,
            s.mean_min_sinr
        );
    }
    println!("outputs in {} (manifest {})", c.out.display(), result.manifest_sha256);
    if result.all_failed() {
        if let Some(reason) = result.trials.first().and_then(|t| t.failure()) {
            warn!("first failure: {reason}");
        }
        return Err(Failure::AllFailed);
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(c) => {
            let mut file = load(&c)?;
            if c.trials.is_none() {
                file.experiment.trials = 1;
            }
            run_and_write(&file, &c)
        }
        Command::Mc(c) => run_and_write(&load(&c)?, &c),
        Command::Beampattern(b) => {
            let mut file = load(&b.common)?;
            if matches!(file.scenario, ScenarioSection::Random { .. }) {
                file.scenario = match b.scene {
                    Preset::Tx => tx_pattern_scenario(),
                    Preset::Rx => rx_pattern_scenario(),
                };
            }
            if b.common.method.is_none() {
                file.experiment.method = MethodSelection::All;
            }
            file.experiment.trials = 1;
            run_and_write(&file, &b.common)
        }
        Command::Sweep(s) => {
            let mut file = load(&s.common)?;
            let section = match (s.param, s.values) {
                (Some(p), Some(values)) => SweepSection {
                    parameter: match p {
                        Param::GammaDb => SweepParameter::GammaDb,
                        Param::PowerDbm => SweepParameter::PowerDbm,
                        Param::WeightComm => SweepParameter::WeightComm,
                    },
                    values,
                },
                _ => file
                    .sweep
                    .clone()
                    .ok_or_else(|| Failure::Config("no [sweep] table in the file and no --param/--values".into()))?,
            };
            if section.parameter == SweepParameter::GammaDb && file.experiment.gamma_db.is_none() {
                // Placeholder so the linear designs resolve; every grid point replaces it.
                file.experiment.gamma_db = section.values.first().copied();
            }
            let spec = file.resolve()?;
            let points = sweep(&spec, section.parameter, &section.values, s.common.jobs)?;
            let hash = write_sweep(&s.common.out, &spec, &section, &points)?;
            for p in &points {
                for m in &p.result.summary {
                    println!(
                        "{:>10} {:<8} ok {:>4} mean SCNR {:.4}",
                        p.value,
                        m.method.name(),
                        m.trials_ok,
                        m.mean_scnr
                    );
                }
            }
            println!("outputs in {} (manifest {hash})", s.common.out.display());
            if points.iter().all(|p| p.result.all_failed()) {
                return Err(Failure::AllFailed);
            }
            Ok(())
        }
        Command::Verify { out } => {
            let m = verify_outputs(&out).map_err(|e| Failure::Other(e.to_string()))?;
            println!("{} files match manifest {}", m.files.len(), m.manifest_sha256);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::AllFailed) => {
            eprintln!("error: every trial failed");
            ExitCode::from(EXIT_ALL_FAILED)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
