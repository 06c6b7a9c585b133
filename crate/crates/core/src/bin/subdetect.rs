use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use subdetect::harness::{run_experiment, ExperimentKind, ExperimentSpec, OutputFormat};
use subdetect::Error;

#[derive(Parser)]
#[command(name = "subdetect", version, about = "Sparse submatrix detection in Gaussian sequence data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// Flat `key = value` experiment file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when omitted (for `simulate`: the binary tensor).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Extremal weights at the configured radius.
    Solve,
    /// One tensor and the three tests on it.
    Simulate,
    /// Monte Carlo risk over multiples of the boundary radius.
    Power,
    /// Boundary radii and condition flags.
    Boundary,
    /// Bayes-risk probe of the mixture likelihood ratio test.
    Probe,
    /// Empirical and exact moment generating function of a cell statistic.
    Mgf,
    /// Hypergeometric versus binomial tail comparison for `N`, `n`.
    Hgdom,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::Solve => ExperimentKind::Solve,
            Command::Simulate => ExperimentKind::Simulate,
            Command::Power => ExperimentKind::Power,
            Command::Boundary => ExperimentKind::Boundary,
            Command::Probe => ExperimentKind::Probe,
            Command::Mgf => ExperimentKind::Mgf,
            Command::Hgdom => ExperimentKind::Hgdom,
        }
    }
}

fn load_spec(cli: &Cli) -> Result<ExperimentSpec, Error> {
    let path = cli.global.config.as_ref().ok_or_else(|| Error::InvalidConfig("--config <path> is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    let mut spec = ExperimentSpec::parse(cli.command.kind(), &text)?;
    if let Some(seed) = cli.global.seed {
        spec.config.seed = seed;
    }
    spec.out = cli.global.out.clone();
    spec.format = match cli.global.format {
        Format::Csv => OutputFormat::Csv,
        Format::Json => OutputFormat::Json,
    };
    Ok(spec)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let spec = load_spec(cli)?;
    let output = match cli.global.threads {
        Some(0) => return Err(Error::InvalidConfig("--threads must be >= 1".into())),
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(|| run_experiment(&spec))?,
        None => run_experiment(&spec)?,
    };
    if spec.out.is_none() || spec.kind == ExperimentKind::Simulate {
        std::io::stdout().write_all(output.body.as_bytes())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_infeasible() {
                ExitCode::from(3)
            } else if matches!(e, Error::InvalidConfig(_) | Error::InvalidArgument(_) | Error::Parse(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
