use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wz_cli::commands::{self, CertifyOptions, EXIT_RUNTIME};
use wz_cli::{CliError, Emission, ExperimentConfig, Format};
use wz_core::DomainSpec;

/// Reflected SDE experiments: domain certificates, strong-convergence
/// studies, single-path dumps and Hölder tables.
#[derive(Parser)]
#[command(name = "wzr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the interior-cone, test-function and cone-cover conditions.
    Certify(CertifyArgs),
    /// Estimate strong errors across levels and fit decay rates.
    Converge(Common),
    /// Dump one coupled (X^n, X) pair; the config must name a single level.
    Simulate(Common),
    /// Estimate Hölder moments over dyadic lags.
    Holder(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
    /// Output file; defaults to the config's `output`, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainKind {
    Interval,
    Box,
    Ball,
    Annulus,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: Common,
    /// Build the domain from flags instead of the config.
    #[arg(long, value_enum)]
    domain: Option<DomainKind>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    r1: Option<f64>,
    #[arg(long)]
    r2: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    b: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    lo: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    hi: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Cone-cover certificate (JSON).
    #[arg(long)]
    cert: Option<PathBuf>,
    #[arg(long, default_value_t = 400)]
    n_boundary: usize,
    #[arg(long, default_value_t = 2000)]
    n_interior: usize,
}

fn need(value: Option<f64>, flag: &str) -> Result<f64, CliError> {
    value.ok_or_else(|| CliError::Config(format!("--{flag} is required for this domain")))
}

impl CertifyArgs {
    fn domain_from_flags(&self, kind: DomainKind) -> Result<DomainSpec, CliError> {
        let built = match kind {
            DomainKind::Interval => DomainSpec::interval(need(self.a, "a")?, need(self.b, "b")?),
            DomainKind::Box => DomainSpec::boxed(self.lo.clone(), self.hi.clone()),
            DomainKind::Ball => DomainSpec::ball(need(self.radius, "radius")?, self.dim),
            DomainKind::Annulus => {
                DomainSpec::annulus(need(self.r1, "r1")?, need(self.r2, "r2")?, self.dim)
            }
        };
        built.map_err(|e| CliError::Config(e.to_string()))
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if common.workers.is_some() {
        config.workers = common.workers;
    }
    if let Some(paths) = common.paths {
        config.paths = paths;
    }
    if let Some(format) = common.format {
        config.format = format;
    }
    if common.out.is_some() {
        config.output = common.out.clone();
    }
    Ok(config)
}

fn certify(args: &CertifyArgs) -> Result<(Emission, Option<PathBuf>), CliError> {
    let config = match &args.common.config {
        Some(_) => Some(load(&args.common)?),
        None => None,
    };
    let domain = match (args.domain, &config) {
        (Some(kind), _) => args.domain_from_flags(kind)?,
        (None, Some(c)) => c.domain.clone(),
        (None, None) => return Err(CliError::Config("give --domain or --config".into())),
    };
    let cert = match (&args.cert, &config) {
        (Some(path), _) => Some(commands::load_certificate(path)?),
        (None, Some(c)) => c.certificate.clone(),
        (None, None) => None,
    };
    let opts = CertifyOptions {
        n_boundary: args.n_boundary,
        n_interior: args.n_interior,
        seed: args
            .common
            .seed
            .or(config.as_ref().map(|c| c.seed))
            .unwrap_or(0),
        format: args
            .common
            .format
            .or(config.as_ref().map(|c| c.format))
            .unwrap_or_default(),
    };
    let out = args.common.out.clone().or(config.and_then(|c| c.output));
    Ok((commands::certify(&domain, cert.as_ref(), &opts)?, out))
}

fn run(cli: &Cli) -> Result<(Emission, Option<PathBuf>), CliError> {
    match &cli.command {
        Command::Certify(args) => certify(args),
        Command::Converge(common) => {
            let config = load(common)?;
            Ok((commands::converge(&config)?, config.output))
        }
        Command::Simulate(common) => {
            let config = load(common)?;
            Ok((commands::simulate(&config)?, config.output))
        }
        Command::Holder(common) => {
            let config = load(common)?;
            Ok((commands::holder(&config)?, config.output))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (emission, out) = match run(&cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("wzr: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let written = match &out {
        Some(path) => std::fs::write(path, &emission.body),
        None => std::io::stdout().lock().write_all(emission.body.as_bytes()),
    };
    if let Err(e) = written {
        eprintln!("wzr: cannot write output: {e}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    ExitCode::from(emission.exit_code())
}
