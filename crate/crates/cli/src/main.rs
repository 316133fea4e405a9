use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nga_core::harness::config::{ExperimentConfig, ExperimentKind, Scale};
use nga_core::harness::experiments;
use nga_core::harness::manifest::{RunManifest, MANIFEST_FILE};
use nga_core::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(name = "nga", version, about = "Robust pricing and deep hedging under parameter uncertainty")]
struct Cli {
    /// Experiment configuration (JSON). Without it a named preset is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; overrides the one in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Format of the summary printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Preset scale used when no configuration file is given.
    #[arg(long, global = true, value_enum, default_value_t = PresetScale::Desk)]
    preset: PresetScale,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetScale {
    Full,
    Desk,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample Euler paths.
    Simulate,
    /// Train a hedging model and write a checkpoint.
    Train,
    /// Evaluate a checkpoint on fresh paths.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Lower and upper robust prices from the nonlinear PDE.
    PriceBounds,
    /// Rolling maximum-likelihood estimation of the parameter box.
    Estimate {
        /// Price CSV (`date,close` or wide).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run a named experiment.
    Experiment {
        #[arg(value_parser = parse_kind)]
        kind: ExperimentKind,
    },
    /// Check a configuration and report every invalid field.
    ValidateConfig,
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse()
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Data => 4,
    }
}

fn load_config(cli: &Cli, kind: Option<ExperimentKind>) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => {
            let kind = kind.ok_or_else(|| Error::Config("--config is required".into()))?;
            let seed = cli
                .seed
                .ok_or_else(|| Error::Config("--seed is required when no configuration file is given".into()))?;
            let scale = match cli.preset {
                PresetScale::Full => Scale::Full,
                PresetScale::Desk => Scale::Desk,
            };
            ExperimentConfig::preset(kind, scale, seed)
        }
    };
    if let Some(kind) = kind {
        cfg.kind = kind;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", cfg.kind.name(), cfg.seed)))
}

/// The report file echoed to stdout for each kind and format.
fn summary_file(kind: ExperimentKind, format: Format) -> Option<&'static str> {
    use ExperimentKind::*;
    match (kind, format) {
        (TableOne, Format::Json) => Some("table_one.json"),
        (TableOne, Format::Csv) => Some("table_one.csv"),
        (TableTwo, Format::Json) => Some("table_two.json"),
        (TableTwo, Format::Csv) => Some("table_two_summary.csv"),
        (FigFive, Format::Json) => Some("fig_five.json"),
        (FigFive, Format::Csv) => Some("fig_five.csv"),
        (EvaluateHedge, Format::Json) => Some("summary.json"),
        (PriceBounds, Format::Json) => Some("bounds.json"),
        (Estimate, Format::Json) => Some("theta_hat.json"),
        (Estimate, Format::Csv) => Some("estimates.csv"),
        (Simulate | TrainHedge, Format::Json) => Some(MANIFEST_FILE),
        _ => None,
    }
}

fn print_summary(dir: &Path, manifest: &RunManifest, format: Format) -> Result<(), Error> {
    match summary_file(manifest.config.kind, format) {
        Some(name) => {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            print!("{text}");
        }
        None => {
            println!("path,bytes");
            for o in &manifest.outputs {
                println!("{},{}", o.path, o.bytes);
            }
        }
    }
    Ok(())
}

fn validate(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli, None)?;
    let errs = cfg.validate();
    match cli.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&errs)?),
        Format::Csv => {
            println!("field,message");
            for e in &errs {
                println!("{},\"{}\"", e.field, e.message.replace('"', "\"\""));
            }
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        for e in &errs {
            tracing::error!(field = %e.field, message = %e.message, "invalid field");
        }
        Err(Error::Config(format!("{} invalid field(s)", errs.len())))
    }
}

fn execute(cli: &Cli) -> Result<(), Error> {
    let kind = match &cli.command {
        Command::ValidateConfig => return validate(cli),
        Command::Simulate => ExperimentKind::Simulate,
        Command::Train => ExperimentKind::TrainHedge,
        Command::Evaluate { .. } => ExperimentKind::EvaluateHedge,
        Command::PriceBounds => ExperimentKind::PriceBounds,
        Command::Estimate { .. } => ExperimentKind::Estimate,
        Command::Experiment { kind } => *kind,
    };
    let mut cfg = load_config(cli, Some(kind))?;
    match &cli.command {
        Command::Evaluate { checkpoint: Some(p) } => cfg.checkpoint = Some(p.clone()),
        Command::Estimate { data: Some(p) } => cfg.data = Some(p.clone()),
        _ => {}
    }
    let dir = output_dir(&cfg);
    tracing::info!(kind = cfg.kind.name(), seed = cfg.seed, out = %dir.display(), "run");
    let manifest = experiments::run(&cfg, &dir)?;
    print_summary(&dir, &manifest, cli.format)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .with_ansi(false)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(e.kind());
            tracing::error!(code, error = %e, "failed");
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
