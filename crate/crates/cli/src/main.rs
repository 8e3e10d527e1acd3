use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qobs_cli::{CliError, ExperimentConfig, Format};

#[derive(Parser)]
#[command(name = "qobs", version, about = "Quantized output feedback experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory for generated files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Reserved; the closed loop is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct BatchArgs {
    /// Experiment configs to simulate.
    #[arg(required = true)]
    configs: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Minimal quantization levels under each data-rate condition.
    MinLevels(Common),
    /// Closed-loop simulation with trace, schedule and plot output.
    Simulate(Common),
    /// Decay certificates, companion matrix and its spectral radius.
    Certify(Common),
    /// Simulate several configs.
    Batch(BatchArgs),
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let base = common.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((cfg, base))
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::MinLevels(c) => {
            let (cfg, base) = load(&c)?;
            print!("{}", qobs_cli::min_levels(&cfg, &base, &c.out)?.render(c.format));
        }
        Command::Certify(c) => {
            let (cfg, base) = load(&c)?;
            let report = qobs_cli::certify(&cfg, &base, &c.out)?;
            print!("{}", report.render(c.format));
            if report.get("contractive") != Some(&serde_json::Value::Bool(true)) {
                return Err(CliError::Infeasible("r(F) >= 1 at the chosen levels".into()));
            }
        }
        Command::Simulate(c) => {
            let (cfg, base) = load(&c)?;
            print!("{}", qobs_cli::simulate(&cfg, &base, &c.out)?.summary.render(c.format));
        }
        Command::Batch(b) => {
            let (table, code) = qobs_cli::batch(&b.configs, &b.out);
            print!("{}", table.render(b.format));
            return Ok(code);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("qobs: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
