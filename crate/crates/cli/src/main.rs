use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use otp_cli::checkpoint::Checkpoint;
use otp_cli::commands::{self, OracleMethod, SampleWhat};
use otp_cli::config;
use otp_cli::error::{CliError, EXIT_OK};

#[derive(Parser)]
#[command(name = "otp", version, about = "Neural optimal transport experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a transport map and write checkpoint, history and metrics.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Config overrides as `--key value`, e.g. `--train.kt 20`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Recompute metrics for a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report path; defaults to eval.json next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Squared 2-Wasserstein distance between two CSV point clouds.
    Oracle {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum, default_value = "assignment")]
        method: OracleMethod,
        /// Entropic regularization for the sinkhorn method.
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
    },
    /// Write dataset samples (or a checkpoint's pushforward) as CSV.
    Sample {
        #[arg(long, value_enum, default_value = "source")]
        what: SampleWhat,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, overrides } => {
            let cfg = config::load(config.as_deref(), &overrides)?;
            let out = commands::run_train(&cfg)?;
            println!(
                "d_cost={} d_target={} dir={}",
                out.metrics.d_cost,
                out.metrics.d_target,
                out.output_dir.display()
            );
        }
        Command::Eval {
            checkpoint,
            config,
            out,
            overrides,
        } => {
            let cfg = if config.is_some() || !overrides.is_empty() {
                let mut raw = match &config {
                    Some(p) => config::load_file(p)?,
                    None => Checkpoint::load(&checkpoint)?.config,
                };
                raw.extend(config::parse_overrides(&overrides)?);
                Some(config::resolve(raw)?)
            } else {
                None
            };
            let (ck, cfg) = commands::load_for_eval(&checkpoint, cfg)?;
            let out = out.unwrap_or_else(|| checkpoint.with_file_name(commands::EVAL_FILE));
            let text = commands::run_eval(&ck, &cfg, &out)?;
            print!("{text}");
        }
        Command::Oracle { a, b, method, epsilon } => {
            let v = commands::run_oracle(&a, &b, method, epsilon)?;
            println!("w2sq={v}");
        }
        Command::Sample {
            what,
            n,
            config,
            checkpoint,
            out,
            overrides,
        } => {
            let ck = checkpoint.as_deref().map(Checkpoint::load).transpose()?;
            let cfg = match (&config, &ck) {
                (None, Some(ck)) if overrides.is_empty() => ck.experiment()?,
                (None, Some(ck)) => {
                    let mut raw = ck.config.clone();
                    raw.extend(config::parse_overrides(&overrides)?);
                    config::resolve(raw)?
                }
                _ => config::load(config.as_deref(), &overrides)?,
            };
            let points = commands::run_sample(&cfg, what, n, ck.as_ref())?;
            match out {
                Some(p) => otp_core::pointcloud::save(&points, &p)?,
                None => {
                    let mut buf = Vec::new();
                    otp_core::pointcloud::write_csv(&points, &mut buf)?;
                    std::io::stdout().write_all(&buf)?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
