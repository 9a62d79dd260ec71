//! The `train`, `eval`, `oracle` and `sample` subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use otp_core::metrics::{self, MetricReport};
use otp_core::oracle::{w2sq_assignment, w2sq_bruteforce, w2sq_sinkhorn, SinkhornOptions};
use otp_core::{pointcloud, seeded_rng, ModelPair, Scalar, Tensor, TrainHistory, Trainer};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{self, ExperimentConfig, Precision};
use crate::error::CliError;

pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.json";
pub const EVAL_FILE: &str = "eval.json";

/// RNG streams derived from the experiment seed; training uses stream 0.
const EVAL_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    format_version: u32,
    config: Value,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Serialize)]
struct MetricsBody<'a> {
    metrics: &'a MetricReport,
}

#[derive(Serialize)]
struct Empty {}

fn write_artifact<T: Serialize>(path: &Path, cfg: &ExperimentConfig, body: &T) -> Result<String, CliError> {
    let a = Artifact {
        format_version: checkpoint::FORMAT_VERSION,
        config: config::echo(cfg),
        seed: cfg.seed,
        body,
    };
    let mut text = serde_json::to_string_pretty(&a).expect("artifact serializes");
    text.push('\n');
    std::fs::write(path, &text)?;
    Ok(text)
}

/// `iter,level,loss_phi,loss_theta` with `.` decimals and LF endings.
pub fn history_csv(h: &TrainHistory) -> String {
    let mut s = String::from("iter,level,loss_phi,loss_theta\n");
    for r in &h.records {
        writeln!(s, "{},{:?},{:?},{:?}", r.iter, r.level, r.loss_phi, r.loss_theta).unwrap();
    }
    s
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub output_dir: PathBuf,
    pub metrics: MetricReport,
}

/// Trains, then writes the checkpoint, history and final metrics into the
/// configured output directory. On divergence the partial history is still
/// written.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutcome, CliError> {
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg),
        Precision::F64 => train_typed::<f64>(cfg),
    }
}

fn train_typed<S: Scalar>(cfg: &ExperimentConfig) -> Result<TrainOutcome, CliError> {
    let pair = cfg.pair()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_artifact(&cfg.output_dir.join(CONFIG_FILE), cfg, &Empty {})?;

    let trainer = Trainer::<S>::new(cfg.trainer.clone(), &pair, cfg.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let history_path = cfg.output_dir.join(HISTORY_FILE);
    let model = match trainer.run() {
        Ok((model, history)) => {
            std::fs::write(&history_path, history_csv(&history))?;
            model
        }
        Err(abort) => {
            std::fs::write(&history_path, history_csv(&abort.history))?;
            return Err(CliError::Diverged(abort.to_string()));
        }
    };
    Checkpoint::from_model(cfg, &model).save(&cfg.output_dir.join(checkpoint::FILE_NAME))?;
    let metrics = evaluate_model(cfg, &model)?;
    write_artifact(&cfg.output_dir.join(METRICS_FILE), cfg, &MetricsBody { metrics: &metrics })?;
    Ok(TrainOutcome {
        output_dir: cfg.output_dir.clone(),
        metrics,
    })
}

fn evaluate_model<S: Scalar>(cfg: &ExperimentConfig, model: &ModelPair<S>) -> Result<MetricReport, CliError> {
    let pair = cfg.pair()?;
    let mut rng = seeded_rng(cfg.seed, EVAL_STREAM);
    Ok(metrics::evaluate(model, &pair, &cfg.eval, &mut rng)?)
}

/// Loads a checkpoint and the config to evaluate it under: `cfg` when
/// given, otherwise the config echoed in the checkpoint.
pub fn load_for_eval(
    checkpoint_path: &Path,
    cfg: Option<ExperimentConfig>,
) -> Result<(Checkpoint, ExperimentConfig), CliError> {
    let ck = Checkpoint::load(checkpoint_path)?;
    let stored = ck.experiment()?;
    let cfg = match cfg {
        None => stored,
        Some(c) => {
            if c.dim != stored.dim {
                return Err(CliError::Input(format!(
                    "config dimension {} differs from checkpoint dimension {}",
                    c.dim, stored.dim
                )));
            }
            c
        }
    };
    Ok((ck, cfg))
}

/// Recomputes the metrics of a checkpoint and writes them to `out`.
pub fn run_eval(ck: &Checkpoint, cfg: &ExperimentConfig, out: &Path) -> Result<String, CliError> {
    let report = match cfg.precision {
        Precision::F32 => evaluate_model(cfg, &ck.restore::<f32>(cfg)?)?,
        Precision::F64 => evaluate_model(cfg, &ck.restore::<f64>(cfg)?)?,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_artifact(out, cfg, &MetricsBody { metrics: &report })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum OracleMethod {
    Assignment,
    Sinkhorn,
    Bruteforce,
}

/// Squared 2-Wasserstein distance between two CSV point clouds.
pub fn run_oracle(a: &Path, b: &Path, method: OracleMethod, epsilon: f64) -> Result<f64, CliError> {
    let read = |p: &Path| -> Result<Tensor, CliError> {
        pointcloud::load(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
    };
    let (x, y) = (read(a)?, read(b)?);
    if x.shape() != y.shape() {
        return Err(CliError::Input(format!(
            "point clouds have shapes {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let v = match method {
        OracleMethod::Assignment => w2sq_assignment(&x, &y),
        OracleMethod::Bruteforce => w2sq_bruteforce(&x, &y),
        OracleMethod::Sinkhorn => w2sq_sinkhorn(&x, &y, &SinkhornOptions::with_epsilon(epsilon)),
    };
    v.map_err(|e| match e {
        otp_core::Error::Contract(m) => CliError::Input(m),
        e => CliError::Core(e),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SampleWhat {
    Source,
    Target,
    /// Source samples pushed through a checkpoint's transport map.
    Pushforward,
}

pub fn run_sample(
    cfg: &ExperimentConfig,
    what: SampleWhat,
    n: usize,
    checkpoint: Option<&Checkpoint>,
) -> Result<Tensor, CliError> {
    let pair = cfg.pair()?;
    let mut rng = seeded_rng(cfg.seed, SAMPLE_STREAM);
    match what {
        SampleWhat::Source => Ok(pair.source.sample(n, &mut rng)?),
        SampleWhat::Target => Ok(pair.target.sample(n, &mut rng)?),
        SampleWhat::Pushforward => {
            let ck = checkpoint.ok_or_else(|| CliError::Input("pushforward needs --checkpoint".into()))?;
            let x: Tensor = pair.source.sample(n, &mut rng)?;
            Ok(match cfg.precision {
                Precision::F32 => {
                    let m = ck.restore::<f32>(cfg)?;
                    otp_core::trainer::transport(&m, &x.cast(), &mut rng, cfg.eval.eps_eval)?.cast()
                }
                Precision::F64 => {
                    let m = ck.restore::<f64>(cfg)?;
                    otp_core::trainer::transport(&m, &x, &mut rng, cfg.eval.eps_eval)?
                }
            })
        }
    }
}
