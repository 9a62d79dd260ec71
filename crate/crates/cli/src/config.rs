//! Experiment configuration as a flat map of dotted keys.
//!
//! A config file is a JSON object whose keys are either dotted
//! (`"train.kt": 20`) or nested (`{"train": {"kt": 20}}`); both flatten to
//! the same map. Command-line overrides use the same keys. Resolution
//! starts from the defaults for the configured dimension, applies the
//! `train.method` preset, and then every explicit key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use otp_core::{
    Activation, AdamConfig, DatasetPair, EvalProtocol, Family, GeneratorKind, NoiseSchedule, PotentialKind, Role,
    ScheduleKind, SyntheticDataset, TrainerConfig,
};

use crate::error::CliError;

/// Environment variable naming the directory under which runs are written
/// when no `output_dir` is configured.
pub const OUTPUT_ROOT_ENV: &str = "OTP_OUTPUT_ROOT";

pub type RawConfig = BTreeMap<String, Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Decreasing smoothing schedule, deterministic generator.
    Smoothed,
    Unsmoothed,
    UnsmoothedStochastic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub pair: DatasetPair,
    pub dim: usize,
    pub trainer: TrainerConfig,
    pub eval: EvalProtocol,
    pub seed: u64,
    pub precision: Precision,
    pub output_dir: PathBuf,
    /// Every key that affects results, with its resolved value; written
    /// into all artifacts. The output location is left out.
    pub resolved: RawConfig,
}

impl ExperimentConfig {
    pub fn pair(&self) -> Result<DatasetPair, CliError> {
        Ok(self.pair.clone())
    }
}

fn flatten_into(prefix: &str, v: &Value, out: &mut RawConfig) -> Result<(), CliError> {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, child, out)?;
            }
            Ok(())
        }
        _ if prefix.is_empty() => Err(CliError::Config("config must be a JSON object".into())),
        _ => {
            if out.insert(prefix.to_string(), v.clone()).is_some() {
                return Err(CliError::Config(format!("key `{prefix}` given twice")));
            }
            Ok(())
        }
    }
}

pub fn parse_json(text: &str) -> Result<RawConfig, CliError> {
    let v: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
    let mut out = RawConfig::new();
    flatten_into("", &v, &mut out)?;
    Ok(out)
}

pub fn load_file(path: &Path) -> Result<RawConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_json(&text)
}

/// Parses `--key value` and `--key=value` pairs. Values that parse as JSON
/// keep their type; anything else is taken as a string.
pub fn parse_overrides(args: &[String]) -> Result<RawConfig, CliError> {
    let mut out = RawConfig::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            return Err(CliError::Config(format!("expected `--key value`, got `{a}`")));
        };
        let (key, raw) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::Config(format!("override `--{flag}` is missing a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        out.insert(key, value);
    }
    Ok(out)
}

/// Typed reader that consumes keys and reports field-level errors.
struct Reader {
    raw: RawConfig,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.raw.remove(key)
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| CliError::Config(format!("`{key}` must be a number, got {v}"))),
        }
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|u| u as usize)
                .ok_or_else(|| CliError::Config(format!("`{key}` must be a non-negative integer, got {v}"))),
        }
    }

    fn floats(&mut self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| v.as_f64())
                .collect::<Option<Vec<_>>>()
                .map(Some)
                .ok_or_else(|| CliError::Config(format!("`{key}` must be an array of numbers"))),
            Some(v) => Err(CliError::Config(format!("`{key}` must be an array of numbers, got {v}"))),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<String>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(CliError::Config(format!("`{key}` must be a string, got {v}"))),
        }
    }
}

fn field<T>(key: &str, r: otp_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Config(format!("`{key}`: {e}")))
}

fn parse_method(s: &str) -> Result<Method, CliError> {
    match s {
        "otp" | "smoothed" => Ok(Method::Smoothed),
        "otm" | "unsmoothed" => Ok(Method::Unsmoothed),
        "otm_s" | "otm-s" | "unsmoothed_stochastic" => Ok(Method::UnsmoothedStochastic),
        other => Err(CliError::Config(format!(
            "`train.method` must be otp, otm or otm_s, got `{other}`"
        ))),
    }
}

/// A block family, or a Gaussian pair given by `dataset.mean`,
/// `dataset.cov` (row-major) and optional `dataset.target_mean`,
/// `dataset.target_cov` that default to the source parameters.
fn dataset(r: &mut Reader, family: &str, dim: usize) -> Result<(DatasetPair, Option<[Vec<f64>; 4]>), CliError> {
    if family != "gaussian" {
        let f = field("dataset.family", Family::parse_block(family))?;
        let pair = DatasetPair::block(f, dim).map_err(|e| CliError::Config(format!("`dataset`: {e}")))?;
        return Ok((pair, None));
    }
    let mean = r.floats("dataset.mean")?.unwrap_or_else(|| vec![0.0; dim]);
    let cov = r.floats("dataset.cov")?.unwrap_or_else(|| {
        (0..dim * dim).map(|i| if i % (dim + 1) == 0 { 1.0 } else { 0.0 }).collect()
    });
    let target_mean = r.floats("dataset.target_mean")?.unwrap_or_else(|| mean.clone());
    let target_cov = r.floats("dataset.target_cov")?.unwrap_or_else(|| cov.clone());
    let side = |mean: &[f64], cov: &[f64], role, key: &str| {
        SyntheticDataset::new(
            Family::Gaussian {
                mean: mean.to_vec(),
                cov: cov.to_vec(),
            },
            dim,
            role,
        )
        .map_err(|e| CliError::Config(format!("`{key}`: {e}")))
    };
    let pair = DatasetPair::new(
        side(&mean, &cov, Role::Source, "dataset.mean/cov")?,
        side(&target_mean, &target_cov, Role::Target, "dataset.target_mean/target_cov")?,
    )
    .map_err(|e| CliError::Config(format!("`dataset`: {e}")))?;
    Ok((pair, Some([mean, cov, target_mean, target_cov])))
}

/// Resolves a merged raw map (file keys overlaid by overrides).
pub fn resolve(raw: RawConfig) -> Result<ExperimentConfig, CliError> {
    let mut r = Reader { raw };
    let family_name = r
        .string("dataset.family")?
        .ok_or_else(|| CliError::Config("`dataset.family` is required".into()))?;
    let dim = r.usize("dataset.dim", 0)?;
    if dim == 0 {
        return Err(CliError::Config("`dataset.dim` is required and must be positive".into()));
    }
    let (pair, gaussian) = dataset(&mut r, &family_name, dim)?;

    let method = match r.string("train.method")? {
        Some(m) => parse_method(&m)?,
        None => Method::Smoothed,
    };
    let base = match method {
        Method::Smoothed => TrainerConfig::smoothed(dim),
        Method::Unsmoothed => TrainerConfig::unsmoothed(dim),
        Method::UnsmoothedStochastic => TrainerConfig::unsmoothed_stochastic(dim),
    };

    let total_iters = r.usize("train.k", base.total_iters)?;
    let kind = match r.string("schedule.kind")? {
        Some(s) => field("schedule.kind", ScheduleKind::parse(&s))?,
        None => base.schedule.kind,
    };
    let schedule = NoiseSchedule {
        kind,
        sigma_max: r.f64("schedule.sigma_max", base.schedule.sigma_max)?,
        sigma_min: r.f64("schedule.sigma_min", base.schedule.sigma_min)?,
        period: r.usize("schedule.period", base.schedule.period)?,
        total: total_iters,
    };

    let generator = match r.string("train.generator")?.as_deref() {
        None => base.generator,
        Some("deterministic") => GeneratorKind::Deterministic,
        Some("noise_concat") => GeneratorKind::NoiseConcat {
            noise_dim: base.generator.noise_dim().max(dim),
        },
        Some(o) => {
            return Err(CliError::Config(format!(
                "`train.generator` must be deterministic or noise_concat, got `{o}`"
            )))
        }
    };
    let generator = match (generator, r.take("train.noise_dim")) {
        (g, None) => g,
        (GeneratorKind::NoiseConcat { .. }, Some(v)) => GeneratorKind::NoiseConcat {
            noise_dim: v
                .as_u64()
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::Config(format!("`train.noise_dim` must be a positive integer, got {v}")))?
                as usize,
        },
        (GeneratorKind::Deterministic, Some(_)) => {
            return Err(CliError::Config(
                "`train.noise_dim` needs `train.generator` = noise_concat".into(),
            ))
        }
    };
    let potential = match r.string("train.potential")?.as_deref() {
        None => base.potential,
        Some("mlp") => PotentialKind::Mlp,
        Some("icnn") => PotentialKind::Icnn,
        Some(o) => return Err(CliError::Config(format!("`train.potential` must be mlp or icnn, got `{o}`"))),
    };
    let activation = match r.string("train.activation")?.as_deref() {
        None => base.activation,
        Some("relu") => Activation::Relu,
        Some("leaky_relu") => Activation::LeakyRelu(Activation::LEAKY_SLOPE),
        Some(o) => {
            return Err(CliError::Config(format!(
                "`train.activation` must be relu or leaky_relu, got `{o}`"
            )))
        }
    };

    let trainer = TrainerConfig {
        cost_alpha: r.f64("train.alpha", base.cost_alpha)?,
        lambda_r1: r.f64("train.lambda", base.lambda_r1)?,
        inner_steps: r.usize("train.kt", base.inner_steps)?,
        total_iters,
        batch: r.usize("train.batch", base.batch)?,
        adam: AdamConfig {
            lr: r.f64("train.lr", base.adam.lr)?,
            beta1: r.f64("train.beta1", base.adam.beta1)?,
            beta2: r.f64("train.beta2", base.adam.beta2)?,
            eps: r.f64("train.adam_eps", base.adam.eps)?,
        },
        generator,
        potential,
        schedule,
        hidden: r.usize("train.hidden", base.hidden)?,
        hidden_layers: r.usize("train.hidden_layers", base.hidden_layers)?,
        activation,
        log_every: r.usize("train.log_every", base.log_every)?,
    };
    trainer.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let oracle_n = r.usize("eval.oracle_n", EvalProtocol::DEFAULT_ORACLE_N)?;
    let eval = EvalProtocol {
        n: r.usize("eval.n", EvalProtocol::DEFAULT_N)?,
        repeats: r.usize("eval.repeats", EvalProtocol::DEFAULT_REPEATS)?,
        eps_eval: r.f64("eval.eps_eval", schedule.sigma_min)?,
        oracle_fallback: (oracle_n > 0).then_some(oracle_n),
    };
    eval.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let seed = r.usize("seed", 0)? as u64;
    let precision = match r.string("train.precision")?.as_deref() {
        None | Some("f64") => Precision::F64,
        Some("f32") => Precision::F32,
        Some(o) => return Err(CliError::Config(format!("`train.precision` must be f32 or f64, got `{o}`"))),
    };
    let output_dir = match r.string("output_dir")? {
        Some(p) => PathBuf::from(p),
        None => {
            let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            root.join(format!("{}-d{dim}-seed{seed}", pair.source.family.name()))
        }
    };

    if let Some(k) = r.raw.keys().next() {
        return Err(CliError::Config(format!("unknown config key `{k}`")));
    }

    let method_name = match method {
        Method::Smoothed => "otp",
        Method::Unsmoothed => "otm",
        Method::UnsmoothedStochastic => "otm_s",
    };
    let mut resolved = RawConfig::new();
    let mut put = |k: &str, v: Value| {
        resolved.insert(k.to_string(), v);
    };
    put("dataset.family", pair.source.family.name().into());
    put("dataset.dim", dim.into());
    if let Some([mean, cov, target_mean, target_cov]) = gaussian {
        put("dataset.mean", mean.into());
        put("dataset.cov", cov.into());
        put("dataset.target_mean", target_mean.into());
        put("dataset.target_cov", target_cov.into());
    }
    put("train.method", method_name.into());
    put("train.k", total_iters.into());
    put("train.kt", trainer.inner_steps.into());
    put("train.batch", trainer.batch.into());
    put("train.lr", trainer.adam.lr.into());
    put("train.beta1", trainer.adam.beta1.into());
    put("train.beta2", trainer.adam.beta2.into());
    put("train.adam_eps", trainer.adam.eps.into());
    put("train.alpha", trainer.cost_alpha.into());
    put("train.lambda", trainer.lambda_r1.into());
    match trainer.generator {
        GeneratorKind::Deterministic => put("train.generator", "deterministic".into()),
        GeneratorKind::NoiseConcat { noise_dim } => {
            put("train.generator", "noise_concat".into());
            put("train.noise_dim", noise_dim.into());
        }
    }
    put(
        "train.potential",
        match trainer.potential {
            PotentialKind::Mlp => "mlp",
            PotentialKind::Icnn => "icnn",
        }
        .into(),
    );
    put(
        "train.activation",
        match trainer.activation {
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "leaky_relu",
        }
        .into(),
    );
    put("train.hidden", trainer.hidden.into());
    put("train.hidden_layers", trainer.hidden_layers.into());
    put("train.log_every", trainer.log_every.into());
    put("train.precision", precision.name().into());
    put("schedule.kind", schedule.kind.name().into());
    put("schedule.sigma_max", schedule.sigma_max.into());
    put("schedule.sigma_min", schedule.sigma_min.into());
    put("schedule.period", schedule.period.into());
    put("eval.n", eval.n.into());
    put("eval.repeats", eval.repeats.into());
    put("eval.eps_eval", eval.eps_eval.into());
    put("eval.oracle_n", oracle_n.into());
    put("seed", seed.into());

    Ok(ExperimentConfig {
        pair,
        dim,
        trainer,
        eval,
        seed,
        precision,
        output_dir,
        resolved,
    })
}

/// File keys overlaid by override keys, then resolved.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut raw = match path {
        Some(p) => load_file(p)?,
        None => RawConfig::new(),
    };
    raw.extend(parse_overrides(overrides)?);
    resolve(raw)
}

/// The resolved map as a JSON object, keys sorted.
pub fn echo(cfg: &ExperimentConfig) -> Value {
    Value::Object(cfg.resolved.iter().map(|(k, v)| (k.clone(), v.clone())).collect::<Map<_, _>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(text: &str) -> RawConfig {
        parse_json(text).unwrap()
    }

    #[test]
    fn nested_and_dotted_keys_agree() {
        let a = raw(r#"{"dataset": {"family": "perpendicular", "dim": 2}, "train": {"kt": 3}}"#);
        let b = raw(r#"{"dataset.family": "perpendicular", "dataset.dim": 2, "train.kt": 3}"#);
        assert_eq!(a, b);
    }

    #[test]
    fn defaults_follow_dimension() {
        let c = resolve(raw(r#"{"dataset.family": "one_to_many", "dataset.dim": 16}"#)).unwrap();
        assert_eq!(c.trainer.hidden, 1024);
        assert_eq!(c.trainer.inner_steps, 20);
        assert_eq!(c.eval.eps_eval, 0.05);
        let c = resolve(raw(r#"{"dataset.family": "perpendicular", "dataset.dim": 2}"#)).unwrap();
        assert_eq!(c.trainer.hidden, 256);
    }

    #[test]
    fn overrides_win_and_keep_types() {
        let mut r = raw(r#"{"dataset.family": "parallel", "dataset.dim": 2, "train.kt": 5}"#);
        r.extend(parse_overrides(&["--train.kt".into(), "7".into(), "--train.method=otm".into()]).unwrap());
        let c = resolve(r).unwrap();
        assert_eq!(c.trainer.inner_steps, 7);
        assert_eq!(c.trainer.schedule.sigma_min, 0.0);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = |text: &str, needle: &str| {
            let e = resolve(raw(text)).unwrap_err().to_string();
            assert!(e.contains(needle), "{e}");
        };
        bad(r#"{"dataset.family": "parallel", "dataset.dim": 2, "train.kt": -1}"#, "train.kt");
        bad(r#"{"dataset.family": "parallel", "dataset.dim": 2, "train.bogus": 1}"#, "train.bogus");
        bad(r#"{"dataset.family": "nope", "dataset.dim": 2}"#, "dataset.family");
        bad(r#"{"dataset.family": "parallel", "dataset.dim": 3}"#, "dataset");
        bad(r#"{"dataset.family": "parallel", "dataset.dim": 2, "train.lr": "fast"}"#, "train.lr");
    }

    #[test]
    fn resolved_echo_round_trips() {
        let c = resolve(raw(r#"{"dataset.family": "grid", "dataset.dim": 4, "train.method": "otm_s"}"#)).unwrap();
        let again = resolve(c.resolved.clone()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn gaussian_pair_defaults_to_equal_sides() {
        let c = resolve(raw(r#"{"dataset.family": "gaussian", "dataset.dim": 2, "dataset.mean": [1, 2]}"#)).unwrap();
        assert_eq!(c.pair.source.family, c.pair.target.family);
        assert_eq!(c.pair.reference_w2sq().unwrap(), 0.0);
        assert_eq!(resolve(c.resolved.clone()).unwrap(), c);
        let e = resolve(raw(r#"{"dataset.family": "gaussian", "dataset.dim": 2, "dataset.cov": [1, 3, 3, 1]}"#));
        assert!(e.unwrap_err().to_string().contains("dataset.mean/cov"));
    }
}
