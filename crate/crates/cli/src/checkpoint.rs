//! Model checkpoints as self-describing JSON.
//!
//! A checkpoint holds a format version, the resolved experiment config, the
//! seed, and every network parameter as `{name, shape, values}` with values
//! widened to `f64`. Serialization is canonical: loading a checkpoint and
//! saving it again reproduces the same bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use otp_core::{ModelPair, Parametrized, Scalar, Tensor};

use crate::config::{self, ExperimentConfig, RawConfig};
use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;
pub const FILE_NAME: &str = "model.ckpt.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: RawConfig,
    pub seed: u64,
    pub params: Vec<ParamRecord>,
}

fn records<S: Scalar, P: Parametrized<S>>(prefix: &str, model: &P, out: &mut Vec<ParamRecord>) {
    for (name, p) in model.param_names().into_iter().zip(model.params()) {
        out.push(ParamRecord {
            name: format!("{prefix}.{name}"),
            shape: p.shape().to_vec(),
            values: p.data().iter().map(|v| v.as_f64()).collect(),
        });
    }
}

impl Checkpoint {
    pub fn from_model<S: Scalar>(cfg: &ExperimentConfig, model: &ModelPair<S>) -> Self {
        let mut params = Vec::new();
        records("transport", &model.transport, &mut params);
        records("potential", &model.potential, &mut params);
        Self {
            format_version: FORMAT_VERSION,
            config: cfg.resolved.clone(),
            seed: cfg.seed,
            params,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let ck: Self = serde_json::from_str(text).map_err(|e| CliError::Checkpoint(e.to_string()))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(CliError::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The experiment config echoed in the checkpoint.
    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        config::resolve(self.config.clone())
            .map_err(|e| CliError::Checkpoint(format!("embedded config: {e}")))
    }

    pub fn dim(&self) -> Result<usize, CliError> {
        match self.config.get("dataset.dim").and_then(Value::as_u64) {
            Some(d) => Ok(d as usize),
            None => Err(CliError::Checkpoint("embedded config has no `dataset.dim`".into())),
        }
    }

    /// Rebuilds the model described by `cfg` and fills it with the stored
    /// parameters. Every parameter must be present with its exact shape.
    pub fn restore<S: Scalar>(&self, cfg: &ExperimentConfig) -> Result<ModelPair<S>, CliError> {
        let mut rng = otp_core::seeded_rng(0, 0);
        let mut model = ModelPair::<S>::init(&cfg.trainer, cfg.dim, &mut rng)
            .map_err(|e| CliError::Checkpoint(format!("cannot build model: {e}")))?;
        let mut expected = Vec::new();
        fill("transport", &mut model.transport, &self.params, &mut expected)?;
        fill("potential", &mut model.potential, &self.params, &mut expected)?;
        if let Some(extra) = self.params.iter().find(|r| !expected.contains(&r.name)) {
            return Err(CliError::Checkpoint(format!("unexpected parameter `{}`", extra.name)));
        }
        let mut projected = model.potential.clone();
        projected.project();
        if projected != model.potential {
            return Err(CliError::Checkpoint(
                "potential weights violate the convexity constraint".into(),
            ));
        }
        model.adam_transport = otp_core::AdamState::new(&model.transport, cfg.trainer.adam);
        model.adam_potential = otp_core::AdamState::new(&model.potential, cfg.trainer.adam);
        Ok(model)
    }
}

fn fill<S: Scalar, P: Parametrized<S>>(
    prefix: &str,
    model: &mut P,
    stored: &[ParamRecord],
    seen: &mut Vec<String>,
) -> Result<(), CliError> {
    let names = model.param_names();
    for (name, slot) in names.into_iter().zip(model.params_mut()) {
        let full = format!("{prefix}.{name}");
        let rec = stored
            .iter()
            .find(|r| r.name == full)
            .ok_or_else(|| CliError::Checkpoint(format!("missing parameter `{full}`")))?;
        if rec.shape != slot.shape() {
            return Err(CliError::Checkpoint(format!(
                "parameter `{full}` has shape {:?}, model expects {:?}",
                rec.shape,
                slot.shape()
            )));
        }
        let values = rec.values.iter().map(|&v| S::of(v)).collect();
        *slot = Tensor::new(rec.shape.clone(), values)
            .map_err(|e| CliError::Checkpoint(format!("parameter `{full}`: {e}")))?;
        seen.push(full);
    }
    Ok(())
}
