use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AssembledModel, Hyperparams, ModelInputs};
use crate::Result;

pub const MODEL_DUMP_SCHEMA: &str = "cokrige-model/v1";

/// Self-contained JSON snapshot of a model: hyperparameters (with the GLS
/// trend), the design, per-level estimates and noise blocks.
///
/// ```json
/// {
///   "schema": "cokrige-model/v1",
///   "hyper": { "rho": [..], "theta": [[..], ..], "sigma2": [..], "beta": [..] },
///   "inputs": { "design": [[..], ..], "levels": [..], "estimates": [[..], ..], "noise": [[[..]]] },
///   "loglik": -12.3
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDump {
    pub schema: String,
    pub hyper: Hyperparams,
    pub inputs: ModelInputs,
    pub loglik: f64,
}

impl ModelDump {
    pub fn from_model(model: &AssembledModel) -> Self {
        ModelDump {
            schema: MODEL_DUMP_SCHEMA.to_string(),
            hyper: model.hyper().clone(),
            inputs: model.inputs.clone(),
            loglik: model.loglik(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Rebuild the model the dump describes.
    pub fn assemble(&self) -> Result<AssembledModel> {
        super::assemble(&self.inputs, &self.hyper)
    }
}
