//! JSON run configuration: `{ "env": {...}, "policy": {...}, "train": {...} }`.
//! Every section and field is optional; omitted training settings take the
//! defaults of the requested variant.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::HarnessError;
use crate::a2c::TrainConfig;
use crate::env::EnvConfig;
use crate::policy::{PolicySpec, Variant};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    /// Overrides applied on top of the requested variant's policy defaults.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<Value>,
    /// Overrides applied on top of the requested variant's training defaults.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<Value>,
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub env: EnvConfig,
    pub policy: PolicySpec,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::json(path.display().to_string(), e))
    }

    /// Fills in variant defaults; policy sizes always follow the environment.
    pub fn resolve(&self, variant: Variant) -> Result<ResolvedConfig, HarnessError> {
        let mut policy: PolicySpec = overlay(
            PolicySpec::new(variant, self.env.n_clients, self.env.n_vehicles),
            self.policy.as_ref(),
            "policy",
        )?;
        if policy.variant != variant {
            return Err(HarnessError::Config(format!(
                "requested variant {variant} but the configuration describes a {} policy",
                policy.variant
            )));
        }
        policy.n_clients = self.env.n_clients;
        policy.n_vehicles = self.env.n_vehicles;
        let train: TrainConfig = overlay(
            TrainConfig::for_variant(variant),
            self.train.as_ref(),
            "train",
        )?;
        self.env.validate()?;
        policy.validate()?;
        train.validate()?;
        Ok(ResolvedConfig {
            env: self.env.clone(),
            policy,
            train,
        })
    }
}

/// Replaces the fields of `base` named in the `patch` object.
fn overlay<T: Serialize + DeserializeOwned>(
    base: T,
    patch: Option<&Value>,
    section: &str,
) -> Result<T, HarnessError> {
    let Some(patch) = patch else {
        return Ok(base);
    };
    let Value::Object(fields) = patch else {
        return Err(HarnessError::Config(format!(
            "section `{section}` must be an object"
        )));
    };
    let mut merged = serde_json::to_value(base).map_err(|e| HarnessError::json(section, e))?;
    let Value::Object(target) = &mut merged else {
        unreachable!("settings serialize to objects");
    };
    for (k, v) in fields {
        if !target.contains_key(k) {
            return Err(HarnessError::Config(format!(
                "unknown field `{k}` in section `{section}`"
            )));
        }
        target.insert(k.clone(), v.clone());
    }
    serde_json::from_value(merged).map_err(|e| HarnessError::json(section, e))
}
