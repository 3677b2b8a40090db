//! Checkpoint file: policy parameters, optimizer moments and run position.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::env::EnvConfig;
use crate::policy::{Policy, PolicySpec, Variant};
use crate::tensor::optim::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: BTreeMap<String, Tensor<f64>>,
    pub second_moment: BTreeMap<String, Tensor<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub variant: Variant,
    pub spec: PolicySpec,
    pub env: EnvConfig,
    pub train: TrainConfig,
    /// Classical weights by name.
    pub parameters: BTreeMap<String, Tensor<f64>>,
    /// Circuit angles by name, each `[layers, qubits, 3]`.
    pub quantum_angles: BTreeMap<String, Tensor<f64>>,
    pub optimizer: OptimizerState,
    /// Next episode to train.
    pub episode: usize,
    pub seed: u64,
}

impl Checkpoint {
    pub fn capture(
        policy: &Policy,
        env: &EnvConfig,
        train: &TrainConfig,
        episode: usize,
        seed: u64,
    ) -> Self {
        let circuits = policy.circuit_names();
        let store = policy.store();
        let (quantum_angles, parameters) = store
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .partition(|(k, _)| circuits.contains(k));
        Self {
            variant: policy.spec().variant,
            spec: policy.spec().clone(),
            env: env.clone(),
            train: train.clone(),
            parameters,
            quantum_angles,
            optimizer: OptimizerState {
                step: store.step(),
                first_moment: store.first_moments().clone(),
                second_moment: store.second_moments().clone(),
            },
            episode,
            seed,
        }
    }

    pub fn restore(&self) -> Result<Policy, TrainError> {
        if self.variant != self.spec.variant {
            return Err(TrainError::Config(format!(
                "checkpoint variant {} disagrees with its spec ({})",
                self.variant, self.spec.variant
            )));
        }
        let mut params = self.parameters.clone();
        params.extend(self.quantum_angles.clone());
        let store = ParamStore::from_parts(
            params,
            self.optimizer.first_moment.clone(),
            self.optimizer.second_moment.clone(),
            self.optimizer.step,
        )?;
        Ok(Policy::from_store(&self.spec, store)?)
    }

    pub fn to_json(&self) -> Result<String, TrainError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(super::io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}
