//! Portable JSON form of an episode's initial state.

use serde::{Deserialize, Serialize};

use super::{EnvConfig, EnvError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub seed: u64,
    pub n_clients: usize,
    pub n_vehicles: usize,
    pub positions: Vec<[f64; 2]>,
    pub demands: Vec<u32>,
    pub depot: [f64; 2],
    #[serde(rename = "Q")]
    pub q: f64,
    pub depot_capacity: f64,
    /// Full environment configuration, so reward weights replay too.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<EnvConfig>,
}

impl Instance {
    pub fn validate(&self) -> Result<(), EnvError> {
        let fail = |m: String| Err(EnvError::Config(m));
        if self.positions.len() != self.n_clients || self.demands.len() != self.n_clients {
            return fail(format!(
                "instance lists {} positions and {} demands for {} clients",
                self.positions.len(),
                self.demands.len(),
                self.n_clients
            ));
        }
        let in_square = |p: &[f64; 2]| p.iter().all(|c| (0.0..=1.0).contains(c));
        if !self.positions.iter().all(in_square) || !in_square(&self.depot) {
            return fail("instance positions must lie in the unit square".into());
        }
        if self.demands.contains(&0) {
            return fail("instance demands must be positive".into());
        }
        if !(self.q > 0.0) || !(self.depot_capacity > 0.0) {
            return fail("instance capacities must be positive".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        let inst: Self = serde_json::from_str(text)
            .map_err(|e| EnvError::Config(format!("instance JSON: {e}")))?;
        inst.validate()?;
        Ok(inst)
    }

    /// Configuration to replay with: the embedded one if present, else defaults.
    pub fn env_config(&self) -> EnvConfig {
        self.config.clone().unwrap_or_default()
    }
}
