//! Masked action selection from pointer logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{candidate_to_action, PolicyError};
use crate::env::ActionSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Stochastic,
    /// Argmax, ties to the lowest index.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampled {
    /// Chosen candidate row per vehicle.
    pub candidates: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
}

impl Sampled {
    pub fn action_set(&self, n_clients: usize) -> ActionSet {
        ActionSet(
            self.candidates
                .iter()
                .map(|&s| candidate_to_action(s, n_clients))
                .collect(),
        )
    }
}

/// Log-probabilities of the masked softmax; masked entries are `-inf`.
fn masked_log_probs(row: &[f64], mask: &[bool]) -> Vec<f64> {
    let mx = row
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = mx
        + row
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&x, _)| (x - mx).exp())
            .sum::<f64>()
            .ln();
    row.iter()
        .zip(mask)
        .map(|(&x, &m)| if m { x - lse } else { f64::NEG_INFINITY })
        .collect()
}

/// Per-vehicle masked softmax over candidate logits, then sampling or argmax.
pub fn sample_actions<R: Rng + ?Sized>(
    logits: &[Vec<f64>],
    masks: &[Vec<bool>],
    mode: SampleMode,
    rng: &mut R,
) -> Result<Sampled, PolicyError> {
    if logits.len() != masks.len() {
        return Err(PolicyError::Contract(format!(
            "{} logit rows for {} mask rows",
            logits.len(),
            masks.len()
        )));
    }
    let mut out = Sampled {
        candidates: Vec::with_capacity(logits.len()),
        log_probs: Vec::with_capacity(logits.len()),
        entropies: Vec::with_capacity(logits.len()),
    };
    for (vehicle, (row, mask)) in logits.iter().zip(masks).enumerate() {
        if row.len() != mask.len() {
            return Err(PolicyError::Contract(format!(
                "vehicle {vehicle}: {} logits for {} mask entries",
                row.len(),
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(PolicyError::Infeasible { vehicle });
        }
        let logp = masked_log_probs(row, mask);
        let valid: Vec<usize> = (0..row.len()).filter(|&j| mask[j]).collect();
        let choice = match mode {
            SampleMode::Greedy => {
                valid.iter().copied().fold(
                    valid[0],
                    |best, j| if row[j] > row[best] { j } else { best },
                )
            }
            SampleMode::Stochastic => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = *valid.last().expect("non-empty");
                for &j in &valid {
                    acc += logp[j].exp();
                    if u < acc {
                        pick = j;
                        break;
                    }
                }
                pick
            }
        };
        let entropy = -valid.iter().map(|&j| logp[j].exp() * logp[j]).sum::<f64>();
        out.candidates.push(choice);
        out.log_probs.push(logp[choice]);
        out.entropies.push(entropy);
    }
    Ok(out)
}
