//! Returns, entropy schedule and the combined actor-critic objective.

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::tensor::{Graph, Tensor, Var};

/// `G_t = r_t + gamma * G_{t+1}` with `G_T = r_T`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Result<Vec<f64>, TrainError> {
    if rewards.is_empty() {
        return Err(TrainError::Contract("returns of an empty episode".into()));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    Ok(out)
}

/// Linear interpolation from `entropy_start` at episode 0 to `entropy_end`
/// at the final episode.
pub fn entropy_coef_schedule(episode: usize, cfg: &TrainConfig) -> f64 {
    if cfg.episodes <= 1 {
        return cfg.entropy_start;
    }
    let frac = (episode.min(cfg.episodes - 1)) as f64 / (cfg.episodes - 1) as f64;
    cfg.entropy_start + (cfg.entropy_end - cfg.entropy_start) * frac
}

/// Per-step scalars on the graph.
#[derive(Debug, Clone, Copy)]
pub struct StepTerms {
    /// Sum over vehicles of the chosen action's log-probability.
    pub log_prob: Var,
    /// Sum over vehicles of the masked-policy entropy.
    pub entropy: Var,
    pub value: Var,
}

/// Builds the log-probability and entropy sums for `logits` (`[V, S]`) at
/// the chosen candidates.
pub fn step_terms(
    g: &mut Graph<f64>,
    logits: Var,
    value: Var,
    masks: &[Vec<bool>],
    candidates: &[usize],
) -> Result<StepTerms, TrainError> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != masks.len() || shape[0] != candidates.len() {
        return Err(TrainError::Contract(format!(
            "logits {shape:?} for {} masks and {} actions",
            masks.len(),
            candidates.len()
        )));
    }
    let flat: Vec<bool> = masks.iter().flatten().copied().collect();
    let logp = g.masked_log_softmax(logits, &flat)?;
    let picked = candidates
        .iter()
        .enumerate()
        .map(|(v, &c)| g.index(logp, v * shape[1] + c))
        .collect::<Result<Vec<_>, _>>()?;
    let picked = g.stack(&picked)?;
    let log_prob = g.sum(picked);
    let h = g.masked_entropy(logits, &flat)?;
    let entropy = g.sum(h);
    Ok(StepTerms {
        log_prob,
        entropy,
        value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub total: f64,
}

/// `policy + value_coef * value - entropy_coef * entropy` with
/// `policy = -sum_t log_pi_t * (G_t - V_t)` (value detached),
/// `value = sum_t (G_t - V_t)^2`, `entropy = sum_t H_t`.
pub fn a2c_loss(
    g: &mut Graph<f64>,
    terms: &[StepTerms],
    returns: &[f64],
    entropy_coef: f64,
    value_coef: f64,
) -> Result<(Var, LossReport), TrainError> {
    if terms.len() != returns.len() || terms.is_empty() {
        return Err(TrainError::Contract(format!(
            "{} step terms for {} returns",
            terms.len(),
            returns.len()
        )));
    }
    let mut policy_parts = Vec::with_capacity(terms.len());
    let mut value_parts = Vec::with_capacity(terms.len());
    let mut entropy_parts = Vec::with_capacity(terms.len());
    for (t, &ret) in terms.iter().zip(returns) {
        let advantage = ret - g.value(t.value).item();
        policy_parts.push(g.scale(t.log_prob, -advantage));
        let target = g.constant(Tensor::scalar(ret));
        let err = g.sub(target, t.value)?;
        value_parts.push(g.square(err)?);
        entropy_parts.push(t.entropy);
    }
    let mut sum_of = |parts: &[Var]| -> Result<Var, TrainError> {
        let s = g.stack(parts)?;
        Ok(g.sum(s))
    };
    let policy = sum_of(&policy_parts)?;
    let value = sum_of(&value_parts)?;
    let entropy = sum_of(&entropy_parts)?;
    let weighted_value = g.scale(value, value_coef);
    let weighted_entropy = g.scale(entropy, entropy_coef);
    let partial = g.add(policy, weighted_value)?;
    let total = g.sub(partial, weighted_entropy)?;
    let report = LossReport {
        policy: g.value(policy).item(),
        value: g.value(value).item(),
        entropy: g.value(entropy).item(),
        entropy_coef,
        value_coef,
        total: g.value(total).item(),
    };
    Ok((total, report))
}
