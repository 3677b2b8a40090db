//! Actor-critic policies over the CVRP observation: a classical transformer
//! pointer network and two hybrid variants whose attention heads are
//! variational circuits.
//!
//! All variants score `S = N_c + 1` service candidates per vehicle. Candidate
//! row 0 is the depot, row `s > 0` is client `s - 1`; the environment uses
//! the opposite convention (clients first, depot last), see
//! [`candidate_to_action`] and [`candidate_mask`].

mod sample;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::scalar::qubits_for;
use crate::tensor::nn::{Linear, TransformerDecoder, TransformerEncoder};
use crate::tensor::optim::ParamStore;
use crate::tensor::{Graph, Tensor, TensorError, Var};

pub use sample::{sample_actions, SampleMode, Sampled};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("observation has length {got}, expected {expected}")]
    Observation { got: usize, expected: usize },
    #[error("vehicle {vehicle}: every candidate is masked")]
    Infeasible { vehicle: usize },
    #[error("invalid policy specification: {0}")]
    Spec(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Cpn,
    Hqp,
    Fqp,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Cpn, Variant::Hqp, Variant::Fqp];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cpn => "cpn",
            Variant::Hqp => "hqp",
            Variant::Fqp => "fqp",
        }
    }

    pub fn is_quantum(self) -> bool {
        self != Variant::Cpn
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cpn" => Ok(Variant::Cpn),
            "hqp" => Ok(Variant::Hqp),
            "fqp" => Ok(Variant::Fqp),
            other => Err(PolicyError::Spec(format!(
                "unknown variant `{other}` (cpn, hqp, fqp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySpec {
    pub variant: Variant,
    pub n_clients: usize,
    pub n_vehicles: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Encoder and decoder depth of the classical network.
    pub classical_layers: usize,
    /// Circuit depth of the paired-head encoder and decoder.
    pub quantum_layers: usize,
    /// Circuit depth of the fully quantum embeddings.
    pub embedding_layers: usize,
    /// Circuit depth of the fully quantum encoder and decoder heads.
    pub encoder_layers: usize,
    /// Width of the feed-forward layer before the pointer and critic heads.
    pub hidden: usize,
    /// Circuit angles start uniform in `[-angle_init, angle_init]`.
    pub angle_init: f64,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self {
            variant: Variant::Cpn,
            n_clients: 20,
            n_vehicles: 4,
            d_model: 32,
            heads: 4,
            classical_layers: 7,
            quantum_layers: 1,
            embedding_layers: 1,
            encoder_layers: 1,
            hidden: 128,
            angle_init: 0.1,
        }
    }
}

impl PolicySpec {
    pub fn new(variant: Variant, n_clients: usize, n_vehicles: usize) -> Self {
        Self {
            variant,
            n_clients,
            n_vehicles,
            ..Self::default()
        }
    }

    /// Number of service candidates, depot included.
    pub fn candidates(&self) -> usize {
        self.n_clients + 1
    }

    /// Width of the raw customer vector.
    pub fn d_c(&self) -> usize {
        3 * self.candidates()
    }

    /// Width of the raw vehicle vector.
    pub fn d_v(&self) -> usize {
        3 * self.n_vehicles
    }

    pub fn observation_len(&self) -> usize {
        self.d_c() + self.d_v()
    }

    /// Input width of one decoder circuit.
    pub fn d_dec(&self) -> usize {
        match self.variant {
            Variant::Fqp => self.d_v() + self.heads * self.d_c(),
            _ => self.d_v() + self.d_c(),
        }
    }

    pub fn encoder_qubits(&self) -> usize {
        qubits_for(self.d_c())
    }

    pub fn decoder_qubits(&self) -> usize {
        qubits_for(self.d_dec())
    }

    pub fn customer_embedding_qubits(&self) -> usize {
        qubits_for(self.d_c())
    }

    pub fn vehicle_embedding_qubits(&self) -> usize {
        qubits_for(self.d_v())
    }

    /// Width of the per-vehicle feature row entering the joint tensor.
    fn vehicle_feature_width(&self) -> usize {
        match self.variant {
            Variant::Cpn => self.d_model,
            _ => self.heads * self.d_dec(),
        }
    }

    /// Width of the per-(vehicle, candidate) joint feature.
    pub fn joint_width(&self) -> usize {
        match self.variant {
            Variant::Cpn => 2 * self.d_model,
            _ => self.vehicle_feature_width() + 3,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let fail = |m: String| Err(PolicyError::Spec(m));
        if self.n_clients == 0 || self.n_vehicles == 0 {
            return fail("n_clients and n_vehicles must be at least 1".into());
        }
        if self.heads == 0 || self.hidden == 0 {
            return fail("heads and hidden must be positive".into());
        }
        match self.variant {
            Variant::Cpn => {
                if self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
                    return fail(format!(
                        "d_model {} must be a positive multiple of heads {}",
                        self.d_model, self.heads
                    ));
                }
            }
            Variant::Hqp => {
                if self.quantum_layers == 0 {
                    return fail("quantum_layers must be positive".into());
                }
            }
            Variant::Fqp => {
                if self.embedding_layers == 0 || self.encoder_layers == 0 {
                    return fail("embedding_layers and encoder_layers must be positive".into());
                }
            }
        }
        if !(self.angle_init >= 0.0) {
            return fail("angle_init must be non-negative".into());
        }
        Ok(())
    }
}

/// Customer rows (depot first) and vehicle rows of an observation.
pub type SplitObservation = (Vec<[f64; 3]>, Vec<[f64; 3]>);

pub fn split_observation(
    obs: &[f64],
    n_clients: usize,
    n_vehicles: usize,
) -> Result<SplitObservation, PolicyError> {
    let expected = 3 * (n_clients + 1) + 3 * n_vehicles;
    if obs.len() != expected {
        return Err(PolicyError::Observation {
            got: obs.len(),
            expected,
        });
    }
    let triples: Vec<[f64; 3]> = obs.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let (customers, vehicles) = triples.split_at(n_clients + 1);
    Ok((customers.to_vec(), vehicles.to_vec()))
}

/// Raw vehicle vector seen by vehicle `v`: its own triple first, then the
/// others in index order.
pub fn vehicle_centric(vehicles: &[[f64; 3]], v: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * vehicles.len());
    out.extend_from_slice(&vehicles[v]);
    for (k, row) in vehicles.iter().enumerate() {
        if k != v {
            out.extend_from_slice(row);
        }
    }
    out
}

/// Environment action for candidate row `s`.
pub fn candidate_to_action(s: usize, n_clients: usize) -> usize {
    if s == 0 {
        n_clients
    } else {
        s - 1
    }
}

/// Candidate row for environment action `a`.
pub fn action_to_candidate(a: usize, n_clients: usize) -> usize {
    if a == n_clients {
        0
    } else {
        a + 1
    }
}

/// Reorders an environment mask (clients, then depot) into candidate order.
pub fn candidate_mask(env_mask: &[bool]) -> Vec<bool> {
    let (clients, depot) = env_mask.split_at(env_mask.len() - 1);
    depot.iter().chain(clients).copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Head {
    ff: Linear,
    pointer: Linear,
    critic: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Body {
    Cpn {
        customer_embed: Linear,
        vehicle_embed: Linear,
        encoder: TransformerEncoder,
        decoder: TransformerDecoder,
    },
    Hqp {
        encoder_heads: Vec<String>,
        decoder_heads: Vec<String>,
    },
    Fqp {
        customer_embed: String,
        vehicle_embed: String,
        encoder_heads: Vec<String>,
        decoder_heads: Vec<String>,
    },
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `[N_v, S]` in candidate order.
    pub logits: Var,
    /// Scalar state value.
    pub value: Var,
    /// Encoder circuit outputs per head (quantum variants only).
    pub encoder_heads: Vec<Var>,
    /// Decoder circuit outputs indexed `[vehicle][head]` (quantum variants only).
    pub decoder_heads: Vec<Vec<Var>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    /// `[N_v][S]` in candidate order.
    pub logits: Vec<Vec<f64>>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    spec: PolicySpec,
    store: ParamStore<f64>,
    body: Body,
    head: Head,
}

fn circuit<R: Rng + ?Sized>(
    store: &mut ParamStore<f64>,
    name: String,
    layers: usize,
    qubits: usize,
    half_width: f64,
    rng: &mut R,
) -> Result<String, TensorError> {
    store.insert_uniform(&name, &[layers, qubits, 3], half_width, rng)?;
    Ok(name)
}

impl Policy {
    pub fn init<R: Rng + ?Sized>(spec: &PolicySpec, rng: &mut R) -> Result<Self, PolicyError> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let s = spec;
        let body = match s.variant {
            Variant::Cpn => {
                let hidden = 4 * s.d_model;
                Body::Cpn {
                    customer_embed: Linear::init(
                        &mut store,
                        "cpn.customer_embed",
                        3,
                        s.d_model,
                        rng,
                    )?,
                    vehicle_embed: Linear::init(
                        &mut store,
                        "cpn.vehicle_embed",
                        3,
                        s.d_model,
                        rng,
                    )?,
                    encoder: TransformerEncoder::init(
                        &mut store,
                        "cpn.encoder",
                        s.classical_layers,
                        s.d_model,
                        s.heads,
                        hidden,
                        rng,
                    )?,
                    decoder: TransformerDecoder::init(
                        &mut store,
                        "cpn.decoder",
                        s.classical_layers,
                        s.d_model,
                        s.heads,
                        hidden,
                        rng,
                    )?,
                }
            }
            Variant::Hqp => {
                let (l, w) = (s.quantum_layers, s.angle_init);
                let encoder_heads = (0..s.heads)
                    .map(|i| {
                        circuit(
                            &mut store,
                            format!("hqp.encoder.{i}.angles"),
                            l,
                            s.encoder_qubits(),
                            w,
                            rng,
                        )
                    })
                    .collect::<Result<_, _>>()?;
                let decoder_heads = (0..s.heads)
                    .map(|i| {
                        circuit(
                            &mut store,
                            format!("hqp.decoder.{i}.angles"),
                            l,
                            s.decoder_qubits(),
                            w,
                            rng,
                        )
                    })
                    .collect::<Result<_, _>>()?;
                Body::Hqp {
                    encoder_heads,
                    decoder_heads,
                }
            }
            Variant::Fqp => {
                let w = s.angle_init;
                let (le, lq) = (s.embedding_layers, s.encoder_layers);
                let customer_embed = circuit(
                    &mut store,
                    "fqp.customer_embed.angles".into(),
                    le,
                    s.customer_embedding_qubits(),
                    w,
                    rng,
                )?;
                let vehicle_embed = circuit(
                    &mut store,
                    "fqp.vehicle_embed.angles".into(),
                    le,
                    s.vehicle_embedding_qubits(),
                    w,
                    rng,
                )?;
                let encoder_heads = (0..s.heads)
                    .map(|i| {
                        circuit(
                            &mut store,
                            format!("fqp.encoder.{i}.angles"),
                            lq,
                            s.encoder_qubits(),
                            w,
                            rng,
                        )
                    })
                    .collect::<Result<_, _>>()?;
                let decoder_heads = (0..s.heads)
                    .map(|i| {
                        circuit(
                            &mut store,
                            format!("fqp.decoder.{i}.angles"),
                            lq,
                            s.decoder_qubits(),
                            w,
                            rng,
                        )
                    })
                    .collect::<Result<_, _>>()?;
                Body::Fqp {
                    customer_embed,
                    vehicle_embed,
                    encoder_heads,
                    decoder_heads,
                }
            }
        };
        let head = Head {
            ff: Linear::init(&mut store, "head.ff", s.joint_width(), s.hidden, rng)?,
            pointer: Linear::init(&mut store, "head.pointer", s.hidden, 1, rng)?,
            critic: Linear::init(&mut store, "head.critic", s.hidden, 1, rng)?,
        };
        Ok(Self {
            spec: spec.clone(),
            store,
            body,
            head,
        })
    }

    /// Rebuilds a policy around stored parameters; names and shapes must match `spec`.
    pub fn from_store(spec: &PolicySpec, store: ParamStore<f64>) -> Result<Self, PolicyError> {
        let mut scratch = rand::rngs::mock::StepRng::new(0, 0);
        let fresh = Self::init(spec, &mut scratch)?;
        let same_layout = fresh.store.len() == store.len()
            && fresh
                .store
                .iter()
                .all(|(n, t)| store.get(n).is_ok_and(|s| s.shape() == t.shape()));
        if !same_layout {
            return Err(PolicyError::Spec(format!(
                "stored parameters do not match a {} policy for {} clients and {} vehicles",
                spec.variant, spec.n_clients, spec.n_vehicles
            )));
        }
        Ok(Self { store, ..fresh })
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore<f64> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.store
    }

    /// Names of circuit angle tensors.
    pub fn circuit_names(&self) -> Vec<String> {
        match &self.body {
            Body::Cpn { .. } => Vec::new(),
            Body::Hqp {
                encoder_heads,
                decoder_heads,
            } => encoder_heads.iter().chain(decoder_heads).cloned().collect(),
            Body::Fqp {
                customer_embed,
                vehicle_embed,
                encoder_heads,
                decoder_heads,
            } => [customer_embed, vehicle_embed]
                .into_iter()
                .chain(encoder_heads)
                .chain(decoder_heads)
                .cloned()
                .collect(),
        }
    }

    pub fn encoder_head_names(&self) -> &[String] {
        match &self.body {
            Body::Cpn { .. } => &[],
            Body::Hqp { encoder_heads, .. } | Body::Fqp { encoder_heads, .. } => encoder_heads,
        }
    }

    pub fn decoder_head_names(&self) -> &[String] {
        match &self.body {
            Body::Cpn { .. } => &[],
            Body::Hqp { decoder_heads, .. } | Body::Fqp { decoder_heads, .. } => decoder_heads,
        }
    }

    /// Names of parameters that only feed the value estimate.
    pub fn critic_names(&self) -> Vec<String> {
        vec![
            self.head.critic.weight.clone(),
            self.head.critic.bias.clone(),
        ]
    }

    fn bind(&self, g: &mut Graph<f64>, name: &str) -> Result<Var, PolicyError> {
        Ok(g.param(name, self.store.get(name)?))
    }

    /// Records the forward pass on `g`.
    pub fn forward(&self, g: &mut Graph<f64>, obs: &[f64]) -> Result<ForwardVars, PolicyError> {
        let s = &self.spec;
        let (customers, vehicles) = split_observation(obs, s.n_clients, s.n_vehicles)?;
        let (nv, ns) = (s.n_vehicles, s.candidates());
        let cand_flat: Vec<f64> = customers.iter().flatten().copied().collect();
        let mut encoder_vars = Vec::new();
        let mut decoder_vars = Vec::new();

        let joint = match &self.body {
            Body::Cpn {
                customer_embed,
                vehicle_embed,
                encoder,
                decoder,
            } => {
                let d = s.d_model;
                let veh_flat: Vec<f64> = vehicles.iter().flatten().copied().collect();
                let c = g.constant(Tensor::new(vec![1, ns, 3], cand_flat)?);
                let v = g.constant(Tensor::new(vec![1, nv, 3], veh_flat)?);
                let ce = customer_embed.forward(g, &self.store, c)?;
                let ve = vehicle_embed.forward(g, &self.store, v)?;
                let memory = encoder.forward(g, &self.store, ce)?;
                let dec = decoder.forward(g, &self.store, ve, memory)?;
                let dv = g.reshape(dec, &[nv, 1, d])?;
                let dv = g.expand(dv, &[nv, ns, d])?;
                let dc = g.expand(memory, &[nv, ns, d])?;
                g.concat(&[dv, dc])?
            }
            Body::Hqp {
                encoder_heads,
                decoder_heads,
            } => {
                let raw = g.constant(Tensor::vector(cand_flat.clone()));
                for name in encoder_heads {
                    let a = self.bind(g, name)?;
                    encoder_vars.push(g.vqc(raw, a, s.d_c())?);
                }
                let mut rows = Vec::with_capacity(nv);
                for v in 0..nv {
                    let e = g.constant(Tensor::vector(vehicle_centric(&vehicles, v)));
                    let mut outs = Vec::with_capacity(s.heads);
                    for (name, &z) in decoder_heads.iter().zip(&encoder_vars) {
                        let a = self.bind(g, name)?;
                        let x = g.concat(&[e, z])?;
                        outs.push(g.vqc(x, a, s.d_dec())?);
                    }
                    rows.push(g.concat(&outs)?);
                    decoder_vars.push(outs);
                }
                self.joint_with_candidates(g, &rows, cand_flat)?
            }
            Body::Fqp {
                customer_embed,
                vehicle_embed,
                encoder_heads,
                decoder_heads,
            } => {
                let raw = g.constant(Tensor::vector(cand_flat.clone()));
                let ae = self.bind(g, customer_embed)?;
                let embedded = g.vqc(raw, ae, s.d_c())?;
                for name in encoder_heads {
                    let a = self.bind(g, name)?;
                    encoder_vars.push(g.vqc(embedded, a, s.d_c())?);
                }
                let z = g.concat(&encoder_vars)?;
                let av = self.bind(g, vehicle_embed)?;
                let mut rows = Vec::with_capacity(nv);
                for v in 0..nv {
                    let e = g.constant(Tensor::vector(vehicle_centric(&vehicles, v)));
                    let e = g.vqc(e, av, s.d_v())?;
                    let x = g.concat(&[e, z])?;
                    let mut outs = Vec::with_capacity(s.heads);
                    for name in decoder_heads {
                        let a = self.bind(g, name)?;
                        outs.push(g.vqc(x, a, s.d_dec())?);
                    }
                    rows.push(g.concat(&outs)?);
                    decoder_vars.push(outs);
                }
                self.joint_with_candidates(g, &rows, cand_flat)?
            }
        };

        let (logits, value) = self.heads(g, joint)?;
        Ok(ForwardVars {
            logits,
            value,
            encoder_heads: encoder_vars,
            decoder_heads: decoder_vars,
        })
    }

    /// Per-vehicle rows expanded over candidates, joined with raw candidate triples.
    fn joint_with_candidates(
        &self,
        g: &mut Graph<f64>,
        rows: &[Var],
        cand_flat: Vec<f64>,
    ) -> Result<Var, PolicyError> {
        let (nv, ns) = (self.spec.n_vehicles, self.spec.candidates());
        let f = self.spec.vehicle_feature_width();
        let stacked = g.stack(rows)?;
        let stacked = g.reshape(stacked, &[nv, 1, f])?;
        let per_vehicle = g.expand(stacked, &[nv, ns, f])?;
        let cand = g.constant(Tensor::new(vec![1, ns, 3], cand_flat)?);
        let cand = g.expand(cand, &[nv, ns, 3])?;
        Ok(g.concat(&[per_vehicle, cand])?)
    }

    /// Feed-forward with ReLU, pointer logits `[V, S]`, mean-pooled critic.
    fn heads(&self, g: &mut Graph<f64>, joint: Var) -> Result<(Var, Var), PolicyError> {
        let (nv, ns) = (self.spec.n_vehicles, self.spec.candidates());
        let h = self.head.ff.forward(g, &self.store, joint)?;
        let h = g.relu(h);
        let logits = self.head.pointer.forward(g, &self.store, h)?;
        let logits = g.reshape(logits, &[nv, ns])?;
        let pooled = g.mean_axis(h, 0)?;
        let pooled = g.mean_axis(pooled, 0)?;
        let value = self.head.critic.forward(g, &self.store, pooled)?;
        let value = g.reshape(value, &[])?;
        Ok((logits, value))
    }

    /// Forward pass on a throwaway graph.
    pub fn evaluate(&self, obs: &[f64]) -> Result<PolicyOutput, PolicyError> {
        let mut g = Graph::new();
        let vars = self.forward(&mut g, obs)?;
        Ok(self.output(&g, &vars))
    }

    pub fn output(&self, g: &Graph<f64>, vars: &ForwardVars) -> PolicyOutput {
        let ns = self.spec.candidates();
        PolicyOutput {
            logits: g
                .value(vars.logits)
                .values()
                .chunks(ns)
                .map(<[f64]>::to_vec)
                .collect(),
            value: g.value(vars.value).item(),
        }
    }
}
