//! Layers built from graph primitives. Each layer stores only parameter
//! names; the values live in a [`ParamStore`] and are bound per graph.
//!
//! Transformer blocks are post-norm (sublayer, residual add, layer norm) and
//! carry no positional encoding: customers and vehicles are sets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::ParamStore;
use super::{Graph, Tensor, TensorError, Var};
use crate::scalar::Scalar;

fn bind<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    name: &str,
) -> Result<Var, TensorError> {
    let t = store.get(name)?;
    Ok(g.param(name, t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Weight and bias uniform in `[-1/sqrt(d_in), 1/sqrt(d_in)]`.
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = format!("{prefix}.weight");
        let bias = format!("{prefix}.bias");
        store.insert_uniform(&weight, &[d_in, d_out], bound, rng)?;
        store.insert_uniform(&bias, &[d_out], bound, rng)?;
        Ok(Self {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, TensorError> {
        let w = bind(g, store, &self.weight)?;
        let b = bind(g, store, &self.bias)?;
        g.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
}

impl LayerNorm {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d: usize,
    ) -> Result<Self, TensorError> {
        let gamma = format!("{prefix}.gamma");
        let beta = format!("{prefix}.beta");
        store.insert(&gamma, Tensor::filled(&[d], T::one()))?;
        store.insert(&beta, Tensor::zeros(&[d]))?;
        Ok(Self { gamma, beta })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, TensorError> {
        let gamma = bind(g, store, &self.gamma)?;
        let beta = bind(g, store, &self.beta)?;
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub d_model: usize,
}

/// Attention result and the per-head weights `[B * heads, Tq, Tk]`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Var,
}

impl MultiHeadAttention {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(TensorError::Config(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            query: Linear::init(store, &format!("{prefix}.q"), d_model, d_model, rng)?,
            key: Linear::init(store, &format!("{prefix}.k"), d_model, d_model, rng)?,
            value: Linear::init(store, &format!("{prefix}.v"), d_model, d_model, rng)?,
            output: Linear::init(store, &format!("{prefix}.o"), d_model, d_model, rng)?,
            heads,
            d_model,
        })
    }

    /// `[B, T, D] -> [B * H, T, D / H]`.
    fn split_heads<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, TensorError> {
        let s = g.shape(x).to_vec();
        let (b, t) = (s[0], s[1]);
        let dh = self.d_model / self.heads;
        let r = g.reshape(x, &[b, t, self.heads, dh])?;
        let p = g.permute(r, &[0, 2, 1, 3])?;
        g.reshape(p, &[b * self.heads, t, dh])
    }

    /// Scaled dot-product attention per head, heads concatenated, then the
    /// output projection. Inputs are `[B, T, D]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        query: Var,
        key: Var,
        value: Var,
    ) -> Result<AttentionOutput, TensorError> {
        let (sq, sk, sv) = (
            g.shape(query).to_vec(),
            g.shape(key).to_vec(),
            g.shape(value).to_vec(),
        );
        let d = self.d_model;
        if sq.len() != 3 || sq[2] != d || sk.len() != 3 || sk[2] != d || sk != sv || sk[0] != sq[0]
        {
            return Err(TensorError::Shape {
                op: "multi_head_attention",
                left: sq,
                right: sk,
            });
        }
        let (b, tq) = (sq[0], sq[1]);
        let dh = d / self.heads;

        let q = self.query.forward(g, store, query)?;
        let k = self.key.forward(g, store, key)?;
        let v = self.value.forward(g, store, value)?;
        let q = self.split_heads(g, q)?;
        let k = self.split_heads(g, k)?;
        let v = self.split_heads(g, v)?;

        let kt = g.transpose(k)?;
        let scores = g.bmm(q, kt)?;
        let scores = g.scale(scores, T::one() / T::of(dh as f64).sqrt());
        let weights = g.softmax(scores)?;
        let ctx = g.bmm(weights, v)?;

        let ctx = g.reshape(ctx, &[b, self.heads, tq, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, tq, d])?;
        let output = self.output.forward(g, store, ctx)?;
        Ok(AttentionOutput { output, weights })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_model: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        Ok(Self {
            up: Linear::init(store, &format!("{prefix}.up"), d_model, hidden, rng)?,
            down: Linear::init(store, &format!("{prefix}.down"), hidden, d_model, rng)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, TensorError> {
        let h = self.up.forward(g, store, x)?;
        let h = g.relu(h);
        self.down.forward(g, store, h)
    }
}

fn residual_norm<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    norm: &LayerNorm,
    x: Var,
    sub: Var,
) -> Result<Var, TensorError> {
    let s = g.add(x, sub)?;
    norm.forward(g, store, s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerEncoder {
    pub layers: Vec<EncoderLayer>,
}

impl TransformerEncoder {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        layers: usize,
        d_model: usize,
        heads: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let layers = (0..layers)
            .map(|i| {
                let p = format!("{prefix}.{i}");
                Ok(EncoderLayer {
                    attention: MultiHeadAttention::init(
                        store,
                        &format!("{p}.self_attn"),
                        d_model,
                        heads,
                        rng,
                    )?,
                    norm1: LayerNorm::init(store, &format!("{p}.norm1"), d_model)?,
                    ff: FeedForward::init(store, &format!("{p}.ff"), d_model, hidden, rng)?,
                    norm2: LayerNorm::init(store, &format!("{p}.norm2"), d_model)?,
                })
            })
            .collect::<Result<_, TensorError>>()?;
        Ok(Self { layers })
    }

    /// `[B, S, D] -> [B, S, D]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, TensorError> {
        let mut x = x;
        for layer in &self.layers {
            let a = layer.attention.forward(g, store, x, x, x)?.output;
            x = residual_norm(g, store, &layer.norm1, x, a)?;
            let f = layer.ff.forward(g, store, x)?;
            x = residual_norm(g, store, &layer.norm2, x, f)?;
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderLayer {
    pub self_attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
    pub norm3: LayerNorm,
}

/// Decoder without a causal mask: every target row attends to every other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerDecoder {
    pub layers: Vec<DecoderLayer>,
}

impl TransformerDecoder {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        layers: usize,
        d_model: usize,
        heads: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let layers = (0..layers)
            .map(|i| {
                let p = format!("{prefix}.{i}");
                Ok(DecoderLayer {
                    self_attention: MultiHeadAttention::init(
                        store,
                        &format!("{p}.self_attn"),
                        d_model,
                        heads,
                        rng,
                    )?,
                    norm1: LayerNorm::init(store, &format!("{p}.norm1"), d_model)?,
                    cross_attention: MultiHeadAttention::init(
                        store,
                        &format!("{p}.cross_attn"),
                        d_model,
                        heads,
                        rng,
                    )?,
                    norm2: LayerNorm::init(store, &format!("{p}.norm2"), d_model)?,
                    ff: FeedForward::init(store, &format!("{p}.ff"), d_model, hidden, rng)?,
                    norm3: LayerNorm::init(store, &format!("{p}.norm3"), d_model)?,
                })
            })
            .collect::<Result<_, TensorError>>()?;
        Ok(Self { layers })
    }

    /// `target [B, V, D]`, `memory [B, S, D]` -> `[B, V, D]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        target: Var,
        memory: Var,
    ) -> Result<Var, TensorError> {
        let mut x = target;
        for layer in &self.layers {
            let a = layer.self_attention.forward(g, store, x, x, x)?.output;
            x = residual_norm(g, store, &layer.norm1, x, a)?;
            let c = layer
                .cross_attention
                .forward(g, store, x, memory, memory)?
                .output;
            x = residual_norm(g, store, &layer.norm2, x, c)?;
            let f = layer.ff.forward(g, store, x)?;
            x = residual_norm(g, store, &layer.norm3, x, f)?;
        }
        Ok(x)
    }
}
