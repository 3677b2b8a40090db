//! Capacitated multi-vehicle routing with classical and hybrid quantum
//! actor-critic policies: tensor autodiff, statevector simulation, the
//! routing environment, the three policy networks, A2C training and the
//! evaluation harness.
//!
//! The tensor engine, quantum simulator and geometry are generic over the
//! scalar type; the environment, policies and trainer run on `f64`.

// Settings checks are written as `!(x > 0.0)` so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod a2c;
pub mod env;
pub mod geometry;
pub mod harness;
pub mod policy;
pub mod quantum;
pub mod scalar;
pub mod tensor;

pub use a2c::{train, Checkpoint, TrainConfig, TrainError, TrainOptions};
pub use env::{ActionSet, EnvConfig, EnvError, EnvState, Instance, RewardBreakdown};
pub use harness::{HarnessError, MetricsRecord, RouteLog, RunConfig};
pub use policy::{Policy, PolicyError, PolicyOutput, PolicySpec, Variant};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type ParamStore64 = tensor::optim::ParamStore<f64>;
pub type StateVector64 = quantum::StateVector<f64>;
pub type StateVector32 = quantum::StateVector<f32>;
pub type VqcParams64 = quantum::VqcParams<f64>;
pub type Point64 = geometry::Point<f64>;
