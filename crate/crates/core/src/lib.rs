//! Online continual learning with gradient-projected replay on synthetic
//! drifting streams.
//!
//! The crate is generic over the scalar type through [`Real`] (`f32` or
//! `f64`); the `*64`/`*32` aliases below pin the two lanes. Modules:
//!
//! - [`qp`] — non-negative QP duals and the gradient projections built on
//!   them (multi-constraint and closed-form single-constraint).
//! - [`memory`] — reservoir buffer of past samples, cosine dissimilarity
//!   scores, random and score-weighted sampling.
//! - [`model`] — linear-softmax / tanh-MLP classifiers with hand-written
//!   gradients over a flat parameter vector.
//! - [`stream`] — rotating-Gaussian drifting streams, even splits, text
//!   export.
//! - [`continual`] — the five training methods and the split protocol.
//! - [`metrics`] — per-epoch records and the CSV format.
//! - [`check`] — randomized solver self-checks against independent oracles.

pub mod check;
pub mod continual;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod qp;
pub mod real;
pub mod stream;

pub use real::Real;

pub type GradVec64 = qp::GradVec<f64>;
pub type GradVec32 = qp::GradVec<f32>;
pub type QpConfig64 = qp::QpConfig<f64>;
pub type ParamVec64 = model::ParamVec<f64>;
pub type ParamVec32 = model::ParamVec<f32>;
pub type Batch64 = model::Batch<f64>;
pub type Batch32 = model::Batch<f32>;
pub type MemoryBuffer64 = memory::MemoryBuffer<f64>;
pub type StreamSpec64 = stream::StreamSpec<f64>;
pub type Stream64 = stream::Stream<f64>;
pub type TrainConfig64 = continual::TrainConfig<f64>;
pub type MethodSpec64 = continual::MethodSpec<f64>;
