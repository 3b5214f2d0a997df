// SPDX-License-Identifier: Apache-2.0

//! Discrete-event simulation and analysis toolkit for asynchronous RL
//! post-training pipelines.
//!
//! The crate is organised bottom-up:
//!
//! - [`simcore`]: deterministic event engine and seeded random streams.
//! - [`workload`]: latency models, environment profiles and rollout tasks.
//! - [`scheduler`]: batch rollout, queue scheduling with dynamic filtering,
//!   prompt replication and redundant environment planning.
//! - [`pipeline`]: the staleness-bounded sample buffer, sync and
//!   asynchronous (train/infer partitioned) end-to-end runs, and the
//!   agentic environment-manager rollout.
//! - [`bounds`]: closed-form completion-time bounds, optimal partition and
//!   speedup limits.
//! - [`offpolicy`]: policy-gradient objectives (PPO, decoupled PPO, truncated
//!   IS, CISPO, TOPR, GRPO) on a tabular toy policy, with analytic gradients
//!   and a finite-difference checker.
//!
//! The numerical modules ([`bounds`], [`offpolicy`]) are generic over the
//! scalar type through [`Scalar`]; the aliases below fix the common `f64`
//! instantiations. Simulated time is always `f64` seconds.

pub mod bounds;
pub mod error;
pub mod offpolicy;
pub mod pipeline;
pub mod scalar;
pub mod scheduler;
pub mod simcore;
pub mod workload;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use simcore::{Engine, EventId, SeedState, Time};

/// Bound inputs in double precision.
pub type BoundInputs = bounds::BoundInputs<f64>;
/// Bound report in double precision.
pub type BoundReport = bounds::BoundReport<f64>;
/// Toy tabular policy in double precision.
pub type ToyPolicy = offpolicy::ToyPolicy<f64>;
/// Toy trajectory in double precision.
pub type Trajectory = offpolicy::Trajectory<f64>;
/// Loss configuration in double precision.
pub type LossConfig = offpolicy::LossConfig<f64>;
/// Single-precision toy policy.
pub type ToyPolicy32 = offpolicy::ToyPolicy<f32>;
/// Single-precision bound inputs.
pub type BoundInputs32 = bounds::BoundInputs<f32>;
