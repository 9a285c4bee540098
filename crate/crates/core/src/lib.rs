//! Multi-stage transfer learning for dual-funnel selection processes.
//!
//! A dual-funnel process is an ordered sequence of decision stages in which
//! the number of participants shrinks while the information collected about
//! each of them grows. This crate trains one dense binary classifier per
//! stage and carries knowledge forward by embedding each trained network into
//! the (wider, possibly deeper) network of the next stage. Transferred
//! weights are gated by static Bernoulli masks: a forward mask decides
//! whether a transferred entry presents its live (trainable) value or its
//! frozen snapshot, and a backward mask decides whether gradient updates are
//! applied to it. The mask probability `rho` interpolates between a fully
//! frozen transfer (`rho = 0`) and plain fine-tuning from a warm start
//! (`rho = 1`).
//!
//! The crate is organized around the stages of that workflow:
//!
//! - [`topology`]: layer-width schedules and the inter-stage embedding plan.
//! - [`engine`]: dense forward/backward passes, the class-balanced loss,
//!   Adam/SGD with an inverse-decay schedule, dropout, and an optional
//!   gradient-reversal domain discriminator.
//! - [`transfer`]: network initialization and masked weight transfer.
//! - [`pipeline`]: the sequential per-stage training loop, the model
//!   registry, inference, and registry persistence.
//! - [`funnelgen`]: a synthetic dual-funnel dataset generator plus CSV
//!   ingestion and feature preparation.
//! - [`evalharness`]: metrics, cross-validation and longitudinal protocols,
//!   hyperparameter sweeps, and report emission.

pub mod engine;
pub mod error;
pub mod evalharness;
pub mod funnelgen;
pub mod pipeline;
pub mod rng;
pub mod topology;
pub mod transfer;

pub use engine::{StageNetwork, TrainConfig};
pub use error::{Error, Result};
pub use funnelgen::{FunnelConfig, FunnelDataset};
pub use pipeline::ModelRegistry;
pub use topology::Topology;
