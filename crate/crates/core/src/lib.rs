//! Deterministic semi-asynchronous federated learning (SAFL) simulator
//! implementing the FedQS protocol.
//!
//! The crate is organized around the pieces of a SAFL deployment:
//!
//! - [`numcore`] — flat parameter vectors, two small differentiable models
//!   (multinomial logistic regression and a one-hidden-layer MLP), losses,
//!   analytic gradients, and gradient clipping.
//! - [`datagen`] — synthetic Gaussian-blob datasets, Hetero-Dirichlet and
//!   log-normal non-IID partitioners, CSV ingestion, and train/validation
//!   splits.
//! - [`client`] — the client-side FedQS logic: pseudo-global gradients,
//!   update similarity, quadrant classification, learning-rate/momentum
//!   adaptation, and momentum local training.
//! - [`server`] — the server-side state table, speed/similarity averages,
//!   feedback weighting, and the gradient/model aggregation rules for both
//!   SAFL and synchronous FL.
//! - [`engine`] — the discrete-event simulator with a virtual clock, plus a
//!   synchronous-mode driver for baselines.
//! - [`metrics`] — accuracy/loss traces, convergence speed, oscillation
//!   counting, stability, and CSV/JSON emission.
//! - [`bounds`] — an executable calculator for the convergence-bound
//!   constants (R, V, U, W) of the FedQS convergence theorems.
//!
//! Everything is deterministic given a 64-bit seed: re-running a simulation
//! with the same configuration reproduces byte-identical traces.

pub mod bounds;
pub mod client;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod numcore;
pub mod server;

pub use error::{Error, Result};
