//! Quantized federated learning over finite-blocklength wireless links.
//!
//! The crate has two halves. The analytic half ([`channel`], [`energy`],
//! [`convergence`], [`objective`], [`cma`]) prices a training run in joules
//! and seconds and searches for the transmit power and tolerable packet
//! error rate that minimize the expected energy to reach a target accuracy.
//! The simulation half ([`quantizer`], [`datasets`], [`nn`], [`fl`]) runs
//! federated training with stochastic fixed-point weights, Bernoulli packet
//! drops and drop-aware aggregation. [`experiments`] ties both to the CLI.

pub mod channel;
pub mod cma;
pub mod config;
pub mod convergence;
pub mod datasets;
pub mod energy;
pub mod error;
pub mod experiments;
pub mod fl;
pub mod nn;
pub mod objective;
pub mod quantizer;
pub mod rng;

pub use error::{Error, Result};
