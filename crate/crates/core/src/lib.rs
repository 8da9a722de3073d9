//! Multi-behavior recommendation with a mixture of two graph experts.
//!
//! A visited-item expert scores items a user already reached through
//! auxiliary behaviors (clicks, collects, carts); an unvisited-item expert
//! scores everything else. Each expert combines a LightGCN encoder over the
//! union graph with per-behavior encoders, and is trained with BPR plus its
//! own self-supervised losses. A hard gate picks one expert per pair.

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod expert;
pub mod gradcheck;
pub mod objectives;
pub mod rng;
pub mod store;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
