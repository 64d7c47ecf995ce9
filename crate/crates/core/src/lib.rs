//! Continual offline reinforcement learning on point-mass task sequences.
//!
//! The crate provides a small MLP substrate ([`nn`]), parametrized tasks
//! ([`env`]), offline datasets ([`data`]), a TD3+BC backbone ([`agent`]),
//! ensemble dynamics models ([`dynamics`]), replay-buffer selection
//! ([`selection`]), continual learners ([`continual`]) and PER/BWT metrics
//! ([`metrics`]).

pub mod agent;
pub mod codec;
pub mod continual;
pub mod data;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod selection;

pub use error::{Error, Result};
