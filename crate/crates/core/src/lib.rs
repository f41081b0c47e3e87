//! Security- and power-aware VM placement: cost model, ant colony allocator,
//! baseline policies, workload generation and a trace-driven simulator.

pub mod aco;
pub mod baseline;
pub mod config;
pub mod cost;
pub mod error;
pub mod experiment;
pub mod model;
pub mod rng;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};
