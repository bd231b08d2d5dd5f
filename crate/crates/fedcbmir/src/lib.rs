//! Host-side half of the federated retrieval engine: datasets and image IO,
//! model/index files, TCP and simulated transports, the HTTP service and the
//! command-line front end. Numerics live in `fedcbmir_core`.

pub mod cli;
pub mod data;
pub mod error;
pub mod files;
pub mod net;
pub mod service;

pub use error::{AppError, Result};
pub use fedcbmir_core as core;
