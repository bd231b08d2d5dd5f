//! Synchronous federated training.
//!
//! The server owns the global weights ω_r. Each round it broadcasts them,
//! every roster client trains locally and returns ω^k_{r+1} with its sample
//! count n_k, and the server aggregates:
//!
//! ```text
//! FedAvg:      ω_{r+1} = Σ_k (n_k / n) · ω^k_{r+1}
//! FedAdagrad:  Δ = Σ_k (n_k / n) · (ω^k_{r+1} − ω_r)
//!              v ← v + Δ²
//!              ω_{r+1} = ω_r + η_s · Δ / (√v + τ)
//! ```

mod aggregate;
mod client;
mod driver;
mod server;
mod weights_codec;

pub use aggregate::{fedadagrad_aggregate, fedavg_aggregate, AdagradState};
pub use client::{client_local_train, FedClient, LocalTrainConfig};
pub use driver::{run_federation, ClientHandle, FederationOutcome, LocalHandle, RoundRecord};
pub use server::{RosterEntry, RoundConfig, RoundSummary, ServerState, Strategy};
pub use weights_codec::{
    decode_weights_unchecked, deserialize_weights, serialize_weights, WEIGHTS_HEADER_LEN, WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
};

pub use crate::numerics::{LayoutId, ModelWeights};

use alloc::string::String;

/// One client's locally trained weights for a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate<T> {
    pub client_id: String,
    pub round: u32,
    /// Local training-set size.
    pub n_k: u64,
    pub weights: ModelWeights<T>,
    /// Mean reconstruction loss of the final local epoch.
    pub loss: f64,
}
