use alloc::string::String;
use alloc::vec::Vec;

use super::{ClientUpdate, RoundConfig};
use crate::cae::{CaeConfig, CaeModel, TrainOptions};
use crate::codec::fnv1a64;
use crate::error::{Error, Result};
use crate::numerics::{ModelWeights, OptimizerSpec, OptimizerState, Real, Tensor};

/// Local-training knobs taken from the round configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    pub seed: u64,
}

impl From<&RoundConfig> for LocalTrainConfig {
    fn from(c: &RoundConfig) -> Self {
        LocalTrainConfig {
            epochs: c.local_epochs,
            batch_size: c.batch_size,
            optimizer: c.optimizer,
            seed: c.seed,
        }
    }
}

/// Per-client, per-round shuffle seed.
fn shuffle_seed(seed: u64, client_id: &str, round: u32) -> u64 {
    let mut bytes = Vec::from(seed.to_le_bytes());
    bytes.extend_from_slice(&round.to_le_bytes());
    bytes.extend_from_slice(client_id.as_bytes());
    fnv1a64(&bytes)
}

/// Loads ω_r, trains on the local data, and reports ω^k_{r+1} with n_k.
///
/// The optimizer starts fresh every round; only weights cross the boundary.
pub fn client_local_train<T: Real>(
    client_id: &str,
    round: u32,
    global: &ModelWeights<T>,
    model_config: &CaeConfig,
    dataset: &[Tensor<T>],
    config: &LocalTrainConfig,
) -> Result<ClientUpdate<T>> {
    if dataset.is_empty() {
        return Err(Error::Training(alloc::format!("client {client_id} has no training data")));
    }
    let model = CaeModel::from_weights(model_config.clone(), global.clone())?;
    let mut optimizer = OptimizerState::new(config.optimizer)?;
    let opts = TrainOptions {
        epochs: config.epochs,
        batch_size: config.batch_size,
        seed: shuffle_seed(config.seed, client_id, round),
    };
    let trained = model.train(dataset, &opts, &mut optimizer)?;
    let loss = match trained.loss_trace.last() {
        Some(&l) => l,
        None => {
            let total: f64 = dataset
                .iter()
                .map(|x| trained.model.loss(x))
                .sum::<Result<f64>>()?;
            total / dataset.len() as f64
        }
    };
    Ok(ClientUpdate {
        client_id: String::from(client_id),
        round,
        n_k: dataset.len() as u64,
        weights: trained.model.into_weights(),
        loss,
    })
}

/// A federation participant holding private training images.
#[derive(Debug, Clone)]
pub struct FedClient<T> {
    pub client_id: String,
    pub model_config: CaeConfig,
    pub dataset: Vec<Tensor<T>>,
    pub train: LocalTrainConfig,
}

impl<T: Real> FedClient<T> {
    pub fn new(
        client_id: impl Into<String>,
        model_config: CaeConfig,
        dataset: Vec<Tensor<T>>,
        train: LocalTrainConfig,
    ) -> Self {
        FedClient {
            client_id: client_id.into(),
            model_config,
            dataset,
            train,
        }
    }

    pub fn n_k(&self) -> u64 {
        self.dataset.len() as u64
    }

    pub fn local_round(&self, round: u32, global: &ModelWeights<T>) -> Result<ClientUpdate<T>> {
        client_local_train(
            &self.client_id,
            round,
            global,
            &self.model_config,
            &self.dataset,
            &self.train,
        )
    }
}
