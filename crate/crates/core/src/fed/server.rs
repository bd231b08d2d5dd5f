use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::aggregate::{fedadagrad_aggregate, fedavg_aggregate, AdagradState};
use super::ClientUpdate;
use crate::error::{Error, Result};
use crate::numerics::{ModelWeights, OptimizerSpec, Real};

pub const DEFAULT_ADAGRAD_LR: f64 = 0.1;
pub const DEFAULT_ADAGRAD_TAU: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    FedAvg,
    FedAdagrad { server_lr: f64, tau: f64 },
}

impl Strategy {
    pub fn fedadagrad() -> Self {
        Strategy::FedAdagrad {
            server_lr: DEFAULT_ADAGRAD_LR,
            tau: DEFAULT_ADAGRAD_TAU,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedAdagrad { .. } => "fedadagrad",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RosterEntry {
    pub client_id: String,
    /// When set, updates reporting a different n_k are rejected.
    pub expected_n: Option<u64>,
}

impl RosterEntry {
    pub fn new(client_id: impl Into<String>) -> Self {
        RosterEntry {
            client_id: client_id.into(),
            expected_n: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub total_rounds: u32,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    pub strategy: Strategy,
    pub roster: Vec<RosterEntry>,
    pub seed: u64,
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.roster.is_empty() {
            return Err(Error::Config("roster must not be empty".into()));
        }
        let mut ids: Vec<&str> = self.roster.iter().map(|r| r.client_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate client id in roster".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let Strategy::FedAdagrad { server_lr, tau } = self.strategy {
            if !(server_lr > 0.0 && tau >= 0.0) {
                return Err(Error::Config("fedadagrad needs server_lr > 0 and tau ≥ 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSummary {
    pub round: u32,
    /// n_k-weighted mean of the clients' reported losses.
    pub mean_client_loss: f64,
}

/// Round state machine: collect one update per roster client, then aggregate.
#[derive(Debug, Clone)]
pub struct ServerState<T> {
    round: u32,
    total_rounds: u32,
    global: ModelWeights<T>,
    strategy: Strategy,
    adagrad: Option<AdagradState>,
    roster: Vec<RosterEntry>,
    buffer: BTreeMap<String, ClientUpdate<T>>,
}

impl<T: Real> ServerState<T> {
    pub fn new(config: &RoundConfig, initial: ModelWeights<T>) -> Result<Self> {
        config.validate()?;
        let adagrad = match config.strategy {
            Strategy::FedAvg => None,
            Strategy::FedAdagrad { server_lr, tau } => Some(AdagradState::new(server_lr, tau)),
        };
        Ok(ServerState {
            round: 0,
            total_rounds: config.total_rounds,
            global: initial,
            strategy: config.strategy,
            adagrad,
            roster: config.roster.clone(),
            buffer: BTreeMap::new(),
        })
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn global(&self) -> &ModelWeights<T> {
        &self.global
    }

    pub fn into_global(self) -> ModelWeights<T> {
        self.global
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn adagrad(&self) -> Option<&AdagradState> {
        self.adagrad.as_ref()
    }

    pub fn roster(&self) -> &[RosterEntry] {
        &self.roster
    }

    pub fn is_finished(&self) -> bool {
        self.round >= self.total_rounds
    }

    /// Buffers an update for the current round. Stale, future, duplicate,
    /// unknown-client and wrong-layout updates are rejected.
    pub fn submit(&mut self, update: ClientUpdate<T>) -> Result<()> {
        if self.is_finished() {
            return Err(Error::Protocol("federation already finished".into()));
        }
        if update.round != self.round {
            return Err(Error::Protocol(alloc::format!(
                "update from {} is for round {}, server is at round {}",
                update.client_id,
                update.round,
                self.round
            )));
        }
        let entry = self
            .roster
            .iter()
            .find(|r| r.client_id == update.client_id)
            .ok_or_else(|| Error::Protocol(alloc::format!("{} is not on the roster", update.client_id)))?;
        if let Some(n) = entry.expected_n {
            if n != update.n_k {
                return Err(Error::Protocol(alloc::format!(
                    "{} reported n_k = {}, roster expects {n}",
                    update.client_id,
                    update.n_k
                )));
            }
        }
        if update.n_k == 0 {
            return Err(Error::Protocol(alloc::format!("{} reported n_k = 0", update.client_id)));
        }
        if update.weights.layout_id != self.global.layout_id || update.weights.len() != self.global.len() {
            return Err(Error::Protocol(alloc::format!(
                "{} sent weights for a different layout",
                update.client_id
            )));
        }
        if self.buffer.contains_key(&update.client_id) {
            return Err(Error::Protocol(alloc::format!(
                "duplicate update from {} in round {}",
                update.client_id,
                self.round
            )));
        }
        self.buffer.insert(update.client_id.clone(), update);
        Ok(())
    }

    pub fn missing(&self) -> Vec<&str> {
        self.roster
            .iter()
            .filter(|r| !self.buffer.contains_key(&r.client_id))
            .map(|r| r.client_id.as_str())
            .collect()
    }

    pub fn ready(&self) -> bool {
        self.missing().is_empty()
    }

    /// Aggregates the full round and advances. Never aggregates a partial round.
    pub fn aggregate(&mut self) -> Result<RoundSummary> {
        if !self.ready() {
            return Err(Error::Protocol(alloc::format!(
                "round {} incomplete, missing {:?}",
                self.round,
                self.missing()
            )));
        }
        let updates: Vec<ClientUpdate<T>> = core::mem::take(&mut self.buffer).into_values().collect();
        let total: u64 = updates.iter().map(|u| u.n_k).sum();
        let mean_client_loss = updates
            .iter()
            .map(|u| u.loss * u.n_k as f64 / total as f64)
            .sum();
        self.global = match self.adagrad.as_mut() {
            None => fedavg_aggregate(&updates)?,
            Some(state) => fedadagrad_aggregate(state, &self.global, &updates)?,
        };
        let summary = RoundSummary {
            round: self.round,
            mean_client_loss,
        };
        self.round += 1;
        Ok(summary)
    }

    /// Drops everything buffered for the current round.
    pub fn abort_round(&mut self) {
        self.buffer.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::LayoutId;
    use alloc::string::ToString;
    use alloc::vec;

    fn config(ids: &[&str]) -> RoundConfig {
        RoundConfig {
            total_rounds: 3,
            local_epochs: 1,
            batch_size: 1,
            optimizer: OptimizerSpec::sgd(0.1),
            strategy: Strategy::FedAvg,
            roster: ids.iter().map(|id| RosterEntry::new(*id)).collect(),
            seed: 0,
        }
    }

    fn upd(id: &str, round: u32, v: f32) -> ClientUpdate<f32> {
        ClientUpdate {
            client_id: id.to_string(),
            round,
            n_k: 1,
            weights: ModelWeights::new(LayoutId(1), vec![v]),
            loss: 1.0,
        }
    }

    #[test]
    fn full_participation_required() {
        let mut s = ServerState::new(&config(&["a", "b"]), ModelWeights::new(LayoutId(1), vec![0.0f32])).unwrap();
        s.submit(upd("a", 0, 1.0)).unwrap();
        assert!(!s.ready());
        assert_eq!(s.missing(), ["b"]);
        assert!(matches!(s.aggregate(), Err(Error::Protocol(_))));
        s.submit(upd("b", 0, 3.0)).unwrap();
        let sum = s.aggregate().unwrap();
        assert_eq!(sum.round, 0);
        assert_eq!(s.round(), 1);
        assert_eq!(s.global().values, [2.0]);
    }

    #[test]
    fn stale_and_unknown_updates_rejected() {
        let mut s = ServerState::new(&config(&["a"]), ModelWeights::new(LayoutId(1), vec![0.0f32])).unwrap();
        s.submit(upd("a", 0, 1.0)).unwrap();
        assert!(s.submit(upd("a", 0, 1.0)).is_err());
        s.aggregate().unwrap();
        assert!(matches!(s.submit(upd("a", 0, 1.0)), Err(Error::Protocol(_))));
        assert!(matches!(s.submit(upd("z", 1, 1.0)), Err(Error::Protocol(_))));
        let mut wrong = upd("a", 1, 1.0);
        wrong.weights.layout_id = LayoutId(9);
        assert!(s.submit(wrong).is_err());
        assert_eq!(s.round(), 1);
    }

    #[test]
    fn expected_sample_count_enforced() {
        let mut cfg = config(&["a"]);
        cfg.roster[0].expected_n = Some(4);
        let mut s = ServerState::new(&cfg, ModelWeights::new(LayoutId(1), vec![0.0f32])).unwrap();
        assert!(s.submit(upd("a", 0, 1.0)).is_err());
    }

    #[test]
    fn roster_validation() {
        assert!(config(&[]).validate().is_err());
        assert!(config(&["a", "a"]).validate().is_err());
    }
}
