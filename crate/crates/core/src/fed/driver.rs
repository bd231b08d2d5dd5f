use alloc::string::String;
use alloc::vec::Vec;

use super::{ClientUpdate, FedClient, RoundConfig, ServerState};
use crate::error::{Error, Result};
use crate::numerics::{ModelWeights, Real};
use crate::Clock;

/// Server-side view of one client, however it is reached.
pub trait ClientHandle<T> {
    fn client_id(&self) -> &str;

    /// Delivers ω_r for `round`.
    fn dispatch(&mut self, round: u32, global: &ModelWeights<T>) -> Result<()>;

    /// Waits for the round's update. `Ok(None)` means it never arrived
    /// (dropped, timed out) and the round must abort.
    fn collect(&mut self, round: u32) -> Result<Option<ClientUpdate<T>>>;

    fn round_done(&mut self, _round: u32) -> Result<()> {
        Ok(())
    }

    fn abort(&mut self, _round: u32) -> Result<()> {
        Ok(())
    }
}

/// Calls [`FedClient::local_round`] directly.
#[derive(Debug)]
pub struct LocalHandle<T> {
    client: FedClient<T>,
    pending: Option<ClientUpdate<T>>,
}

impl<T> LocalHandle<T> {
    pub fn new(client: FedClient<T>) -> Self {
        LocalHandle { client, pending: None }
    }
}

impl<T: Real> ClientHandle<T> for LocalHandle<T> {
    fn client_id(&self) -> &str {
        &self.client.client_id
    }

    fn dispatch(&mut self, round: u32, global: &ModelWeights<T>) -> Result<()> {
        self.pending = Some(self.client.local_round(round, global)?);
        Ok(())
    }

    fn collect(&mut self, _round: u32) -> Result<Option<ClientUpdate<T>>> {
        Ok(self.pending.take())
    }
}

/// One line of the round log.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub strategy: &'static str,
    pub mean_client_loss: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct FederationOutcome<T> {
    pub weights: ModelWeights<T>,
    pub log: Vec<RoundRecord>,
}

/// Runs `config.total_rounds` synchronous rounds. `clients` must follow the
/// roster order. A missing update aborts the whole run with a protocol error;
/// nothing is aggregated for that round.
pub fn run_federation<T: Real, H: ClientHandle<T> + ?Sized>(
    config: &RoundConfig,
    initial: ModelWeights<T>,
    clients: &mut [&mut H],
    clock: &dyn Clock,
    mut on_round: impl FnMut(&RoundRecord),
) -> Result<FederationOutcome<T>> {
    let mut server = ServerState::new(config, initial)?;
    let roster: Vec<String> = server.roster().iter().map(|r| r.client_id.clone()).collect();
    let ids: Vec<&str> = clients.iter().map(|c| c.client_id()).collect();
    if ids != roster {
        return Err(Error::Config(alloc::format!(
            "client handles {ids:?} do not match roster {roster:?}"
        )));
    }
    let mut log = Vec::new();
    while !server.is_finished() {
        let round = server.round();
        let start = clock.now_secs();
        let global = server.global().clone();
        for c in clients.iter_mut() {
            c.dispatch(round, &global)?;
        }
        for c in clients.iter_mut() {
            let received = c.collect(round);
            let outcome = match received {
                Ok(Some(update)) => server.submit(update),
                Ok(None) => Err(Error::Protocol(alloc::format!(
                    "round {round} aborted: no update from {}",
                    c.client_id()
                ))),
                Err(e) => Err(e),
            };
            if let Err(e) = outcome {
                server.abort_round();
                for c in clients.iter_mut() {
                    let _ = c.abort(round);
                }
                return Err(match e {
                    Error::Protocol(_) => e,
                    other => Error::Protocol(alloc::format!("round {round} aborted: {other}")),
                });
            }
        }
        let summary = server.aggregate()?;
        for c in clients.iter_mut() {
            c.round_done(round)?;
        }
        let record = RoundRecord {
            round: summary.round,
            strategy: server.strategy().name(),
            mean_client_loss: summary.mean_client_loss,
            wall_ms: (clock.now_secs() - start) * 1e3,
        };
        on_round(&record);
        log.push(record);
    }
    Ok(FederationOutcome {
        weights: server.into_global(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cae::{CaeConfig, CaeModel};
    use crate::fed::{LocalTrainConfig, RosterEntry, Strategy};
    use crate::numerics::{OptimizerSpec, Tensor};
    use crate::NoClock;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(cfg: &CaeConfig, n: usize, seed: u64) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Tensor::from_fn(cfg.input_shape().to_vec(), |_| rng.gen_range(0.0..1.0)))
            .collect()
    }

    fn round_config(ids: &[&str], rounds: u32) -> RoundConfig {
        RoundConfig {
            total_rounds: rounds,
            local_epochs: 1,
            batch_size: 64,
            optimizer: OptimizerSpec::sgd(0.5),
            strategy: Strategy::FedAvg,
            roster: ids.iter().map(|id| RosterEntry::new(*id)).collect(),
            seed: 3,
        }
    }

    #[test]
    fn single_client_single_round_is_local_training() {
        let cfg = CaeConfig::tiny();
        let init = CaeModel::<f64>::build(cfg.clone()).unwrap();
        let rc = round_config(&["only"], 1);
        let client = FedClient::new("only", cfg.clone(), data(&cfg, 3, 1), LocalTrainConfig::from(&rc));
        let direct = client.local_round(0, init.weights()).unwrap();
        let mut h = LocalHandle::new(client);
        let out = run_federation(&rc, init.weights().clone(), &mut [&mut h], &NoClock, |_| {}).unwrap();
        assert_eq!(out.weights, direct.weights);
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.log[0].strategy, "fedavg");
    }

    struct Dropper;
    impl ClientHandle<f64> for Dropper {
        fn client_id(&self) -> &str {
            "b"
        }
        fn dispatch(&mut self, _: u32, _: &ModelWeights<f64>) -> Result<()> {
            Ok(())
        }
        fn collect(&mut self, _: u32) -> Result<Option<ClientUpdate<f64>>> {
            Ok(None)
        }
    }

    #[test]
    fn missing_update_aborts_round() {
        let cfg = CaeConfig::tiny();
        let init = CaeModel::<f64>::build(cfg.clone()).unwrap();
        let rc = round_config(&["a", "b"], 2);
        let mut a = LocalHandle::new(FedClient::new("a", cfg.clone(), data(&cfg, 1, 1), LocalTrainConfig::from(&rc)));
        let mut b = Dropper;
        let mut handles: Vec<&mut dyn ClientHandle<f64>> = vec![&mut a, &mut b];
        let err = run_federation(&rc, init.weights().clone(), &mut handles, &NoClock, |_| {}).unwrap_err();
        assert!(matches!(&err, Error::Protocol(m) if m.contains("round 0") && m.contains('b')));
    }

    #[test]
    fn roster_order_enforced() {
        let cfg = CaeConfig::tiny();
        let init = CaeModel::<f64>::build(cfg.clone()).unwrap();
        let rc = round_config(&["a", "b"], 1);
        let mut b = LocalHandle::new(FedClient::new("b", cfg.clone(), data(&cfg, 1, 1), LocalTrainConfig::from(&rc)));
        let mut a = LocalHandle::new(FedClient::new("a", cfg.clone(), data(&cfg, 1, 2), LocalTrainConfig::from(&rc)));
        assert!(run_federation(&rc, init.weights().clone(), &mut [&mut b, &mut a], &NoClock, |_| {}).is_err());
    }
}
