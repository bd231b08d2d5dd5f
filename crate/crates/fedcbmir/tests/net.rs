use std::thread;
use std::time::Duration;

use fedcbmir::net::{run_client, simulate_network, weight_messages, FaultPlan, FedServer, ServerOptions};
use fedcbmir_core::cae::{CaeConfig, CaeModel};
use fedcbmir_core::fed::{FedClient, LocalTrainConfig, RosterEntry, RoundConfig, Strategy};
use fedcbmir_core::numerics::{OptimizerSpec, Tensor};
use fedcbmir_core::{Error, NoClock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn images(cfg: &CaeConfig, n: usize, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Tensor::from_fn(cfg.input_shape().to_vec(), |_| rng.gen_range(0.0..1.0)))
        .collect()
}

fn setup(ids: &[&str], rounds: u32) -> (RoundConfig, Vec<FedClient<f32>>, CaeConfig) {
    let cfg = CaeConfig::tiny();
    let rc = RoundConfig {
        total_rounds: rounds,
        local_epochs: 1,
        batch_size: 2,
        optimizer: OptimizerSpec::adam(1e-3),
        strategy: Strategy::FedAvg,
        roster: ids.iter().map(|id| RosterEntry::new(*id)).collect(),
        seed: 11,
    };
    let clients = ids
        .iter()
        .enumerate()
        .map(|(i, id)| FedClient::new(*id, cfg.clone(), images(&cfg, 3 + i, i as u64), LocalTrainConfig::from(&rc)))
        .collect();
    (rc, clients, cfg)
}

#[test]
fn simulated_and_tcp_runs_agree() {
    let (rc, clients, cfg) = setup(&["a", "b"], 2);
    let initial = CaeModel::<f32>::build(cfg.clone()).unwrap().into_weights();
    let sim = simulate_network(&rc, initial.clone(), clients.clone(), FaultPlan::default(), &NoClock, |_| {});
    let sim_weights = sim.result.unwrap().weights;
    assert_eq!(weight_messages(&sim.transcript), 2 * (2 + 2));

    let server = FedServer::bind("127.0.0.1:0", ServerOptions::default()).unwrap();
    let addr = server.local_addr().unwrap();
    let layout = cfg.layout().id();
    let workers: Vec<_> = clients
        .into_iter()
        .map(|c| thread::spawn(move || run_client(addr, &c, layout, Duration::from_secs(10))))
        .collect();
    let (wire, transcript) = server.run(&rc, initial, &NoClock, |_| {});
    for w in workers {
        assert_eq!(w.join().unwrap().unwrap().rounds_completed, 2);
    }
    assert_eq!(wire.unwrap().weights, sim_weights);
    assert_eq!(transcript, sim.transcript);
}

#[test]
fn dropped_update_aborts_round_zero() {
    let (rc, clients, cfg) = setup(&["c1", "c2"], 2);
    let initial = CaeModel::<f32>::build(cfg).unwrap().into_weights();
    let faults = FaultPlan {
        drop: vec![("c2".into(), 0)],
        delay: vec![],
    };
    let out = simulate_network(&rc, initial, clients, faults, &NoClock, |_| {});
    assert!(matches!(out.result, Err(Error::Protocol(_))));
    let aborts: Vec<_> = out.transcript.iter().filter(|e| e.kind == "ABORT").collect();
    assert_eq!(aborts.len(), 2);
    assert!(aborts.iter().all(|e| e.round == 0));
}

#[test]
fn delayed_update_still_arrives_in_simulation() {
    let (rc, clients, cfg) = setup(&["a", "b"], 1);
    let initial = CaeModel::<f32>::build(cfg).unwrap().into_weights();
    let plain = simulate_network(&rc, initial.clone(), clients.clone(), FaultPlan::default(), &NoClock, |_| {});
    let faults = FaultPlan {
        drop: vec![],
        delay: vec![("a".into(), 0, Duration::from_millis(50))],
    };
    let delayed = simulate_network(&rc, initial, clients, faults, &NoClock, |_| {});
    assert_eq!(plain.result.unwrap().weights, delayed.result.unwrap().weights);
}

#[test]
fn missing_roster_client_fails_the_join() {
    let (rc, clients, cfg) = setup(&["a", "b"], 1);
    let server = FedServer::bind(
        "127.0.0.1:0",
        ServerOptions {
            timeout: Duration::from_millis(1500),
        },
    )
    .unwrap();
    let addr = server.local_addr().unwrap();
    let layout = cfg.layout().id();
    let a = clients[0].clone();
    let good = thread::spawn(move || run_client(addr, &a, layout, Duration::from_secs(10)));
    let (result, _) = server.run(&rc, CaeModel::<f32>::build(cfg).unwrap().into_weights(), &NoClock, |_| {});
    assert!(result.is_err());
    assert!(good.join().unwrap().is_err());
}
