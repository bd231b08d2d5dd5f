//! In-process network: the same frames as the wire path, carried by queues.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::rc::Rc;
use std::time::Duration;

use fedcbmir_core::fed::{run_federation, ClientHandle, ClientUpdate, FedClient, FederationOutcome, RoundConfig, RoundRecord};
use fedcbmir_core::numerics::{LayoutId, ModelWeights};
use fedcbmir_core::transport::{decode_message, encode_message, Message, MessageType};
use fedcbmir_core::{Clock, Error, Result};

use super::{Direction, Transcript, TranscriptEntry};

/// Updates to lose or hold back, by `(client id, round)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaultPlan {
    pub drop: Vec<(String, u32)>,
    pub delay: Vec<(String, u32, Duration)>,
}

impl FaultPlan {
    pub fn drops(&self, id: &str, round: u32) -> bool {
        self.drop.iter().any(|(c, r)| c == id && *r == round)
    }

    pub fn delay_for(&self, id: &str, round: u32) -> Option<Duration> {
        self.delay.iter().find(|(c, r, _)| c == id && *r == round).map(|d| d.2)
    }
}

struct SimHandle {
    client: FedClient<f32>,
    layout: LayoutId,
    to_client: VecDeque<Vec<u8>>,
    to_server: VecDeque<Vec<u8>>,
    transcript: Rc<RefCell<Transcript>>,
    faults: Rc<FaultPlan>,
}

impl SimHandle {
    fn send_to_client(&mut self, m: &Message) -> Result<()> {
        self.transcript.borrow_mut().push(TranscriptEntry::of(Direction::ToClient, m));
        self.to_client.push_back(encode_message(m)?);
        self.client_step()
    }

    /// Client side: drain the inbox and react.
    fn client_step(&mut self) -> Result<()> {
        while let Some(frame) = self.to_client.pop_front() {
            let m = decode_message(&frame)?;
            if m.kind != MessageType::GlobalWeights {
                continue;
            }
            let global = m.weights(self.layout)?;
            let update = self.client.local_round(m.round, &global)?;
            if self.faults.drops(&self.client.client_id, m.round) {
                continue;
            }
            if let Some(d) = self.faults.delay_for(&self.client.client_id, m.round) {
                std::thread::sleep(d);
            }
            self.to_server.push_back(encode_message(&Message::local_update(&update))?);
        }
        Ok(())
    }
}

impl ClientHandle<f32> for SimHandle {
    fn client_id(&self) -> &str {
        &self.client.client_id
    }

    fn dispatch(&mut self, round: u32, global: &ModelWeights<f32>) -> Result<()> {
        let m = Message::global_weights(round, &self.client.client_id, global);
        self.send_to_client(&m)
    }

    fn collect(&mut self, round: u32) -> Result<Option<ClientUpdate<f32>>> {
        let Some(frame) = self.to_server.pop_front() else {
            return Ok(None);
        };
        let m = decode_message(&frame)?;
        self.transcript.borrow_mut().push(TranscriptEntry::of(Direction::ToServer, &m));
        let u = m.update()?;
        if u.round != round || u.client_id != self.client.client_id {
            return Err(Error::Protocol(format!(
                "unexpected update from {} for round {}",
                u.client_id, u.round
            )));
        }
        Ok(Some(u))
    }

    fn round_done(&mut self, round: u32) -> Result<()> {
        let m = Message::round_done(round, &self.client.client_id);
        self.send_to_client(&m)
    }

    fn abort(&mut self, round: u32) -> Result<()> {
        let m = Message::abort(round, &self.client.client_id);
        self.send_to_client(&m)
    }
}

pub struct SimOutcome {
    pub result: Result<FederationOutcome<f32>>,
    pub transcript: Transcript,
}

/// Runs the federation over in-memory queues. `clients` must follow the roster.
pub fn simulate_network(
    config: &RoundConfig,
    initial: ModelWeights<f32>,
    clients: Vec<FedClient<f32>>,
    faults: FaultPlan,
    clock: &dyn Clock,
    on_round: impl FnMut(&RoundRecord),
) -> SimOutcome {
    let transcript = Rc::new(RefCell::new(Transcript::new()));
    let faults = Rc::new(faults);
    let layout = initial.layout_id;
    let mut handles: Vec<SimHandle> = clients
        .into_iter()
        .map(|client| SimHandle {
            client,
            layout,
            to_client: VecDeque::new(),
            to_server: VecDeque::new(),
            transcript: Rc::clone(&transcript),
            faults: Rc::clone(&faults),
        })
        .collect();
    for h in &handles {
        let join = Message::join(&h.client.client_id);
        transcript.borrow_mut().push(TranscriptEntry::of(Direction::ToServer, &join));
    }
    let mut refs: Vec<&mut SimHandle> = handles.iter_mut().collect();
    let result = run_federation(config, initial, &mut refs, clock, on_round);
    drop(refs);
    drop(handles);
    let transcript = Rc::try_unwrap(transcript)
        .map(RefCell::into_inner)
        .unwrap_or_else(|rc| rc.borrow().clone());
    SimOutcome { result, transcript }
}
