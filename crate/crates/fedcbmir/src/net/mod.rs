//! The two federation transports: in-memory queues and TCP.

pub mod sim;
pub mod tcp;

use fedcbmir_core::transport::{Message, MessageType};
use serde::Serialize;

pub use sim::{simulate_network, FaultPlan, SimOutcome};
pub use tcp::{run_client, ClientReport, FedServer, ServerOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    ToClient,
    ToServer,
}

/// One message as seen by the server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub kind: String,
    pub round: u32,
    pub client_id: String,
    pub body_len: usize,
}

impl TranscriptEntry {
    pub fn of(direction: Direction, m: &Message) -> Self {
        TranscriptEntry {
            direction,
            kind: kind_name(m.kind).to_string(),
            round: m.round,
            client_id: m.client_id.clone(),
            body_len: m.body.len(),
        }
    }
}

pub fn kind_name(kind: MessageType) -> &'static str {
    match kind {
        MessageType::Join => "JOIN",
        MessageType::GlobalWeights => "GLOBAL_WEIGHTS",
        MessageType::LocalUpdate => "LOCAL_UPDATE",
        MessageType::RoundDone => "ROUND_DONE",
        MessageType::Abort => "ABORT",
    }
}

pub type Transcript = Vec<TranscriptEntry>;

/// Number of weight-bearing messages in a transcript.
pub fn weight_messages(t: &Transcript) -> usize {
    t.iter().filter(|e| e.kind == "GLOBAL_WEIGHTS" || e.kind == "LOCAL_UPDATE").count()
}

pub struct SystemClock(std::time::Instant);

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock(std::time::Instant::now())
    }
}

impl fedcbmir_core::Clock for SystemClock {
    fn now_secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
