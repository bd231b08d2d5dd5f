//! Length-prefixed frames over TCP.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use fedcbmir_core::fed::{run_federation, ClientHandle, ClientUpdate, FedClient, FederationOutcome, RoundConfig, RoundRecord};
use fedcbmir_core::numerics::{LayoutId, ModelWeights};
use fedcbmir_core::transport::{decode_message, encode_message, frame_len, Message, MessageType, FRAME_HEADER_LEN};
use fedcbmir_core::{Clock, Error};

use super::{Direction, Transcript, TranscriptEntry};
use crate::error::{AppError, Result};

/// Frames beyond this are refused before allocation.
pub const MAX_FRAME: usize = 1 << 30;

fn net(e: impl std::fmt::Display) -> AppError {
    AppError::Network(e.to_string())
}

pub fn write_frame(stream: &mut TcpStream, m: &Message) -> std::result::Result<(), AppError> {
    let bytes = encode_message(m)?;
    stream.write_all(&bytes).map_err(net)?;
    stream.flush().map_err(net)
}

/// `Ok(None)` on a clean EOF before the first byte of a frame.
pub fn read_frame(stream: &mut TcpStream) -> std::io::Result<Option<Message>> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match stream.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = frame_len(&prefix).unwrap_or(0);
    if !(FRAME_HEADER_LEN..=MAX_FRAME).contains(&len) {
        return Err(std::io::Error::new(ErrorKind::InvalidData, format!("frame length {len} out of range")));
    }
    let mut buf = vec![0u8; len];
    buf[..4].copy_from_slice(&prefix);
    stream.read_exact(&mut buf[4..])?;
    decode_message(&buf)
        .map(Some)
        .map_err(|e| std::io::Error::new(ErrorKind::InvalidData, e.to_string()))
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerOptions {
    /// Per-round collection timeout, also bounding the join phase.
    pub timeout: Duration,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions {
            timeout: Duration::from_secs(60),
        }
    }
}

struct TcpHandle {
    client_id: String,
    stream: TcpStream,
    timeout: Duration,
    transcript: std::rc::Rc<std::cell::RefCell<Transcript>>,
}

impl TcpHandle {
    fn send(&mut self, m: &Message) -> fedcbmir_core::Result<()> {
        self.transcript.borrow_mut().push(TranscriptEntry::of(Direction::ToClient, m));
        write_frame(&mut self.stream, m).map_err(|e| Error::Protocol(e.to_string()))
    }
}

impl ClientHandle<f32> for TcpHandle {
    fn client_id(&self) -> &str {
        &self.client_id
    }

    fn dispatch(&mut self, round: u32, global: &ModelWeights<f32>) -> fedcbmir_core::Result<()> {
        let m = Message::global_weights(round, &self.client_id, global);
        self.send(&m)
    }

    fn collect(&mut self, round: u32) -> fedcbmir_core::Result<Option<ClientUpdate<f32>>> {
        self.stream
            .set_read_timeout(Some(self.timeout))
            .map_err(|e| Error::Protocol(e.to_string()))?;
        let m = match read_frame(&mut self.stream) {
            Ok(Some(m)) => m,
            Ok(None) => return Ok(None),
            Err(e) if is_timeout(&e) || e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) if e.kind() == ErrorKind::ConnectionReset => return Ok(None),
            Err(e) => return Err(Error::Protocol(format!("from {}: {e}", self.client_id))),
        };
        self.transcript.borrow_mut().push(TranscriptEntry::of(Direction::ToServer, &m));
        if m.kind != MessageType::LocalUpdate || m.round != round || m.client_id != self.client_id {
            return Err(Error::Protocol(format!(
                "expected LOCAL_UPDATE round {round} from {}, got {:?} round {} from {}",
                self.client_id, m.kind, m.round, m.client_id
            )));
        }
        m.update().map(Some)
    }

    fn round_done(&mut self, round: u32) -> fedcbmir_core::Result<()> {
        let m = Message::round_done(round, &self.client_id);
        self.send(&m)
    }

    fn abort(&mut self, round: u32) -> fedcbmir_core::Result<()> {
        let m = Message::abort(round, &self.client_id);
        self.send(&m)
    }
}

pub struct FedServer {
    listener: TcpListener,
    options: ServerOptions,
}

impl FedServer {
    pub fn bind(addr: impl ToSocketAddrs, options: ServerOptions) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(net)?;
        Ok(FedServer { listener, options })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener.local_addr().map_err(net)
    }

    /// Waits for every roster client to JOIN, then runs all rounds.
    /// Connections close when the run ends.
    pub fn run(
        &self,
        config: &RoundConfig,
        initial: ModelWeights<f32>,
        clock: &dyn Clock,
        on_round: impl FnMut(&RoundRecord),
    ) -> (Result<FederationOutcome<f32>>, Transcript) {
        let transcript = std::rc::Rc::new(std::cell::RefCell::new(Transcript::new()));
        let result = self.accept_roster(config, &transcript).and_then(|mut handles| {
            let mut refs: Vec<&mut TcpHandle> = handles.iter_mut().collect();
            Ok(run_federation(config, initial, &mut refs, clock, on_round)?)
        });
        let t = transcript.borrow().clone();
        (result, t)
    }

    fn accept_roster(
        &self,
        config: &RoundConfig,
        transcript: &std::rc::Rc<std::cell::RefCell<Transcript>>,
    ) -> Result<Vec<TcpHandle>> {
        config.validate()?;
        let ids: Vec<&str> = config.roster.iter().map(|r| r.client_id.as_str()).collect();
        let mut joined: Vec<Option<TcpStream>> = ids.iter().map(|_| None).collect();
        let deadline = Instant::now() + self.options.timeout;
        self.listener.set_nonblocking(true).map_err(net)?;
        while joined.iter().any(Option::is_none) {
            if Instant::now() >= deadline {
                let missing: Vec<&str> = ids.iter().zip(&joined).filter(|(_, s)| s.is_none()).map(|(id, _)| *id).collect();
                return Err(AppError::Network(format!("roster clients never joined: {missing:?}")));
            }
            let mut stream = match self.listener.accept() {
                Ok((s, _)) => s,
                Err(e) if is_timeout(&e) => {
                    std::thread::sleep(Duration::from_millis(10));
                    continue;
                }
                Err(e) => return Err(net(e)),
            };
            stream.set_nonblocking(false).map_err(net)?;
            stream.set_nodelay(true).map_err(net)?;
            stream.set_read_timeout(Some(self.options.timeout)).map_err(net)?;
            let m = match read_frame(&mut stream) {
                Ok(Some(m)) if m.kind == MessageType::Join => m,
                _ => continue,
            };
            match ids.iter().position(|id| *id == m.client_id) {
                Some(slot) if joined[slot].is_none() => joined[slot] = Some(stream),
                _ => {
                    let _ = write_frame(&mut stream, &Message::abort(0, &m.client_id));
                }
            }
        }
        self.listener.set_nonblocking(false).map_err(net)?;
        let mut t = transcript.borrow_mut();
        for id in &ids {
            t.push(TranscriptEntry::of(Direction::ToServer, &Message::join(id)));
        }
        drop(t);
        Ok(ids
            .iter()
            .zip(joined)
            .map(|(id, s)| TcpHandle {
                client_id: id.to_string(),
                stream: s.expect("all joined"),
                timeout: self.options.timeout,
                transcript: std::rc::Rc::clone(transcript),
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientReport {
    pub rounds_completed: u32,
    pub losses: Vec<f64>,
}

/// Connects (retrying until `connect_timeout`), joins, and answers every
/// GLOBAL_WEIGHTS with a LOCAL_UPDATE until the server closes the connection.
pub fn run_client(
    server: impl ToSocketAddrs + Clone,
    client: &FedClient<f32>,
    layout: LayoutId,
    connect_timeout: Duration,
) -> Result<ClientReport> {
    let deadline = Instant::now() + connect_timeout;
    let mut stream = loop {
        match TcpStream::connect(server.clone()) {
            Ok(s) => break s,
            Err(e) if Instant::now() >= deadline => {
                return Err(AppError::Network(format!("server unreachable: {e}")))
            }
            Err(_) => std::thread::sleep(Duration::from_millis(100)),
        }
    };
    stream.set_nodelay(true).map_err(net)?;
    write_frame(&mut stream, &Message::join(&client.client_id))?;
    let mut report = ClientReport {
        rounds_completed: 0,
        losses: Vec::new(),
    };
    loop {
        let m = match read_frame(&mut stream) {
            Ok(Some(m)) => m,
            Ok(None) => break,
            Err(e) if e.kind() == ErrorKind::ConnectionReset && report.rounds_completed > 0 => break,
            Err(e) => return Err(net(e)),
        };
        match m.kind {
            MessageType::GlobalWeights => {
                let global = m.weights(layout)?;
                let update = client.local_round(m.round, &global)?;
                report.losses.push(update.loss);
                write_frame(&mut stream, &Message::local_update(&update))?;
            }
            MessageType::RoundDone => report.rounds_completed = m.round + 1,
            MessageType::Abort => {
                return Err(Error::Protocol(format!("server aborted round {}", m.round)).into())
            }
            other => return Err(Error::Protocol(format!("unexpected {other:?} from server")).into()),
        }
    }
    if report.rounds_completed == 0 {
        return Err(AppError::Network("server closed before completing a round".into()));
    }
    Ok(report)
}
