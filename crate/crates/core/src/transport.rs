//! Coordinator/client message protocol and the two transports that carry it.
//!
//! Wire frame: a 4-byte big-endian body length followed by a UTF-8 JSON object.
//! The object starts with `"type"`, then the variant's fields in declaration
//! order, then (for every variant except `Shutdown`) a `"crc32"` field holding
//! the lowercase hex CRC-32 of the body as it would read without that field.
//! Floats use the shortest decimal string that round-trips exactly.
//! See `PROTOCOL.md` at the repository root for the byte-level description.

use std::collections::BTreeMap;
use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::client::ClientNode;
use crate::error::{Error, Result};

/// Frames declaring a larger body are rejected before any allocation.
pub const DEFAULT_MAX_FRAME: usize = 64 * 1024 * 1024;
pub const HELLO_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_ROUND_TIMEOUT: Duration = Duration::from_secs(30);

const CRC_FIELD: &str = "crc32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum RoundMessage {
    Hello {
        client_id: u32,
        n_samples: u64,
        n_features: u64,
    },
    /// `mu == 0` requests the unsmoothed check-loss subgradient.
    GradRequest {
        k: u64,
        w: Vec<f64>,
        mu: f64,
        tau: f64,
    },
    GradResponse {
        client_id: u32,
        k: u64,
        gradient: Vec<f64>,
        local_loss: f64,
    },
    GramVecRequest {
        round: u64,
        v: Vec<f64>,
    },
    GramVecResponse {
        client_id: u32,
        round: u64,
        product: Vec<f64>,
    },
    FinalModel {
        w: Vec<f64>,
    },
    Shutdown,
}

impl RoundMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            RoundMessage::Hello { .. } => "Hello",
            RoundMessage::GradRequest { .. } => "GradRequest",
            RoundMessage::GradResponse { .. } => "GradResponse",
            RoundMessage::GramVecRequest { .. } => "GramVecRequest",
            RoundMessage::GramVecResponse { .. } => "GramVecResponse",
            RoundMessage::FinalModel { .. } => "FinalModel",
            RoundMessage::Shutdown => "Shutdown",
        }
    }

    /// Sender id for client-originated messages.
    pub fn client_id(&self) -> Option<u32> {
        match self {
            RoundMessage::Hello { client_id, .. }
            | RoundMessage::GradResponse { client_id, .. }
            | RoundMessage::GramVecResponse { client_id, .. } => Some(*client_id),
            _ => None,
        }
    }

    fn floats(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        match self {
            RoundMessage::GradRequest { w, mu, tau, .. } => {
                Box::new(w.iter().copied().chain([*mu, *tau]))
            }
            RoundMessage::GradResponse {
                gradient,
                local_loss,
                ..
            } => Box::new(gradient.iter().copied().chain([*local_loss])),
            RoundMessage::GramVecRequest { v, .. } => Box::new(v.iter().copied()),
            RoundMessage::GramVecResponse { product, .. } => Box::new(product.iter().copied()),
            RoundMessage::FinalModel { w } => Box::new(w.iter().copied()),
            RoundMessage::Hello { .. } | RoundMessage::Shutdown => Box::new(std::iter::empty()),
        }
    }

    /// Checks that every carried vector has length `dim` (= P + 1).
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        let len = match self {
            RoundMessage::GradRequest { w, .. } | RoundMessage::FinalModel { w } => w.len(),
            RoundMessage::GradResponse { gradient, .. } => gradient.len(),
            RoundMessage::GramVecRequest { v, .. } => v.len(),
            RoundMessage::GramVecResponse { product, .. } => product.len(),
            RoundMessage::Hello { .. } | RoundMessage::Shutdown => return Ok(()),
        };
        if len != dim {
            return Err(Error::protocol(format!(
                "{} carries a vector of length {len}, expected {dim}",
                self.kind()
            )));
        }
        Ok(())
    }
}

fn body_without_crc(msg: &RoundMessage) -> Result<Vec<u8>> {
    if let Some(x) = msg.floats().find(|x| !x.is_finite()) {
        return Err(Error::Encode(format!("{} carries non-finite value {x}", msg.kind())));
    }
    Ok(serde_json::to_vec(msg)?)
}

fn with_crc(mut body: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&body);
    debug_assert_eq!(body.last(), Some(&b'}'));
    body.pop();
    body.extend_from_slice(format!(",\"{CRC_FIELD}\":\"{crc:08x}\"}}").as_bytes());
    body
}

/// Serializes `msg` into one length-prefixed frame.
pub fn encode(msg: &RoundMessage) -> Result<Vec<u8>> {
    let mut body = body_without_crc(msg)?;
    if !matches!(msg, RoundMessage::Shutdown) {
        body = with_crc(body);
    }
    let len = u32::try_from(body.len())
        .map_err(|_| Error::Encode("message body exceeds 4 GiB".into()))?;
    let mut frame = Vec::with_capacity(body.len() + 4);
    frame.extend_from_slice(&len.to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

/// Decodes the frame at the start of `buf`, returning the message and the
/// number of bytes consumed. Uses the default 64 MiB frame cap.
pub fn decode(buf: &[u8]) -> Result<(RoundMessage, usize)> {
    decode_with_limit(buf, DEFAULT_MAX_FRAME)
}

pub fn decode_with_limit(buf: &[u8], max_frame: usize) -> Result<(RoundMessage, usize)> {
    if buf.len() < 4 {
        return Err(Error::Incomplete {
            needed: 4 - buf.len(),
        });
    }
    let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if len > max_frame {
        return Err(Error::Decode {
            offset: 0,
            msg: format!("declared length {len} exceeds frame cap {max_frame}"),
        });
    }
    if buf.len() < 4 + len {
        return Err(Error::Incomplete {
            needed: 4 + len - buf.len(),
        });
    }
    let msg = decode_body(&buf[4..4 + len])?;
    Ok((msg, 4 + len))
}

const SHUTDOWN_BODY: &[u8] = br#"{"type":"Shutdown"}"#;

// `,"crc32":"` + 8 hex digits + `"}`
const CRC_SUFFIX_LEN: usize = 20;

/// Splits a checksummed body into the checksum-free body and the stored hex.
fn split_crc(body: &[u8]) -> Option<(Vec<u8>, &[u8])> {
    let n = body.len();
    if n < CRC_SUFFIX_LEN + 1 {
        return None;
    }
    let suffix = &body[n - CRC_SUFFIX_LEN..];
    let head = format!(",\"{CRC_FIELD}\":\"");
    if !suffix.starts_with(head.as_bytes()) || &suffix[18..] != b"\"}" {
        return None;
    }
    let mut inner = body[..n - CRC_SUFFIX_LEN].to_vec();
    inner.push(b'}');
    Some((inner, &suffix[10..18]))
}

fn decode_body(body: &[u8]) -> Result<RoundMessage> {
    let bad = |offset: usize, msg: String| Error::Decode {
        offset: offset + 4,
        msg,
    };
    let (inner, crc) = match split_crc(body) {
        Some((inner, hex)) => {
            let expected = format!("{:08x}", crc32fast::hash(&inner));
            if hex != expected.as_bytes() {
                return Err(bad(
                    body.len() - 10,
                    format!("checksum mismatch: {} != {expected}", String::from_utf8_lossy(hex)),
                ));
            }
            (inner, true)
        }
        None => (body.to_vec(), false),
    };
    let msg: RoundMessage = serde_json::from_slice(&inner).map_err(|e| {
        // bodies are single-line, so the column is the 1-based byte position
        bad(e.column().saturating_sub(1), e.to_string())
    })?;
    match (&msg, crc) {
        (RoundMessage::Shutdown, true) => Err(bad(0, "Shutdown carries no checksum".into())),
        (RoundMessage::Shutdown, false) if inner != SHUTDOWN_BODY => {
            Err(bad(0, "Shutdown body must be exactly {\"type\":\"Shutdown\"}".into()))
        }
        (RoundMessage::Shutdown, false) | (_, true) => Ok(msg),
        (_, false) => Err(bad(0, format!("{} is missing its checksum", msg.kind()))),
    }
}

/// Reads exactly one frame from a blocking stream.
pub fn read_frame(stream: &mut impl Read, max_frame: usize) -> Result<RoundMessage> {
    let mut header = [0u8; 4];
    stream.read_exact(&mut header)?;
    let len = u32::from_be_bytes(header) as usize;
    if len > max_frame {
        return Err(Error::Decode {
            offset: 0,
            msg: format!("declared length {len} exceeds frame cap {max_frame}"),
        });
    }
    let mut frame = vec![0u8; 4 + len];
    frame[..4].copy_from_slice(&header);
    stream.read_exact(&mut frame[4..])?;
    decode_with_limit(&frame, max_frame).map(|(m, _)| m)
}

pub fn write_frame(stream: &mut impl Write, msg: &RoundMessage) -> Result<()> {
    stream.write_all(&encode(msg)?)?;
    stream.flush()?;
    Ok(())
}

/// What a client announced in its `Hello`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientInfo {
    pub client_id: u32,
    pub n_samples: u64,
    pub n_features: u64,
}

impl ClientInfo {
    fn from_hello(msg: &RoundMessage) -> Result<Self> {
        match *msg {
            RoundMessage::Hello {
                client_id,
                n_samples,
                n_features,
            } => Ok(ClientInfo {
                client_id,
                n_samples,
                n_features,
            }),
            ref other => Err(Error::protocol(format!("expected Hello, got {}", other.kind()))),
        }
    }
}

/// Per-client message counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Traffic {
    pub sent: BTreeMap<u32, u64>,
    pub received: BTreeMap<u32, u64>,
}

impl Traffic {
    fn record(&mut self, id: u32, replied: bool) {
        *self.sent.entry(id).or_default() += 1;
        if replied {
            *self.received.entry(id).or_default() += 1;
        }
    }

    /// Ids that exchanged at least one message.
    pub fn peers(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.sent.keys().chain(self.received.keys()).copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// A synchronous round-based link from the coordinator to its clients.
pub trait Transport {
    /// Registered clients in ascending id order.
    fn clients(&self) -> &[ClientInfo];

    /// Sends `request` to every client and returns one response per client,
    /// sorted by client id.
    fn run_round(&mut self, request: &RoundMessage) -> Result<Vec<RoundMessage>>;

    /// Sends a message that expects no reply (`FinalModel`, `Shutdown`).
    fn broadcast(&mut self, msg: &RoundMessage) -> Result<()>;

    fn traffic(&self) -> &Traffic;

    fn n_total(&self) -> usize {
        self.clients().iter().map(|c| c.n_samples as usize).sum()
    }
}

/// Checks a round's replies against the request and sorts them by client id.
fn finish_round(
    request: &RoundMessage,
    clients: &[ClientInfo],
    mut responses: Vec<RoundMessage>,
) -> Result<Vec<RoundMessage>> {
    for resp in &responses {
        match (request, resp) {
            (RoundMessage::GradRequest { k, .. }, RoundMessage::GradResponse { k: rk, .. }) => {
                if k != rk {
                    return Err(Error::protocol(format!(
                        "stale GradResponse for round {rk}, outstanding round is {k}"
                    )));
                }
            }
            (
                RoundMessage::GramVecRequest { round, .. },
                RoundMessage::GramVecResponse { round: rr, .. },
            ) => {
                if round != rr {
                    return Err(Error::protocol(format!(
                        "stale GramVecResponse for round {rr}, outstanding round is {round}"
                    )));
                }
            }
            _ => {
                return Err(Error::protocol(format!(
                    "{} is not a reply to {}",
                    resp.kind(),
                    request.kind()
                )))
            }
        }
        if let Some(first) = clients.first() {
            resp.check_dim(first.n_features as usize + 1)?;
        }
    }
    responses.sort_by_key(|r| r.client_id());
    let got: Vec<u32> = responses.iter().filter_map(RoundMessage::client_id).collect();
    let want: Vec<u32> = clients.iter().map(|c| c.client_id).collect();
    if got != want {
        return Err(Error::protocol(format!(
            "round answered by clients {got:?}, expected {want:?}"
        )));
    }
    Ok(responses)
}

fn check_registration(clients: &mut [ClientInfo]) -> Result<()> {
    if clients.is_empty() {
        return Err(Error::protocol("no clients registered"));
    }
    clients.sort_by_key(|c| c.client_id);
    for pair in clients.windows(2) {
        if pair[0].client_id == pair[1].client_id {
            return Err(Error::protocol(format!("duplicate client id {}", pair[0].client_id)));
        }
        if pair[0].n_features != pair[1].n_features {
            return Err(Error::protocol("clients disagree on the feature dimension"));
        }
    }
    Ok(())
}

/// Clients living in the coordinator's process.
pub struct InProcTransport {
    nodes: Vec<ClientNode>,
    infos: Vec<ClientInfo>,
    threaded: bool,
    traffic: Traffic,
}

impl InProcTransport {
    /// Registers nodes as given; their dataset ids must be distinct.
    pub fn new(nodes: Vec<ClientNode>) -> Result<Self> {
        let mut infos = nodes
            .iter()
            .map(|n| ClientInfo::from_hello(&n.hello()))
            .collect::<Result<Vec<_>>>()?;
        check_registration(&mut infos)?;
        let mut nodes = nodes;
        nodes.sort_by_key(ClientNode::id);
        Ok(InProcTransport {
            nodes,
            infos,
            threaded: false,
            traffic: Traffic::default(),
        })
    }

    /// Serve each round from one scoped thread per client.
    pub fn threaded(mut self, on: bool) -> Self {
        self.threaded = on;
        self
    }

    pub fn nodes(&self) -> &[ClientNode] {
        &self.nodes
    }
}

impl Transport for InProcTransport {
    fn clients(&self) -> &[ClientInfo] {
        &self.infos
    }

    fn run_round(&mut self, request: &RoundMessage) -> Result<Vec<RoundMessage>> {
        let answer = |node: &ClientNode| -> Result<RoundMessage> {
            node.handle(request)?.ok_or_else(|| {
                Error::protocol(format!("client {} sent no reply to {}", node.id(), request.kind()))
            })
        };
        let replies: Vec<Result<RoundMessage>> = if self.threaded {
            std::thread::scope(|s| {
                let handles: Vec<_> = self
                    .nodes
                    .iter()
                    .map(|node| s.spawn(move || answer(node)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("client thread panicked"))
                    .collect()
            })
        } else {
            self.nodes.iter().map(answer).collect()
        };
        for node in &self.nodes {
            self.traffic.record(node.id(), true);
        }
        let responses = replies.into_iter().collect::<Result<Vec<_>>>()?;
        finish_round(request, &self.infos, responses)
    }

    fn broadcast(&mut self, msg: &RoundMessage) -> Result<()> {
        for node in &self.nodes {
            node.handle(msg)?;
            self.traffic.record(node.id(), false);
        }
        Ok(())
    }

    fn traffic(&self) -> &Traffic {
        &self.traffic
    }
}

/// Clients reached over TCP; the coordinator dials each configured address.
pub struct SocketTransport {
    conns: Vec<(u32, TcpStream)>,
    infos: Vec<ClientInfo>,
    round_timeout: Duration,
    max_frame: usize,
    traffic: Traffic,
}

fn map_timeout(err: Error, client_id: u32) -> Error {
    match err {
        Error::Io(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
            Error::Timeout { client_id }
        }
        other => other,
    }
}

impl SocketTransport {
    /// Connects to `(client_id, address)` pairs; each client must greet with a
    /// matching `Hello` within ten seconds.
    pub fn connect(clients: &[(u32, SocketAddr)], round_timeout: Duration) -> Result<Self> {
        let mut conns = Vec::with_capacity(clients.len());
        let mut infos = Vec::with_capacity(clients.len());
        for &(id, addr) in clients {
            let mut stream = TcpStream::connect_timeout(&addr, HELLO_TIMEOUT)?;
            stream.set_nodelay(true)?;
            stream.set_read_timeout(Some(HELLO_TIMEOUT))?;
            let hello = read_frame(&mut stream, DEFAULT_MAX_FRAME).map_err(|e| map_timeout(e, id))?;
            let info = ClientInfo::from_hello(&hello)?;
            if info.client_id != id {
                return Err(Error::protocol(format!(
                    "client at {addr} announced id {}, configured as {id}",
                    info.client_id
                )));
            }
            stream.set_read_timeout(Some(round_timeout))?;
            conns.push((id, stream));
            infos.push(info);
        }
        check_registration(&mut infos)?;
        conns.sort_by_key(|(id, _)| *id);
        Ok(SocketTransport {
            conns,
            infos,
            round_timeout,
            max_frame: DEFAULT_MAX_FRAME,
            traffic: Traffic::default(),
        })
    }

    pub fn round_timeout(&self) -> Duration {
        self.round_timeout
    }
}

impl Transport for SocketTransport {
    fn clients(&self) -> &[ClientInfo] {
        &self.infos
    }

    fn run_round(&mut self, request: &RoundMessage) -> Result<Vec<RoundMessage>> {
        let frame = encode(request)?;
        let max_frame = self.max_frame;
        let replies: Vec<Result<RoundMessage>> = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .conns
                .iter_mut()
                .map(|(id, stream)| {
                    let frame = &frame;
                    let id = *id;
                    s.spawn(move || -> Result<RoundMessage> {
                        stream.write_all(frame).map_err(|e| map_timeout(e.into(), id))?;
                        let reply = read_frame(stream, max_frame).map_err(|e| map_timeout(e, id))?;
                        if reply.client_id() != Some(id) {
                            return Err(Error::protocol(format!(
                                "connection of client {id} answered as {:?}",
                                reply.client_id()
                            )));
                        }
                        Ok(reply)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("socket worker panicked"))
                .collect()
        });
        for (id, _) in &self.conns {
            self.traffic.record(*id, true);
        }
        let responses = replies.into_iter().collect::<Result<Vec<_>>>()?;
        finish_round(request, &self.infos, responses)
    }

    fn broadcast(&mut self, msg: &RoundMessage) -> Result<()> {
        let frame = encode(msg)?;
        for (id, stream) in &mut self.conns {
            stream.write_all(&frame)?;
            self.traffic.record(*id, false);
        }
        Ok(())
    }

    fn traffic(&self) -> &Traffic {
        &self.traffic
    }
}

/// Serves one coordinator session on `listener`: greets, answers requests and
/// returns the final model (if one was sent) once `Shutdown` arrives.
pub fn serve_client(listener: &TcpListener, node: &ClientNode) -> Result<Option<Vec<f64>>> {
    let (mut stream, peer) = listener.accept()?;
    log::info!("client {} serving coordinator at {peer}", node.id());
    stream.set_nodelay(true)?;
    write_frame(&mut stream, &node.hello())?;
    let mut final_model = None;
    loop {
        let msg = read_frame(&mut stream, DEFAULT_MAX_FRAME)?;
        match &msg {
            RoundMessage::Shutdown => return Ok(final_model),
            RoundMessage::FinalModel { w } => final_model = Some(w.clone()),
            _ => {
                if let Some(reply) = node.handle(&msg)? {
                    write_frame(&mut stream, &reply)?;
                }
            }
        }
    }
}
