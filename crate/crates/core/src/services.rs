//! Application-layer services: registration, presence, reliable SMS with a
//! server relay and offline queue, stop-and-wait file transfer, calls,
//! broadcast audio and video requests.
//!
//! Everything here is a plain state machine. The simulation in
//! [`crate::harness`] moves the resulting packets across the mesh and feeds
//! arrivals and timer expiries back in.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qos::{FlowId, FlowKind, FlowSpec};
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuthError {
    #[error("credentials required in secure mode")]
    MissingCredentials,
    #[error("invalid username or password")]
    BadCredentials,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("unknown session for {0}")]
    UnknownSession(ClientId),
    #[error("sender {0} is offline")]
    SenderOffline(ClientId),
    #[error("receiver {0} is unknown")]
    ReceiverUnknown(ClientId),
    #[error("callee {0} is offline")]
    CalleeOffline(ClientId),
    #[error("broadcast of {0} s exceeds the limit")]
    DurationExceeded(f64),
    #[error("file size must be positive")]
    EmptyFile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthMode {
    /// No registration or authentication.
    #[default]
    Open,
    /// Registered users with a valid login only.
    Secure,
    /// Everyone is admitted without authentication.
    Emergency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Credentials {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Presence {
    Online,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientSession {
    pub client: ClientId,
    pub access_node: NodeId,
    pub auth_mode: AuthMode,
    pub last_seen: f64,
    pub status: Presence,
    /// Latitude, longitude.
    pub position: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceParams {
    pub ack_timeout: f64,
    pub max_retries: u8,
    pub presence_timeout: f64,
    pub beacon_interval: f64,
    pub video_timeout: f64,
    /// Voice codec rate, bits/s.
    pub codec_rate: f64,
    pub voice_payload_bytes: f64,
    pub video_rate: f64,
    pub video_payload_bytes: f64,
    pub broadcast_rate: f64,
    pub max_broadcast: f64,
    pub chunk_bytes: f64,
    pub sms_bytes: f64,
}

impl Default for ServiceParams {
    fn default() -> Self {
        Self {
            ack_timeout: 2.0,
            max_retries: 3,
            presence_timeout: 15.0,
            beacon_interval: 5.0,
            video_timeout: 10.0,
            codec_rate: 64e3,
            voice_payload_bytes: 160.0,
            video_rate: 500e3,
            video_payload_bytes: 1000.0,
            broadcast_rate: 64e3,
            max_broadcast: 120.0,
            chunk_bytes: 1024.0,
            sms_bytes: 160.0,
        }
    }
}

impl ServiceParams {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("ack_timeout", self.ack_timeout),
            ("presence_timeout", self.presence_timeout),
            ("beacon_interval", self.beacon_interval),
            ("video_timeout", self.video_timeout),
            ("codec_rate", self.codec_rate),
            ("voice_payload_bytes", self.voice_payload_bytes),
            ("video_rate", self.video_rate),
            ("video_payload_bytes", self.video_payload_bytes),
            ("broadcast_rate", self.broadcast_rate),
            ("max_broadcast", self.max_broadcast),
            ("chunk_bytes", self.chunk_bytes),
            ("sms_bytes", self.sms_bytes),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("services.{name} must be positive"));
            }
        }
        errs
    }

    /// Voice packets per second at the configured codec.
    pub fn voice_pps(&self) -> f64 {
        self.codec_rate / (self.voice_payload_bytes * 8.0)
    }
}

// ---------------------------------------------------------------------------
// Server: authentication, presence and the offline queue

/// Server-side session table, user table and offline queue.
#[derive(Debug, Clone)]
pub struct Server {
    pub node: NodeId,
    params: ServiceParams,
    users: BTreeMap<String, String>,
    sessions: BTreeMap<ClientId, ClientSession>,
    offline: BTreeMap<ClientId, VecDeque<Message>>,
}

impl Server {
    pub fn new(node: NodeId, params: ServiceParams, users: BTreeMap<String, String>) -> Self {
        Self {
            node,
            params,
            users,
            sessions: BTreeMap::new(),
            offline: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &ServiceParams {
        &self.params
    }

    pub fn register(
        &mut self,
        client: ClientId,
        access_node: NodeId,
        credentials: Option<&Credentials>,
        mode: AuthMode,
        now: f64,
    ) -> Result<&ClientSession, AuthError> {
        if mode == AuthMode::Secure {
            let c = credentials.ok_or(AuthError::MissingCredentials)?;
            if self.users.get(&c.username) != Some(&c.password) {
                return Err(AuthError::BadCredentials);
            }
        }
        let position = self.sessions.get(&client).map_or((0.0, 0.0), |s| s.position);
        self.sessions.insert(
            client,
            ClientSession {
                client,
                access_node,
                auth_mode: mode,
                last_seen: now,
                status: Presence::Online,
                position,
            },
        );
        Ok(&self.sessions[&client])
    }

    pub fn session(&self, client: ClientId) -> Option<&ClientSession> {
        self.sessions.get(&client)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &ClientSession> {
        self.sessions.values()
    }

    pub fn is_online(&self, client: ClientId, now: f64) -> bool {
        self.sessions.get(&client).is_some_and(|s| {
            s.status == Presence::Online && now - s.last_seen <= self.params.presence_timeout
        })
    }

    pub fn online_clients(&self, now: f64) -> Vec<ClientId> {
        self.sessions
            .keys()
            .copied()
            .filter(|c| self.is_online(*c, now))
            .collect()
    }

    /// Refreshes a session. Returns messages queued while the client was
    /// away; the caller must push them back into the retry discipline.
    pub fn presence_update(
        &mut self,
        client: ClientId,
        access_node: NodeId,
        position: (f64, f64),
        now: f64,
    ) -> Result<Vec<Message>, ServiceError> {
        let s = self
            .sessions
            .get_mut(&client)
            .ok_or(ServiceError::UnknownSession(client))?;
        s.last_seen = now;
        s.position = position;
        s.access_node = access_node;
        s.status = Presence::Online;
        Ok(self.offline.remove(&client).map(Vec::from).unwrap_or_default())
    }

    /// Marks sessions silent for longer than the timeout offline.
    pub fn expire_stale(&mut self, now: f64) -> Vec<ClientId> {
        let timeout = self.params.presence_timeout;
        let mut gone = Vec::new();
        for s in self.sessions.values_mut() {
            if s.status == Presence::Online && now - s.last_seen > timeout {
                s.status = Presence::Offline;
                gone.push(s.client);
            }
        }
        gone
    }

    /// Parks a message for an offline destination. Re-queuing the same id is
    /// a no-op.
    pub fn enqueue_offline(&mut self, msg: Message) -> bool {
        let q = self.offline.entry(msg.final_dst).or_default();
        if q.iter().any(|m| m.id == msg.id) {
            return false;
        }
        q.push_back(msg);
        true
    }

    pub fn queued_for(&self, client: ClientId) -> usize {
        self.offline.get(&client).map_or(0, VecDeque::len)
    }
}

// ---------------------------------------------------------------------------
// Messages and the reliable sender

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MsgId {
    pub sender: ClientId,
    pub seq: u32,
}

impl fmt::Display for MsgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.sender, self.seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Sms,
    FileChunk { transfer: u32, index: u32, total: u32 },
    Beacon,
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: MsgId,
    pub kind: MessageKind,
    pub src: ClientId,
    pub final_dst: ClientId,
    /// Server node every client-to-client message is relayed through.
    pub relay: NodeId,
    pub payload_bits: f64,
    pub attempt: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pending,
    AwaitingAck,
    QueuedOffline,
    Delivered,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Delivered | Phase::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeliveryState {
    pub phase: Phase,
    pub retries_used: u8,
    pub timer_expiry: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SenderAction {
    /// Put this copy on the wire and arm the ACK timer.
    Transmit(Message),
    /// Retries exhausted.
    GiveUp,
    Nothing,
}

/// ACK/timeout/retry discipline for one message: one transmission plus at
/// most `max_retries` resends per delivery phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliableSender {
    msg: Message,
    state: DeliveryState,
    max_retries: u8,
    ack_timeout: f64,
    transmissions: u32,
    trace: Vec<(f64, Phase)>,
}

impl ReliableSender {
    pub fn new(msg: Message, params: &ServiceParams) -> Self {
        Self {
            msg,
            state: DeliveryState {
                phase: Phase::Pending,
                retries_used: 0,
                timer_expiry: f64::INFINITY,
            },
            max_retries: params.max_retries,
            ack_timeout: params.ack_timeout,
            transmissions: 0,
            trace: Vec::new(),
        }
    }

    pub fn message(&self) -> &Message {
        &self.msg
    }

    pub fn state(&self) -> &DeliveryState {
        &self.state
    }

    /// Total copies put on the wire, across delivery phases.
    pub fn transmissions(&self) -> u32 {
        self.transmissions
    }

    pub fn trace(&self) -> &[(f64, Phase)] {
        &self.trace
    }

    fn enter(&mut self, phase: Phase, now: f64) {
        self.state.phase = phase;
        if self.trace.last().map(|t| t.1) != Some(phase) {
            self.trace.push((now, phase));
        }
    }

    fn transmit(&mut self, now: f64) -> SenderAction {
        self.transmissions += 1;
        self.msg.attempt = self.state.retries_used + 1;
        self.state.timer_expiry = now + self.ack_timeout;
        self.enter(Phase::AwaitingAck, now);
        SenderAction::Transmit(self.msg.clone())
    }

    pub fn start(&mut self, now: f64) -> SenderAction {
        if self.state.phase != Phase::Pending {
            return SenderAction::Nothing;
        }
        self.trace.push((now, Phase::Pending));
        self.transmit(now)
    }

    pub fn on_ack(&mut self, now: f64) -> bool {
        if self.state.phase.is_terminal() {
            return false;
        }
        self.state.timer_expiry = f64::INFINITY;
        self.enter(Phase::Delivered, now);
        true
    }

    /// The relay parked the message for an offline destination.
    pub fn on_queued(&mut self, now: f64) {
        if self.state.phase == Phase::AwaitingAck {
            self.state.timer_expiry = f64::INFINITY;
            self.enter(Phase::QueuedOffline, now);
        }
    }

    /// Fires when the ACK timer armed at `timer_expiry` runs out.
    pub fn on_timeout(&mut self, now: f64) -> SenderAction {
        if self.state.phase != Phase::AwaitingAck || now < self.state.timer_expiry {
            return SenderAction::Nothing;
        }
        if self.state.retries_used >= self.max_retries {
            self.state.timer_expiry = f64::INFINITY;
            self.enter(Phase::Failed, now);
            return SenderAction::GiveUp;
        }
        self.state.retries_used += 1;
        self.transmit(now)
    }

    /// Restarts a queued message with a fresh retry budget.
    pub fn resume(&mut self, now: f64) -> SenderAction {
        if self.state.phase.is_terminal() {
            return SenderAction::Nothing;
        }
        self.state.retries_used = 0;
        self.transmit(now)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Dedupe {
    Fresh,
    Duplicate,
}

/// Receiver-side record of delivered message ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReceiverLog {
    seen: BTreeSet<MsgId>,
}

impl ReceiverLog {
    pub fn dedupe(&mut self, id: MsgId) -> Dedupe {
        if self.seen.insert(id) {
            Dedupe::Fresh
        } else {
            Dedupe::Duplicate
        }
    }

    pub fn delivered(&self) -> usize {
        self.seen.len()
    }
}

// ---------------------------------------------------------------------------
// File transfer

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferPhase {
    InProgress,
    Complete,
    Failed,
}

/// Stop-and-wait chunked transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct FileTransfer {
    pub id: u32,
    pub src: ClientId,
    pub dst: ClientId,
    pub total_chunks: u32,
    pub chunk_bits: f64,
    last_chunk_bits: f64,
    next: u32,
    acked: u32,
    phase: TransferPhase,
}

impl FileTransfer {
    pub fn new(id: u32, src: ClientId, dst: ClientId, size_bytes: f64, chunk_bytes: f64) -> Result<Self, ServiceError> {
        if !(size_bytes > 0.0) {
            return Err(ServiceError::EmptyFile);
        }
        let total = (size_bytes / chunk_bytes).ceil().max(1.0) as u32;
        let last = size_bytes - chunk_bytes * f64::from(total - 1);
        Ok(Self {
            id,
            src,
            dst,
            total_chunks: total,
            chunk_bits: chunk_bytes * 8.0,
            last_chunk_bits: last * 8.0,
            next: 0,
            acked: 0,
            phase: TransferPhase::InProgress,
        })
    }

    pub fn phase(&self) -> TransferPhase {
        self.phase
    }

    pub fn chunks_acked(&self) -> u32 {
        self.acked
    }

    /// Chunks handed out so far.
    pub fn chunks_started(&self) -> u32 {
        self.next
    }

    /// Next chunk `(index, bits)` to send, if the window is free.
    pub fn next_chunk(&mut self) -> Option<(u32, f64)> {
        if self.phase != TransferPhase::InProgress || self.next != self.acked || self.next >= self.total_chunks {
            return None;
        }
        let idx = self.next;
        self.next += 1;
        let bits = if idx + 1 == self.total_chunks {
            self.last_chunk_bits
        } else {
            self.chunk_bits
        };
        Some((idx, bits))
    }

    pub fn on_chunk_acked(&mut self, index: u32) {
        if self.phase == TransferPhase::InProgress && index + 1 == self.next && self.acked == index {
            self.acked += 1;
            if self.acked == self.total_chunks {
                self.phase = TransferPhase::Complete;
            }
        }
    }

    pub fn on_chunk_failed(&mut self) {
        if self.phase == TransferPhase::InProgress {
            self.phase = TransferPhase::Failed;
        }
    }
}

// ---------------------------------------------------------------------------
// Calls, broadcast audio and video requests

/// Bidirectional CBR voice flow pair between two access nodes.
pub fn call_flows(ids: (FlowId, FlowId), a: NodeId, b: NodeId, params: &ServiceParams, kind: FlowKind) -> [FlowSpec; 2] {
    let bits = params.voice_payload_bytes * 8.0;
    let mk = |id, src, dst| FlowSpec {
        id,
        src,
        dst,
        demand: params.codec_rate,
        packet_size: bits,
        kind,
    };
    [mk(ids.0, a, b), mk(ids.1, b, a)]
}

pub fn check_broadcast(duration: f64, params: &ServiceParams) -> Result<(), ServiceError> {
    if duration > params.max_broadcast {
        Err(ServiceError::DurationExceeded(duration))
    } else {
        Ok(())
    }
}

/// One admission-exempt unicast stream per online client.
pub fn broadcast_flows(
    first_id: u64,
    server: NodeId,
    targets: &[(ClientId, NodeId)],
    params: &ServiceParams,
) -> Vec<(ClientId, FlowSpec)> {
    targets
        .iter()
        .enumerate()
        .map(|(i, &(c, node))| {
            (
                c,
                FlowSpec {
                    id: FlowId(first_id + i as u64),
                    src: server,
                    dst: node,
                    demand: params.broadcast_rate,
                    packet_size: params.voice_payload_bytes * 8.0,
                    kind: FlowKind::Broadcast,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoPolicy {
    #[default]
    Accept,
    Decline,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoOutcome {
    Pending,
    Accepted,
    Declined,
    Timeout,
}

/// Sender side of the video-request handshake.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoRequest {
    pub id: u32,
    pub src: ClientId,
    pub dst: ClientId,
    pub deadline: f64,
    pub outcome: VideoOutcome,
}

impl VideoRequest {
    pub fn new(id: u32, src: ClientId, dst: ClientId, now: f64, params: &ServiceParams) -> Self {
        Self {
            id,
            src,
            dst,
            deadline: now + params.video_timeout,
            outcome: VideoOutcome::Pending,
        }
    }

    pub fn on_response(&mut self, accepted: bool, now: f64) -> VideoOutcome {
        if self.outcome == VideoOutcome::Pending && now <= self.deadline {
            self.outcome = if accepted {
                VideoOutcome::Accepted
            } else {
                VideoOutcome::Declined
            };
        }
        self.outcome
    }

    pub fn on_timer(&mut self, now: f64) -> VideoOutcome {
        if self.outcome == VideoOutcome::Pending && now >= self.deadline {
            self.outcome = VideoOutcome::Timeout;
        }
        self.outcome
    }
}
