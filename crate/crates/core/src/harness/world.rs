//! One replica of a scenario: routers, radios, services and traffic driven by
//! the discrete-event engine.

use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{rng_stream, EventKind, Mac, Scheduler};
use crate::qos::{Admission, AdmissionLedger, ContentionMap, FlowId, FlowKind, FlowSpec};
use crate::routing::{FloodVerdict, Hello, Hna, MaintenanceAction, RouterOutput, Tc, Router};
use crate::services::{
    broadcast_flows, call_flows, check_broadcast, ClientId, Dedupe, FileTransfer, Message, MessageKind, MsgId,
    ReceiverLog, ReliableSender, SenderAction, Server, ServiceError, ServiceParams, VideoOutcome, VideoPolicy,
    VideoRequest,
};
use crate::topology::{Channel, DirLink, LinkId, NodeId, RadioRole, Topology};

use super::report::{
    compute_jitter, AdmissionRecord, BroadcastRecord, FlowRecord, LogEvent, RunReport, RunSummary, SmsRecord,
    TransferRecord, VideoRecord,
};
use super::scenario::{Action, Scenario};
use super::ScenarioError;

const MAC_HEADER_BITS: f64 = 34.0 * 8.0;
const IP_UDP_BITS: f64 = 28.0 * 8.0;
const RTP_BITS: f64 = 12.0 * 8.0;
/// Relay header: final destination, server address and message id.
const APP_HEADER_BITS: f64 = 24.0 * 8.0;

enum Control {
    Hello(Hello),
    Tc(Tc<f64>, u8),
    Hna(Hna, u8),
}

impl Control {
    fn bits(&self) -> f64 {
        let body = match self {
            Control::Hello(h) => 16.0 + 12.0 * h.heard.len() as f64,
            Control::Tc(tc, _) => 16.0 + 12.0 * tc.links.len() as f64,
            Control::Hna(..) => 24.0,
        };
        body * 8.0 + IP_UDP_BITS
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Leg {
    ToServer,
    ToClient,
}

#[derive(Debug, Clone)]
enum App {
    Msg(Message),
    Ack(MsgId),
    Queued(MsgId),
    VideoReq(usize),
    VideoResp(usize, bool),
    RegAck(Option<String>),
}

#[derive(Debug, Clone)]
enum Body {
    Data { flow: usize, sent_at: f64 },
    App { from: ClientId, to: ClientId, leg: Leg, app: App },
    Register(ClientId),
    Beacon(ClientId),
}

#[derive(Debug, Clone)]
struct Packet {
    src: NodeId,
    dst: NodeId,
    ttl: u8,
    bits: f64,
    body: Body,
}

struct Frame {
    pkt: Packet,
    hop: DirLink,
}

struct Radio {
    channel: Channel,
    queue: VecDeque<Frame>,
    in_flight: Option<Frame>,
}

enum Ev {
    Hello(usize),
    Tc(usize),
    Recompute(usize),
    BcastArrive { node: usize, channel: Channel, msg: Rc<Control> },
    Reflood { node: usize, msg: Rc<Control> },
    TxDone { node: usize, radio: usize, delivered: bool },
    FlowTick { flow: usize, k: u64 },
    FlowEnd(usize),
    Action(usize),
    GenCall(usize),
    Attach(usize),
    Beacon(ClientId),
    PresenceSweep,
    SenderTimer { id: MsgId, proxy: bool },
    VideoTimer(usize),
    OutageEnd(LinkId),
}

struct FlowState {
    spec: FlowSpec,
    start: f64,
    end: f64,
    interval: f64,
    measured: bool,
    reserved: bool,
    sent: u64,
    delivered: u64,
    delay_sum: f64,
    transits: Vec<f64>,
}

struct ClientState {
    attached: Option<NodeId>,
    position: (f64, f64),
    video: VideoPolicy,
    registered: bool,
    refused: bool,
    log: ReceiverLog,
    next_seq: u32,
}

#[derive(Debug, Clone, Copy)]
enum Purpose {
    Sms(usize),
    Chunk(usize, u32),
}

struct Slot {
    sender: ReliableSender,
    purpose: Purpose,
}

struct SmsState {
    id: MsgId,
    dst: ClientId,
    sent_at: f64,
    app_deliveries: u32,
    delivered_at: Option<f64>,
}

struct VideoState {
    req: VideoRequest,
    duration: f64,
    flow: Option<usize>,
}

struct GenCall {
    a: NodeId,
    b: NodeId,
    kind: FlowKind,
    duration: f64,
}

pub(crate) struct Sim<'a> {
    sc: &'a Scenario,
    topo: &'a Topology,
    services: ServiceParams,
    sched: Scheduler<Ev>,
    mac: Mac,
    rng: ChaCha8Rng,
    nodes: Vec<NodeId>,
    index: BTreeMap<NodeId, usize>,
    routers: Vec<Router>,
    radios: Vec<Vec<Radio>>,
    recompute_pending: Vec<bool>,
    server: Option<Server>,
    server_idx: usize,
    clients: BTreeMap<ClientId, ClientState>,
    senders: BTreeMap<(MsgId, bool), Slot>,
    purposes: BTreeMap<MsgId, Purpose>,
    sms: Vec<SmsState>,
    transfers: Vec<FileTransfer>,
    videos: Vec<VideoState>,
    broadcasts: Vec<BroadcastRecord>,
    gen_calls: Vec<GenCall>,
    flows: Vec<FlowState>,
    next_flow_id: u64,
    ledger: AdmissionLedger<f64>,
    cmap: ContentionMap,
    admissions: Vec<AdmissionRecord>,
    blocked: u64,
    drops: BTreeMap<String, u64>,
    events: Vec<LogEvent>,
    route_changes: u64,
}

/// Runs one replica of `sc` with `seed`.
pub fn run_scenario(sc: &Scenario, seed: u64) -> Result<RunReport, ScenarioError> {
    let topo = sc.build_topology()?;
    Ok(Sim::new(sc, &topo, seed).run(seed))
}

impl<'a> Sim<'a> {
    pub(crate) fn new(sc: &'a Scenario, topo: &'a Topology, seed: u64) -> Self {
        let p = &sc.protocol;
        let nodes: Vec<NodeId> = topo.node_ids().collect();
        let index = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let routers = topo
            .nodes()
            .iter()
            .map(|n| {
                let mut r = Router::new(n.id, n.is_server, p.routing, p.metric, p.elp);
                for &l in topo.incident(n.id) {
                    r.add_local_link(l, topo.links()[l.index()].capacity);
                }
                r
            })
            .collect();
        let radios = topo
            .nodes()
            .iter()
            .map(|n| {
                let mut chans: Vec<Channel> = n
                    .radios
                    .iter()
                    .filter(|r| r.role == RadioRole::Backbone)
                    .map(|r| r.channel)
                    .collect();
                chans.sort_unstable();
                chans.dedup();
                chans
                    .into_iter()
                    .map(|channel| Radio {
                        channel,
                        queue: VecDeque::new(),
                        in_flight: None,
                    })
                    .collect()
            })
            .collect();
        let server_node = topo.servers().next();
        let server_idx = server_node.map_or(0, |s| nodes.iter().position(|n| *n == s).expect("server exists"));
        let server = server_node.map(|s| Server::new(s, p.services, sc.workload.users.clone()));
        let clients = sc
            .workload
            .clients
            .iter()
            .map(|c| {
                (
                    c.id,
                    ClientState {
                        attached: c.node,
                        position: (c.position[0], c.position[1]),
                        video: c.video,
                        registered: false,
                        refused: false,
                        log: ReceiverLog::default(),
                        next_seq: 0,
                    },
                )
            })
            .collect();
        let n = nodes.len();
        Self {
            sc,
            topo,
            services: p.services,
            sched: Scheduler::new(),
            mac: Mac::new(topo, p.mac, rng_stream(seed, "mac")),
            rng: rng_stream(seed, "protocol"),
            nodes,
            index,
            routers,
            radios,
            recompute_pending: vec![false; n],
            server,
            server_idx,
            clients,
            senders: BTreeMap::new(),
            purposes: BTreeMap::new(),
            sms: Vec::new(),
            transfers: Vec::new(),
            videos: Vec::new(),
            broadcasts: Vec::new(),
            gen_calls: Vec::new(),
            flows: Vec::new(),
            next_flow_id: 0,
            ledger: AdmissionLedger::new(p.qos.u_max, p.qos.goodput_factor),
            cmap: ContentionMap::from_topology(topo),
            admissions: Vec::new(),
            blocked: 0,
            drops: BTreeMap::new(),
            events: Vec::new(),
            route_changes: 0,
        }
    }

    fn now(&self) -> f64 {
        self.sched.now()
    }

    fn at(&mut self, t: f64, kind: EventKind, ev: Ev) {
        let t = t.max(self.now());
        self.sched.schedule(t, kind, ev).expect("time is not in the past");
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.gen::<f64>()
    }

    fn seed_events(&mut self, seed: u64) {
        let rp = self.sc.protocol.routing;
        for i in 0..self.nodes.len() {
            let h = self.uniform(0.0, rp.hello_interval);
            self.at(h, EventKind::Timer, Ev::Hello(i));
            let t = self.uniform(0.0, rp.tc_interval);
            self.at(t, EventKind::Timer, Ev::Tc(i));
        }
        if self.server.is_some() {
            self.at(1.0, EventKind::Timer, Ev::PresenceSweep);
        }
        let w = &self.sc.workload;
        for c in &w.clients {
            self.sched
                .schedule(c.register_at, EventKind::Workload, Ev::Beacon(c.id))
                .expect("validated");
        }
        for (i, a) in w.attachments.iter().enumerate() {
            self.sched.schedule(a.at, EventKind::Workload, Ev::Attach(i)).expect("validated");
        }
        for (i, a) in w.actions.iter().enumerate() {
            self.sched.schedule(a.at(), EventKind::Workload, Ev::Action(i)).expect("validated");
        }
        if let Some(g) = &w.generator {
            let mut rng = rng_stream(seed, "workload");
            let candidates: Vec<NodeId> = self
                .topo
                .nodes()
                .iter()
                .filter(|n| n.radios.iter().any(|r| r.role == RadioRole::Backbone))
                .map(|n| n.id)
                .collect();
            let start = g.start.unwrap_or(self.sc.run.warmup);
            for i in 0..g.calls + g.background {
                let a = rng.gen_range(0..candidates.len());
                let mut b = rng.gen_range(0..candidates.len() - 1);
                if b >= a {
                    b += 1;
                }
                let t = start + g.stagger * rng.gen::<f64>();
                let kind = if i < g.calls { FlowKind::Voice } else { FlowKind::Background };
                self.gen_calls.push(GenCall {
                    a: candidates[a],
                    b: candidates[b],
                    kind,
                    duration: g.duration,
                });
                let idx = self.gen_calls.len() - 1;
                self.sched.schedule(t, EventKind::Workload, Ev::GenCall(idx)).expect("validated");
            }
        }
    }

    pub(crate) fn run(mut self, seed: u64) -> RunReport {
        self.seed_events(seed);
        let t_end = self.sc.run.duration + self.sc.run.drain;
        while let Some(ev) = self.sched.next_event(t_end) {
            self.handle(ev.payload);
        }
        self.sched.advance_to(t_end);
        self.finish(seed)
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Hello(i) => self.on_hello_timer(i),
            Ev::Tc(i) => self.on_tc_timer(i),
            Ev::Recompute(i) => {
                self.recompute_pending[i] = false;
                self.recompute(i);
            }
            Ev::BcastArrive { node, channel, msg } => self.on_broadcast_arrival(node, channel, &msg),
            Ev::Reflood { node, msg } => self.broadcast_all(node, msg),
            Ev::TxDone { node, radio, delivered } => self.on_tx_done(node, radio, delivered),
            Ev::FlowTick { flow, k } => self.on_flow_tick(flow, k),
            Ev::FlowEnd(f) => {
                if self.flows[f].reserved {
                    self.flows[f].reserved = false;
                    let id = self.flows[f].spec.id;
                    self.ledger.release(id).expect("reserved flow is in the ledger");
                }
            }
            Ev::Action(i) => self.on_action(i),
            Ev::GenCall(i) => self.on_gen_call(i),
            Ev::Attach(i) => self.on_attach(i),
            Ev::Beacon(c) => self.on_beacon_timer(c),
            Ev::PresenceSweep => {
                let now = self.now();
                if let Some(s) = self.server.as_mut() {
                    for c in s.expire_stale(now) {
                        self.events.push(LogEvent::PresenceExpired { t: now, client: c.0 });
                    }
                }
                self.at(now + 1.0, EventKind::Timer, Ev::PresenceSweep);
            }
            Ev::SenderTimer { id, proxy } => {
                let now = self.now();
                if let Some(slot) = self.senders.get_mut(&(id, proxy)) {
                    let act = slot.sender.on_timeout(now);
                    self.sender_act(id, proxy, act);
                }
            }
            Ev::VideoTimer(r) => {
                let now = self.now();
                self.videos[r].req.on_timer(now);
            }
            Ev::OutageEnd(l) => {
                self.mac.set_outage(l, false);
                let t = self.now();
                self.events.push(LogEvent::Outage { t, link: l, down: false });
            }
        }
    }

    // ---- routing control plane

    fn broadcast(&mut self, i: usize, channel: Channel, msg: Rc<Control>) {
        let now = self.now();
        let t = self.mac.broadcast(self.topo, msg.bits() + MAC_HEADER_BITS, self.nodes[i], channel, now);
        self.at(t, EventKind::FrameTx, Ev::BcastArrive { node: i, channel, msg });
    }

    fn broadcast_all(&mut self, i: usize, msg: Rc<Control>) {
        for r in 0..self.radios[i].len() {
            let ch = self.radios[i][r].channel;
            self.broadcast(i, ch, Rc::clone(&msg));
        }
    }

    fn on_hello_timer(&mut self, i: usize) {
        let now = self.now();
        for r in 0..self.radios[i].len() {
            let ch = self.radios[i][r].channel;
            let hello = self.routers[i].emit_hello(ch);
            self.broadcast(i, ch, Rc::new(Control::Hello(hello)));
        }
        let node = self.nodes[i];
        for &l in self.topo.incident(node) {
            let b = self.mac.domain_busy(self.topo, l, now).expect("incident link exists");
            self.routers[i].set_busy(l, b);
        }
        let out = self.routers[i].expire_neighbors(now);
        self.apply_output(i, out);
        let hi = self.sc.protocol.routing.hello_interval;
        let next = now + hi * self.uniform(0.95, 1.05);
        self.at(next, EventKind::Timer, Ev::Hello(i));
    }

    fn flood_tc(&mut self, i: usize) {
        let ttl = self.sc.protocol.routing.ttl;
        let tc = self.routers[i].emit_tc();
        self.broadcast_all(i, Rc::new(Control::Tc(tc, ttl)));
    }

    fn on_tc_timer(&mut self, i: usize) {
        let now = self.now();
        self.flood_tc(i);
        if let Some(h) = self.routers[i].emit_hna() {
            let ttl = self.sc.protocol.routing.ttl;
            self.broadcast_all(i, Rc::new(Control::Hna(h, ttl)));
        }
        self.recompute(i);
        let ti = self.sc.protocol.routing.tc_interval;
        let next = now + ti * self.uniform(0.95, 1.05);
        self.at(next, EventKind::Timer, Ev::Tc(i));
    }

    fn on_broadcast_arrival(&mut self, i: usize, channel: Channel, msg: &Rc<Control>) {
        let node = self.nodes[i];
        for &l in self.topo.incident(node) {
            let link = &self.topo.links()[l.index()];
            if link.channel != channel {
                continue;
            }
            let other = link.other(node).expect("incident link");
            let hop = DirLink { link: l, from: node, to: other };
            if self.mac.receive_broadcast(self.topo, hop) {
                let j = self.index[&other];
                self.receive_control(j, l, msg);
            }
        }
    }

    fn receive_control(&mut self, j: usize, link: LinkId, msg: &Rc<Control>) {
        let now = self.now();
        match msg.as_ref() {
            Control::Hello(h) => {
                let out = self.routers[j].process_hello(h, link, now);
                self.apply_output(j, out);
            }
            Control::Tc(tc, ttl) => {
                if self.routers[j].process_tc(tc, now) == FloodVerdict::Fresh {
                    self.request_recompute(j);
                    if *ttl > 1 {
                        let fwd = Rc::new(Control::Tc(tc.clone(), ttl - 1));
                        let t = now + self.uniform(0.0, 0.005);
                        self.at(t, EventKind::Protocol, Ev::Reflood { node: j, msg: fwd });
                    }
                }
            }
            Control::Hna(h, ttl) => {
                if self.routers[j].process_hna(h, now) == FloodVerdict::Fresh && *ttl > 1 {
                    let fwd = Rc::new(Control::Hna(*h, ttl - 1));
                    let t = now + self.uniform(0.0, 0.005);
                    self.at(t, EventKind::Protocol, Ev::Reflood { node: j, msg: fwd });
                }
            }
        }
    }

    fn apply_output(&mut self, i: usize, out: RouterOutput) {
        let now = self.now();
        let node = self.nodes[i];
        if let Some(reason) = out.flood {
            self.events.push(LogEvent::Flood {
                t: now,
                node,
                reason: format!("{reason:?}"),
                links: out.lost.clone(),
            });
            self.flood_tc(i);
        }
        for (link, until) in out.suppressed {
            self.events.push(LogEvent::Maintenance {
                t: now,
                node,
                link,
                action: "suppress".into(),
                until: Some(until),
            });
            self.at(until + 1e-6, EventKind::Timer, Ev::Recompute(i));
        }
        if self.routers[i].is_dirty() {
            self.request_recompute(i);
        }
    }

    fn request_recompute(&mut self, i: usize) {
        if !self.recompute_pending[i] {
            self.recompute_pending[i] = true;
            let t = self.now() + 0.01;
            self.at(t, EventKind::Timer, Ev::Recompute(i));
        }
    }

    fn recompute(&mut self, i: usize) {
        let now = self.now();
        let changes = self.routers[i].recompute(now);
        if now < self.sc.run.warmup {
            return;
        }
        for c in changes {
            self.route_changes += 1;
            self.events.push(LogEvent::RouteChange {
                t: now,
                node: self.nodes[i],
                dest: c.dest,
                old_path: c.old_path,
                new_path: c.new_path,
            });
        }
    }

    // ---- data plane

    fn drop_packet(&mut self, reason: &str) {
        *self.drops.entry(reason.to_string()).or_insert(0) += 1;
    }

    fn inject(&mut self, i: usize, pkt: Packet) {
        if pkt.dst == self.nodes[i] {
            self.deliver(i, pkt);
        } else {
            self.forward(i, pkt);
        }
    }

    fn forward(&mut self, i: usize, mut pkt: Packet) {
        if pkt.ttl == 0 {
            return self.drop_packet("ttl");
        }
        pkt.ttl -= 1;
        let Some(route) = self.routers[i].table().get(pkt.dst) else {
            return self.drop_packet("no_route");
        };
        let hop = DirLink {
            link: route.next_link,
            from: self.nodes[i],
            to: route.next_hop,
        };
        let channel = self.topo.links()[hop.link.index()].channel;
        let r = self.radios[i]
            .iter()
            .position(|r| r.channel == channel)
            .expect("backbone radio for link channel");
        if self.radios[i][r].queue.len() >= self.sc.protocol.mac.queue_limit {
            return self.drop_packet("queue_full");
        }
        self.radios[i][r].queue.push_back(Frame { pkt, hop });
        self.kick(i, r);
    }

    fn kick(&mut self, i: usize, r: usize) {
        if self.radios[i][r].in_flight.is_some() {
            return;
        }
        let Some(frame) = self.radios[i][r].queue.pop_front() else {
            return;
        };
        let now = self.now();
        let out = self
            .mac
            .transmit(self.topo, frame.pkt.bits + MAC_HEADER_BITS, frame.hop, now)
            .expect("frame on a known link");
        self.radios[i][r].in_flight = Some(frame);
        self.at(
            out.completion_time,
            EventKind::FrameTx,
            Ev::TxDone {
                node: i,
                radio: r,
                delivered: out.delivered,
            },
        );
    }

    fn on_tx_done(&mut self, i: usize, r: usize, delivered: bool) {
        let frame = self.radios[i][r].in_flight.take().expect("frame in flight");
        if delivered {
            let j = self.index[&frame.hop.to];
            self.inject(j, frame.pkt);
        } else {
            let now = self.now();
            let (action, out) = self.routers[i].handle_tx_failure(frame.hop.link, now);
            if action == MaintenanceAction::Down {
                self.events.push(LogEvent::Maintenance {
                    t: now,
                    node: self.nodes[i],
                    link: frame.hop.link,
                    action: "down".into(),
                    until: None,
                });
            }
            self.apply_output(i, out);
            self.drop_packet("mac");
        }
        self.kick(i, r);
    }

    fn deliver(&mut self, i: usize, pkt: Packet) {
        let now = self.now();
        let node = self.nodes[i];
        match pkt.body {
            Body::Data { flow, sent_at } => {
                let f = &mut self.flows[flow];
                if f.measured {
                    f.delivered += 1;
                    f.delay_sum += now - sent_at;
                    f.transits.push(now - sent_at);
                }
            }
            Body::Register(c) => self.on_register(c, pkt.src),
            Body::Beacon(c) => self.on_beacon(c, pkt.src),
            Body::App { from, to, leg, app } => match leg {
                Leg::ToServer if self.server.as_ref().is_some_and(|s| s.node == node) => self.server_app(from, to, app),
                Leg::ToClient if self.clients.get(&to).is_some_and(|c| c.attached == Some(node)) => {
                    self.client_app(to, from, app)
                }
                _ => self.drop_packet("misaddressed"),
            },
        }
    }

    fn packet(&self, src: NodeId, dst: NodeId, bits: f64, body: Body) -> Packet {
        Packet {
            src,
            dst,
            ttl: self.sc.protocol.routing.ttl,
            bits: bits + IP_UDP_BITS,
            body,
        }
    }

    fn client_send(&mut self, c: ClientId, bits: f64, body: Body) {
        let (Some(node), Some(server)) = (self.clients[&c].attached, self.server.as_ref().map(|s| s.node)) else {
            return self.drop_packet("detached");
        };
        let pkt = self.packet(node, server, bits, body);
        let i = self.index[&node];
        self.inject(i, pkt);
    }

    fn server_send(&mut self, node: NodeId, bits: f64, body: Body) {
        let server = self.nodes[self.server_idx];
        let pkt = self.packet(server, node, bits, body);
        self.inject(self.server_idx, pkt);
    }

    fn app_bits(app: &App) -> f64 {
        APP_HEADER_BITS
            + match app {
                App::Msg(m) => m.payload_bits,
                _ => 0.0,
            }
    }

    fn client_app_send(&mut self, from: ClientId, to: ClientId, app: App) {
        let bits = Self::app_bits(&app);
        self.client_send(
            from,
            bits,
            Body::App {
                from,
                to,
                leg: Leg::ToServer,
                app,
            },
        );
    }

    /// Sends towards `to` via its current session, if the server knows one.
    fn server_app_send(&mut self, from: ClientId, to: ClientId, app: App) {
        let Some(node) = self.server.as_ref().and_then(|s| s.session(to)).map(|s| s.access_node) else {
            return self.drop_packet("no_session");
        };
        let bits = Self::app_bits(&app);
        self.server_send(
            node,
            bits,
            Body::App {
                from,
                to,
                leg: Leg::ToClient,
                app,
            },
        );
    }

    // ---- services: server side

    fn on_register(&mut self, c: ClientId, from: NodeId) {
        let now = self.now();
        let creds = self
            .sc
            .workload
            .clients
            .iter()
            .find(|s| s.id == c)
            .and_then(|s| s.credentials.clone());
        let mode = self.sc.workload.mode;
        let server = self.server.as_mut().expect("register reaches the server");
        let err = server
            .register(c, from, creds.as_ref(), mode, now)
            .err()
            .map(|e| e.to_string());
        self.events.push(LogEvent::Registration {
            t: now,
            client: c.0,
            error: err.clone(),
        });
        self.server_app_send(c, c, App::RegAck(err));
    }

    fn on_beacon(&mut self, c: ClientId, from: NodeId) {
        let now = self.now();
        let position = self.clients[&c].position;
        let server = self.server.as_mut().expect("beacon reaches the server");
        if let Ok(flushed) = server.presence_update(c, from, position, now) {
            for msg in flushed {
                let purpose = self.purposes[&msg.id];
                self.start_sender(msg, true, purpose);
            }
        }
    }

    fn server_app(&mut self, from: ClientId, to: ClientId, app: App) {
        let now = self.now();
        match app {
            App::Msg(m) => {
                let server = self.server.as_mut().expect("server");
                if server.is_online(m.final_dst, now) {
                    self.server_app_send(m.src, m.final_dst, App::Msg(m));
                } else {
                    let (id, src) = (m.id, m.src);
                    server.enqueue_offline(m);
                    self.server_app_send(src, src, App::Queued(id));
                }
            }
            App::Ack(id) => {
                if let Some(slot) = self.senders.get_mut(&(id, true)) {
                    slot.sender.on_ack(now);
                }
                self.server_app_send(from, to, App::Ack(id));
            }
            App::VideoReq(_) | App::VideoResp(..) => {
                if self.server.as_ref().is_some_and(|s| s.is_online(to, now)) {
                    self.server_app_send(from, to, app);
                }
            }
            App::Queued(_) | App::RegAck(_) => self.drop_packet("misaddressed"),
        }
    }

    // ---- services: client side

    fn client_app(&mut self, c: ClientId, from: ClientId, app: App) {
        let now = self.now();
        match app {
            App::Msg(m) => {
                let fresh = self.clients.get_mut(&c).expect("client").log.dedupe(m.id) == Dedupe::Fresh;
                if fresh {
                    if let Some(Purpose::Sms(k)) = self.purposes.get(&m.id).copied() {
                        let s = &mut self.sms[k];
                        s.app_deliveries += 1;
                        s.delivered_at.get_or_insert(now);
                    }
                }
                self.client_app_send(c, m.src, App::Ack(m.id));
            }
            App::Ack(id) => {
                if let Some(slot) = self.senders.get_mut(&(id, false)) {
                    if slot.sender.on_ack(now) {
                        let purpose = slot.purpose;
                        self.on_delivered(purpose);
                    }
                }
            }
            App::Queued(id) => {
                if let Some(slot) = self.senders.get_mut(&(id, false)) {
                    slot.sender.on_queued(now);
                }
            }
            App::VideoReq(r) => match self.clients[&c].video {
                VideoPolicy::Accept => self.client_app_send(c, from, App::VideoResp(r, true)),
                VideoPolicy::Decline => self.client_app_send(c, from, App::VideoResp(r, false)),
                VideoPolicy::Ignore => {}
            },
            App::VideoResp(r, accepted) => {
                let outcome = self.videos[r].req.on_response(accepted, now);
                if outcome == VideoOutcome::Accepted && self.videos[r].flow.is_none() {
                    self.start_video(r);
                }
            }
            App::RegAck(err) => {
                let cs = self.clients.get_mut(&c).expect("client");
                match err {
                    None => cs.registered = true,
                    Some(_) => cs.refused = true,
                }
            }
        }
    }

    fn on_beacon_timer(&mut self, c: ClientId) {
        let now = self.now();
        let cs = &self.clients[&c];
        if cs.refused {
            return;
        }
        let body = if cs.registered { Body::Beacon(c) } else { Body::Register(c) };
        if cs.attached.is_some() {
            self.client_send(c, APP_HEADER_BITS + 64.0, body);
        }
        let next = now + self.services.beacon_interval;
        self.at(next, EventKind::Timer, Ev::Beacon(c));
    }

    fn on_attach(&mut self, i: usize) {
        let a = self.sc.workload.attachments[i].clone();
        let cs = self.clients.get_mut(&a.client).expect("validated client");
        cs.attached = a.node;
        if cs.registered && a.node.is_some() {
            self.client_send(a.client, APP_HEADER_BITS + 64.0, Body::Beacon(a.client));
        }
    }

    fn next_msg_id(&mut self, c: ClientId) -> MsgId {
        let cs = self.clients.get_mut(&c).expect("client");
        cs.next_seq += 1;
        MsgId { sender: c, seq: cs.next_seq }
    }

    fn start_sender(&mut self, msg: Message, proxy: bool, purpose: Purpose) {
        let id = msg.id;
        let now = self.now();
        let mut sender = ReliableSender::new(msg, &self.services);
        let act = sender.start(now);
        self.purposes.insert(id, purpose);
        match self.senders.get_mut(&(id, proxy)) {
            Some(slot) if proxy => {
                // A flushed message that already has a relay sender restarts it.
                let act = slot.sender.resume(now);
                return self.sender_act(id, proxy, act);
            }
            _ => {
                self.senders.insert((id, proxy), Slot { sender, purpose });
            }
        }
        self.sender_act(id, proxy, act);
    }

    fn sender_act(&mut self, id: MsgId, proxy: bool, act: SenderAction) {
        let slot = &self.senders[&(id, proxy)];
        let (expiry, purpose, msg) = (slot.sender.state().timer_expiry, slot.purpose, slot.sender.message().clone());
        match act {
            SenderAction::Transmit(m) => {
                self.at(expiry, EventKind::Timer, Ev::SenderTimer { id, proxy });
                if proxy {
                    self.server_app_send(m.src, m.final_dst, App::Msg(m));
                } else {
                    self.client_app_send(m.src, m.final_dst, App::Msg(m));
                }
            }
            SenderAction::GiveUp => {
                if proxy {
                    if let Some(s) = self.server.as_mut() {
                        s.enqueue_offline(msg);
                    }
                } else if let Purpose::Chunk(t, _) = purpose {
                    self.transfers[t].on_chunk_failed();
                }
            }
            SenderAction::Nothing => {}
        }
    }

    fn on_delivered(&mut self, purpose: Purpose) {
        if let Purpose::Chunk(t, idx) = purpose {
            self.transfers[t].on_chunk_acked(idx);
            self.send_next_chunk(t);
        }
    }

    fn send_next_chunk(&mut self, t: usize) {
        let Some((index, bits)) = self.transfers[t].next_chunk() else {
            return;
        };
        let (src, dst, total) = {
            let f = &self.transfers[t];
            (f.src, f.dst, f.total_chunks)
        };
        let id = self.next_msg_id(src);
        let msg = Message {
            id,
            kind: MessageKind::FileChunk {
                transfer: t as u32,
                index,
                total,
            },
            src,
            final_dst: dst,
            relay: self.nodes[self.server_idx],
            payload_bits: bits,
            attempt: 0,
        };
        self.start_sender(msg, false, Purpose::Chunk(t, index));
    }

    // ---- workload

    fn service_error(&mut self, action: usize, e: ServiceError) {
        let t = self.now();
        self.events.push(LogEvent::ServiceError {
            t,
            action,
            error: e.to_string(),
        });
    }

    fn online(&self, c: ClientId) -> bool {
        let now = self.now();
        self.server.as_ref().is_some_and(|s| s.is_online(c, now)) && self.clients[&c].attached.is_some()
    }

    fn on_action(&mut self, i: usize) {
        let now = self.now();
        let action = self.sc.workload.actions[i].clone();
        match action {
            Action::Sms { src, dst, .. } => {
                if !self.online(src) {
                    return self.service_error(i, ServiceError::SenderOffline(src));
                }
                let id = self.next_msg_id(src);
                let msg = Message {
                    id,
                    kind: MessageKind::Sms,
                    src,
                    final_dst: dst,
                    relay: self.nodes[self.server_idx],
                    payload_bits: self.services.sms_bytes * 8.0,
                    attempt: 0,
                };
                self.sms.push(SmsState {
                    id,
                    dst,
                    sent_at: now,
                    app_deliveries: 0,
                    delivered_at: None,
                });
                let k = self.sms.len() - 1;
                self.start_sender(msg, false, Purpose::Sms(k));
            }
            Action::File { src, dst, size, chunk, .. } => {
                if !self.online(src) {
                    return self.service_error(i, ServiceError::SenderOffline(src));
                }
                if self.server.as_ref().and_then(|s| s.session(dst)).is_none() {
                    return self.service_error(i, ServiceError::ReceiverUnknown(dst));
                }
                let chunk = chunk.unwrap_or(self.services.chunk_bytes);
                match FileTransfer::new(self.transfers.len() as u32, src, dst, size, chunk) {
                    Ok(f) => {
                        self.transfers.push(f);
                        self.send_next_chunk(self.transfers.len() - 1);
                    }
                    Err(e) => self.service_error(i, e),
                }
            }
            Action::Call { src, dst, duration, .. } => {
                if !self.online(src) {
                    return self.service_error(i, ServiceError::SenderOffline(src));
                }
                if !self.online(dst) {
                    return self.service_error(i, ServiceError::CalleeOffline(dst));
                }
                let a = self.clients[&src].attached.expect("online");
                let b = self.clients[&dst].attached.expect("online");
                let ids = (FlowId(self.next_flow_id), FlowId(self.next_flow_id + 1));
                let pair = call_flows(ids, a, b, &self.services, FlowKind::Voice);
                self.open_flows(pair.to_vec(), duration);
            }
            Action::Broadcast { duration, .. } => {
                if let Err(e) = check_broadcast(duration, &self.services) {
                    return self.service_error(i, e);
                }
                let server = self.server.as_ref().expect("validated server");
                let targets: Vec<(ClientId, NodeId)> = server
                    .online_clients(now)
                    .into_iter()
                    .filter_map(|c| server.session(c).map(|s| (c, s.access_node)))
                    .collect();
                let specs = broadcast_flows(self.next_flow_id, server.node, &targets, &self.services);
                let mut rec = BroadcastRecord {
                    t: now,
                    duration,
                    flows: Vec::new(),
                };
                for (c, spec) in specs {
                    rec.flows.push((c.0, spec.id.0));
                    self.open_flows(vec![spec], duration);
                }
                self.broadcasts.push(rec);
            }
            Action::Video { src, dst, duration, .. } => {
                if !self.online(src) {
                    return self.service_error(i, ServiceError::SenderOffline(src));
                }
                if !self.online(dst) {
                    return self.service_error(i, ServiceError::CalleeOffline(dst));
                }
                let r = self.videos.len();
                let req = VideoRequest::new(r as u32, src, dst, now, &self.services);
                let deadline = req.deadline;
                self.videos.push(VideoState {
                    req,
                    duration,
                    flow: None,
                });
                self.client_app_send(src, dst, App::VideoReq(r));
                self.at(deadline, EventKind::Timer, Ev::VideoTimer(r));
            }
            Action::Flow {
                src,
                dst,
                rate,
                packet_bytes,
                duration,
                kind,
                ..
            } => {
                let spec = FlowSpec {
                    id: FlowId(self.next_flow_id),
                    src,
                    dst,
                    demand: rate,
                    packet_size: packet_bytes * 8.0,
                    kind,
                };
                self.open_flows(vec![spec], duration);
            }
            Action::Outage { a, b, channel, duration, .. } => {
                let link = self
                    .topo
                    .links_between(a, b)
                    .find(|l| channel.map_or(true, |c| c == l.channel))
                    .expect("validated link")
                    .id;
                self.mac.set_outage(link, true);
                self.events.push(LogEvent::Outage { t: now, link, down: true });
                self.at(now + duration, EventKind::Workload, Ev::OutageEnd(link));
            }
        }
    }

    fn start_video(&mut self, r: usize) {
        let (src, dst, duration) = {
            let v = &self.videos[r];
            (v.req.src, v.req.dst, v.duration)
        };
        let (Some(a), Some(b)) = (self.clients[&src].attached, self.clients[&dst].attached) else {
            return;
        };
        let spec = FlowSpec {
            id: FlowId(self.next_flow_id),
            src: a,
            dst: b,
            demand: self.services.video_rate,
            packet_size: self.services.video_payload_bytes * 8.0,
            kind: FlowKind::Video,
        };
        if let Some(&f) = self.open_flows(vec![spec], duration).first() {
            self.videos[r].flow = Some(f);
        }
    }

    fn on_gen_call(&mut self, i: usize) {
        let (a, b, kind, duration) = {
            let g = &self.gen_calls[i];
            (g.a, g.b, g.kind, g.duration)
        };
        let ids = (FlowId(self.next_flow_id), FlowId(self.next_flow_id + 1));
        let pair = call_flows(ids, a, b, &self.services, kind);
        self.open_flows(pair.to_vec(), duration);
    }

    /// Admits the group all-or-nothing and starts packet generation.
    fn open_flows(&mut self, specs: Vec<FlowSpec>, duration: f64) -> Vec<usize> {
        let now = self.now();
        self.next_flow_id += specs.len() as u64;
        let qos = self.sc.protocol.qos;
        let mut reserved = Vec::new();
        let mut rejected: Option<(Option<LinkId>, String)> = None;
        for spec in &specs {
            if !qos.enabled || spec.kind.admission_exempt() || spec.src == spec.dst {
                continue;
            }
            let i = self.index[&spec.src];
            let Some(route) = self.routers[i].table().get(spec.dst) else {
                rejected = Some((None, "no_route".into()));
                break;
            };
            let path: Vec<(LinkId, f64)> = route
                .links
                .iter()
                .map(|l| (*l, self.topo.links()[l.index()].capacity))
                .collect();
            let mut measured = BTreeMap::new();
            for (l, _) in &path {
                for &d in self.cmap.domains_containing(*l) {
                    if !measured.contains_key(&d) {
                        let b = self.mac.domain_busy(self.topo, d, now).expect("known link");
                        measured.insert(d, b);
                    }
                }
            }
            let decision = self
                .ledger
                .admit(spec.id, spec.demand, &path, &self.cmap, |d| measured.get(&d).copied().unwrap_or(0.0))
                .expect("fresh flow id with a non-empty path");
            match decision {
                Admission::Admit(_) => reserved.push(spec.id),
                Admission::Reject { bottleneck } => {
                    rejected = Some((Some(bottleneck), "capacity".into()));
                    break;
                }
            }
        }
        let measured = now >= self.sc.run.warmup;
        if let Some((bottleneck, reason)) = rejected {
            for id in reserved {
                self.ledger.release(id).expect("just reserved");
            }
            for spec in &specs {
                self.admissions.push(AdmissionRecord {
                    t: now,
                    flow_id: spec.id.0,
                    kind: spec.kind,
                    admitted: false,
                    bottleneck,
                    reason: Some(reason.clone()),
                });
                if measured && !spec.kind.admission_exempt() {
                    self.blocked += 1;
                }
            }
            return Vec::new();
        }
        let mut started = Vec::new();
        for spec in specs {
            self.admissions.push(AdmissionRecord {
                t: now,
                flow_id: spec.id.0,
                kind: spec.kind,
                admitted: true,
                bottleneck: None,
                reason: None,
            });
            let interval = spec.packet_size / spec.demand;
            let idx = self.flows.len();
            self.flows.push(FlowState {
                reserved: reserved.contains(&spec.id),
                spec,
                start: now,
                end: now + duration,
                interval,
                measured,
                sent: 0,
                delivered: 0,
                delay_sum: 0.0,
                transits: Vec::new(),
            });
            self.at(now, EventKind::Workload, Ev::FlowTick { flow: idx, k: 0 });
            self.at(now + duration, EventKind::Workload, Ev::FlowEnd(idx));
            started.push(idx);
        }
        started
    }

    fn on_flow_tick(&mut self, flow: usize, k: u64) {
        let now = self.now();
        let stop = self.sc.run.duration;
        let f = &mut self.flows[flow];
        if now >= f.end || now >= stop {
            return;
        }
        if f.measured {
            f.sent += 1;
        }
        let (src, dst, bits) = (f.spec.src, f.spec.dst, f.spec.packet_size);
        let next = f.start + (k + 1) as f64 * f.interval;
        let pkt = self.packet(src, dst, bits + RTP_BITS, Body::Data { flow, sent_at: now });
        self.at(next, EventKind::Workload, Ev::FlowTick { flow, k: k + 1 });
        let i = self.index[&src];
        self.inject(i, pkt);
    }

    // ---- results

    fn finish(self, seed: u64) -> RunReport {
        let flows: Vec<FlowRecord> = self
            .flows
            .iter()
            .map(|f| {
                let pdr = (f.sent > 0).then(|| f.delivered as f64 / f.sent as f64);
                FlowRecord {
                    flow_id: f.spec.id.0,
                    kind: f.spec.kind,
                    src: f.spec.src,
                    dst: f.spec.dst,
                    start: f.start,
                    admitted: true,
                    measured: f.measured,
                    sent: f.sent,
                    delivered: f.delivered,
                    pdr,
                    plr: pdr.map(|p| 1.0 - p),
                    mean_delay_s: (f.delivered > 0).then(|| f.delay_sum / f.delivered as f64),
                    jitter_s: compute_jitter(&f.transits).ok(),
                }
            })
            .collect();

        let foreground = |f: &&FlowRecord| f.measured && matches!(f.kind, FlowKind::Voice | FlowKind::Video);
        let mut pool: Vec<&FlowRecord> = flows.iter().filter(foreground).collect();
        if pool.is_empty() {
            pool = flows.iter().filter(|f| f.measured).collect();
        }
        let sent: u64 = pool.iter().map(|f| f.sent).sum();
        let delivered: u64 = pool.iter().map(|f| f.delivered).sum();
        let delay_sum: f64 = self
            .flows
            .iter()
            .filter(|s| pool.iter().any(|f| f.flow_id == s.spec.id.0))
            .map(|s| s.delay_sum)
            .sum();
        let jitters: Vec<f64> = pool.iter().filter_map(|f| f.jitter_s).collect();
        let pdr = (sent > 0).then(|| delivered as f64 / sent as f64);
        let summary = RunSummary {
            pdr,
            plr: pdr.map(|p| 1.0 - p),
            delay_s: (delivered > 0).then(|| delay_sum / delivered as f64),
            jitter_s: (!jitters.is_empty()).then(|| jitters.iter().sum::<f64>() / jitters.len() as f64),
            route_changes: self.route_changes,
            blocked: self.blocked,
        };

        let sms = self
            .sms
            .iter()
            .map(|s| {
                let client = &self.senders[&(s.id, false)].sender;
                let relay = self.senders.get(&(s.id, true)).map_or(0, |r| r.sender.transmissions());
                SmsRecord {
                    id: s.id.to_string(),
                    src: s.id.sender.0,
                    dst: s.dst.0,
                    sent_at: s.sent_at,
                    phase: client.state().phase,
                    transmissions: client.transmissions(),
                    relay_transmissions: relay,
                    app_deliveries: s.app_deliveries,
                    delivered_at: s.delivered_at,
                }
            })
            .collect();
        let transfers = self
            .transfers
            .iter()
            .map(|f| TransferRecord {
                id: f.id,
                src: f.src.0,
                dst: f.dst.0,
                total_chunks: f.total_chunks,
                chunks_acked: f.chunks_acked(),
                chunks_sent: f.chunks_started(),
                phase: f.phase(),
            })
            .collect();
        let videos = self
            .videos
            .iter()
            .map(|v| VideoRecord {
                id: v.req.id,
                src: v.req.src.0,
                dst: v.req.dst.0,
                outcome: v.req.outcome,
                flow_id: v.flow.map(|f| self.flows[f].spec.id.0),
            })
            .collect();
        let mut engine = self.mac.stats().clone();
        engine.events_processed = self.sched.processed();
        let (cell_calls, cell_bg_load) = self.sc.cell();
        RunReport {
            seed,
            cell_calls,
            cell_bg_load,
            summary,
            flows,
            admissions: self.admissions,
            sms,
            transfers,
            videos,
            broadcasts: self.broadcasts,
            drops: self.drops,
            events: self.events,
            engine,
        }
    }
}
