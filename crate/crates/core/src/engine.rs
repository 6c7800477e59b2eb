//! Deterministic discrete-event core: virtual clock, event queue, seeded
//! random streams and the frame-level MAC model.
//!
//! The MAC does not simulate slots. Each attempt waits an exponential access
//! delay whose mean grows with the busy fraction of the link's contention
//! domain, plus a linear retry backoff, then occupies the channel for
//! `bits / capacity` seconds.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{busy_fraction, AirtimeWindow};
use crate::topology::{Channel, DirLink, LinkId, Topology, TopologyError};

/// 802.11 default: one try plus seven retries.
pub const MAX_ATTEMPTS: u8 = 8;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("cannot schedule at {at} s, clock is already at {now} s")]
    PastTime { at: f64, now: f64 },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("frame size must be positive")]
    EmptyFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    FrameTx,
    Timer,
    Protocol,
    Workload,
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    // Reversed so the max-heap pops the earliest (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Event queue with a virtual clock. Dequeue order is `(time, seq)`.
#[derive(Debug)]
pub struct Scheduler<P> {
    now: f64,
    next_seq: u64,
    heap: BinaryHeap<Event<P>>,
    processed: u64,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self {
            now: 0.0,
            next_seq: 0,
            heap: BinaryHeap::new(),
            processed: 0,
        }
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn schedule(&mut self, time: f64, kind: EventKind, payload: P) -> Result<(), EngineError> {
        if time < self.now || time.is_nan() {
            return Err(EngineError::PastTime { at: time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event {
            time,
            seq,
            kind,
            payload,
        });
        Ok(())
    }

    /// Schedules `delay` seconds from now. Negative delays clamp to zero.
    pub fn schedule_in(&mut self, delay: f64, kind: EventKind, payload: P) {
        let at = self.now + delay.max(0.0);
        self.schedule(at, kind, payload).expect("relative schedule is never in the past");
    }

    /// Pops the next event with `time <= t_end`, advancing the clock to it.
    pub fn next_event(&mut self, t_end: f64) -> Option<Event<P>> {
        if self.heap.peek()?.time > t_end {
            return None;
        }
        let ev = self.heap.pop()?;
        debug_assert!(ev.time >= self.now);
        self.now = ev.time;
        self.processed += 1;
        Some(ev)
    }

    /// Moves the clock forward to `t` if nothing earlier is pending.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.now {
            self.now = t;
        }
    }
}

/// Independent deterministic random stream for `(seed, label)`.
pub fn rng_stream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(label.as_bytes()));
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacParams {
    /// Mean access delay on an idle channel, seconds.
    pub base_access_delay: f64,
    /// Total attempts per unicast frame, 1..=8.
    pub max_attempts: u8,
    /// Busy-fraction measurement window, seconds.
    pub busy_window: f64,
    /// Busy fraction clamp used for the access-delay multiplier.
    pub b_max: f64,
    /// Data frames a radio may hold before tail drop.
    pub queue_limit: usize,
}

impl Default for MacParams {
    fn default() -> Self {
        Self {
            base_access_delay: 0.5e-3,
            max_attempts: MAX_ATTEMPTS,
            busy_window: 5.0,
            b_max: 0.99,
            queue_limit: 50,
        }
    }
}

impl MacParams {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.base_access_delay >= 0.0 && self.base_access_delay.is_finite()) {
            errs.push("mac.base_access_delay must be non-negative".into());
        }
        if !(1..=MAX_ATTEMPTS).contains(&self.max_attempts) {
            errs.push(format!("mac.max_attempts must lie in 1..={MAX_ATTEMPTS}"));
        }
        if !(self.busy_window > 0.0) {
            errs.push("mac.busy_window must be positive".into());
        }
        if !(self.b_max > 0.0 && self.b_max < 1.0) {
            errs.push("mac.b_max must lie in (0, 1)".into());
        }
        if self.queue_limit == 0 {
            errs.push("mac.queue_limit must be at least 1".into());
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransmitOutcome {
    pub delivered: bool,
    pub attempts: u8,
    pub completion_time: f64,
    /// Channel time consumed by all attempts.
    pub airtime: f64,
}

impl TransmitOutcome {
    /// Set when every attempt failed; the network layer must be told.
    pub fn failure_notification(&self) -> bool {
        !self.delivered
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineStats {
    pub events_processed: u64,
    pub frames_sent: u64,
    pub frames_delivered: u64,
    pub frames_dropped: u64,
    pub broadcasts: u64,
    pub failure_notifications: u64,
    pub airtime_per_channel: BTreeMap<Channel, f64>,
}

/// Shared-medium model: per-link airtime history, outages and the
/// retry/backoff law.
#[derive(Debug)]
pub struct Mac {
    params: MacParams,
    windows: Vec<AirtimeWindow>,
    outage: Vec<bool>,
    rng: ChaCha8Rng,
    stats: EngineStats,
}

impl Mac {
    pub fn new(topology: &Topology, params: MacParams, rng: ChaCha8Rng) -> Self {
        let n = topology.links().len();
        Self {
            params,
            windows: (0..n).map(|_| AirtimeWindow::new(params.busy_window, 0.1)).collect(),
            outage: vec![false; n],
            rng,
            stats: EngineStats::default(),
        }
    }

    pub fn params(&self) -> &MacParams {
        &self.params
    }

    pub fn stats(&self) -> &EngineStats {
        &self.stats
    }

    pub fn set_outage(&mut self, link: LinkId, down: bool) {
        if let Some(o) = self.outage.get_mut(link.index()) {
            *o = down;
        }
    }

    pub fn in_outage(&self, link: LinkId) -> bool {
        self.outage.get(link.index()).copied().unwrap_or(false)
    }

    /// Busy fraction of `link`'s contention domain over the trailing window.
    pub fn domain_busy(&mut self, topology: &Topology, link: LinkId, now: f64) -> Result<f64, EngineError> {
        let domain = topology.contention_domain(link)?;
        let airtime: f64 = domain.iter().map(|l| self.windows[l.index()].airtime(now)).sum();
        // Before a full window has elapsed, normalize by elapsed time (at least 1 s).
        let window = self.windows[link.index()].window().min(now.max(1.0));
        Ok(busy_fraction(airtime, window, self.params.b_max))
    }

    fn sample_access(&mut self, busy: f64) -> f64 {
        let mean = self.params.base_access_delay / (1.0 - busy);
        let u: f64 = self.rng.gen();
        -mean * (1.0 - u).ln()
    }

    fn charge(&mut self, channel: Channel, link: LinkId, at: f64, airtime: f64) {
        self.windows[link.index()].record(at, airtime);
        *self.stats.airtime_per_channel.entry(channel).or_insert(0.0) += airtime;
    }

    /// Unicast with retries. Each attempt succeeds with the link's directional
    /// delivery probability (zero during an outage).
    pub fn transmit(
        &mut self,
        topology: &Topology,
        frame_bits: f64,
        hop: DirLink,
        t_start: f64,
    ) -> Result<TransmitOutcome, EngineError> {
        if !(frame_bits > 0.0) {
            return Err(EngineError::EmptyFrame);
        }
        let link = topology.link(hop.link)?;
        let p = if self.in_outage(hop.link) { 0.0 } else { link.p_from(hop.from) };
        let air = frame_bits / link.capacity;
        let busy = self.domain_busy(topology, hop.link, t_start)?;
        let mut t = t_start;
        let mut total_air = 0.0;
        let mut delivered = false;
        let mut attempts = 0u8;
        for k in 1..=self.params.max_attempts {
            attempts = k;
            t += self.sample_access(busy) + f64::from(k - 1) * self.params.base_access_delay;
            t += air;
            total_air += air;
            self.charge(link.channel, hop.link, t, air);
            if self.rng.gen::<f64>() < p {
                delivered = true;
                break;
            }
        }
        self.stats.frames_sent += 1;
        if delivered {
            self.stats.frames_delivered += 1;
        } else {
            self.stats.frames_dropped += 1;
            self.stats.failure_notifications += 1;
        }
        Ok(TransmitOutcome {
            delivered,
            attempts,
            completion_time: t,
            airtime: total_air,
        })
    }

    /// Single-attempt broadcast on `channel` from `sender`. Returns the time
    /// the frame finishes; per-receiver success is decided by the caller via
    /// [`Mac::receive_broadcast`].
    pub fn broadcast(
        &mut self,
        topology: &Topology,
        frame_bits: f64,
        sender: crate::topology::NodeId,
        channel: Channel,
        t_start: f64,
    ) -> f64 {
        let incident: Vec<LinkId> = topology
            .incident(sender)
            .iter()
            .copied()
            .filter(|l| topology.links()[l.index()].channel == channel)
            .collect();
        let Some(&first) = incident.first() else {
            return t_start;
        };
        let link = &topology.links()[first.index()];
        let rate = topology
            .radio(sender, channel)
            .map_or(link.capacity, |r| r.nominal_rate.min(link.capacity));
        let air = frame_bits / rate;
        let busy = self.domain_busy(topology, first, t_start).unwrap_or(0.0);
        let t = t_start + self.sample_access(busy) + air;
        self.charge(channel, first, t, air);
        self.stats.broadcasts += 1;
        t
    }

    pub fn receive_broadcast(&mut self, topology: &Topology, hop: DirLink) -> bool {
        if self.in_outage(hop.link) {
            return false;
        }
        let p = topology.links()[hop.link.index()].p_from(hop.from);
        self.rng.gen::<f64>() < p
    }
}

/// Scheduler plus MAC, the unit a scenario replica runs on.
#[derive(Debug)]
pub struct Engine<P> {
    pub scheduler: Scheduler<P>,
    pub mac: Mac,
}

impl<P> Engine<P> {
    pub fn new(topology: &Topology, params: MacParams, seed: u64) -> Self {
        Self {
            scheduler: Scheduler::new(),
            mac: Mac::new(topology, params, rng_stream(seed, "mac")),
        }
    }

    pub fn schedule(&mut self, time: f64, kind: EventKind, payload: P) -> Result<(), EngineError> {
        self.scheduler.schedule(time, kind, payload)
    }

    /// Processes every event with `time <= t_end`, handing each to `handler`.
    pub fn run_until<H>(&mut self, t_end: f64, mut handler: H) -> EngineStats
    where
        H: FnMut(&mut Self, Event<P>),
    {
        while let Some(ev) = self.scheduler.next_event(t_end) {
            handler(self, ev);
        }
        self.scheduler.advance_to(t_end);
        self.stats()
    }

    pub fn stats(&self) -> EngineStats {
        EngineStats {
            events_processed: self.scheduler.processed(),
            ..self.mac.stats().clone()
        }
    }
}
