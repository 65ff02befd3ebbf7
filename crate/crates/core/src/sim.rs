//! Slotted discrete-event engine for one downlink run.
//!
//! The sender transmits at most one code per slot. Receptions and ACKs are
//! timestamped events that may land mid-slot; events at the same instant are
//! ordered ACK, then reception, then the slot boundary, with the packet id
//! and insertion order as final keys.
//!
//! The sender selects codes from its own view of the clients: virtual
//! buffers are known exactly, Rx buffers only through received ACKs.
//!
//! Randomness is drawn per link from an independent stream, a fixed number
//! of draws per slot whether or not anything is sent. Two runs with the same
//! seed therefore see the same channel realization regardless of policy.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{AckModel, Channel, DelayModel, GilbertElliotChannel, IidChannel, Outcome, SnrPreset};
use crate::coding::{self, Depth, LossEstimate};
use crate::error::{Error, Result};
use crate::metrics::{FlowMetrics, RunMetrics};
use crate::model::{
    decodable, knows, Clock, Millis, NetworkCode, NodeIndex, NodeState, Packet, PacketId, PacketState, TxQueue,
};
use crate::traffic::{self, StreamProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    NoNc,
    Nct,
    Ncv,
    Ncvd,
    NcvMwis,
}

impl Algorithm {
    /// The four policies compared in experiments.
    pub const BASELINE_SET: [Algorithm; 4] = [Algorithm::NoNc, Algorithm::Nct, Algorithm::Ncv, Algorithm::Ncvd];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::NoNc => "noNC",
            Algorithm::Nct => "NCT",
            Algorithm::Ncv => "NCV",
            Algorithm::Ncvd => "NCVD",
            Algorithm::NcvMwis => "NCV-MWIS",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "nonc" | "no-nc" => Ok(Algorithm::NoNc),
            "nct" => Ok(Algorithm::Nct),
            "ncv" => Ok(Algorithm::Ncv),
            "ncvd" => Ok(Algorithm::Ncvd),
            "ncv-mwis" | "mwis" => Ok(Algorithm::NcvMwis),
            _ => Err(format!(
                "unknown algorithm `{s}` (expected noNC, NCT, NCV, NCVD or NCV-MWIS)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelConfig {
    Iid {
        loss_rate: f64,
    },
    GilbertElliot {
        ber_good: f64,
        ber_bad: f64,
        sojourn_good: Millis,
        sojourn_bad: Millis,
        preset: Option<SnrPreset>,
        /// Let the sender see the current channel state instead of the
        /// stationary average loss.
        oracle_state: bool,
    },
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig::Iid { loss_rate: 0.094 }
    }
}

impl ChannelConfig {
    pub fn iid(loss_rate: f64) -> Self {
        ChannelConfig::Iid { loss_rate }
    }

    pub fn preset(preset: SnrPreset) -> Self {
        let (ber_good, ber_bad) = preset.ber();
        ChannelConfig::GilbertElliot {
            ber_good,
            ber_bad,
            sojourn_good: 21.0,
            sojourn_bad: 21.0,
            preset: Some(preset),
            oracle_state: false,
        }
    }

    fn build(&self, slot: Millis) -> Channel {
        match *self {
            ChannelConfig::Iid { loss_rate } => Channel::Iid(IidChannel { loss_rate }),
            ChannelConfig::GilbertElliot {
                ber_good,
                ber_bad,
                sojourn_good,
                sojourn_bad,
                preset,
                ..
            } => {
                let mut ge = GilbertElliotChannel::new(ber_good, ber_bad, sojourn_good, sojourn_bad, slot);
                ge.avg_snr_db = preset.map(SnrPreset::db);
                Channel::GilbertElliot(ge)
            }
        }
    }

    /// Long-run loss rate at the given packet size.
    pub fn loss_param(&self, packet_size: u32) -> f64 {
        self.build(1.0).average_loss(packet_size)
    }

    fn validate(&self) -> Result<()> {
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        match *self {
            ChannelConfig::Iid { loss_rate } if !prob(loss_rate) => {
                Err(Error::Config(format!("loss_rate must be in [0, 1], got {loss_rate}")))
            }
            ChannelConfig::GilbertElliot {
                ber_good,
                ber_bad,
                sojourn_good,
                sojourn_bad,
                ..
            } => {
                if !prob(ber_good) || !prob(ber_bad) {
                    return Err(Error::Config("bit-error rates must be in [0, 1]".into()));
                }
                if !(sojourn_good > 0.0 && sojourn_bad > 0.0 && sojourn_good.is_finite() && sojourn_bad.is_finite()) {
                    return Err(Error::Config("mean sojourn times must be positive".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub ncvd_depth: Depth,
    /// Downlink rate in bit/s.
    pub link_rate: f64,
    pub num_clients: usize,
    /// Traffic generation window.
    pub duration: Millis,
    pub delay_budget: Millis,
    /// ACK hold-off; `None` means `2 * delay_mean + slot`.
    pub rtt: Option<Millis>,
    pub delay_mean: Millis,
    pub ack_loss: f64,
    pub channel: ChannelConfig,
    pub traffic: StreamProfile,
    /// Spread flow start times evenly over one packet interval.
    pub stagger_flows: bool,
    pub normalize_deltas: bool,
    /// Replay packets from a trace file instead of generating them.
    pub trace: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algorithm: Algorithm::Ncv,
            ncvd_depth: Depth::Unbounded,
            link_rate: 300_000.0,
            num_clients: 3,
            duration: 30_000.0,
            delay_budget: 100.0,
            rtt: None,
            delay_mean: 4.0,
            ack_loss: 0.0,
            channel: ChannelConfig::default(),
            traffic: StreamProfile::default(),
            stagger_flows: true,
            normalize_deltas: false,
            trace: None,
            seed: 1,
        }
    }
}

impl RunConfig {
    pub fn slot_duration(&self) -> Millis {
        self.traffic.packet_size as f64 * 8.0 / self.link_rate * 1000.0
    }

    pub fn rtt(&self) -> Millis {
        self.rtt.unwrap_or(2.0 * self.delay_mean + self.slot_duration())
    }

    /// Offered load over downlink capacity, ignoring retransmissions.
    pub fn utilization(&self) -> f64 {
        self.traffic.rate * self.num_clients as f64 / self.link_rate
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.link_rate) {
            return Err(Error::Config("link_rate must be positive".into()));
        }
        if self.num_clients == 0 {
            return Err(Error::Config("num_clients must be at least 1".into()));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::Config("duration must be non-negative".into()));
        }
        if !positive(self.delay_budget) {
            return Err(Error::Config("delay budget must be positive".into()));
        }
        if !positive(self.delay_mean) {
            return Err(Error::Config("delay_mean must be positive".into()));
        }
        if let Some(rtt) = self.rtt {
            if !positive(rtt) {
                return Err(Error::Config("rtt must be positive".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.ack_loss) {
            return Err(Error::Config("ack_loss must be in [0, 1]".into()));
        }
        self.channel.validate()?;
        StreamProfile {
            delay_budget: self.delay_budget,
            ..self.traffic.clone()
        }
        .validate()
    }
}

/// Derives an independent 64-bit seed from `master` and an index.
///
/// SplitMix64 finalizer over `master + (index + 1) * 0x9E3779B97F4A7C15`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A transmitted code awaiting ACKs.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingAck {
    pub code: NetworkCode,
    pub sent_at: Millis,
    pub expected_by: Millis,
    /// Per client, whether the broadcast reached it.
    pub outcomes: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    OnTime,
    Late,
    Expired,
}

/// What became of one packet.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub target: NodeIndex,
    pub deadline: Millis,
    pub delta: f64,
    /// `None` while still undecided.
    pub fate: Option<Fate>,
    /// When the target decoded it, if on time.
    pub delivered_at: Option<Millis>,
}

#[derive(Debug, Clone, PartialEq)]
enum EventKind {
    Ack {
        node: NodeIndex,
        ids: Vec<PacketId>,
    },
    Reception {
        node: NodeIndex,
        code: NetworkCode,
        ack: Outcome,
    },
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::Ack { .. } => 0,
            EventKind::Reception { .. } => 1,
        }
    }

    fn key_id(&self) -> Option<PacketId> {
        match self {
            EventKind::Ack { ids, .. } => ids.first().copied(),
            EventKind::Reception { code, .. } => Some(code.primary()),
        }
    }
}

#[derive(Debug, Clone)]
struct Event {
    time: Millis,
    seq: u64,
    kind: EventKind,
}

impl Event {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.rank().cmp(&other.kind.rank()))
            .then(self.kind.key_id().cmp(&other.kind.key_id()))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_key(other)
    }
}

/// One broadcast, for inspection in tests and traces.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub slot: u64,
    pub time: Millis,
    pub code: NetworkCode,
    pub delivered: Vec<bool>,
}

/// Per-link randomness and channel state.
#[derive(Debug, Clone)]
struct Link {
    channel: Channel,
    rng: ChaCha8Rng,
}

#[derive(Debug, Default, Clone)]
struct Accumulators {
    slots_measured: u64,
    queue_sum: f64,
    vbuf_sum: f64,
    transmissions: u64,
    mac: u64,
    app: u64,
    undecodable: u64,
    mac_per_flow: BTreeMap<u32, u64>,
}

/// Full state of one run.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: RunConfig,
    clock: Clock,
    slot_index: u64,
    rtt: Millis,
    arrivals: VecDeque<Packet>,
    queue: TxQueue,
    nodes: Vec<NodeState>,
    sender_view: Vec<NodeState>,
    links: Vec<Link>,
    delay: DelayModel,
    ack: AckModel,
    events: BinaryHeap<Reverse<Event>>,
    event_seq: u64,
    pending: Vec<PendingAck>,
    packets: BTreeMap<PacketId, PacketRecord>,
    acc: Accumulators,
    log: Option<Vec<Transmission>>,
}

impl Simulation {
    /// Builds a run from its configuration, generating or loading traffic.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let packets = Self::build_traffic(&config)?;
        Self::with_packets(config, packets)
    }

    fn build_traffic(config: &RunConfig) -> Result<Vec<Packet>> {
        if config.duration <= 0.0 {
            return Ok(Vec::new());
        }
        let profile = StreamProfile {
            delay_budget: config.delay_budget,
            ..config.traffic.clone()
        };
        let mut flows: Vec<Vec<Packet>> = match &config.trace {
            Some(path) => traffic::load_trace(path, profile.packet_size)?.into_values().collect(),
            None => (0..config.num_clients)
                .map(|f| {
                    let phase = if config.stagger_flows {
                        f as f64 * profile.packet_interval() / config.num_clients as f64
                    } else {
                        0.0
                    };
                    traffic::generate_stream(
                        &StreamProfile {
                            phase,
                            ..profile.clone()
                        },
                        f as u32,
                        config.duration,
                    )
                })
                .collect::<Result<_>>()?,
        };
        if config.normalize_deltas {
            for flow in flows.iter_mut() {
                traffic::normalize_deltas(flow);
            }
        }
        Ok(flows.into_iter().flatten().collect())
    }

    /// Builds a run over an explicit packet list (any order).
    pub fn with_packets(config: RunConfig, mut packets: Vec<Packet>) -> Result<Self> {
        config.validate()?;
        for p in &packets {
            if p.target >= config.num_clients {
                return Err(Error::Config(format!(
                    "packet {} targets node {} but only {} clients are configured",
                    p.id, p.target, config.num_clients
                )));
            }
        }
        packets.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time).then(a.id.cmp(&b.id)));
        let clock = Clock::for_link(config.traffic.packet_size, config.link_rate);
        let slot = clock.slot_duration();
        let links = (0..config.num_clients)
            .map(|n| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, n as u64));
                let mut channel = config.channel.build(slot);
                if let Channel::GilbertElliot(ge) = &mut channel {
                    ge.randomize_state(&mut rng);
                }
                Link { channel, rng }
            })
            .collect();
        let nodes: Vec<NodeState> = (0..config.num_clients).map(NodeState::new).collect();
        let mut sim = Simulation {
            rtt: config.rtt(),
            delay: DelayModel::new(config.delay_mean),
            ack: AckModel {
                loss: config.ack_loss,
                delay: DelayModel::new(config.delay_mean),
            },
            clock,
            slot_index: 0,
            arrivals: packets.into(),
            queue: TxQueue::new(),
            sender_view: nodes.clone(),
            nodes,
            links,
            events: BinaryHeap::new(),
            event_seq: 0,
            pending: Vec::new(),
            packets: BTreeMap::new(),
            acc: Accumulators::default(),
            log: None,
            config,
        };
        for p in sim.arrivals.clone() {
            sim.register(&p);
        }
        Ok(sim)
    }

    /// Installs initial client buffers (for hand-built scenarios). The
    /// sender's view starts identical to the given state.
    pub fn set_node_states(&mut self, nodes: Vec<NodeState>) {
        assert_eq!(nodes.len(), self.config.num_clients);
        self.sender_view = nodes.clone();
        self.nodes = nodes;
    }

    /// Replaces the queue with already-admitted packets (for hand-built
    /// scenarios). Packets not yet known to the run are registered.
    pub fn set_queue(&mut self, packets: Vec<Packet>) {
        for p in &packets {
            if !self.packets.contains_key(&p.id) {
                self.register(p);
            }
            self.arrivals.retain(|a| a.id != p.id);
        }
        self.queue = packets.into_iter().collect();
    }

    pub fn record_transmissions(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn transmissions(&self) -> &[Transmission] {
        self.log.as_deref().unwrap_or(&[])
    }

    fn register(&mut self, p: &Packet) {
        self.packets.insert(
            p.id,
            PacketRecord {
                target: p.target,
                deadline: p.deadline,
                delta: p.delta,
                fate: None,
                delivered_at: None,
            },
        );
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn now(&self) -> Millis {
        self.clock.now()
    }

    pub fn slot_duration(&self) -> Millis {
        self.clock.slot_duration()
    }

    pub fn queue(&self) -> &TxQueue {
        &self.queue
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn sender_view(&self) -> &[NodeState] {
        &self.sender_view
    }

    pub fn pending_acks(&self) -> &[PendingAck] {
        &self.pending
    }

    pub fn fate(&self, id: &PacketId) -> Option<Fate> {
        self.packets.get(id).and_then(|r| r.fate)
    }

    /// Every packet of the run with its outcome so far.
    pub fn packet_records(&self) -> impl Iterator<Item = (&PacketId, &PacketRecord)> {
        self.packets.iter()
    }

    fn next_slot_time(&self) -> Millis {
        self.slot_index as f64 * self.clock.slot_duration()
    }

    fn schedule(&mut self, time: Millis, kind: EventKind) {
        self.event_seq += 1;
        self.events.push(Reverse(Event {
            time,
            seq: self.event_seq,
            kind,
        }));
    }

    /// Processes every event with timestamp `<= t`, in order.
    pub fn process_events_until(&mut self, t: Millis) {
        while let Some(Reverse(ev)) = self.events.peek() {
            if ev.time > t {
                break;
            }
            let Reverse(ev) = self.events.pop().expect("peeked");
            match ev.kind {
                EventKind::Reception { node, code, ack } => self.on_reception(node, &code, ev.time, ack),
                EventKind::Ack { node, ids } => {
                    self.clock.advance_to(ev.time);
                    for id in ids {
                        self.on_ack(node, id);
                    }
                }
            }
        }
        if t > self.clock.now() {
            self.clock.advance_to(t);
        }
    }

    /// True once nothing further can happen.
    pub fn is_finished(&self) -> bool {
        self.arrivals.is_empty() && self.queue.is_empty() && self.events.is_empty()
    }

    fn estimates(&self) -> Vec<LossEstimate> {
        let size = self.config.traffic.packet_size;
        let oracle = matches!(
            self.config.channel,
            ChannelConfig::GilbertElliot { oracle_state: true, .. }
        );
        self.links
            .iter()
            .map(|l| {
                let loss = if oracle {
                    l.channel.current_loss(size)
                } else {
                    l.channel.average_loss(size)
                };
                LossEstimate::new(loss, self.config.delay_mean)
            })
            .collect()
    }

    fn select(&self, now: Millis) -> Option<NetworkCode> {
        let view = &self.sender_view;
        match self.config.algorithm {
            Algorithm::NoNc => coding::select_nonc(&self.queue),
            Algorithm::Nct => coding::select_nct(&self.queue, view),
            Algorithm::Ncv => coding::select_ncv(&self.queue, view, &self.estimates(), now),
            Algorithm::Ncvd => coding::select_ncvd(&self.queue, view, &self.estimates(), now, self.config.ncvd_depth),
            Algorithm::NcvMwis => coding::select_ncv_mwis(&self.queue, view, &self.estimates(), now),
        }
    }

    /// Runs events up to the next slot boundary, then that slot.
    pub fn slot_step(&mut self) {
        let t = self.next_slot_time();
        self.process_events_until(t);

        // (1) admit arrivals
        while self.arrivals.front().is_some_and(|p| p.arrival_time <= t) {
            let p = self.arrivals.pop_front().expect("front exists");
            self.queue.push(p);
        }

        // (2) purge expired packets and overheard copies
        for p in self.queue.purge_expired(t) {
            let rec = self.packets.get_mut(&p.id).expect("registered");
            rec.fate.get_or_insert(Fate::Expired);
        }
        for n in self.nodes.iter_mut().chain(self.sender_view.iter_mut()) {
            n.purge_expired(t);
        }

        // (3) ACK timers that ran out: members become active again
        self.pending.retain(|pa| pa.expected_by > t);
        self.queue.reactivate(t);

        if t < self.config.duration {
            self.acc.slots_measured += 1;
            self.acc.queue_sum += self.queue.len() as f64;
            self.acc.vbuf_sum +=
                self.nodes.iter().map(|n| n.virtual_buffer.len()).sum::<usize>() as f64 / self.nodes.len() as f64;
        }

        // (4) select and broadcast; every link draws the same amount each slot
        let code = self.select(t);
        let size = self.config.traffic.packet_size;
        let slot = self.clock.slot_duration();
        let first = self.slot_index == 0;
        let (delay, ack) = (self.delay, self.ack);
        let draws: Vec<(Outcome, Outcome)> = self
            .links
            .iter_mut()
            .map(|link| {
                if !first {
                    link.channel.advance(slot, &mut link.rng);
                }
                let tx = link.channel.transmit_outcome(size, &delay, &mut link.rng);
                let ack = ack.ack_outcome(&mut link.rng);
                (tx, ack)
            })
            .collect();

        if let Some(code) = code {
            debug_assert!(
                self.queue.get(&code.primary()).is_some_and(Packet::is_active),
                "primary {} is not an active queued packet",
                code.primary()
            );
            self.acc.transmissions += 1;

            // (5) members inactive for one RTT
            let until = t + self.rtt;
            for id in code.members() {
                if let Some(p) = self.queue.get_mut(id) {
                    p.state = PacketState::Inactive { until };
                }
            }

            // (6) receptions
            let mut delivered = Vec::with_capacity(draws.len());
            for (node, (tx, ack)) in draws.into_iter().enumerate() {
                delivered.push(tx.is_delivered());
                if let Outcome::Delivered { delay } = tx {
                    self.schedule(
                        t + delay,
                        EventKind::Reception {
                            node,
                            code: code.clone(),
                            ack,
                        },
                    );
                }
            }
            if let Some(log) = self.log.as_mut() {
                log.push(Transmission {
                    slot: self.slot_index,
                    time: t,
                    code: code.clone(),
                    delivered: delivered.clone(),
                });
            }
            self.pending.push(PendingAck {
                code,
                sent_at: t,
                expected_by: until,
                outcomes: delivered,
            });
        }

        self.slot_index += 1;

        #[cfg(debug_assertions)]
        if let Err(e) = self.check_invariants() {
            panic!("invariant violated at t={t}: {e}");
        }
    }

    /// Client `node` received `code` intact at `now`. `ack` is the fate of
    /// any ACK this reception triggers.
    pub fn on_reception(&mut self, node: NodeIndex, code: &NetworkCode, now: Millis, ack: Outcome) {
        self.clock.advance_to(now);
        let mut acked = Vec::new();
        match decodable(code, &self.nodes[node]) {
            Some(id) => {
                let Some(rec) = self.packets.get_mut(&id) else {
                    debug_assert!(false, "decoded unknown packet {id}");
                    return;
                };
                self.acc.mac += 1;
                *self.acc.mac_per_flow.entry(id.flow).or_default() += 1;
                if rec.target == node {
                    if now <= rec.deadline {
                        self.nodes[node].rx_buffer.insert(id);
                        if rec.fate.is_none() {
                            rec.fate = Some(Fate::OnTime);
                            rec.delivered_at = Some(now);
                            self.acc.app += 1;
                        }
                        acked.push(id);
                    } else if rec.fate.is_none() {
                        rec.fate = Some(Fate::Late);
                    }
                } else if now <= rec.deadline {
                    let expiry = rec.deadline;
                    self.nodes[node].overhear(id, expiry);
                    self.sender_view[node].overhear(id, expiry);
                }
            }
            None => {
                let state = &self.nodes[node];
                if code.members().iter().all(|id| knows(state, id)) {
                    // Duplicate: re-acknowledge own packets so the sender stops.
                    acked.extend(code.members().iter().filter(|id| state.rx_buffer.contains(id)).copied());
                } else {
                    self.acc.undecodable += 1;
                }
            }
        }
        if acked.is_empty() {
            return;
        }
        if let Outcome::Delivered { delay } = ack {
            self.schedule(now + delay, EventKind::Ack { node, ids: acked });
        }
    }

    /// The sender received `node`'s ACK for `id`. Other clients overhear it
    /// and drop their copy.
    pub fn on_ack(&mut self, node: NodeIndex, id: PacketId) {
        self.queue.remove(&id);
        if self.packets.get(&id).is_some_and(|r| r.target == node) {
            self.sender_view[node].rx_buffer.insert(id);
        }
        for (m, (truth, view)) in self.nodes.iter_mut().zip(self.sender_view.iter_mut()).enumerate() {
            if m != node {
                truth.evict(&id);
                view.evict(&id);
            }
        }
    }

    /// Structural invariants of the live state.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let now = self.clock.now();
        for p in self.queue.iter() {
            if p.deadline < now {
                return Err(format!("expired packet {} still queued", p.id));
            }
        }
        for nodes in [&self.nodes, &self.sender_view] {
            for n in nodes.iter() {
                for (id, expiry) in &n.virtual_buffer {
                    if n.rx_buffer.contains(id) {
                        return Err(format!("node {} holds {id} in both buffers", n.node));
                    }
                    if self.packets.get(id).is_some_and(|r| r.target == n.node) {
                        return Err(format!("node {} overheard its own packet {id}", n.node));
                    }
                    if *expiry < now {
                        return Err(format!("node {} keeps expired {id}", n.node));
                    }
                }
            }
        }
        Ok(())
    }

    /// Steps until every packet has a terminal fate.
    pub fn run_to_completion(&mut self) {
        while !self.is_finished() {
            self.slot_step();
        }
    }

    pub fn metrics(&self) -> RunMetrics {
        let mut per_flow: BTreeMap<u32, FlowMetrics> = BTreeMap::new();
        for (id, rec) in &self.packets {
            let f = per_flow.entry(id.flow).or_default();
            f.offered += 1;
            f.utility_offered += rec.delta;
            // Anything unresolved when the run stops never made it.
            match rec.fate.unwrap_or(Fate::Expired) {
                Fate::OnTime => {
                    f.delivered_on_time += 1;
                    f.utility_delivered += rec.delta;
                }
                Fate::Late => f.delivered_late += 1,
                Fate::Expired => f.expired += 1,
            }
        }
        for (flow, n) in &self.acc.mac_per_flow {
            per_flow.entry(*flow).or_default().mac_delivered = *n;
        }
        let slots = self.acc.slots_measured.max(1) as f64;
        RunMetrics {
            per_flow,
            mac_packets_delivered: self.acc.mac,
            app_packets_delivered: self.acc.app,
            transmissions: self.acc.transmissions,
            undecodable_receptions: self.acc.undecodable,
            mean_tx_queue: self.acc.queue_sum / slots,
            mean_virtual_buffer: self.acc.vbuf_sum / slots,
            duration: self.config.duration,
        }
    }
}

/// Runs one configuration to completion.
pub fn run(config: &RunConfig) -> Result<RunMetrics> {
    let mut sim = Simulation::new(config.clone())?;
    sim.run_to_completion();
    let metrics = sim.metrics();
    #[cfg(debug_assertions)]
    if let Err(e) = metrics.check_invariants() {
        panic!("run invariant violated: {e}");
    }
    Ok(metrics)
}
