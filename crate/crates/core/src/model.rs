//! Packets, codes, queues and per-client buffers.
//!
//! Payloads are never simulated. A network code is the set of packet ids
//! XOR-ed together, so decoding reduces to set membership: a client recovers
//! a packet from a code exactly when it already knows every other member.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

/// Simulation time in milliseconds.
pub type Millis = f64;

pub type NodeIndex = usize;

/// Identifies one video packet. Ordered by `(flow, seq)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PacketId {
    pub flow: u32,
    pub seq: u64,
}

impl PacketId {
    pub fn new(flow: u32, seq: u64) -> Self {
        PacketId { flow, seq }
    }
}

impl fmt::Display for PacketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // A1, B1, ... for the first 26 flows; f27#3 style beyond that.
        if self.flow < 26 {
            write!(f, "{}{}", (b'A' + self.flow as u8) as char, self.seq)
        } else {
            write!(f, "f{}#{}", self.flow, self.seq)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PacketState {
    Active,
    /// Transmitted within the last RTT; ACK pending until `until`.
    Inactive {
        until: Millis,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: PacketId,
    pub target: NodeIndex,
    pub size: u32,
    pub arrival_time: Millis,
    pub deadline: Millis,
    /// Distortion weight: quality gained if this packet arrives on time.
    pub delta: f64,
    pub state: PacketState,
}

impl Packet {
    pub fn is_active(&self) -> bool {
        matches!(self.state, PacketState::Active)
    }
}

/// A set of packets XOR-ed into one transmission.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkCode {
    members: BTreeSet<PacketId>,
    primary: PacketId,
    target: NodeIndex,
}

impl NetworkCode {
    /// Builds `{primary} ∪ sides`. Duplicates collapse; the primary may also
    /// appear in `sides`.
    pub fn new(primary: PacketId, target: NodeIndex, sides: impl IntoIterator<Item = PacketId>) -> Self {
        let mut members: BTreeSet<PacketId> = sides.into_iter().collect();
        members.insert(primary);
        NetworkCode {
            members,
            primary,
            target,
        }
    }

    pub fn singleton(packet: &Packet) -> Self {
        NetworkCode::new(packet.id, packet.target, std::iter::empty())
    }

    pub fn members(&self) -> &BTreeSet<PacketId> {
        &self.members
    }

    pub fn primary(&self) -> PacketId {
        self.primary
    }

    pub fn target(&self) -> NodeIndex {
        self.target
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: &PacketId) -> bool {
        self.members.contains(id)
    }

    pub fn side_packets(&self) -> impl Iterator<Item = &PacketId> {
        let primary = self.primary;
        self.members.iter().filter(move |id| **id != primary)
    }

    /// XOR of the code with a set of known packets, on id sets.
    ///
    /// Members present in `known` cancel out; what remains is what the
    /// receiver is left holding.
    pub fn xor_with<'a>(&self, known: impl IntoIterator<Item = &'a PacketId>) -> BTreeSet<PacketId> {
        let mut residue = self.members.clone();
        for id in known {
            if !residue.remove(id) {
                residue.insert(*id);
            }
        }
        residue
    }
}

impl fmt::Display for NetworkCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for id in &self.members {
            if !first {
                f.write_str("⊕")?;
            }
            first = false;
            write!(f, "{id}")?;
        }
        Ok(())
    }
}

/// The sender's output queue, in arrival order.
#[derive(Debug, Clone, Default)]
pub struct TxQueue {
    packets: VecDeque<Packet>,
}

impl TxQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, packet: Packet) {
        self.packets.push_back(packet);
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter()
    }

    pub fn get(&self, id: &PacketId) -> Option<&Packet> {
        self.packets.iter().find(|p| p.id == *id)
    }

    pub fn get_mut(&mut self, id: &PacketId) -> Option<&mut Packet> {
        self.packets.iter_mut().find(|p| p.id == *id)
    }

    pub fn contains(&self, id: &PacketId) -> bool {
        self.get(id).is_some()
    }

    pub fn remove(&mut self, id: &PacketId) -> Option<Packet> {
        let pos = self.packets.iter().position(|p| p.id == *id)?;
        self.packets.remove(pos)
    }

    pub fn first_active(&self) -> Option<&Packet> {
        self.packets.iter().find(|p| p.is_active())
    }

    pub fn active(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter().filter(|p| p.is_active())
    }

    /// Drops every packet whose deadline is strictly before `now` and
    /// returns them in FIFO order.
    pub fn purge_expired(&mut self, now: Millis) -> Vec<Packet> {
        let mut expired = Vec::new();
        self.packets.retain(|p| {
            if p.deadline < now {
                expired.push(p.clone());
                false
            } else {
                true
            }
        });
        expired
    }

    /// Returns inactive packets whose hold-off has elapsed to Active.
    pub fn reactivate(&mut self, now: Millis) -> usize {
        let mut n = 0;
        for p in self.packets.iter_mut() {
            if let PacketState::Inactive { until } = p.state {
                if until <= now {
                    p.state = PacketState::Active;
                    n += 1;
                }
            }
        }
        n
    }
}

impl FromIterator<Packet> for TxQueue {
    fn from_iter<I: IntoIterator<Item = Packet>>(iter: I) -> Self {
        TxQueue {
            packets: iter.into_iter().collect(),
        }
    }
}

/// Receive-side state of one client.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeState {
    pub node: NodeIndex,
    /// Packets destined to this node that it has decoded.
    pub rx_buffer: BTreeSet<PacketId>,
    /// Overheard packets destined to other nodes, with expiry time.
    pub virtual_buffer: BTreeMap<PacketId, Millis>,
}

impl NodeState {
    pub fn new(node: NodeIndex) -> Self {
        NodeState {
            node,
            ..Default::default()
        }
    }

    pub fn overhear(&mut self, id: PacketId, expiry: Millis) {
        debug_assert!(!self.rx_buffer.contains(&id));
        self.virtual_buffer.insert(id, expiry);
    }

    pub fn evict(&mut self, id: &PacketId) -> bool {
        self.virtual_buffer.remove(id).is_some()
    }

    /// Removes virtual-buffer entries whose expiry is strictly before `now`.
    pub fn purge_expired(&mut self, now: Millis) -> usize {
        let before = self.virtual_buffer.len();
        self.virtual_buffer.retain(|_, expiry| *expiry >= now);
        before - self.virtual_buffer.len()
    }

    pub fn knows(&self, id: &PacketId) -> bool {
        knows(self, id)
    }
}

pub fn knows(node: &NodeState, id: &PacketId) -> bool {
    node.rx_buffer.contains(id) || node.virtual_buffer.contains_key(id)
}

/// The single member of `code` this node can newly recover, if any.
///
/// `None` when the node already knows every member, or when two or more
/// members are unknown.
pub fn decodable(code: &NetworkCode, node: &NodeState) -> Option<PacketId> {
    let mut unknown = code.members().iter().filter(|id| !knows(node, id));
    let first = *unknown.next()?;
    if unknown.next().is_some() {
        return None;
    }
    Some(first)
}

/// Slot clock for the downlink.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clock {
    now: Millis,
    slot_duration: Millis,
}

impl Clock {
    pub fn new(slot_duration: Millis) -> Self {
        assert!(slot_duration > 0.0, "slot duration must be positive");
        Clock {
            now: 0.0,
            slot_duration,
        }
    }

    /// Transmission time of one `size`-byte packet at `link_rate` bit/s.
    pub fn for_link(packet_size: u32, link_rate: f64) -> Self {
        Clock::new(packet_size as f64 * 8.0 / link_rate * 1000.0)
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn slot_duration(&self) -> Millis {
        self.slot_duration
    }

    pub fn advance_to(&mut self, t: Millis) {
        assert!(t >= self.now, "clock moved backwards: {} -> {}", self.now, t);
        self.now = t;
    }
}
