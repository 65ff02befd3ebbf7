#![allow(dead_code)]

//! Small random selector states and an exhaustive reference scorer that
//! shares no code with the library's selectors.

use std::collections::BTreeSet;

use rand::Rng;
use xorcast::model::{NodeState, Packet, PacketId, PacketState, TxQueue};
use xorcast::{LossEstimate, NetworkCode};

pub const NOW: f64 = 1000.0;

/// Unresolved description of a state; indices wrap onto whatever exists.
#[derive(Debug, Clone)]
pub struct RawState {
    pub clients: usize,
    /// (target, delta, time to deadline, active)
    pub packets: Vec<(usize, f64, f64, bool)>,
    /// Per client, queue indices it has overheard.
    pub overheard: Vec<Vec<usize>>,
    pub channel_loss: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub queue: TxQueue,
    pub nodes: Vec<NodeState>,
    pub estimates: Vec<LossEstimate>,
    pub now: f64,
}

pub fn build(raw: &RawState) -> Scenario {
    let n = raw.clients.max(1);
    let mut next_seq = vec![0u64; n];
    let packets: Vec<Packet> = raw
        .packets
        .iter()
        .map(|&(t, delta, tau, active)| {
            let target = t % n;
            let seq = next_seq[target];
            next_seq[target] += 1;
            Packet {
                id: PacketId::new(target as u32, seq),
                target,
                size: 250,
                arrival_time: NOW - 10.0,
                deadline: NOW + tau,
                delta,
                state: if active {
                    PacketState::Active
                } else {
                    PacketState::Inactive { until: NOW + 5.0 }
                },
            }
        })
        .collect();
    let mut nodes: Vec<NodeState> = (0..n).map(NodeState::new).collect();
    for (m, node) in nodes.iter_mut().enumerate() {
        for &i in raw.overheard.get(m).map(Vec::as_slice).unwrap_or(&[]) {
            if packets.is_empty() {
                break;
            }
            let p = &packets[i % packets.len()];
            if p.target != m {
                node.overhear(p.id, p.deadline);
            }
        }
        // An old packet of its own, never in the queue.
        node.rx_buffer.insert(PacketId::new(m as u32, 10_000));
    }
    let estimates = (0..n)
        .map(|m| LossEstimate::new(raw.channel_loss.get(m).copied().unwrap_or(0.1), 4.0))
        .collect();
    Scenario {
        queue: packets.into_iter().collect(),
        nodes,
        estimates,
        now: NOW,
    }
}

/// Up to 4 clients, up to 10 queued packets, up to 6 overheard per client.
pub fn random_raw<R: Rng>(rng: &mut R) -> RawState {
    let clients = rng.random_range(1..=4);
    let len = rng.random_range(1..=10);
    let packets = (0..len)
        .map(|_| {
            let tau = if rng.random_bool(0.2) {
                rng.random_range(0.0..8.0)
            } else {
                rng.random_range(8.0..120.0)
            };
            (
                rng.random_range(0..clients),
                rng.random_range(0.1..5.0),
                tau,
                rng.random_bool(0.8),
            )
        })
        .collect();
    let overheard = (0..clients)
        .map(|_| {
            let k = rng.random_range(0..=6);
            (0..k).map(|_| rng.random_range(0..len)).collect()
        })
        .collect();
    let channel_loss = (0..clients).map(|_| rng.random_range(0.0..0.3)).collect();
    RawState {
        clients,
        packets,
        overheard,
        channel_loss,
    }
}

/// Same shape with unit weights, no channel loss and far deadlines, so
/// every expected-value factor is exactly one.
pub fn degenerate(mut raw: RawState) -> RawState {
    for p in raw.packets.iter_mut() {
        p.1 = 1.0;
        p.2 = 1.0e6;
    }
    for e in raw.channel_loss.iter_mut() {
        *e = 0.0;
    }
    raw
}

// ---- reference scorer -------------------------------------------------

fn known(node: &NodeState, id: &PacketId) -> bool {
    node.rx_buffer.contains(id) || node.virtual_buffer.contains_key(id)
}

fn packet<'a>(s: &'a Scenario, id: &PacketId) -> &'a Packet {
    s.queue.iter().find(|p| p.id == *id).expect("member in queue")
}

/// The member a node would newly recover, by counting unknown members.
fn recovered(members: &BTreeSet<PacketId>, node: &NodeState) -> Option<PacketId> {
    let unknown: Vec<&PacketId> = members.iter().filter(|id| !known(node, id)).collect();
    match unknown.as_slice() {
        [only] => Some(**only),
        _ => None,
    }
}

fn loss(tau: f64, est: &LossEstimate) -> f64 {
    let late = if tau > 0.0 { (-tau / est.delay_mean).exp() } else { 1.0 };
    late + (1.0 - late) * est.channel_loss
}

/// Expected distortion reduction of a member set, summed over clients.
pub fn utility(s: &Scenario, members: &BTreeSet<PacketId>) -> f64 {
    let mut total = 0.0;
    for (m, node) in s.nodes.iter().enumerate() {
        if let Some(id) = recovered(members, node) {
            let p = packet(s, &id);
            if p.target == m {
                total += (1.0 - loss(p.deadline - s.now, &s.estimates[m])) * p.delta;
            }
        }
    }
    total
}

/// Clients that recover a packet of their own.
pub fn receivers(s: &Scenario, members: &BTreeSet<PacketId>) -> usize {
    s.nodes
        .iter()
        .enumerate()
        .filter(|(m, node)| recovered(members, node).is_some_and(|id| packet(s, &id).target == *m))
        .count()
}

/// Every member set `{primary} ∪ S`, `S` ⊆ queue \ {primary}, that the
/// primary's target decodes to the primary.
pub fn all_codes(s: &Scenario, primary: &Packet) -> Vec<BTreeSet<PacketId>> {
    let others: Vec<PacketId> = s.queue.iter().map(|p| p.id).filter(|id| *id != primary.id).collect();
    let target = &s.nodes[primary.target];
    (0u32..1 << others.len())
        .map(|mask| {
            let mut set: BTreeSet<PacketId> = (0..others.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| others[i])
                .collect();
            set.insert(primary.id);
            set
        })
        .filter(|set| recovered(set, target) == Some(primary.id))
        .collect()
}

pub fn first_active(s: &Scenario) -> Option<&Packet> {
    s.queue.iter().find(|p| matches!(p.state, PacketState::Active))
}

pub fn best_utility_for(s: &Scenario, primary: &Packet) -> f64 {
    all_codes(s, primary)
        .iter()
        .map(|c| utility(s, c))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn best_receivers_for(s: &Scenario, primary: &Packet) -> usize {
    all_codes(s, primary).iter().map(|c| receivers(s, c)).max().unwrap_or(0)
}

pub fn best_utility_any_primary(s: &Scenario) -> Option<f64> {
    s.queue
        .iter()
        .filter(|p| matches!(p.state, PacketState::Active))
        .map(|p| best_utility_for(s, p))
        .reduce(f64::max)
}

pub fn members(code: &NetworkCode) -> BTreeSet<PacketId> {
    code.members().clone()
}

/// The code is well formed for this state and its target gets the primary.
pub fn decodes_primary(s: &Scenario, code: &NetworkCode) -> bool {
    let p = packet(s, &code.primary());
    code.target() == p.target
        && code.members().iter().all(|id| s.queue.contains(id))
        && recovered(code.members(), &s.nodes[p.target]) == Some(code.primary())
}
