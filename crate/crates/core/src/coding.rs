//! Code construction and the per-slot selection policies.
//!
//! Every policy picks a primary packet, enumerates the codes the primary's
//! target can decode (primary plus any subset of queued packets the target
//! already knows), and ranks them:
//!
//! * noNC transmits the primary alone.
//! * NCT maximizes the number of clients that recover a new packet of their own.
//! * NCV maximizes expected distortion reduction summed over clients.
//! * NCVD runs NCV over several candidate primaries and keeps the best.
//! * NCV-MWIS replaces NCV's subset enumeration with a greedy weighted
//!   independent set on the side-packet conflict graph.
//!
//! Ties are broken by receiver count, then fewer members, then the
//! lexicographically smallest member-id set, then the earlier primary.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;

use crate::model::{decodable, knows, Millis, NetworkCode, NodeIndex, NodeState, Packet, PacketId, TxQueue};

/// Upper bound on side-packet candidates enumerated exhaustively for one
/// primary. Beyond it only the earliest candidates (FIFO order) are kept.
pub const MAX_SIDE_CANDIDATES: usize = 16;

/// Sender-side view of one link, used to discount a packet's utility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEstimate {
    /// Probability an on-time transmission is lost on the link.
    pub channel_loss: f64,
    /// Mean of the exponential forward-trip delay.
    pub delay_mean: Millis,
}

impl LossEstimate {
    pub fn new(channel_loss: f64, delay_mean: Millis) -> Self {
        debug_assert!((0.0..=1.0).contains(&channel_loss));
        debug_assert!(delay_mean > 0.0);
        LossEstimate {
            channel_loss,
            delay_mean,
        }
    }
}

/// Probability that a packet with `remaining_time` left until its deadline
/// is lost, either late or on the channel.
pub fn late_loss_probability(remaining_time: Millis, estimate: &LossEstimate) -> f64 {
    let p_late = if remaining_time <= 0.0 {
        1.0
    } else {
        (-remaining_time / estimate.delay_mean).exp()
    };
    p_late + (1.0 - p_late) * estimate.channel_loss
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeUtility {
    pub total: f64,
    /// Indexed by node.
    pub per_node: Vec<f64>,
    pub receivers: usize,
}

/// Selection depth for NCVD.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    Limited(NonZeroUsize),
    Unbounded,
}

impl Depth {
    pub fn limited(d: usize) -> Option<Self> {
        NonZeroUsize::new(d).map(Depth::Limited)
    }

    fn take(&self) -> usize {
        match self {
            Depth::Limited(d) => d.get(),
            Depth::Unbounded => usize::MAX,
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Depth::Limited(d) => write!(f, "{d}"),
            Depth::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl FromStr for Depth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "unbounded" | "inf" | "infinity" => Ok(Depth::Unbounded),
            other => other
                .parse::<usize>()
                .ok()
                .and_then(Depth::limited)
                .ok_or_else(|| format!("invalid depth `{s}`: expected a positive integer or `unbounded`")),
        }
    }
}

/// Queued packets (other than the primary) the target already knows, in
/// FIFO order, capped at [`MAX_SIDE_CANDIDATES`].
fn side_candidates<'q>(primary: &Packet, queue: &'q TxQueue, target_state: &NodeState) -> Vec<&'q Packet> {
    queue
        .iter()
        .filter(|p| p.id != primary.id && knows(target_state, &p.id))
        .take(MAX_SIDE_CANDIDATES)
        .collect()
}

/// All codes `{primary} ∪ S` with `S` ranging over subsets of the
/// target-known side candidates. Includes inactive packets as sides.
pub fn candidate_codes(primary: &Packet, queue: &TxQueue, target_state: &NodeState) -> Vec<NetworkCode> {
    let sides = side_candidates(primary, queue, target_state);
    (0u64..1 << sides.len())
        .map(|mask| {
            NetworkCode::new(
                primary.id,
                primary.target,
                sides
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, p)| p.id),
            )
        })
        .collect()
}

/// Expected distortion reduction of `code`, per client and summed.
///
/// A member counts at node `m` only if `m` decodes it from `code` and it is
/// destined to `m`; its contribution is `(1 - e) * delta` with `e` from
/// [`late_loss_probability`] on `m`'s link.
pub fn code_utility(
    code: &NetworkCode,
    queue: &TxQueue,
    nodes: &[NodeState],
    estimates: &[LossEstimate],
    now: Millis,
) -> CodeUtility {
    let mut per_node = vec![0.0; nodes.len()];
    for (m, node) in nodes.iter().enumerate() {
        for member in code.members() {
            let Some(p) = queue.get(member) else {
                debug_assert!(false, "code member {member} not in queue");
                continue;
            };
            let g = p.target == node.node;
            let d = decodable(code, node) == Some(*member);
            if g && d {
                let e = late_loss_probability(p.deadline - now, &estimates[m]);
                per_node[m] += (1.0 - e) * p.delta;
            }
        }
    }
    let total = per_node.iter().sum();
    let receivers = per_node.iter().filter(|v| **v > 0.0).count();
    CodeUtility {
        total,
        per_node,
        receivers,
    }
}

/// Number of clients that recover a new packet destined to them.
pub fn code_receivers(code: &NetworkCode, queue: &TxQueue, nodes: &[NodeState]) -> usize {
    nodes
        .iter()
        .filter(|node| {
            decodable(code, node)
                .and_then(|id| queue.get(&id))
                .is_some_and(|p| p.target == node.node)
        })
        .count()
}

/// Precomputed decoding structure for one primary and its side candidates.
///
/// Subsets are bitmasks over `sides`. For each node we keep which sides it
/// does not know and whether it knows the primary; a subset decodes at a
/// node iff exactly one member is unknown there.
struct PrimaryContext<'q> {
    primary: &'q Packet,
    sides: Vec<&'q Packet>,
    /// Per node: bitmask of unknown sides.
    unknown_sides: Vec<u64>,
    /// Per node: whether the primary is unknown.
    primary_unknown: Vec<bool>,
    /// Per node: value of the primary if decoded there (0 unless it is the target).
    primary_value: Vec<f64>,
    /// Per node, per side: value of that side if decoded there.
    side_value: Vec<Vec<f64>>,
}

impl<'q> PrimaryContext<'q> {
    fn new(
        primary: &'q Packet,
        queue: &'q TxQueue,
        nodes: &[NodeState],
        value: impl Fn(&Packet, NodeIndex) -> f64,
    ) -> Self {
        let target_state = &nodes[primary.target];
        let sides = side_candidates(primary, queue, target_state);
        let mut unknown_sides = Vec::with_capacity(nodes.len());
        let mut primary_unknown = Vec::with_capacity(nodes.len());
        let mut primary_value = Vec::with_capacity(nodes.len());
        let mut side_value = Vec::with_capacity(nodes.len());
        for (m, node) in nodes.iter().enumerate() {
            let mut mask = 0u64;
            for (i, s) in sides.iter().enumerate() {
                if !knows(node, &s.id) {
                    mask |= 1 << i;
                }
            }
            unknown_sides.push(mask);
            primary_unknown.push(!knows(node, &primary.id));
            primary_value.push(if primary.target == node.node {
                value(primary, m)
            } else {
                0.0
            });
            side_value.push(
                sides
                    .iter()
                    .map(|s| if s.target == node.node { value(s, m) } else { 0.0 })
                    .collect(),
            );
        }
        PrimaryContext {
            primary,
            sides,
            unknown_sides,
            primary_unknown,
            primary_value,
            side_value,
        }
    }

    fn subsets(&self) -> u64 {
        1 << self.sides.len()
    }

    /// Value gained at node `m` from subset `mask`.
    fn node_value(&self, m: usize, mask: u64) -> f64 {
        let unknown = mask & self.unknown_sides[m];
        match (self.primary_unknown[m], unknown.count_ones()) {
            (true, 0) => self.primary_value[m],
            (false, 1) => self.side_value[m][unknown.trailing_zeros() as usize],
            _ => 0.0,
        }
    }

    /// (total, receivers) summed in node order, matching [`code_utility`].
    fn evaluate(&self, mask: u64) -> (f64, usize) {
        let mut total = 0.0;
        let mut receivers = 0;
        for m in 0..self.unknown_sides.len() {
            let v = self.node_value(m, mask);
            total += v;
            if v > 0.0 {
                receivers += 1;
            }
        }
        (total, receivers)
    }

    fn members(&self, mask: u64) -> BTreeSet<PacketId> {
        let mut set: BTreeSet<PacketId> = self
            .sides
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, p)| p.id)
            .collect();
        set.insert(self.primary.id);
        set
    }

    fn code(&self, mask: u64) -> NetworkCode {
        NetworkCode::new(self.primary.id, self.primary.target, self.members(mask))
    }
}

/// Best subset found for one primary, with its ranking key.
struct Best {
    total: f64,
    receivers: usize,
    len: usize,
    members: BTreeSet<PacketId>,
    code: NetworkCode,
}

/// Ordering of two candidates by the tie-breaking chain, excluding the
/// earlier-primary rule (handled by iteration order). `Greater` = better.
fn rank(a_total: f64, a_recv: usize, a_len: usize, a_members: &BTreeSet<PacketId>, b: &Best) -> Ordering {
    a_total
        .partial_cmp(&b.total)
        .unwrap_or(Ordering::Equal)
        .then(a_recv.cmp(&b.receivers))
        .then(b.len.cmp(&a_len))
        .then_with(|| b.members.iter().cmp(a_members.iter()))
}

fn best_for_primary(ctx: &PrimaryContext<'_>, objective: impl Fn(f64, usize) -> f64) -> Best {
    let mut best: Option<Best> = None;
    for mask in 0..ctx.subsets() {
        let (total, receivers) = ctx.evaluate(mask);
        let score = objective(total, receivers);
        let len = mask.count_ones() as usize + 1;
        let replace = match &best {
            None => true,
            Some(b) => {
                // Cheap keys first; only materialize member sets on a full tie.
                match score
                    .partial_cmp(&b.total)
                    .unwrap_or(Ordering::Equal)
                    .then(receivers.cmp(&b.receivers))
                    .then(b.len.cmp(&len))
                {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => rank(score, receivers, len, &ctx.members(mask), b) == Ordering::Greater,
                }
            }
        };
        if replace {
            best = Some(Best {
                total: score,
                receivers,
                len,
                members: ctx.members(mask),
                code: ctx.code(mask),
            });
        }
    }
    best.expect("subset enumeration always yields the primary alone")
}

fn utility_value<'a>(estimates: &'a [LossEstimate], now: Millis) -> impl Fn(&Packet, NodeIndex) -> f64 + 'a {
    move |p: &Packet, m: NodeIndex| (1.0 - late_loss_probability(p.deadline - now, &estimates[m])) * p.delta
}

fn ncv_for_primary(
    primary: &Packet,
    queue: &TxQueue,
    nodes: &[NodeState],
    estimates: &[LossEstimate],
    now: Millis,
) -> Best {
    let ctx = PrimaryContext::new(primary, queue, nodes, utility_value(estimates, now));
    best_for_primary(&ctx, |total, _| total)
}

/// NCV: first active packet as primary, utility-maximizing code.
pub fn select_ncv(
    queue: &TxQueue,
    nodes: &[NodeState],
    estimates: &[LossEstimate],
    now: Millis,
) -> Option<NetworkCode> {
    let primary = queue.first_active()?;
    Some(ncv_for_primary(primary, queue, nodes, estimates, now).code)
}

/// NCVD: NCV over the first `depth` active packets; best overall code.
pub fn select_ncvd(
    queue: &TxQueue,
    nodes: &[NodeState],
    estimates: &[LossEstimate],
    now: Millis,
    depth: Depth,
) -> Option<NetworkCode> {
    let mut best: Option<Best> = None;
    for primary in queue.active().take(depth.take()) {
        let cand = ncv_for_primary(primary, queue, nodes, estimates, now);
        // Strictly better only: earlier primaries win ties.
        let better = match &best {
            None => true,
            Some(b) => rank(cand.total, cand.receivers, cand.len, &cand.members, b) == Ordering::Greater,
        };
        if better {
            best = Some(cand);
        }
    }
    best.map(|b| b.code)
}

/// NCT: first active packet as primary, code decoded by the most clients.
pub fn select_nct(queue: &TxQueue, nodes: &[NodeState]) -> Option<NetworkCode> {
    let primary = queue.first_active()?;
    let ctx = PrimaryContext::new(primary, queue, nodes, |_, _| 1.0);
    Some(best_for_primary(&ctx, |_, receivers| receivers as f64).code)
}

/// noNC: first active packet alone.
pub fn select_nonc(queue: &TxQueue) -> Option<NetworkCode> {
    queue.first_active().map(NetworkCode::singleton)
}

/// NCV with side packets chosen by a greedy maximum-weight independent set.
///
/// Vertices are side candidates whose own target knows the primary, weighted
/// by `(1 - e) * delta` at that target. Two candidates conflict when either
/// one's target does not know the other. Greedy picks the vertex with the
/// largest `weight / (degree + 1)` in the remaining graph, then deletes it
/// and its neighbours. Never better than exhaustive NCV for the same primary.
pub fn select_side_mwis(
    primary: &Packet,
    queue: &TxQueue,
    nodes: &[NodeState],
    estimates: &[LossEstimate],
    now: Millis,
) -> NetworkCode {
    let target_state = &nodes[primary.target];
    let value = utility_value(estimates, now);
    let vertices: Vec<(&Packet, f64)> = queue
        .iter()
        .filter(|p| p.id != primary.id && knows(target_state, &p.id))
        .filter_map(|p| {
            let their = nodes.get(p.target)?;
            if knows(their, &p.id) || !knows(their, &primary.id) {
                return None;
            }
            let w = value(p, p.target);
            (w > 0.0).then_some((p, w))
        })
        .collect();

    let n = vertices.len();
    let mut adjacent = vec![vec![false; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (u, v) = (vertices[i].0, vertices[j].0);
            let conflict = !knows(&nodes[u.target], &v.id) || !knows(&nodes[v.target], &u.id);
            adjacent[i][j] = conflict;
            adjacent[j][i] = conflict;
        }
    }

    let mut alive = vec![true; n];
    let mut chosen = Vec::new();
    loop {
        let pick = (0..n)
            .filter(|&i| alive[i])
            .map(|i| {
                let degree = (0..n).filter(|&j| alive[j] && adjacent[i][j]).count();
                (i, vertices[i].1 / (degree as f64 + 1.0))
            })
            .max_by(|(i, a), (j, b)| {
                a.partial_cmp(b)
                    .unwrap_or(Ordering::Equal)
                    // Prefer the smaller id among equal ratios.
                    .then(vertices[*j].0.id.cmp(&vertices[*i].0.id))
            });
        let Some((i, _)) = pick else { break };
        chosen.push(vertices[i].0.id);
        alive[i] = false;
        for j in 0..n {
            if adjacent[i][j] {
                alive[j] = false;
            }
        }
    }
    NetworkCode::new(primary.id, primary.target, chosen)
}

/// NCV-MWIS: first active packet as primary, greedy MWIS side packets.
pub fn select_ncv_mwis(
    queue: &TxQueue,
    nodes: &[NodeState],
    estimates: &[LossEstimate],
    now: Millis,
) -> Option<NetworkCode> {
    let primary = queue.first_active()?;
    Some(select_side_mwis(primary, queue, nodes, estimates, now))
}
