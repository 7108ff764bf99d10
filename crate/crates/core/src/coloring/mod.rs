//! Distributed node coloring and maximal independent set.
//!
//! Each node first learns which neighbors it hears and which of those links
//! are bidirectional, then runs the core loop: wait until every node that
//! reaches it one-way is colored, compete for a leader color or request a
//! color interval from a bidirectional leader, verify the assigned color by
//! competing again, announce, and stay colored. The MIS variant keeps only
//! two colors.
//!
//! Timing: a node alternates two kinds of slots relative to its wake slot.
//! Even slots carry the neighborhood-learning handshake, odd slots the core
//! loop, so late wakers can still learn their links. Every constant below
//! counts ticks of one kind, so wall-clock durations are twice as long.

mod node;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::analysis::{gamma_bound, slot_budget};
use crate::engine::MessageKind;
use crate::model::{Network, NetworkParams, NodeId};

pub use node::{ColoringNode, NodeStats, Phase};

/// Probabilities and tick counts shared by all nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ColoringConstants {
    pub n: usize,
    pub gamma: f64,
    pub gamma_ratio: f64,
    /// Maximum degree, at least 1.
    pub delta: u64,
    /// `gamma / (2 Delta)`, used by every ordinary transmission.
    pub p_s: f64,
    /// `gamma / (18 G^2)`, used by leader announcements and assignments.
    pub p_l: f64,
    pub kappa_s: u64,
    pub kappa_l: u64,
    /// `ceil(9 G^2) + 1`: colors below this are leader colors.
    pub leader_color_count: u32,
    /// `ceil(38 G^2)`: width of the color interval handed to each requester.
    pub request_interval: u32,
    /// Initial listen and leader warm-up, `(ceil(38 G^2) + 3) kappa_s`.
    pub listen_len: u64,
    /// Neighborhood learning, `(2 Delta + 1) kappa_s`.
    pub learning_len: u64,
    /// Give-up time for a request, `(ceil(38 G^2) + 4) kappa_s + Delta kappa_l`.
    pub request_timeout: u64,
    pub mis: bool,
}

impl ColoringConstants {
    pub fn new(
        params: &NetworkParams,
        n: usize,
        gamma_ratio: f64,
        delta: usize,
        mis: bool,
    ) -> Self {
        let gamma = gamma_bound(params, gamma_ratio, n);
        let g2 = gamma_ratio * gamma_ratio;
        let delta = delta.max(1) as u64;
        let p_s = gamma / (2.0 * delta as f64);
        let p_l = gamma / (18.0 * g2);
        let kappa_s = slot_budget(params, p_s, n);
        let kappa_l = slot_budget(params, p_l, n);
        let request_interval = (38.0 * g2).ceil() as u32;
        ColoringConstants {
            n,
            gamma,
            gamma_ratio,
            delta,
            p_s,
            p_l,
            kappa_s,
            kappa_l,
            leader_color_count: (9.0 * g2).ceil() as u32 + 1,
            request_interval,
            listen_len: (u64::from(request_interval) + 3) * kappa_s,
            learning_len: (2 * delta + 1) * kappa_s,
            request_timeout: (u64::from(request_interval) + 4) * kappa_s + delta * kappa_l,
            mis,
        }
    }

    pub fn from_network(net: &Network, mis: bool) -> Self {
        Self::new(net.params(), net.len(), net.gamma_ratio(), net.delta_max(), mis)
    }

    pub fn is_leader_color(&self, color: u32) -> bool {
        color < self.leader_color_count
    }

    /// Counter distance that forces a reset in `Compete(i)`.
    pub fn zeta(&self, i: u32) -> u64 {
        if i == 0 {
            self.kappa_l
        } else {
            self.kappa_s
        }
    }

    /// Largest number of colors a valid run may use.
    pub fn color_bound(&self) -> u64 {
        u64::from(self.leader_color_count) + u64::from(self.request_interval) * (self.delta + 1)
    }

    /// Slot budget within which a static run colors every node.
    ///
    /// Learning, the initial listen, then `ell + 1` rounds of the core loop,
    /// each covering a failed leader competition, a request, the longest
    /// chain of verification competitions, an announcement and one wait
    /// period. Doubled for the interleaved learning slots.
    pub fn termination_budget(&self, ell: usize) -> u64 {
        let ks = self.kappa_s;
        let kl = self.kappa_l;
        let g2 = self.gamma_ratio * self.gamma_ratio;
        let compete0 = 3 * ks + self.delta * kl;
        let request = self.request_timeout;
        let competes = ((38.0 * 38.0 * g2 * g2 + 120.0 * g2).ceil() as u64) * ks;
        let announce = (kl + ks).max(2 * ks);
        let core = compete0 + request + competes + announce + ks;
        2 * (self.learning_len + self.listen_len + (ell as u64 + 1) * core)
    }

    /// Per-region probability mass the protocol may reach: `Delta + 1` ordinary
    /// senders plus one leader task for each leader color.
    pub fn region_mass_bound(&self) -> f64 {
        (self.delta + 1) as f64 * self.p_s + f64::from(self.leader_color_count) * self.p_l
    }
}

/// Messages of the coloring and MIS protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ColoringMessage {
    LearnReq { from: NodeId },
    LearnReply { from: NodeId, to: NodeId },
    LearnAck { from: NodeId, to: NodeId },
    /// Competition for color `i` with the sender's counter.
    Ma { i: u32, from: NodeId, counter: i64 },
    /// The sender holds (or is announcing) color `i`.
    Mc { i: u32, from: NodeId },
    /// Color request to `leader`.
    Mr { from: NodeId, leader: NodeId },
    /// Color assignment `color` for `to`.
    Ms { from: NodeId, to: NodeId, color: u32 },
}

impl MessageKind for ColoringMessage {
    fn kind(&self) -> &'static str {
        match self {
            ColoringMessage::LearnReq { .. } => "learn_req",
            ColoringMessage::LearnReply { .. } => "learn_reply",
            ColoringMessage::LearnAck { .. } => "learn_ack",
            ColoringMessage::Ma { .. } => "ma",
            ColoringMessage::Mc { .. } => "mc",
            ColoringMessage::Mr { .. } => "mr",
            ColoringMessage::Ms { .. } => "ms",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ColoringEvent {
    EnterWait,
    EnterCompete { i: u32 },
    /// Listening ended; the counter starts at `counter`.
    CounterStart { i: u32, counter: i64 },
    Reset { i: u32, culprit: NodeId, from: i64, to: i64 },
    EnterRequest { leader: NodeId },
    EnterAnnounce { color: u32 },
    Colored { color: u32 },
    Assigned { requester: NodeId, color: u32, reused: bool },
    Resigned { color: u32 },
}

/// Largest `x <= 0` outside every `[d - zeta, d + zeta]`.
pub fn chi(estimates: &[i64], zeta: u64) -> i64 {
    let z = zeta as i64;
    let mut iv: Vec<(i64, i64)> = estimates.iter().map(|&d| (d - z, d + z)).collect();
    iv.sort_unstable_by(|a, b| b.1.cmp(&a.1));
    let mut x = 0i64;
    loop {
        match iv.iter().find(|&&(lo, hi)| lo <= x && x <= hi) {
            Some(&(lo, _)) => x = lo - 1,
            None => return x,
        }
    }
}

/// Result of checking a final coloring.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColoringVerdict {
    pub uncolored: Vec<NodeId>,
    /// Edges (either direction) whose endpoints share a color.
    pub conflicts: Vec<(NodeId, NodeId)>,
    pub distinct_colors: usize,
    pub color_bound: u64,
    /// Leader-colored pairs joined by a bidirectional link.
    pub leader_conflicts: Vec<(NodeId, NodeId)>,
}

impl ColoringVerdict {
    pub fn complete(&self) -> bool {
        self.uncolored.is_empty()
    }

    pub fn valid(&self) -> bool {
        self.complete() && self.conflicts.is_empty()
    }

    pub fn within_bound(&self) -> bool {
        self.distinct_colors as u64 <= self.color_bound
    }

    pub fn passed(&self) -> bool {
        self.valid() && self.within_bound() && self.leader_conflicts.is_empty()
    }
}

pub fn validate_coloring(
    net: &Network,
    colors: &[Option<u32>],
    consts: &ColoringConstants,
) -> ColoringVerdict {
    let n = net.len();
    let mut uncolored = Vec::new();
    let mut conflicts = Vec::new();
    let mut leader_conflicts = Vec::new();
    let mut used = std::collections::BTreeSet::new();
    for v in 0..n {
        match colors[v] {
            None => uncolored.push(net.node(v).id),
            Some(c) => {
                used.insert(c);
            }
        }
    }
    for a in 0..n {
        for b in (a + 1)..n {
            let (Some(ca), Some(cb)) = (colors[a], colors[b]) else {
                continue;
            };
            if ca != cb {
                continue;
            }
            if net.has_edge(a, b) || net.has_edge(b, a) {
                conflicts.push((net.node(a).id, net.node(b).id));
            }
        }
    }
    for a in 0..n {
        for b in (a + 1)..n {
            let (Some(ca), Some(cb)) = (colors[a], colors[b]) else {
                continue;
            };
            if consts.is_leader_color(ca) && consts.is_leader_color(cb) && net.is_bidirectional(a, b) {
                leader_conflicts.push((net.node(a).id, net.node(b).id));
            }
        }
    }
    ColoringVerdict {
        uncolored,
        conflicts,
        distinct_colors: used.len(),
        color_bound: consts.color_bound(),
        leader_conflicts,
    }
}

/// How MIS domination is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Domination {
    /// A member must have a communication link to the node.
    Edges,
    /// A member must reach the node without interference under the true
    /// parameters, i.e. within `(P / (N beta))^(1/alpha)`.
    Reach,
}

/// Interference-free reception distance under the true parameters.
pub fn reach_radius(net: &Network, v: usize) -> f64 {
    let p = net.params();
    (net.node(v).power / (p.noise_true * p.beta_true)).powf(1.0 / p.alpha_true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MisVerdict {
    pub undecided: Vec<NodeId>,
    /// Members joined by a link in either direction.
    pub dependent_pairs: Vec<(NodeId, NodeId)>,
    /// Non-members without a dominating member.
    pub undominated: Vec<NodeId>,
}

impl MisVerdict {
    pub fn independent(&self) -> bool {
        self.undecided.is_empty() && self.dependent_pairs.is_empty()
    }

    pub fn dominating(&self) -> bool {
        self.undecided.is_empty() && self.undominated.is_empty()
    }

    pub fn passed(&self) -> bool {
        self.independent() && self.dominating()
    }
}

pub fn validate_mis(net: &Network, member: &[Option<bool>], domination: Domination) -> MisVerdict {
    let n = net.len();
    let undecided = (0..n)
        .filter(|&v| member[v].is_none())
        .map(|v| net.node(v).id)
        .collect();
    let is_in = |v: usize| member[v] == Some(true);
    let mut dependent_pairs = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if is_in(a) && is_in(b) && (net.has_edge(a, b) || net.has_edge(b, a)) {
                dependent_pairs.push((net.node(a).id, net.node(b).id));
            }
        }
    }
    let undominated = (0..n)
        .filter(|&v| member[v] == Some(false))
        .filter(|&v| {
            !(0..n).any(|w| {
                w != v
                    && is_in(w)
                    && match domination {
                        Domination::Edges => net.has_edge(w, v),
                        Domination::Reach => net.distance(w, v) <= reach_radius(net, w),
                    }
            })
        })
        .map(|v| net.node(v).id)
        .collect();
    MisVerdict {
        undecided,
        dependent_pairs,
        undominated,
    }
}

/// Largest number of other leaders within `r_max(v)` of a leader `v`, and
/// within twice the global maximum range.
pub fn leader_density(net: &Network, colors: &[Option<u32>], consts: &ColoringConstants) -> (usize, usize) {
    let leaders: Vec<usize> = (0..net.len())
        .filter(|&v| colors[v].is_some_and(|c| consts.is_leader_color(c)))
        .collect();
    let mut near = 0;
    let mut wide = 0;
    for &v in &leaders {
        let others = leaders.iter().filter(|&&u| u != v);
        near = near.max(others.clone().filter(|&&u| net.distance(v, u) <= net.r_max(v)).count());
        wide = wide.max(
            others
                .filter(|&&u| net.distance(v, u) <= 2.0 * net.r_max_global())
                .count(),
        );
    }
    (near, wide)
}

/// A reset that happened although the culprit had already heard the node's
/// current counter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LateReset {
    pub node: NodeId,
    pub culprit: NodeId,
    pub slot: u64,
    pub heard_at: u64,
}

/// Check that no node is reset by a competitor that had already received
/// one of its messages carrying the current counter.
///
/// `events` are the run's protocol events; `ma_receptions` lists
/// `(slot, sender, listener, i)` for every received competition message.
/// A reception counts only if it happened after both the node's last counter
/// change and the culprit's entry into the same competition, and at least
/// `margin` slots before the reset, so in-flight messages are not blamed.
pub fn late_resets(
    events: &[(u64, NodeId, ColoringEvent)],
    ma_receptions: &[(u64, NodeId, NodeId, u32)],
    margin: u64,
) -> Vec<LateReset> {
    let mut heard: BTreeMap<(NodeId, NodeId, u32), Vec<u64>> = BTreeMap::new();
    for &(slot, sender, listener, i) in ma_receptions {
        heard.entry((sender, listener, i)).or_default().push(slot);
    }
    // last counter change per node and last compete entry per (node, i)
    let mut since: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut entered: BTreeMap<(NodeId, u32), u64> = BTreeMap::new();
    let mut out = Vec::new();
    for (slot, node, ev) in events {
        match ev {
            ColoringEvent::EnterCompete { i } => {
                entered.insert((*node, *i), *slot);
                since.insert(*node, *slot);
            }
            ColoringEvent::CounterStart { .. } => {
                since.insert(*node, *slot);
            }
            ColoringEvent::Reset { i, culprit, .. } => {
                let from = since.get(node).copied().unwrap_or(0);
                let culprit_entry = entered.get(&(*culprit, *i)).copied().unwrap_or(0);
                let lo = from.max(culprit_entry);
                if let Some(slots) = heard.get(&(*node, *culprit, *i)) {
                    if let Some(&h) = slots
                        .iter()
                        .find(|&&h| h > lo && h + margin <= *slot)
                    {
                        out.push(LateReset {
                            node: *node,
                            culprit: *culprit,
                            slot: *slot,
                            heard_at: h,
                        });
                    }
                }
                since.insert(*node, *slot);
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Node;

    #[test]
    fn chi_examples() {
        assert_eq!(chi(&[], 3), 0);
        assert_eq!(chi(&[0], 2), -3);
        assert_eq!(chi(&[-5], 1), 0);
        assert_eq!(chi(&[0, -5], 2), -8);
        assert_eq!(chi(&[10], 2), 0);
    }

    #[test]
    fn constants_relations() {
        let p = NetworkParams::exact(3.0, 1.0, 1.0, 2.0, 2.0);
        let c = ColoringConstants::new(&p, 32, 2.0, 6, false);
        assert_eq!(c.leader_color_count, 37);
        assert_eq!(c.request_interval, 152);
        assert_eq!(c.listen_len, 155 * c.kappa_s);
        assert!(9.0 * 4.0 * c.p_l + 6.0 * c.p_s <= c.gamma * (1.0 + 1e-12));
        assert_eq!(c.zeta(0), c.kappa_l);
        assert_eq!(c.zeta(3), c.kappa_s);
    }

    fn line(powers: &[f64], gap: f64) -> Network {
        let nodes = powers
            .iter()
            .enumerate()
            .map(|(i, &p)| Node::new(i as u32, i as f64 * gap, 0.0, p))
            .collect();
        Network::build(nodes, NetworkParams::exact(2.0, 1.0, 1.0, 2.0, 2.0)).unwrap()
    }

    #[test]
    fn coloring_validation() {
        let net = line(&[4.0, 4.0], 1.0);
        let consts = ColoringConstants::from_network(&net, false);
        let bad = validate_coloring(&net, &[Some(0), Some(0)], &consts);
        assert!(!bad.valid());
        assert!(!bad.leader_conflicts.is_empty());
        let good = validate_coloring(&net, &[Some(0), Some(200)], &consts);
        assert!(good.passed());
        let partial = validate_coloring(&net, &[Some(0), None], &consts);
        assert!(!partial.complete());
    }

    #[test]
    fn four_cycle_two_colors() {
        let nodes = vec![
            Node::new(0, 0.0, 0.0, 3.0),
            Node::new(1, 1.0, 0.0, 3.0),
            Node::new(2, 1.0, 1.0, 3.0),
            Node::new(3, 0.0, 1.0, 3.0),
        ];
        let net = Network::build(nodes, NetworkParams::exact(2.0, 1.0, 1.0, 2.0, 2.0)).unwrap();
        assert!(!net.has_edge(0, 2));
        assert!(net.is_bidirectional(0, 1));
        let consts = ColoringConstants::from_network(&net, false);
        let v = validate_coloring(&net, &[Some(0), Some(200), Some(0), Some(200)], &consts);
        assert!(v.valid());
        assert_eq!(v.distinct_colors, 2);
    }

    #[test]
    fn mis_validation() {
        let single = line(&[4.0], 1.0);
        assert!(validate_mis(&single, &[Some(true)], Domination::Edges).passed());
        let pair = line(&[4.0, 4.0], 1.0);
        assert!(!validate_mis(&pair, &[Some(true), Some(true)], Domination::Edges).independent());
        assert!(validate_mis(&pair, &[Some(true), Some(false)], Domination::Edges).passed());
        assert!(!validate_mis(&pair, &[Some(false), Some(false)], Domination::Edges).dominating());
    }

    #[test]
    fn late_reset_detection() {
        let (a, b) = (NodeId(0), NodeId(1));
        let events = vec![
            (10, a, ColoringEvent::EnterCompete { i: 0 }),
            (10, b, ColoringEvent::EnterCompete { i: 0 }),
            (20, a, ColoringEvent::CounterStart { i: 0, counter: 1 }),
            (50, a, ColoringEvent::Reset { i: 0, culprit: b, from: 5, to: -3 }),
        ];
        // b heard a at 30, well before the reset
        let rx = vec![(30, a, b, 0)];
        assert_eq!(late_resets(&events, &rx, 3).len(), 1);
        // heard just before: in flight
        let rx = vec![(48, a, b, 0)];
        assert!(late_resets(&events, &rx, 3).is_empty());
        // heard before a's counter started
        let rx = vec![(15, a, b, 0)];
        assert!(late_resets(&events, &rx, 3).is_empty());
    }
}
