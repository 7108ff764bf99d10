//! Static network description.
//!
//! A [`Network`] is built once from a list of [`Node`]s and a set of
//! [`NetworkParams`] and is immutable afterwards. Construction derives the
//! per-node ranges, the directed communication graph and the structural
//! parameters (range ratio, maximal degree, longest unidirectional chain)
//! that every protocol in this crate is parameterized by.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a node, unique within a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Physical constants of the SINR model.
///
/// The `*_true` values drive the physical layer. Nodes only know the
/// `*_lo` / `*_hi` bounds, and every derived range or constant uses those.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub alpha_true: f64,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub beta_true: f64,
    pub noise_lo: f64,
    pub noise_hi: f64,
    pub noise_true: f64,
    /// Broadcast margin, strictly greater than one.
    pub delta: f64,
    /// Exponent of the "with high probability" guarantee, `1 - n^-c`.
    pub c_whp: f64,
    /// Multiplier in (0, 1] applied to every slot-count constant.
    pub scale: f64,
}

impl NetworkParams {
    /// Parameters whose bounds collapse onto the true values.
    pub fn exact(alpha: f64, beta: f64, noise: f64, delta: f64, c_whp: f64) -> Self {
        NetworkParams {
            alpha_lo: alpha,
            alpha_hi: alpha,
            alpha_true: alpha,
            beta_lo: beta,
            beta_hi: beta,
            beta_true: beta,
            noise_lo: noise,
            noise_hi: noise,
            noise_true: noise,
            delta,
            c_whp,
            scale: 1.0,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParams(msg.to_string()));
        let all = [
            self.alpha_lo,
            self.alpha_hi,
            self.alpha_true,
            self.beta_lo,
            self.beta_hi,
            self.beta_true,
            self.noise_lo,
            self.noise_hi,
            self.noise_true,
            self.delta,
            self.c_whp,
            self.scale,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if !(self.alpha_lo <= self.alpha_true && self.alpha_true <= self.alpha_hi) {
            return bad("need alpha_lo <= alpha_true <= alpha_hi");
        }
        if !(self.beta_lo <= self.beta_true && self.beta_true <= self.beta_hi) {
            return bad("need beta_lo <= beta_true <= beta_hi");
        }
        if !(self.noise_lo <= self.noise_true && self.noise_true <= self.noise_hi) {
            return bad("need noise_lo <= noise_true <= noise_hi");
        }
        if self.beta_lo < 1.0 {
            return bad("beta_lo must be at least 1");
        }
        if self.noise_lo <= 0.0 {
            return bad("noise_lo must be positive");
        }
        if self.delta <= 1.0 {
            return bad("delta must exceed 1");
        }
        if self.alpha_lo <= 1.0 {
            return bad("alpha_lo must exceed 1");
        }
        if self.c_whp <= 1.0 {
            return bad("c_whp must exceed 1");
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return bad("scale must lie in (0, 1]");
        }
        Ok(())
    }
}

/// A node of the network. Positions are 2-D, powers and lengths in abstract units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
    pub power: f64,
    #[serde(default)]
    pub wake_slot: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sleep_slot: Option<u64>,
}

impl Node {
    pub fn new(id: u32, x: f64, y: f64, power: f64) -> Self {
        Node {
            id: NodeId(id),
            x,
            y,
            power,
            wake_slot: 0,
            sleep_slot: None,
        }
    }

    pub fn distance_to(&self, other: &Node) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Whether the node is active during `slot`.
    pub fn is_awake(&self, slot: u64) -> bool {
        slot >= self.wake_slot && self.sleep_slot.is_none_or(|s| slot < s)
    }

    fn validate(&self) -> Result<()> {
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "node {} has non-positive power {}",
                self.id, self.power
            )));
        }
        if !(self.x.is_finite() && self.y.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "node {} has a non-finite position",
                self.id
            )));
        }
        if let Some(sleep) = self.sleep_slot {
            if sleep <= self.wake_slot {
                return Err(Error::InvalidArgument(format!(
                    "node {} sleeps at {} before waking at {}",
                    self.id, sleep, self.wake_slot
                )));
            }
        }
        Ok(())
    }
}

/// Maximum transmission range `(P / (N_hi * beta_hi))^(1 / alpha_hi)`.
pub fn max_transmission_range(power: f64, params: &NetworkParams) -> Result<f64> {
    if !(power > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "power must be positive, got {power}"
        )));
    }
    Ok((power / (params.noise_hi * params.beta_hi)).powf(1.0 / params.alpha_hi))
}

/// Broadcasting range `(P / (delta * N_hi * beta_hi))^(1 / alpha_lo)`.
pub fn broadcast_range(power: f64, params: &NetworkParams) -> Result<f64> {
    if !(power > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "power must be positive, got {power}"
        )));
    }
    Ok((power / (params.delta * params.noise_hi * params.beta_hi)).powf(1.0 / params.alpha_lo))
}

/// Position of a node relative to the rings around another node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingClass {
    /// Closer than three global maximum ranges.
    Proximity,
    /// Ring `i >= 2`: distance within `[(i+1) R, (i+2) R]`.
    Ring(u32),
}

/// Immutable network with all derived quantities.
#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<Node>,
    params: NetworkParams,
    index: HashMap<NodeId, usize>,
    r_max: Vec<f64>,
    r_bcast: Vec<f64>,
    r_max_global: f64,
    r_min_global: f64,
    delta_max: usize,
    dist: Vec<f64>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
    ell: usize,
}

impl Network {
    pub fn build(nodes: Vec<Node>, params: NetworkParams) -> Result<Network> {
        params.validate()?;
        if nodes.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            node.validate()?;
            if index.insert(node.id, i).is_some() {
                return Err(Error::DuplicateId(node.id));
            }
        }

        let n = nodes.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = nodes[i].distance_to(&nodes[j]);
                if d == 0.0 {
                    return Err(Error::CoincidentNodes(nodes[i].id, nodes[j].id));
                }
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }

        let mut r_max = Vec::with_capacity(n);
        let mut r_bcast = Vec::with_capacity(n);
        for node in &nodes {
            let rm = max_transmission_range(node.power, &params)?;
            let rb = broadcast_range(node.power, &params)?;
            if rb > rm {
                return Err(Error::ModelViolation(format!(
                    "node {}: broadcasting range {rb} exceeds transmission range {rm}; \
                     the power is too large for the alpha bounds",
                    node.id
                )));
            }
            r_max.push(rm);
            r_bcast.push(rb);
        }
        let r_max_global = r_max.iter().copied().fold(f64::MIN, f64::max);
        let r_min_global = r_max.iter().copied().fold(f64::MAX, f64::min);

        let mut delta_max = 0;
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        for v in 0..n {
            let mut in_range = 0;
            for u in 0..n {
                if u == v {
                    continue;
                }
                let d = dist[v * n + u];
                if d <= r_max[v] {
                    in_range += 1;
                }
                if d <= r_bcast[v] {
                    out_edges[v].push(u);
                    in_edges[u].push(v);
                }
            }
            delta_max = delta_max.max(in_range);
        }

        let mut net = Network {
            nodes,
            params,
            index,
            r_max,
            r_bcast,
            r_max_global,
            r_min_global,
            delta_max,
            dist,
            out_edges,
            in_edges,
            ell: 0,
        };
        net.ell = net.longest_directed_path()?;
        Ok(net)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn index_of(&self, id: NodeId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownNode(id))
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.dist[a * self.nodes.len() + b]
    }

    pub fn r_max(&self, idx: usize) -> f64 {
        self.r_max[idx]
    }

    pub fn r_bcast(&self, idx: usize) -> f64 {
        self.r_bcast[idx]
    }

    /// Largest transmission range in the network.
    pub fn r_max_global(&self) -> f64 {
        self.r_max_global
    }

    /// Smallest transmission range in the network.
    pub fn r_min_global(&self) -> f64 {
        self.r_min_global
    }

    /// Ratio of the largest to the smallest transmission range, at least 1.
    pub fn gamma_ratio(&self) -> f64 {
        self.r_max_global / self.r_min_global
    }

    /// Maximum number of other nodes inside any node's transmission range.
    pub fn delta_max(&self) -> usize {
        self.delta_max
    }

    /// Length of the longest path made only of unidirectional links.
    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn min_power(&self) -> f64 {
        self.nodes.iter().map(|n| n.power).fold(f64::MAX, f64::min)
    }

    pub fn max_power(&self) -> f64 {
        self.nodes.iter().map(|n| n.power).fold(f64::MIN, f64::max)
    }

    /// Nodes inside `v`'s broadcasting region (excluding `v`).
    pub fn out_neighbors(&self, v: usize) -> &[usize] {
        &self.out_edges[v]
    }

    /// Nodes whose broadcasting region contains `v`.
    pub fn in_neighbors(&self, v: usize) -> &[usize] {
        &self.in_edges[v]
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        from != to && self.distance(from, to) <= self.r_bcast[from]
    }

    pub fn is_bidirectional(&self, a: usize, b: usize) -> bool {
        self.has_edge(a, b) && self.has_edge(b, a)
    }

    /// Edge `from -> to` exists while `to -> from` does not.
    pub fn is_unidirectional(&self, from: usize, to: usize) -> bool {
        self.has_edge(from, to) && !self.has_edge(to, from)
    }

    /// Length of the longest path in the graph of unidirectional links.
    ///
    /// Topological order plus a longest-path pass; fails if the unidirectional
    /// subgraph contains a cycle, which the range geometry rules out.
    pub fn longest_directed_path(&self) -> Result<usize> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        for v in 0..n {
            for &u in &self.out_edges[v] {
                if self.is_unidirectional(v, u) {
                    indegree[u] += 1;
                }
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut longest = vec![0usize; n];
        let mut visited = 0;
        while let Some(v) = queue.pop_front() {
            visited += 1;
            for &u in &self.out_edges[v] {
                if !self.is_unidirectional(v, u) {
                    continue;
                }
                longest[u] = longest[u].max(longest[v] + 1);
                indegree[u] -= 1;
                if indegree[u] == 0 {
                    queue.push_back(u);
                }
            }
        }
        if visited != n {
            return Err(Error::ModelViolation(
                "cycle of unidirectional links".to_string(),
            ));
        }
        Ok(longest.into_iter().max().unwrap_or(0))
    }

    /// Classify `other` relative to the rings around `center`.
    ///
    /// Ties on a ring boundary go to the smaller ring index.
    pub fn ring_index(&self, center: usize, other: usize) -> Result<RingClass> {
        if center == other {
            return Err(Error::InvalidArgument(
                "ring_index needs two distinct nodes".to_string(),
            ));
        }
        Ok(classify_ring(
            self.distance(center, other),
            self.r_max_global,
        ))
    }

    /// Serializable description of this network.
    pub fn to_topology(&self) -> TopologyFile {
        TopologyFile {
            params: self.params,
            nodes: self.nodes.clone(),
        }
    }
}

pub(crate) fn classify_ring(dist: f64, r_max_global: f64) -> RingClass {
    if dist < 3.0 * r_max_global {
        return RingClass::Proximity;
    }
    // smallest i with dist <= (i + 2) R
    let mut i = (dist / r_max_global - 2.0).ceil().max(2.0) as u32;
    while i > 2 && dist <= f64::from(i + 1) * r_max_global {
        i -= 1;
    }
    while dist > f64::from(i + 2) * r_max_global {
        i += 1;
    }
    RingClass::Ring(i)
}

/// On-disk topology document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub params: NetworkParams,
    pub nodes: Vec<Node>,
}

impl TopologyFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn build(self) -> Result<Network> {
        Network::build(self.nodes, self.params)
    }
}
