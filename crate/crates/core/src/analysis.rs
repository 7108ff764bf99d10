//! Closed-form bounds and exact certificates for interference.
//!
//! Everything here is a pure function of a [`Network`] and a transmission
//! probability per node. Expectations are computed exactly; nothing samples.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{broadcast_range, classify_ring, Network, NetworkParams, NodeId, RingClass};

/// Natural log of `n`, with `n` clamped to at least 2 so budgets stay positive.
pub fn ln_n(n: usize) -> f64 {
    (n.max(2) as f64).ln()
}

/// `ceil(scale * 8 c / p * ln n)`: slots after which a node transmitting with
/// probability `p` has been heard by each neighbor with high probability.
pub fn slot_budget(params: &NetworkParams, p: f64, n: usize) -> u64 {
    (params.scale * 8.0 * params.c_whp / p * ln_n(n)).ceil().max(1.0) as u64
}

/// Cap on the probability mass inside one transmission region.
///
/// `min(delta - 1, 1) / (120 beta_hi G^2 sum_{i=1}^n i^-(alpha_hi - 1))`.
pub fn gamma_bound(params: &NetworkParams, gamma_ratio: f64, n: usize) -> f64 {
    let n = n.max(1);
    let sum: f64 = (1..=n)
        .map(|i| (i as f64).powf(-(params.alpha_hi - 1.0)))
        .sum();
    (params.delta - 1.0).min(1.0) / (120.0 * params.beta_hi * gamma_ratio * gamma_ratio * sum)
}

/// Transmission probability per node, indexed like the network's nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityAssignment(Vec<f64>);

impl ProbabilityAssignment {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        Ok(ProbabilityAssignment(probs))
    }

    pub fn uniform(n: usize, p: f64) -> Result<Self> {
        Self::new(vec![p; n])
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.0[idx]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn check_len(&self, net: &Network) -> Result<()> {
        if self.0.len() != net.len() {
            return Err(Error::InvalidArgument(format!(
                "{} probabilities for {} nodes",
                self.0.len(),
                net.len()
            )));
        }
        Ok(())
    }
}

fn in_proximity(net: &Network, v: usize, u: usize) -> bool {
    net.distance(v, u) < 3.0 * net.r_max_global()
}

/// Probability that no other node within `3 R` of `v` transmits.
pub fn prob_no_proximity_transmission(
    net: &Network,
    probs: &ProbabilityAssignment,
    v: usize,
) -> Result<f64> {
    probs.check_len(net)?;
    Ok((0..net.len())
        .filter(|&u| u != v && in_proximity(net, v, u))
        .map(|u| 1.0 - probs.get(u))
        .product())
}

/// Largest expected interference from outside `v`'s proximity region at any
/// receiver in `v`'s broadcasting disc.
///
/// Receivers are `v`, every node inside the disc, and for each interferer the
/// point of the disc boundary nearest to it.
pub fn expected_out_of_proximity_interference(
    net: &Network,
    probs: &ProbabilityAssignment,
    v: usize,
    exponent: f64,
) -> Result<f64> {
    probs.check_len(net)?;
    if !(exponent > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "attenuation exponent must exceed 1, got {exponent}"
        )));
    }
    let far: Vec<usize> = (0..net.len())
        .filter(|&w| w != v && !in_proximity(net, v, w) && probs.get(w) > 0.0)
        .collect();
    if far.is_empty() {
        return Ok(0.0);
    }
    let center = net.node(v);
    let rb = net.r_bcast(v);
    let mut receivers: Vec<(f64, f64)> = vec![(center.x, center.y)];
    receivers.extend(
        net.out_neighbors(v)
            .iter()
            .map(|&u| (net.node(u).x, net.node(u).y)),
    );
    for &w in &far {
        let node = net.node(w);
        let d = net.distance(v, w);
        receivers.push((
            center.x + rb * (node.x - center.x) / d,
            center.y + rb * (node.y - center.y) / d,
        ));
    }
    let mut worst: f64 = 0.0;
    for (rx, ry) in receivers {
        let total: f64 = far
            .iter()
            .map(|&w| {
                let node = net.node(w);
                let d = (node.x - rx).hypot(node.y - ry);
                probs.get(w) * node.power / d.powf(exponent)
            })
            .sum();
        worst = worst.max(total);
    }
    Ok(worst)
}

/// Expected far interference at `v` with each interferer moved to the inner
/// edge `i R` of its ring, at exponent `alpha_hi`.
pub fn ring_floor_interference(net: &Network, probs: &ProbabilityAssignment, v: usize) -> Result<f64> {
    probs.check_len(net)?;
    let r = net.r_max_global();
    let alpha = net.params().alpha_hi;
    let mut total = 0.0;
    for w in 0..net.len() {
        if w == v {
            continue;
        }
        if let RingClass::Ring(i) = classify_ring(net.distance(v, w), r) {
            total += probs.get(w) * net.node(w).power / (f64::from(i) * r).powf(alpha);
        }
    }
    Ok(total)
}

/// Per-ring bound `60 gamma beta_hi N_hi G^2 / i^(alpha_hi - 1)`.
pub fn ring_interference_bound(
    i: u32,
    gamma: f64,
    params: &NetworkParams,
    gamma_ratio: f64,
) -> Result<f64> {
    if i < 2 {
        return Err(Error::InvalidArgument(format!(
            "ring index {i} lies inside the proximity region"
        )));
    }
    Ok(60.0 * gamma * params.beta_hi * params.noise_hi * gamma_ratio * gamma_ratio
        / f64::from(i).powf(params.alpha_hi - 1.0))
}

/// Maximum over `v` of the probability mass in `v`'s broadcasting disc, `v` included.
pub fn region_probability_sums(net: &Network, probs: &ProbabilityAssignment) -> Result<f64> {
    probs.check_len(net)?;
    Ok((0..net.len())
        .map(|v| {
            probs.get(v)
                + net
                    .out_neighbors(v)
                    .iter()
                    .map(|&u| probs.get(u))
                    .sum::<f64>()
        })
        .fold(0.0, f64::max))
}

/// Powers a node used over an interval, stored as runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerTrace {
    pub node: NodeId,
    pub start: u64,
    /// `(first slot, length, power)`, contiguous from `start`.
    runs: Vec<(u64, u64, f64)>,
    transmitted: Vec<u64>,
}

impl PowerTrace {
    pub fn new(node: NodeId, start: u64) -> Self {
        PowerTrace {
            node,
            start,
            runs: Vec::new(),
            transmitted: Vec::new(),
        }
    }

    pub fn end(&self) -> u64 {
        self.runs.last().map_or(self.start, |r| r.0 + r.1)
    }

    /// Interval length in slots.
    pub fn len(&self) -> u64 {
        self.end() - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Record `len` slots at `power` from `slot` on; a gap before is filled with power 0.
    pub fn push_run(&mut self, slot: u64, len: u64, power: f64) -> Result<()> {
        if slot < self.end() {
            return Err(Error::InvalidArgument(format!(
                "slot {slot} precedes the trace end {}",
                self.end()
            )));
        }
        if !(power >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative power {power}")));
        }
        if slot > self.end() {
            let gap_start = self.end();
            self.append(gap_start, slot - gap_start, 0.0);
        }
        if len > 0 {
            self.append(slot, len, power);
        }
        Ok(())
    }

    /// Record a single slot.
    pub fn push(&mut self, slot: u64, power: f64, transmitted: bool) -> Result<()> {
        self.push_run(slot, 1, power)?;
        if transmitted {
            self.transmitted.push(slot);
        }
        Ok(())
    }

    pub fn mark_transmitted(&mut self, slot: u64) {
        self.transmitted.push(slot);
    }

    pub fn transmitted_slots(&self) -> &[u64] {
        &self.transmitted
    }

    fn append(&mut self, slot: u64, len: u64, power: f64) {
        if let Some(last) = self.runs.last_mut() {
            if last.2 == power && last.0 + last.1 == slot {
                last.1 += len;
                return;
            }
        }
        self.runs.push((slot, len, power));
    }

    /// Distinct levels `0 = P[0] < P[1] < ...`.
    pub fn levels(&self) -> Vec<f64> {
        let mut lv: Vec<f64> = self.runs.iter().map(|r| r.2).filter(|&p| p > 0.0).collect();
        lv.sort_by(f64::total_cmp);
        lv.dedup();
        lv.insert(0, 0.0);
        lv
    }

    /// `T_j`: slots with power at least `P[j]`, aligned with [`levels`](Self::levels).
    pub fn counts(&self) -> Vec<u64> {
        self.levels()
            .iter()
            .map(|&lvl| {
                self.runs
                    .iter()
                    .filter(|r| r.2 >= lvl)
                    .map(|r| r.1)
                    .sum()
            })
            .collect()
    }
}

/// Largest level `j` used in more than `scale 8c/p ln n` slots, with the
/// broadcasting range at that level. `(0, 0)` when no positive level qualifies.
pub fn variable_power_guarantee(
    trace: &PowerTrace,
    p: f64,
    params: &NetworkParams,
    n: usize,
) -> Result<(usize, f64)> {
    if trace.is_empty() {
        return Err(Error::InvalidArgument("empty power trace".into()));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!("probability {p} outside (0, 1]")));
    }
    let theta = params.scale * 8.0 * params.c_whp / p * ln_n(n);
    let levels = trace.levels();
    let counts = trace.counts();
    for j in (1..levels.len()).rev() {
        if counts[j] as f64 > theta {
            return Ok((j, broadcast_range(levels[j], params)?));
        }
    }
    Ok((0, 0.0))
}

const FACT_EPS: f64 = 1e-12;

/// `(1/4)^{sum p} <= prod (1 - p) <= e^{-sum p}` for `p` in `[0, 1/2]`.
pub fn fact1_check(ps: &[f64]) -> Result<bool> {
    if let Some(p) = ps.iter().find(|p| !(0.0..=0.5).contains(*p)) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1/2]")));
    }
    let sum: f64 = ps.iter().sum();
    let prod: f64 = ps.iter().map(|p| 1.0 - p).product();
    let lo = 0.25f64.powf(sum);
    let hi = (-sum).exp();
    Ok(lo <= prod * (1.0 + FACT_EPS) && prod <= hi * (1.0 + FACT_EPS))
}

/// `e^t (1 - t^2/n) <= (1 + t/n)^n <= e^t` for `n >= 1`, `|t| <= n`.
pub fn fact2_check(n: u64, t: f64) -> Result<bool> {
    if n == 0 || !(t.abs() <= n as f64) {
        return Err(Error::InvalidArgument(format!("need n >= 1 and |t| <= n, got n={n}, t={t}")));
    }
    let nf = n as f64;
    let mid = (1.0 + t / nf).powf(nf);
    let lo = t.exp() * (1.0 - t * t / nf);
    let hi = t.exp();
    let tol = FACT_EPS * hi.max(1.0);
    Ok(lo <= mid + tol && mid <= hi + tol)
}
