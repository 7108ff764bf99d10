use std::io::Write;

use serde::Serialize;

use super::physical::{resolve_indexed, Emission, Gains, SlotOutcome, Transmission};
use super::{node_rng, Action, Delivery, MessageKind, NodeRng, Protocol, StepContext};
use crate::error::{Error, Result};
use crate::model::{Network, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stepping {
    /// Step only nodes with something due and skip idle slots.
    #[default]
    Sparse,
    /// Step every awake node in every slot.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TraceMode {
    #[default]
    Full,
    /// Keep only transmissions whose kind is listed, with their receptions.
    Kinds(Vec<&'static str>),
    Off,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub max_slots: u64,
    pub seed: u64,
    pub stepping: Stepping,
    pub trace: TraceMode,
    /// Check, after every step, that no region's probability sum exceeds this.
    pub safety_cap: Option<f64>,
    /// Fraction of each node's slot that spills into the next slot. Off unless set.
    pub phase_offsets: Option<Vec<f64>>,
    pub stop_when_complete: bool,
}

impl SimConfig {
    pub fn new(max_slots: u64, seed: u64) -> Self {
        SimConfig {
            max_slots,
            seed,
            stepping: Stepping::Sparse,
            trace: TraceMode::Full,
            safety_cap: None,
            phase_offsets: None,
            stop_when_complete: true,
        }
    }
}

/// Result of the live region-sum check.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SafetyReport {
    pub cap: Option<f64>,
    pub max_region_sum: f64,
    pub checks: u64,
    pub violation_count: u64,
    /// First few violations as `(slot, region center, sum)`.
    pub violations: Vec<(u64, NodeId, f64)>,
}

/// Flat record for line-delimited trace export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub slot: u64,
    pub sender: NodeId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub listener: Option<NodeId>,
    pub kind: &'static str,
}

#[derive(Debug, Clone)]
pub struct SimTrace<M, E> {
    pub seed: u64,
    /// One past the last slot processed.
    pub slots_run: u64,
    pub completed: bool,
    /// Non-empty slots only, thinned by the trace mode.
    pub outcomes: Vec<SlotOutcome<M>>,
    pub events: Vec<(u64, NodeId, E)>,
    pub safety: SafetyReport,
    pub transmission_count: u64,
    pub reception_count: u64,
}

impl<M: MessageKind, E> SimTrace<M, E> {
    pub fn records(&self) -> impl Iterator<Item = TraceRecord> + '_ {
        self.outcomes.iter().flat_map(|o| {
            let sends = o.transmissions.iter().map(move |t| TraceRecord {
                slot: o.slot,
                sender: t.sender,
                listener: None,
                kind: t.payload.kind(),
            });
            let recv = o.received().map(move |(l, t)| TraceRecord {
                slot: o.slot,
                sender: t.sender,
                listener: Some(l),
                kind: t.payload.kind(),
            });
            sends.chain(recv)
        })
    }

    pub fn write_lines<W: Write>(&self, mut w: W) -> Result<()> {
        for r in self.records() {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<M, E> SimTrace<M, E> {
    /// Slots in which `listener` received a transmission from `sender`.
    pub fn reception_slots(&self, sender: NodeId, listener: NodeId) -> Vec<u64> {
        self.outcomes
            .iter()
            .filter(|o| o.received().any(|(l, t)| l == listener && t.sender == sender))
            .map(|o| o.slot)
            .collect()
    }
}

/// Incremental simulation, useful when the caller needs to intervene mid-run.
pub struct Simulation<'a, P: Protocol> {
    net: &'a Network,
    gains: Gains,
    config: SimConfig,
    protocols: Vec<P>,
    rngs: Vec<NodeRng>,
    inbox: Vec<Vec<Delivery<P::Message>>>,
    woken: Vec<bool>,
    next_slot: u64,
    spill: Option<(u64, Vec<f64>)>,
    prob_cache: Vec<[f64; 2]>,
    trace: SimTrace<P::Message, P::Event>,
    event_buf: Vec<P::Event>,
    pairs: Vec<(usize, usize)>,
}

impl<'a, P: Protocol> Simulation<'a, P> {
    pub fn new(
        net: &'a Network,
        mut factory: impl FnMut(usize, &crate::model::Node) -> Result<P>,
        config: SimConfig,
    ) -> Result<Self> {
        if config.max_slots == 0 {
            return Err(Error::InvalidArgument("max_slots must be positive".into()));
        }
        if let Some(off) = &config.phase_offsets {
            if off.len() != net.len() || off.iter().any(|&f| !(0.0..1.0).contains(&f)) {
                return Err(Error::InvalidArgument(
                    "phase offsets need one value in [0, 1) per node".into(),
                ));
            }
        }
        let n = net.len();
        let mut protocols = Vec::with_capacity(n);
        for (i, node) in net.nodes().iter().enumerate() {
            protocols.push(factory(i, node)?);
        }
        let rngs = net
            .nodes()
            .iter()
            .map(|node| node_rng(config.seed, node.id))
            .collect();
        Ok(Simulation {
            net,
            gains: Gains::new(net),
            protocols,
            rngs,
            inbox: (0..n).map(|_| Vec::new()).collect(),
            woken: vec![false; n],
            next_slot: 0,
            spill: None,
            prob_cache: vec![[0.0; 2]; n],
            trace: SimTrace {
                seed: config.seed,
                slots_run: 0,
                completed: false,
                outcomes: Vec::new(),
                events: Vec::new(),
                safety: SafetyReport {
                    cap: config.safety_cap,
                    ..SafetyReport::default()
                },
                transmission_count: 0,
                reception_count: 0,
            },
            config,
            event_buf: Vec::new(),
            pairs: Vec::new(),
        })
    }

    pub fn protocols(&self) -> &[P] {
        &self.protocols
    }

    /// Mutable access between runs. Changes take effect from the next slot.
    pub fn protocols_mut(&mut self) -> &mut [P] {
        &mut self.protocols
    }

    /// Next slot that has not been processed.
    pub fn slot(&self) -> u64 {
        self.next_slot
    }

    pub fn trace(&self) -> &SimTrace<P::Message, P::Event> {
        &self.trace
    }

    pub fn all_complete(&self) -> bool {
        let s = self.next_slot;
        self.net.nodes().iter().zip(&self.protocols).all(|(node, p)| {
            p.is_complete() || node.sleep_slot.is_some_and(|z| z <= s)
        })
    }

    fn next_event_slot(&self, from: u64) -> Option<u64> {
        if self.config.stepping == Stepping::Dense {
            return Some(from);
        }
        if self.inbox.iter().any(|b| !b.is_empty()) {
            return Some(from);
        }
        let mut best: Option<u64> = None;
        for (i, node) in self.net.nodes().iter().enumerate() {
            let cand = if !self.woken[i] {
                Some(node.wake_slot.max(from))
            } else {
                self.protocols[i].next_wakeup().map(|w| w.max(from))
            };
            if let Some(c) = cand {
                if node.sleep_slot.is_some_and(|z| c >= z) {
                    continue;
                }
                best = Some(best.map_or(c, |b| b.min(c)));
            }
        }
        best
    }

    /// Process slots until `end` (exclusive), `max_slots`, completion or
    /// until nothing is left to happen. Returns whether all nodes completed.
    pub fn run_until(&mut self, end: u64) -> Result<bool> {
        let end = end.min(self.config.max_slots);
        loop {
            if self.config.stop_when_complete && self.all_complete() {
                self.trace.completed = true;
                return Ok(true);
            }
            let Some(s) = self.next_event_slot(self.next_slot) else {
                self.next_slot = end.max(self.next_slot);
                self.trace.slots_run = self.next_slot;
                return Ok(self.all_complete());
            };
            if s >= end {
                self.next_slot = end.max(self.next_slot);
                self.trace.slots_run = self.next_slot;
                return Ok(self.all_complete());
            }
            self.process_slot(s)?;
            self.next_slot = s + 1;
            self.trace.slots_run = self.next_slot;
        }
    }

    fn process_slot(&mut self, s: u64) -> Result<()> {
        let n = self.net.len();
        let dense = self.config.stepping == Stepping::Dense;
        let mut emissions: Vec<Emission> = Vec::new();
        let mut payloads: Vec<P::Message> = Vec::new();
        let mut stepped_any = false;
        for i in 0..n {
            let node = self.net.node(i);
            if !node.is_awake(s) {
                self.inbox[i].clear();
                continue;
            }
            let due = dense
                || !self.woken[i]
                || !self.inbox[i].is_empty()
                || self.protocols[i].next_wakeup().is_some_and(|w| w <= s);
            if !due {
                continue;
            }
            self.woken[i] = true;
            let ctx = StepContext {
                slot: s,
                node: node.id,
                wake_slot: node.wake_slot,
            };
            let inbox = std::mem::take(&mut self.inbox[i]);
            let action = self.protocols[i]
                .step(&ctx, &inbox, &mut self.rngs[i])
                .map_err(|e| match e {
                    Error::ProtocolViolation { .. } => e,
                    other => Error::protocol(node.id, s, other.to_string()),
                })?;
            self.event_buf.clear();
            self.protocols[i].drain_events(&mut self.event_buf);
            for e in self.event_buf.drain(..) {
                self.trace.events.push((s, node.id, e));
            }
            if self.config.safety_cap.is_some() {
                let p = &self.protocols[i];
                let next = [p.transmit_probability(s + 1), p.transmit_probability(s + 2)];
                let par = ((s + 1) % 2) as usize;
                let mut cache = [0.0; 2];
                cache[par] = next[0];
                cache[1 - par] = next[1];
                if cache != self.prob_cache[i] {
                    self.prob_cache[i] = cache;
                    stepped_any = true;
                }
            }
            if let Action::Transmit { payload, power } = action {
                let power = power.unwrap_or(node.power);
                if !(power > 0.0 && power.is_finite()) {
                    return Err(Error::protocol(node.id, s, "non-positive transmit power"));
                }
                emissions.push(Emission { node: i, power });
                payloads.push(payload);
            }
        }
        if stepped_any {
            self.check_safety(s + 1);
        }

        let mut extra = None;
        if let Some((spill_slot, v)) = self.spill.take() {
            if spill_slot == s {
                extra = Some(v);
            }
        }
        if let Some(off) = &self.config.phase_offsets {
            let mut next = vec![0.0; n];
            let mut any = false;
            for e in &mut emissions {
                let f = off[e.node];
                if f > 0.0 {
                    any = true;
                    for (l, slot_extra) in next.iter_mut().enumerate() {
                        if l != e.node {
                            *slot_extra += f * e.power * self.gains.get(e.node, l);
                        }
                    }
                }
            }
            if any {
                self.spill = Some((s + 1, next));
            }
        }

        let signal: Vec<Emission> = match &self.config.phase_offsets {
            Some(off) => emissions
                .iter()
                .map(|e| Emission {
                    node: e.node,
                    power: e.power * (1.0 - off[e.node]),
                })
                .collect(),
            None => emissions.clone(),
        };
        resolve_indexed(
            self.net,
            &self.gains,
            s,
            &signal,
            extra.as_deref(),
            &mut self.pairs,
        );
        self.trace.transmission_count += emissions.len() as u64;
        self.trace.reception_count += self.pairs.len() as u64;
        for &(l, k) in &self.pairs {
            self.inbox[l].push(Delivery {
                sender: self.net.node(emissions[k].node).id,
                slot: s,
                payload: payloads[k].clone(),
            });
        }
        if !emissions.is_empty() {
            self.record(s, &emissions, payloads);
        }
        Ok(())
    }

    fn record(&mut self, s: u64, emissions: &[Emission], payloads: Vec<P::Message>) {
        let keep: Vec<bool> = match &self.config.trace {
            TraceMode::Off => return,
            TraceMode::Full => vec![true; emissions.len()],
            TraceMode::Kinds(kinds) => payloads.iter().map(|m| kinds.contains(&m.kind())).collect(),
        };
        if !keep.iter().any(|&k| k) {
            return;
        }
        let mut remap = vec![usize::MAX; emissions.len()];
        let mut transmissions = Vec::new();
        for (k, (e, m)) in emissions.iter().zip(payloads).enumerate() {
            if keep[k] {
                remap[k] = transmissions.len();
                transmissions.push(Transmission {
                    sender: self.net.node(e.node).id,
                    slot: s,
                    power: e.power,
                    payload: m,
                });
            }
        }
        let receptions = self
            .pairs
            .iter()
            .filter(|&&(_, k)| keep[k])
            .map(|&(l, k)| (self.net.node(l).id, remap[k]))
            .collect();
        self.trace.outcomes.push(SlotOutcome {
            slot: s,
            transmissions,
            receptions,
        });
    }

    fn check_safety(&mut self, slot: u64) {
        let Some(cap) = self.config.safety_cap else {
            return;
        };
        let net = self.net;
        for offset in 0..2u64 {
            let t = slot + offset;
            let par = (t % 2) as usize;
            let p = |i: usize| {
                if net.node(i).is_awake(t) {
                    self.prob_cache[i][par]
                } else {
                    0.0
                }
            };
            for v in 0..net.len() {
                let sum: f64 = p(v) + net.out_neighbors(v).iter().map(|&u| p(u)).sum::<f64>();
                let rep = &mut self.trace.safety;
                rep.checks += 1;
                if sum > rep.max_region_sum {
                    rep.max_region_sum = sum;
                }
                if sum > cap * (1.0 + 1e-9) {
                    rep.violation_count += 1;
                    if rep.violations.len() < 32 {
                        rep.violations.push((t, net.node(v).id, sum));
                    }
                }
            }
        }
    }

    pub fn finish(self) -> (SimTrace<P::Message, P::Event>, Vec<P>) {
        (self.trace, self.protocols)
    }
}

/// Run a fresh simulation to completion or `config.max_slots`.
pub fn run_simulation<P: Protocol>(
    net: &Network,
    factory: impl FnMut(usize, &crate::model::Node) -> Result<P>,
    config: SimConfig,
) -> Result<(SimTrace<P::Message, P::Event>, Vec<P>)> {
    let end = config.max_slots;
    let mut sim = Simulation::new(net, factory, config)?;
    sim.run_until(end)?;
    Ok(sim.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::geometric_gap;
    use crate::model::{NetworkParams, Node};

    /// Transmits with probability `p` per slot until `end`.
    #[derive(Debug, Clone)]
    struct Chatter {
        p: f64,
        end: u64,
        next_tx: Option<u64>,
        heard: u32,
    }

    impl Protocol for Chatter {
        type Message = ();
        type Event = u64;

        fn step(
            &mut self,
            ctx: &StepContext,
            inbox: &[Delivery<()>],
            rng: &mut NodeRng,
        ) -> Result<Action<()>> {
            self.heard += inbox.len() as u32;
            if self.next_tx.is_none() && ctx.slot == ctx.wake_slot {
                self.next_tx = geometric_gap(self.p, rng).map(|g| ctx.slot + g);
            }
            if self.next_tx == Some(ctx.slot) && ctx.slot < self.end {
                self.next_tx = geometric_gap(self.p, rng).map(|g| ctx.slot + 1 + g);
                return Ok(Action::Transmit {
                    payload: (),
                    power: None,
                });
            }
            Ok(Action::Listen)
        }

        fn next_wakeup(&self) -> Option<u64> {
            self.next_tx.filter(|&t| t < self.end)
        }

        fn transmit_probability(&self, _slot: u64) -> f64 {
            self.p
        }

        fn is_complete(&self) -> bool {
            false
        }
    }

    fn net() -> Network {
        let nodes = (0..5)
            .map(|i| Node::new(i, f64::from(i) * 0.7, 0.0, 4.0))
            .collect();
        Network::build(nodes, NetworkParams::exact(2.0, 1.0, 1.0, 2.0, 2.0)).unwrap()
    }

    fn run(stepping: Stepping, seed: u64) -> (SimTrace<(), u64>, Vec<Chatter>) {
        let net = net();
        let mut cfg = SimConfig::new(400, seed);
        cfg.stepping = stepping;
        run_simulation(
            &net,
            |_, _| {
                Ok(Chatter {
                    p: 0.1,
                    end: 300,
                    next_tx: None,
                    heard: 0,
                })
            },
            cfg,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_and_dense_matches_sparse() {
        let (a, pa) = run(Stepping::Sparse, 3);
        let (b, _) = run(Stepping::Sparse, 3);
        let (c, pc) = run(Stepping::Dense, 3);
        assert_eq!(a.outcomes, b.outcomes);
        assert_eq!(a.outcomes, c.outcomes);
        assert!(!a.outcomes.is_empty());
        let ha: Vec<u32> = pa.iter().map(|p| p.heard).collect();
        let hc: Vec<u32> = pc.iter().map(|p| p.heard).collect();
        assert_eq!(ha, hc);
    }

    #[test]
    fn half_duplex_in_traces() {
        let (t, _) = run(Stepping::Sparse, 9);
        for o in &t.outcomes {
            for (l, _) in o.received() {
                assert!(o.transmissions.iter().all(|tx| tx.sender != l));
            }
            let mut ls: Vec<NodeId> = o.receptions.iter().map(|r| r.0).collect();
            ls.sort();
            ls.dedup();
            assert_eq!(ls.len(), o.receptions.len());
        }
    }

    #[test]
    fn no_awake_nodes_gives_empty_trace() {
        let mut nodes: Vec<Node> = net().nodes().to_vec();
        for n in &mut nodes {
            n.wake_slot = 1000;
        }
        let net = Network::build(nodes, *net().params()).unwrap();
        let (t, _) = run_simulation(
            &net,
            |_, _| {
                Ok(Chatter {
                    p: 1.0,
                    end: 10,
                    next_tx: None,
                    heard: 0,
                })
            },
            SimConfig::new(50, 1),
        )
        .unwrap();
        assert!(t.outcomes.is_empty());
        assert_eq!(t.slots_run, 50);
    }

    #[test]
    fn safety_monitor_flags_excess() {
        let net = net();
        let mut cfg = SimConfig::new(50, 1);
        cfg.safety_cap = Some(0.25);
        let (t, _) = run_simulation(
            &net,
            |_, _| {
                Ok(Chatter {
                    p: 0.1,
                    end: 40,
                    next_tx: None,
                    heard: 0,
                })
            },
            cfg,
        )
        .unwrap();
        assert!(t.safety.max_region_sum > 0.25);
        assert!(t.safety.violation_count > 0);
    }

    #[test]
    fn trace_lines_export() {
        let (t, _) = run(Stepping::Sparse, 2);
        let mut buf = Vec::new();
        t.write_lines(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        let v: serde_json::Value = serde_json::from_str(first).unwrap();
        assert_eq!(v["kind"], "unit");
    }
}
