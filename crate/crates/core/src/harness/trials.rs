//! Single-seed trial runners producing per-node rows and named checks.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::topology::{apply_wake, WakeMode};
use crate::analysis::variable_power_guarantee;
use crate::broadcast::{
    BroadcastEvent, BroadcastSetup, FixedProbBroadcaster, PowerSchedule, ReceptionLog, SlowStartBroadcaster,
    SlowStartConfig, SlowStartPlan, Token, VariablePowerBroadcaster,
};
use crate::coloring::{
    late_resets, leader_density, validate_coloring, validate_mis, ColoringConstants, ColoringEvent,
    ColoringMessage, ColoringNode, Domination,
};
use crate::engine::{
    Action, Delivery, NodeRng, Protocol, SafetyReport, SimConfig, SimTrace, Simulation, StepContext, TraceMode,
};
use crate::error::{Error, Result};
use crate::model::{Network, NodeId};

/// A named pass/fail condition evaluated on one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// First offending node and slot, when there is one.
    pub node: Option<NodeId>,
    pub slot: Option<u64>,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
            node: None,
            slot: None,
        }
    }

    fn at(mut self, node: Option<NodeId>, slot: Option<u64>) -> Self {
        self.node = node;
        self.slot = slot;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BroadcastKind {
    Fixed,
    SlowStart,
    VarPower,
}

impl BroadcastKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BroadcastKind::Fixed => "fixed",
            BroadcastKind::SlowStart => "slowstart",
            BroadcastKind::VarPower => "varpower",
        }
    }
}

impl fmt::Display for BroadcastKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BroadcastKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(BroadcastKind::Fixed),
            "slowstart" => Ok(BroadcastKind::SlowStart),
            "varpower" => Ok(BroadcastKind::VarPower),
            _ => Err(Error::InvalidArgument(format!("unknown broadcast protocol `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastOptions {
    pub kind: BroadcastKind,
    pub slowstart: SlowStartConfig,
    /// Period of the two-level power schedule; the first half of every
    /// period uses the raised power.
    pub power_period: u64,
    pub wake: WakeMode,
    /// Keep the full slot trace in the trial result.
    pub keep_trace: bool,
}

impl BroadcastOptions {
    pub fn new(kind: BroadcastKind) -> Self {
        BroadcastOptions {
            kind,
            slowstart: SlowStartConfig::default(),
            power_period: 16,
            wake: WakeMode::Static,
            keep_trace: false,
        }
    }
}

/// One CSV row of a broadcast run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastRow {
    pub seed: u64,
    pub node_id: u32,
    pub protocol: String,
    pub success: bool,
    /// Slot by which every intended receiver had heard the node; empty when
    /// it had none or some receiver never did.
    pub first_success_slot: Option<u64>,
    pub budget: u64,
}

#[derive(Debug, Clone)]
pub struct BroadcastTrial {
    pub seed: u64,
    pub rows: Vec<BroadcastRow>,
    pub checks: Vec<Check>,
    pub safety: SafetyReport,
    pub slots_run: u64,
    /// Broadcast start slot per node (index order).
    pub starts: Vec<u64>,
    /// Guaranteed `(level, radius)` per node, variable power only.
    pub guarantees: Vec<(usize, f64)>,
    pub trace: Option<SimTrace<Token, BroadcastEvent>>,
}

impl BroadcastTrial {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone)]
enum AnyBroadcaster {
    Fixed(FixedProbBroadcaster),
    Slow(SlowStartBroadcaster),
    Var(VariablePowerBroadcaster),
}

impl Protocol for AnyBroadcaster {
    type Message = Token;
    type Event = BroadcastEvent;

    fn step(&mut self, ctx: &StepContext, inbox: &[Delivery<Token>], rng: &mut NodeRng) -> Result<Action<Token>> {
        match self {
            AnyBroadcaster::Fixed(p) => p.step(ctx, inbox, rng),
            AnyBroadcaster::Slow(p) => p.step(ctx, inbox, rng),
            AnyBroadcaster::Var(p) => p.step(ctx, inbox, rng),
        }
    }

    fn next_wakeup(&self) -> Option<u64> {
        match self {
            AnyBroadcaster::Fixed(p) => p.next_wakeup(),
            AnyBroadcaster::Slow(p) => p.next_wakeup(),
            AnyBroadcaster::Var(p) => p.next_wakeup(),
        }
    }

    fn transmit_probability(&self, slot: u64) -> f64 {
        match self {
            AnyBroadcaster::Fixed(p) => p.transmit_probability(slot),
            AnyBroadcaster::Slow(p) => p.transmit_probability(slot),
            AnyBroadcaster::Var(p) => p.transmit_probability(slot),
        }
    }

    fn is_complete(&self) -> bool {
        match self {
            AnyBroadcaster::Fixed(p) => p.is_complete(),
            AnyBroadcaster::Slow(p) => p.is_complete(),
            AnyBroadcaster::Var(p) => p.is_complete(),
        }
    }

    fn drain_events(&mut self, out: &mut Vec<BroadcastEvent>) {
        match self {
            AnyBroadcaster::Fixed(p) => p.drain_events(out),
            AnyBroadcaster::Slow(p) => p.drain_events(out),
            AnyBroadcaster::Var(p) => p.drain_events(out),
        }
    }
}

/// Region-sum cap for a fixed probability `p`: a region holds the node plus at
/// most `Delta` others.
pub fn fixed_region_cap(setup: &BroadcastSetup) -> f64 {
    setup.fixed_probability() * (setup.delta + 1) as f64
}

/// Two-level schedule for variable power: own power, raised to
/// `min(2 P, P_max)` for the first half of every period.
pub fn two_level_schedule(power: f64, max_power: f64, period: u64) -> PowerSchedule {
    let period = period.max(2);
    PowerSchedule::TwoLevel {
        low: power,
        high: (2.0 * power).min(max_power).max(power),
        period,
        high_slots: period / 2,
    }
}

/// Run one seeded local-broadcast trial.
pub fn run_broadcast_trial(net: &Network, opts: &BroadcastOptions, seed: u64) -> Result<BroadcastTrial> {
    let net = apply_wake(net, opts.wake, seed)?;
    let net = &net;
    let setup = BroadcastSetup::from_network(net);
    let p = setup.fixed_probability();
    let theta = setup.fixed_budget();
    let (budget, cap) = match opts.kind {
        BroadcastKind::Fixed => (theta, fixed_region_cap(&setup)),
        BroadcastKind::SlowStart => (SlowStartPlan::new(&setup, &opts.slowstart).global_budget, setup.gamma),
        // long enough for the raised level to clear the guarantee threshold
        BroadcastKind::VarPower => (2 * theta + opts.power_period.max(2), fixed_region_cap(&setup)),
    };
    let plan = SlowStartPlan::new(&setup, &opts.slowstart);
    let last_wake = net.nodes().iter().map(|n| n.wake_slot).max().unwrap_or(0);
    let mut cfg = SimConfig::new(last_wake + budget + 2, seed);
    cfg.trace = TraceMode::Full;
    cfg.safety_cap = Some(cap);
    let kind = opts.kind;
    let period = opts.power_period;
    let mut sim = Simulation::new(
        net,
        |_, node| {
            Ok(match kind {
                BroadcastKind::Fixed => AnyBroadcaster::Fixed(FixedProbBroadcaster::new(node.id, p, budget)?),
                BroadcastKind::SlowStart => AnyBroadcaster::Slow(SlowStartBroadcaster::new(node.id, plan)),
                BroadcastKind::VarPower => AnyBroadcaster::Var(VariablePowerBroadcaster::new(
                    node.id,
                    p,
                    budget,
                    two_level_schedule(node.power, setup.max_power, period),
                    (setup.min_power, setup.max_power),
                )?),
            })
        },
        cfg,
    )?;
    sim.run_until(u64::MAX)?;
    let (trace, protocols) = sim.finish();
    let log = ReceptionLog::from_trace(&trace);

    let mut rows = Vec::with_capacity(net.len());
    let mut starts = Vec::with_capacity(net.len());
    let mut guarantees = Vec::new();
    let mut failures: Vec<(NodeId, u64)> = Vec::new();
    for (v, proto) in protocols.iter().enumerate() {
        let node = net.node(v);
        let start = match proto {
            AnyBroadcaster::Fixed(b) => b.start(),
            AnyBroadcaster::Slow(b) => b.start(),
            AnyBroadcaster::Var(b) => b.start(),
        }
        .unwrap_or(node.wake_slot);
        starts.push(start);
        let radius = match proto {
            AnyBroadcaster::Var(b) => {
                let g = variable_power_guarantee(&b.power_trace()?, p, net.params(), net.len())?;
                guarantees.push(g);
                g.1
            }
            _ => net.r_bcast(v),
        };
        let window = (start, start + budget);
        let done = log.completion_slot(net, node.id, window, radius)?;
        if done.is_none() {
            failures.push((node.id, start + budget));
        }
        rows.push(BroadcastRow {
            seed,
            node_id: node.id.0,
            protocol: kind.as_str().into(),
            success: done.is_some(),
            first_success_slot: done.flatten(),
            budget,
        });
    }

    let ok = rows.iter().filter(|r| r.success).count();
    let mut checks = vec![Check::new(
        "local_broadcast",
        failures.is_empty(),
        format!("{ok}/{} nodes reached every intended receiver", rows.len()),
    )
    .at(failures.first().map(|f| f.0), failures.first().map(|f| f.1))];
    let first_violation = trace.safety.violations.first();
    checks.push(
        Check::new(
            "region_sum",
            trace.safety.violation_count == 0,
            format!("max {:.6e} cap {:.6e}", trace.safety.max_region_sum, cap),
        )
        .at(first_violation.map(|v| v.1), first_violation.map(|v| v.0)),
    );
    Ok(BroadcastTrial {
        seed,
        rows,
        checks,
        safety: trace.safety.clone(),
        slots_run: trace.slots_run,
        starts,
        guarantees,
        trace: opts.keep_trace.then_some(trace),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColoringOptions {
    pub mis: bool,
    pub wake: WakeMode,
    /// Colored nodes told to give up their color once everyone is colored.
    pub forced_resignations: usize,
    /// Record competition messages and replay resets against them.
    pub check_resets: bool,
    /// Slots a competition message may be in flight before a reset is blamed.
    pub reset_margin: u64,
}

impl ColoringOptions {
    pub fn new(mis: bool) -> Self {
        ColoringOptions {
            mis,
            wake: WakeMode::Static,
            forced_resignations: 0,
            check_resets: true,
            reset_margin: 3,
        }
    }
}

/// One CSV row of a coloring run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColoringRow {
    pub seed: u64,
    pub node_id: u32,
    pub final_color: Option<u32>,
    pub colored_at_slot: Option<u64>,
    pub competes_visited: u32,
    pub resigned_count: u32,
}

/// One CSV row of an MIS run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisRow {
    pub seed: u64,
    pub node_id: u32,
    pub mis: Option<bool>,
    pub colored_at_slot: Option<u64>,
    pub competes_visited: u32,
    pub resigned_count: u32,
}

#[derive(Debug, Clone)]
pub struct ColoringTrial {
    pub seed: u64,
    pub mis: bool,
    pub rows: Vec<ColoringRow>,
    pub checks: Vec<Check>,
    pub constants: ColoringConstants,
    pub budget: u64,
    pub slots_run: u64,
    pub distinct_colors: usize,
    pub color_bound: u64,
    pub safety: SafetyReport,
    /// Nodes forced to resign.
    pub resigned: Vec<NodeId>,
    pub events: Vec<(u64, NodeId, ColoringEvent)>,
    pub nodes: Vec<ColoringNode>,
}

impl ColoringTrial {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn mis_rows(&self) -> Vec<MisRow> {
        self.rows
            .iter()
            .map(|r| MisRow {
                seed: r.seed,
                node_id: r.node_id,
                mis: r.final_color.map(|c| c == 0),
                colored_at_slot: r.colored_at_slot,
                competes_visited: r.competes_visited,
                resigned_count: r.resigned_count,
            })
            .collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Run one seeded coloring (or MIS) trial.
pub fn run_coloring_trial(net: &Network, opts: &ColoringOptions, seed: u64) -> Result<ColoringTrial> {
    let net = apply_wake(net, opts.wake, seed)?;
    let net = &net;
    let k = ColoringConstants::from_network(net, opts.mis);
    let last_wake = net.nodes().iter().map(|n| n.wake_slot).max().unwrap_or(0);
    let budget = k.termination_budget(net.ell());
    let horizon = last_wake + budget;
    let mut cfg = SimConfig::new(2 * horizon + 2, seed);
    cfg.trace = if opts.check_resets {
        TraceMode::Kinds(vec!["ma"])
    } else {
        TraceMode::Off
    };
    cfg.safety_cap = Some(k.region_mass_bound());
    cfg.stop_when_complete = true;
    let kc = k;
    let mut sim = Simulation::new(net, |_, node| Ok(ColoringNode::new(node.id, kc)), cfg)?;
    let first_done = sim.run_until(horizon + 1)?;
    let first_end = sim.slot();

    let mut resigned = Vec::new();
    if opts.forced_resignations > 0 && first_done {
        let mut pool: Vec<usize> = (0..net.len())
            .filter(|&v| !sim.protocols()[v].is_leader())
            .collect();
        if pool.len() < opts.forced_resignations {
            pool = (0..net.len()).collect();
        }
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5245_5349));
        let at = sim.slot();
        for &v in pool.iter().take(opts.forced_resignations) {
            sim.protocols_mut()[v].force_resign(at);
            resigned.push(net.node(v).id);
        }
        sim.run_until(at + budget + 1)?;
    }
    let (trace, nodes) = sim.finish();

    let rows: Vec<ColoringRow> = nodes
        .iter()
        .map(|n| ColoringRow {
            seed,
            node_id: n.id().0,
            final_color: n.color(),
            colored_at_slot: n.stats().colored_at_slot,
            competes_visited: n.stats().competes_visited,
            resigned_count: n.stats().resigned_count,
        })
        .collect();
    let colors: Vec<Option<u32>> = nodes.iter().map(|n| n.color()).collect();
    let verdict = validate_coloring(net, &colors, &k);
    let mut checks = Vec::new();

    let first_uncolored = verdict.uncolored.first().copied();
    checks.push(
        Check::new(
            "complete",
            verdict.complete(),
            format!("{} uncolored after {} slots", verdict.uncolored.len(), trace.slots_run),
        )
        .at(first_uncolored, first_uncolored.map(|_| trace.slots_run)),
    );
    if opts.mis {
        let member: Vec<Option<bool>> = colors.iter().map(|c| c.map(|c| c == 0)).collect();
        let reach = validate_mis(net, &member, Domination::Reach);
        let edges = validate_mis(net, &member, Domination::Edges);
        let pair = reach.dependent_pairs.first().map(|p| p.0);
        checks.push(
            Check::new(
                "independent",
                reach.independent(),
                format!("{} dependent pairs", reach.dependent_pairs.len()),
            )
            .at(pair, None),
        );
        checks.push(
            Check::new(
                "dominating",
                reach.dominating(),
                format!(
                    "{} undominated by reach, {} without an incoming edge",
                    reach.undominated.len(),
                    edges.undominated.len()
                ),
            )
            .at(reach.undominated.first().copied(), None),
        );
    } else {
        let pair = verdict.conflicts.first().map(|p| p.0);
        checks.push(
            Check::new("valid", verdict.valid(), format!("{} conflicting edges", verdict.conflicts.len()))
                .at(pair, None),
        );
        checks.push(Check::new(
            "color_bound",
            verdict.within_bound(),
            format!("{} colors, bound {}", verdict.distinct_colors, verdict.color_bound),
        ));
        let (near, wide) = leader_density(net, &colors, &k);
        let g2 = k.gamma_ratio * k.gamma_ratio;
        let (near_cap, wide_cap) = ((9.0 * g2).ceil() as usize, (19.0 * g2).ceil() as usize);
        checks.push(Check::new(
            "leader_density",
            near <= near_cap && wide <= wide_cap,
            format!("{near} near (cap {near_cap}), {wide} within 2R (cap {wide_cap})"),
        ));
        let reuse_ok = reuse_consistent(&trace.events, &nodes);
        checks.push(Check::new(
            "color_reuse",
            reuse_ok.is_none(),
            reuse_ok.map_or_else(|| "reassignments match the reuse tables".to_string(), |(l, r)| {
                format!("leader {l} gave {r} a color that differs from its table")
            }),
        ));
    }

    let slot_cap = if opts.wake == WakeMode::Static { budget } else { horizon };
    let late: Vec<&ColoringRow> = rows
        .iter()
        .filter(|r| r.colored_at_slot.is_some_and(|s| s > slot_cap) && !resigned.contains(&NodeId(r.node_id)))
        .collect();
    let terminated = first_done && late.is_empty();
    checks.push(
        Check::new(
            "termination",
            terminated,
            format!("first pass ended at slot {first_end}, budget {slot_cap}"),
        )
        .at(late.first().map(|r| NodeId(r.node_id)), late.first().and_then(|r| r.colored_at_slot)),
    );

    let g2 = k.gamma_ratio * k.gamma_ratio;
    let run_cap = (38.0 * g2).ceil() as u32;
    let worst = nodes.iter().max_by_key(|n| n.stats().max_consecutive_competes);
    let most = worst.map_or(0, |n| n.stats().max_consecutive_competes);
    checks.push(
        Check::new("consecutive_competes", most <= run_cap, format!("max {most}, cap {run_cap}"))
            .at(worst.filter(|_| most > run_cap).map(|n| n.id()), None),
    );
    let floor0 = -(k.delta as i64) * k.kappa_l as i64;
    let floor_i = -(i64::from(run_cap)) * k.kappa_s as i64;
    let lo0 = nodes.iter().map(|n| n.stats().min_counter_leader).min().unwrap_or(0);
    let lo_i = nodes.iter().map(|n| n.stats().min_counter_other).min().unwrap_or(0);
    checks.push(Check::new(
        "counter_floor",
        lo0 >= floor0 && lo_i >= floor_i,
        format!("leader competition min {lo0} (floor {floor0}), others min {lo_i} (floor {floor_i})"),
    ));
    if opts.check_resets {
        let rx: Vec<(u64, NodeId, NodeId, u32)> = trace
            .outcomes
            .iter()
            .flat_map(|o| {
                o.received().filter_map(move |(l, t)| match t.payload {
                    ColoringMessage::Ma { i, .. } => Some((o.slot, t.sender, l, i)),
                    _ => None,
                })
            })
            .collect();
        let late = late_resets(&trace.events, &rx, opts.reset_margin);
        checks.push(
            Check::new("no_late_reset", late.is_empty(), format!("{} resets after being heard", late.len()))
                .at(late.first().map(|r| r.node), late.first().map(|r| r.slot)),
        );
    }
    let first_violation = trace.safety.violations.first();
    checks.push(
        Check::new(
            "region_sum",
            trace.safety.violation_count == 0,
            format!("max {:.6e} cap {:.6e}", trace.safety.max_region_sum, k.region_mass_bound()),
        )
        .at(first_violation.map(|v| v.1), first_violation.map(|v| v.0)),
    );

    Ok(ColoringTrial {
        seed,
        mis: opts.mis,
        rows,
        checks,
        budget,
        slots_run: trace.slots_run,
        distinct_colors: verdict.distinct_colors,
        color_bound: verdict.color_bound,
        safety: trace.safety.clone(),
        resigned,
        events: trace.events,
        nodes,
        constants: k,
    })
}

/// First `(leader, requester)` whose assignments disagree with the leader's
/// final reuse table.
fn reuse_consistent(events: &[(u64, NodeId, ColoringEvent)], nodes: &[ColoringNode]) -> Option<(NodeId, NodeId)> {
    let tables: BTreeMap<NodeId, &BTreeMap<NodeId, u32>> = nodes.iter().map(|n| (n.id(), n.reuse_table())).collect();
    for (_, leader, ev) in events {
        if let ColoringEvent::Assigned { requester, color, .. } = ev {
            if tables.get(leader).and_then(|t| t.get(requester)) != Some(color) {
                return Some((*leader, *requester));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::topology::generate_topology;
    use crate::model::NetworkParams;

    fn params() -> NetworkParams {
        NetworkParams::exact(3.0, 1.0, 1.0, 2.0, 2.0)
    }

    #[test]
    fn fixed_broadcast_on_clique() {
        let net = generate_topology(&"clique:n=5".parse().unwrap(), &params(), 0).unwrap();
        let t = run_broadcast_trial(&net, &BroadcastOptions::new(BroadcastKind::Fixed), 1).unwrap();
        assert_eq!(t.rows.len(), 5);
        assert!(t.passed(), "{:?}", t.checks);
        assert!(t.rows.iter().all(|r| r.first_success_slot.unwrap() < r.budget));
    }

    #[test]
    fn varpower_reports_raised_radius() {
        let net = generate_topology(&"random:n=8,side=3,pmin=1,pmax=8".parse().unwrap(), &params(), 2).unwrap();
        let t = run_broadcast_trial(&net, &BroadcastOptions::new(BroadcastKind::VarPower), 1).unwrap();
        for (v, &(j, r)) in t.guarantees.iter().enumerate() {
            assert!(j >= 1);
            assert!(r >= net.r_bcast(v) - 1e-12);
        }
    }

    #[test]
    fn coloring_pair() {
        let net = generate_topology(&"clique:n=2".parse().unwrap(), &params(), 0).unwrap();
        let t = run_coloring_trial(&net, &ColoringOptions::new(false), 4).unwrap();
        assert!(t.passed(), "{:?}", t.checks);
        let mis = run_coloring_trial(&net, &ColoringOptions::new(true), 4).unwrap();
        assert!(mis.passed(), "{:?}", mis.checks);
        assert_eq!(mis.mis_rows().iter().filter(|r| r.mis == Some(true)).count(), 1);
    }

    #[test]
    fn kind_parsing() {
        for k in [BroadcastKind::Fixed, BroadcastKind::SlowStart, BroadcastKind::VarPower] {
            assert_eq!(k.as_str().parse::<BroadcastKind>().unwrap(), k);
        }
        assert!("flood".parse::<BroadcastKind>().is_err());
    }
}
