//! Local broadcasting: each node delivers one token to every node in its
//! broadcasting range.
//!
//! Three slot-stepped protocols share the same payload and verifier:
//! - [`FixedProbBroadcaster`]: knows the maximum degree and transmits with
//!   `p = gamma / Delta` for a fixed number of slots.
//! - [`SlowStartBroadcaster`]: ramps its probability up from `gamma / (16 n~)`
//!   to the cap `gamma / 16`, halving on every reception.
//! - [`VariablePowerBroadcaster`]: like the fixed protocol but picks a
//!   transmit power per slot from a schedule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::analysis::{gamma_bound, ln_n, slot_budget, PowerTrace};
use crate::engine::{geometric_gap, Action, Delivery, MessageKind, NodeRng, Protocol, SimTrace, StepContext};
use crate::error::{Error, Result};
use crate::model::{Network, NetworkParams, NodeId};

/// The one message a node broadcasts: its own id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Token(pub NodeId);

impl MessageKind for Token {
    fn kind(&self) -> &'static str {
        "token"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BroadcastEvent {
    Completed,
}

/// Network-wide constants shared by the broadcasting protocols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BroadcastSetup {
    pub params: NetworkParams,
    pub n: usize,
    pub gamma: f64,
    pub gamma_ratio: f64,
    /// Maximum degree, at least 1.
    pub delta: usize,
    pub min_power: f64,
    pub max_power: f64,
}

impl BroadcastSetup {
    pub fn from_network(net: &Network) -> Self {
        let gamma_ratio = net.gamma_ratio();
        BroadcastSetup {
            params: *net.params(),
            n: net.len(),
            gamma: gamma_bound(net.params(), gamma_ratio, net.len()),
            gamma_ratio,
            delta: net.delta_max().max(1),
            min_power: net.min_power(),
            max_power: net.max_power(),
        }
    }

    /// `gamma / Delta`.
    pub fn fixed_probability(&self) -> f64 {
        self.gamma / self.delta as f64
    }

    pub fn fixed_budget(&self) -> u64 {
        slot_budget(&self.params, self.fixed_probability(), self.n)
    }
}

/// Transmits with probability `p` in each of `budget` slots after waking.
#[derive(Debug, Clone)]
pub struct FixedProbBroadcaster {
    origin: NodeId,
    p: f64,
    budget: u64,
    start: Option<u64>,
    next_tx: Option<u64>,
    done: bool,
    events: Vec<BroadcastEvent>,
}

impl FixedProbBroadcaster {
    pub fn new(origin: NodeId, p: f64, budget: u64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) || budget == 0 {
            return Err(Error::InvalidArgument(format!(
                "need p in (0, 1] and a positive budget, got p={p}, budget={budget}"
            )));
        }
        Ok(FixedProbBroadcaster {
            origin,
            p,
            budget,
            start: None,
            next_tx: None,
            done: false,
            events: Vec::new(),
        })
    }

    pub fn from_setup(origin: NodeId, setup: &BroadcastSetup) -> Result<Self> {
        Self::new(origin, setup.fixed_probability(), setup.fixed_budget())
    }

    pub fn probability(&self) -> f64 {
        self.p
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    /// Slot of the first step, once awake.
    pub fn start(&self) -> Option<u64> {
        self.start
    }

    /// Slots stepped through so far, counting skipped ones.
    pub fn slots_elapsed(&self, slot: u64) -> u64 {
        self.start.map_or(0, |s| (slot + 1 - s).min(self.budget))
    }

    /// One slot of the protocol. Errors once the budget is spent.
    pub fn fixed_step(&mut self, slot: u64, rng: &mut NodeRng) -> Result<Action<Token>> {
        if self.done {
            return Err(Error::protocol(self.origin, slot, "stepped after completion"));
        }
        let start = *self.start.get_or_insert(slot);
        if self.next_tx.is_none() && slot == start {
            self.next_tx = geometric_gap(self.p, rng).map(|g| slot + g);
        }
        if slot >= start + self.budget {
            self.done = true;
            self.events.push(BroadcastEvent::Completed);
            return Ok(Action::Listen);
        }
        if self.next_tx == Some(slot) {
            self.next_tx = geometric_gap(self.p, rng).map(|g| slot + 1 + g);
            return Ok(Action::Transmit {
                payload: Token(self.origin),
                power: None,
            });
        }
        Ok(Action::Listen)
    }
}

impl Protocol for FixedProbBroadcaster {
    type Message = Token;
    type Event = BroadcastEvent;

    fn step(&mut self, ctx: &StepContext, _inbox: &[Delivery<Token>], rng: &mut NodeRng) -> Result<Action<Token>> {
        if self.done {
            return Ok(Action::Listen);
        }
        self.fixed_step(ctx.slot, rng)
    }

    fn next_wakeup(&self) -> Option<u64> {
        if self.done {
            return None;
        }
        let end = self.start? + self.budget;
        Some(self.next_tx.map_or(end, |t| t.min(end)))
    }

    fn transmit_probability(&self, slot: u64) -> f64 {
        match self.start {
            Some(s) if !self.done && slot < s + self.budget => self.p,
            _ => 0.0,
        }
    }

    fn is_complete(&self) -> bool {
        self.done
    }

    fn drain_events(&mut self, out: &mut Vec<BroadcastEvent>) {
        out.append(&mut self.events);
    }
}

/// Configuration of the slow-start protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowStartConfig {
    /// Estimate of the network size used for the starting probability.
    pub n_estimate: usize,
    /// Constant in the global budget `C (Delta + ln n) G^2 ln n`.
    pub budget_constant: f64,
}

impl Default for SlowStartConfig {
    fn default() -> Self {
        SlowStartConfig {
            n_estimate: 0,
            budget_constant: 64.0,
        }
    }
}

/// Derived slot counts and probabilities of the slow-start protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlowStartPlan {
    pub p_init: f64,
    pub p_cap: f64,
    pub phase_len: u64,
    /// Slots at the cap after which the node is done.
    pub cap_slots: u64,
    /// Hard limit on the whole run.
    pub global_budget: u64,
}

impl SlowStartPlan {
    pub fn new(setup: &BroadcastSetup, cfg: &SlowStartConfig) -> Self {
        let n_est = if cfg.n_estimate == 0 { setup.n } else { cfg.n_estimate }.max(1);
        let ln = ln_n(setup.n);
        let c = setup.params.c_whp;
        let scale = setup.params.scale;
        let g2 = setup.gamma_ratio * setup.gamma_ratio;
        SlowStartPlan {
            p_init: setup.gamma / (16.0 * n_est as f64),
            p_cap: setup.gamma / 16.0,
            phase_len: (4.0 * c * ln).ceil().max(1.0) as u64,
            cap_slots: (scale * 8.0 * 16.0 / setup.gamma * c * ln).ceil().max(1.0) as u64,
            global_budget: (scale * cfg.budget_constant * (setup.delta as f64 + ln) * g2 * ln)
                .ceil()
                .max(1.0) as u64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SlowStartBroadcaster {
    origin: NodeId,
    plan: SlowStartPlan,
    p_cur: f64,
    start: Option<u64>,
    phase_start: u64,
    next_tx: Option<u64>,
    /// Slots spent at the cap before `acc_mark`.
    cap_acc: u64,
    acc_mark: u64,
    done: bool,
    /// Largest probability ever used, for checking the cap.
    p_peak: f64,
    events: Vec<BroadcastEvent>,
}

impl SlowStartBroadcaster {
    pub fn new(origin: NodeId, plan: SlowStartPlan) -> Self {
        SlowStartBroadcaster {
            origin,
            plan,
            p_cur: plan.p_init,
            start: None,
            phase_start: 0,
            next_tx: None,
            cap_acc: 0,
            acc_mark: 0,
            done: false,
            p_peak: plan.p_init,
            events: Vec::new(),
        }
    }

    pub fn plan(&self) -> &SlowStartPlan {
        &self.plan
    }

    pub fn current_probability(&self) -> f64 {
        self.p_cur
    }

    pub fn peak_probability(&self) -> f64 {
        self.p_peak
    }

    pub fn start(&self) -> Option<u64> {
        self.start
    }

    fn at_cap(&self) -> bool {
        self.p_cur >= self.plan.p_cap
    }

    fn account(&mut self, upto: u64) {
        if self.at_cap() {
            self.cap_acc += upto - self.acc_mark;
        }
        self.acc_mark = upto;
    }

    fn set_p(&mut self, slot: u64, p: f64) {
        self.account(slot);
        self.p_cur = p;
        self.p_peak = self.p_peak.max(p);
    }

    fn cap_done_slot(&self) -> Option<u64> {
        self.at_cap()
            .then(|| self.acc_mark + self.plan.cap_slots.saturating_sub(self.cap_acc))
    }

    /// One slot of the protocol.
    pub fn slowstart_step(
        &mut self,
        slot: u64,
        inbox: &[Delivery<Token>],
        rng: &mut NodeRng,
    ) -> Result<Action<Token>> {
        if self.done {
            return Ok(Action::Listen);
        }
        let start = match self.start {
            Some(s) => s,
            None => {
                self.start = Some(slot);
                self.phase_start = slot;
                self.acc_mark = slot;
                self.next_tx = geometric_gap(self.p_cur, rng).map(|g| slot + g);
                slot
            }
        };
        let mut changed = false;
        while self.phase_start + self.plan.phase_len <= slot {
            let end = self.phase_start + self.plan.phase_len;
            let p = (2.0 * self.p_cur).min(self.plan.p_cap);
            if p != self.p_cur {
                self.set_p(end, p);
                changed = true;
            }
            self.phase_start = end;
        }
        if !inbox.is_empty() {
            let p = (self.p_cur / 2.0).max(self.plan.p_init);
            if p != self.p_cur {
                self.set_p(slot, p);
                changed = true;
            }
        }
        self.account(slot);
        if self.cap_acc >= self.plan.cap_slots || slot >= start + self.plan.global_budget {
            self.done = true;
            self.events.push(BroadcastEvent::Completed);
            return Ok(Action::Listen);
        }
        if changed {
            self.next_tx = geometric_gap(self.p_cur, rng).map(|g| slot + g);
        }
        if self.next_tx == Some(slot) {
            self.next_tx = geometric_gap(self.p_cur, rng).map(|g| slot + 1 + g);
            return Ok(Action::Transmit {
                payload: Token(self.origin),
                power: None,
            });
        }
        Ok(Action::Listen)
    }
}

impl Protocol for SlowStartBroadcaster {
    type Message = Token;
    type Event = BroadcastEvent;

    fn step(&mut self, ctx: &StepContext, inbox: &[Delivery<Token>], rng: &mut NodeRng) -> Result<Action<Token>> {
        self.slowstart_step(ctx.slot, inbox, rng)
    }

    fn next_wakeup(&self) -> Option<u64> {
        if self.done {
            return None;
        }
        let start = self.start?;
        let mut w = start + self.plan.global_budget;
        if self.p_cur < self.plan.p_cap {
            w = w.min(self.phase_start + self.plan.phase_len);
        }
        if let Some(c) = self.cap_done_slot() {
            w = w.min(c);
        }
        if let Some(t) = self.next_tx {
            w = w.min(t);
        }
        Some(w)
    }

    fn transmit_probability(&self, _slot: u64) -> f64 {
        if self.done || self.start.is_none() {
            0.0
        } else {
            self.p_cur
        }
    }

    fn is_complete(&self) -> bool {
        self.done
    }

    fn drain_events(&mut self, out: &mut Vec<BroadcastEvent>) {
        out.append(&mut self.events);
    }
}

/// Transmit power as a function of the slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PowerSchedule {
    Constant(f64),
    /// `high` for the first `high_slots` of every `period` slots, else `low`.
    TwoLevel {
        low: f64,
        high: f64,
        period: u64,
        high_slots: u64,
    },
}

impl PowerSchedule {
    pub fn power_at(&self, slot: u64) -> f64 {
        match *self {
            PowerSchedule::Constant(p) => p,
            PowerSchedule::TwoLevel {
                low,
                high,
                period,
                high_slots,
            } => {
                if slot % period.max(1) < high_slots {
                    high
                } else {
                    low
                }
            }
        }
    }

    /// Powers used over `[from, to)`, as a trace.
    pub fn trace(&self, node: NodeId, from: u64, to: u64) -> Result<PowerTrace> {
        let mut t = PowerTrace::new(node, from);
        match *self {
            PowerSchedule::Constant(p) => t.push_run(from, to.saturating_sub(from), p)?,
            PowerSchedule::TwoLevel { period, .. } => {
                let period = period.max(1);
                let mut s = from;
                while s < to {
                    let power = self.power_at(s);
                    // next change point
                    let phase = s % period;
                    let boundary = match *self {
                        PowerSchedule::TwoLevel { high_slots, .. } if phase < high_slots => {
                            s - phase + high_slots
                        }
                        _ => s - phase + period,
                    };
                    let e = boundary.min(to);
                    t.push_run(s, e - s, power)?;
                    s = e;
                }
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone)]
pub struct VariablePowerBroadcaster {
    origin: NodeId,
    inner: FixedProbBroadcaster,
    schedule: PowerSchedule,
    power_bounds: (f64, f64),
    transmitted: Vec<u64>,
}

impl VariablePowerBroadcaster {
    /// `power_bounds` is the global `[P_min, P_max]` every used power must respect.
    pub fn new(
        origin: NodeId,
        p: f64,
        budget: u64,
        schedule: PowerSchedule,
        power_bounds: (f64, f64),
    ) -> Result<Self> {
        Ok(VariablePowerBroadcaster {
            origin,
            inner: FixedProbBroadcaster::new(origin, p, budget)?,
            schedule,
            power_bounds,
            transmitted: Vec::new(),
        })
    }

    pub fn probability(&self) -> f64 {
        self.inner.p
    }

    pub fn start(&self) -> Option<u64> {
        self.inner.start
    }

    pub fn schedule(&self) -> &PowerSchedule {
        &self.schedule
    }

    /// Powers used from the first step to the end of the budget.
    pub fn power_trace(&self) -> Result<PowerTrace> {
        let start = self.inner.start.ok_or_else(|| {
            Error::InvalidArgument(format!("node {} never ran", self.origin))
        })?;
        let mut t = self.schedule.trace(self.origin, start, start + self.inner.budget)?;
        for &s in &self.transmitted {
            t.mark_transmitted(s);
        }
        Ok(t)
    }

    pub fn varpower_step(&mut self, slot: u64, rng: &mut NodeRng) -> Result<Action<Token>> {
        if self.inner.done {
            return Ok(Action::Listen);
        }
        match self.inner.fixed_step(slot, rng)? {
            Action::Transmit { payload, .. } => {
                let power = self.schedule.power_at(slot);
                let (lo, hi) = self.power_bounds;
                if !(power >= lo * (1.0 - 1e-12) && power <= hi * (1.0 + 1e-12)) {
                    return Err(Error::protocol(
                        self.origin,
                        slot,
                        format!("power {power} outside [{lo}, {hi}]"),
                    ));
                }
                self.transmitted.push(slot);
                Ok(Action::Transmit {
                    payload,
                    power: Some(power),
                })
            }
            Action::Listen => Ok(Action::Listen),
        }
    }
}

impl Protocol for VariablePowerBroadcaster {
    type Message = Token;
    type Event = BroadcastEvent;

    fn step(&mut self, ctx: &StepContext, _inbox: &[Delivery<Token>], rng: &mut NodeRng) -> Result<Action<Token>> {
        self.varpower_step(ctx.slot, rng)
    }

    fn next_wakeup(&self) -> Option<u64> {
        self.inner.next_wakeup()
    }

    fn transmit_probability(&self, slot: u64) -> f64 {
        self.inner.transmit_probability(slot)
    }

    fn is_complete(&self) -> bool {
        self.inner.is_complete()
    }

    fn drain_events(&mut self, out: &mut Vec<BroadcastEvent>) {
        self.inner.drain_events(out);
    }
}

/// First slot in which each `(sender, listener)` pair had a reception.
#[derive(Debug, Clone, Default)]
pub struct ReceptionLog {
    first: HashMap<(NodeId, NodeId), Vec<u64>>,
}

impl ReceptionLog {
    pub fn from_trace<M, E>(trace: &SimTrace<M, E>) -> Self {
        let mut first: HashMap<(NodeId, NodeId), Vec<u64>> = HashMap::new();
        for o in &trace.outcomes {
            for (l, t) in o.received() {
                first.entry((t.sender, l)).or_default().push(o.slot);
            }
        }
        ReceptionLog { first }
    }

    /// Earliest reception from `sender` at `listener` within `[from, to)`.
    pub fn first_in(&self, sender: NodeId, listener: NodeId, from: u64, to: u64) -> Option<u64> {
        self.first
            .get(&(sender, listener))?
            .iter()
            .copied()
            .find(|&s| s >= from && s < to)
    }

    /// Number of receptions from `sender` at `listener` within `[from, to)`.
    pub fn count_in(&self, sender: NodeId, listener: NodeId, from: u64, to: u64) -> usize {
        self.first
            .get(&(sender, listener))
            .map_or(0, |v| v.iter().filter(|&&s| s >= from && s < to).count())
    }

    /// Latest first-reception slot over all intended receivers within `radius`,
    /// or `None` if some receiver heard nothing. `Some(None)` when there are no
    /// receivers.
    pub fn completion_slot(
        &self,
        net: &Network,
        sender: NodeId,
        window: (u64, u64),
        radius: f64,
    ) -> Result<Option<Option<u64>>> {
        let v = net.index_of(sender)?;
        let mut last = None;
        for u in 0..net.len() {
            if u == v || net.distance(v, u) > radius {
                continue;
            }
            let node = net.node(u);
            let awake_throughout = node.wake_slot <= window.0
                && node.sleep_slot.is_none_or(|z| z >= window.1);
            if !awake_throughout {
                continue;
            }
            match self.first_in(sender, node.id, window.0, window.1) {
                Some(s) => last = Some(last.map_or(s, |l: u64| l.max(s))),
                None => return Ok(None),
            }
        }
        Ok(Some(last))
    }
}

/// Whether every node within `sender`'s broadcasting range that was awake for
/// all of `window` heard `sender` inside it.
pub fn verify_local_broadcast<M, E>(
    trace: &SimTrace<M, E>,
    net: &Network,
    sender: NodeId,
    window: (u64, u64),
) -> Result<bool> {
    let radius = net.r_bcast(net.index_of(sender)?);
    verify_local_broadcast_within(trace, net, sender, window, radius)
}

/// As [`verify_local_broadcast`] with an explicit radius.
pub fn verify_local_broadcast_within<M, E>(
    trace: &SimTrace<M, E>,
    net: &Network,
    sender: NodeId,
    window: (u64, u64),
    radius: f64,
) -> Result<bool> {
    let log = ReceptionLog::from_trace(trace);
    Ok(log.completion_slot(net, sender, window, radius)?.is_some())
}

/// Successes and trials for the per-slot success of `sender` at `listener`:
/// the fraction of slots in `window` in which the listener decoded the sender.
pub fn per_slot_success(log: &ReceptionLog, sender: NodeId, listener: NodeId, window: (u64, u64)) -> (u64, u64) {
    (
        log.count_in(sender, listener, window.0, window.1) as u64,
        window.1.saturating_sub(window.0),
    )
}
