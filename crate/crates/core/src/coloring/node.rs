//! Per-node coloring state machine.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use super::{chi, ColoringConstants, ColoringEvent, ColoringMessage};
use crate::engine::{geometric_gap, Action, Delivery, NodeRng, Protocol, StepContext};
use crate::error::{Error, Result};
use crate::model::NodeId;

/// Coarse phase, as reported to callers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Learning,
    Wait,
    Compete(u32),
    Request(NodeId),
    Announce(u32),
    Colored(u32),
}

/// Per-node counters collected over a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeStats {
    pub color: Option<u32>,
    pub colored_at_slot: Option<u64>,
    pub competes_visited: u32,
    pub max_consecutive_competes: u32,
    pub resigned_count: u32,
    pub resets: u32,
    /// Smallest counter value taken in `Compete(0)` and in `Compete(i > 0)`.
    pub min_counter_leader: i64,
    pub min_counter_other: i64,
}

/// Transmission opportunities at a fixed probability inside `[from, until)`.
#[derive(Debug, Clone, Copy)]
struct Clock {
    p: f64,
    next: Option<u64>,
    until: u64,
}

impl Clock {
    const OFF: Clock = Clock {
        p: 0.0,
        next: None,
        until: 0,
    };

    fn arm(p: f64, from: u64, until: u64, rng: &mut NodeRng) -> Clock {
        let next = geometric_gap(p, rng)
            .and_then(|g| from.checked_add(g))
            .filter(|&t| t < until);
        Clock { p, next, until }
    }

    fn fire(&mut self, tick: u64, rng: &mut NodeRng) -> bool {
        if self.next != Some(tick) {
            return false;
        }
        self.next = geometric_gap(self.p, rng)
            .and_then(|g| (tick + 1).checked_add(g))
            .filter(|&t| t < self.until);
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LearnTask {
    Req,
    Reply(NodeId),
    Ack(NodeId),
}

#[derive(Debug, Clone)]
enum Core {
    Learning,
    Wait {
        listen_until: u64,
    },
    Compete {
        i: u32,
        listen_until: u64,
        started: bool,
        base: i64,
        base_tick: u64,
        /// `(node, counter, tick at which the counter held)`.
        competitors: Vec<(NodeId, i64, u64)>,
    },
    Request {
        leader: NodeId,
        mr_until: u64,
        timeout_at: u64,
    },
    Announce {
        color: u32,
        stage1_until: u64,
        until: u64,
    },
    Colored {
        color: u32,
        since: u64,
    },
}

enum Next {
    Request(NodeId),
    Compete0,
    NotInMis,
}

/// One node of the coloring (or MIS) protocol.
#[derive(Debug, Clone)]
pub struct ColoringNode {
    id: NodeId,
    k: ColoringConstants,
    wake: Option<u64>,

    in_set: BTreeSet<NodeId>,
    out_set: BTreeSet<NodeId>,
    replied: BTreeSet<NodeId>,
    acked: BTreeSet<NodeId>,
    tasks: VecDeque<LearnTask>,
    task: Option<(LearnTask, u64)>,
    learn: Clock,
    learn_done: Option<u64>,

    core: Core,
    main: Clock,
    serve: Clock,
    core_done: Option<u64>,
    known: BTreeMap<NodeId, (u32, u64)>,
    taken: BTreeMap<u32, (NodeId, u64)>,

    queue: VecDeque<NodeId>,
    current: Option<(NodeId, u32, u64)>,
    recent: BTreeMap<NodeId, u64>,
    reuse: BTreeMap<NodeId, u32>,
    serve_count: u32,
    resign_pending: bool,
    force_at: Option<u64>,

    stats: NodeStats,
    consecutive: u32,
    events: Vec<ColoringEvent>,
}

impl ColoringNode {
    pub fn new(id: NodeId, constants: ColoringConstants) -> Self {
        ColoringNode {
            id,
            k: constants,
            wake: None,
            in_set: BTreeSet::new(),
            out_set: BTreeSet::new(),
            replied: BTreeSet::new(),
            acked: BTreeSet::new(),
            tasks: VecDeque::new(),
            task: None,
            learn: Clock::OFF,
            learn_done: None,
            core: Core::Learning,
            main: Clock::OFF,
            serve: Clock::OFF,
            core_done: None,
            known: BTreeMap::new(),
            taken: BTreeMap::new(),
            queue: VecDeque::new(),
            current: None,
            recent: BTreeMap::new(),
            reuse: BTreeMap::new(),
            serve_count: 1,
            resign_pending: false,
            force_at: None,
            stats: NodeStats {
                color: None,
                colored_at_slot: None,
                competes_visited: 0,
                max_consecutive_competes: 0,
                resigned_count: 0,
                resets: 0,
                min_counter_leader: 0,
                min_counter_other: 0,
            },
            consecutive: 0,
            events: Vec::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn constants(&self) -> &ColoringConstants {
        &self.k
    }

    pub fn phase(&self) -> Phase {
        match &self.core {
            Core::Learning => Phase::Learning,
            Core::Wait { .. } => Phase::Wait,
            Core::Compete { i, .. } => Phase::Compete(*i),
            Core::Request { leader, .. } => Phase::Request(*leader),
            Core::Announce { color, .. } => Phase::Announce(*color),
            Core::Colored { color, .. } => Phase::Colored(*color),
        }
    }

    /// Current color, if colored.
    pub fn color(&self) -> Option<u32> {
        match self.core {
            Core::Colored { color, .. } => Some(color),
            _ => None,
        }
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    /// Nodes heard during learning.
    pub fn in_neighbors(&self) -> &BTreeSet<NodeId> {
        &self.in_set
    }

    /// Nodes known to hear this node.
    pub fn out_neighbors(&self) -> &BTreeSet<NodeId> {
        &self.out_set
    }

    /// Colors this node handed out as a leader, by requester.
    pub fn reuse_table(&self) -> &BTreeMap<NodeId, u32> {
        &self.reuse
    }

    pub fn is_leader(&self) -> bool {
        self.color().is_some_and(|c| self.k.is_leader_color(c))
    }

    /// Give up the current color at `slot` (or as soon as the current
    /// assignment finishes). No effect on uncolored nodes.
    pub fn force_resign(&mut self, slot: u64) {
        self.force_at = Some(slot);
    }

    fn learn_slot(&self, tick: u64) -> u64 {
        self.wake.unwrap_or(0) + 2 * tick
    }

    fn core_slot(&self, tick: u64) -> u64 {
        self.wake.unwrap_or(0) + 2 * tick + 1
    }

    fn tick_time(&self, slot: u64) -> (u64, u64) {
        let r = slot - self.wake.unwrap_or(0);
        // first learning and core tick at or after `slot`
        (r.div_ceil(2), r / 2)
    }

    fn known_colored(&self, w: NodeId, tick: u64) -> Option<u32> {
        self.known
            .get(&w)
            .filter(|&&(_, exp)| exp > tick)
            .map(|&(c, _)| c)
    }

    // ---- learning ----

    fn task_active(&self, tick: u64) -> bool {
        self.task.is_some_and(|(_, end)| end > tick)
    }

    fn learn_refresh(&mut self, tick: u64, rng: &mut NodeRng) {
        if self.task_active(tick) {
            return;
        }
        match self.tasks.pop_front() {
            Some(t) => {
                let end = tick + self.k.kappa_s;
                self.task = Some((t, end));
                self.learn = Clock::arm(self.k.p_s, tick, end, rng);
            }
            None => {
                self.task = None;
                self.learn = Clock::OFF;
            }
        }
    }

    fn learn_tick(&mut self, tick: u64, rng: &mut NodeRng) -> Option<ColoringMessage> {
        self.learn_done = Some(tick);
        self.learn_refresh(tick, rng);
        if !self.learn.fire(tick, rng) {
            return None;
        }
        let (task, _) = self.task.expect("clock armed for a task");
        Some(match task {
            LearnTask::Req => ColoringMessage::LearnReq { from: self.id },
            LearnTask::Reply(to) => ColoringMessage::LearnReply { from: self.id, to },
            LearnTask::Ack(to) => ColoringMessage::LearnAck { from: self.id, to },
        })
    }

    fn push_task(&mut self, t: LearnTask, tick: u64, rng: &mut NodeRng) {
        self.tasks.push_back(t);
        self.learn_refresh(tick, rng);
    }

    // ---- core transitions ----

    fn enter_wait(&mut self, tick: u64, listen: bool) {
        self.core = Core::Wait {
            listen_until: if listen { tick + self.k.listen_len } else { tick },
        };
        self.main = Clock::OFF;
        self.consecutive = 0;
        self.events.push(ColoringEvent::EnterWait);
    }

    fn enter_compete(&mut self, i: u32, tick: u64) {
        let listen_until = tick + self.k.kappa_s;
        self.core = Core::Compete {
            i,
            listen_until,
            started: false,
            base: 0,
            base_tick: listen_until,
            competitors: Vec::new(),
        };
        self.main = Clock::OFF;
        self.consecutive += 1;
        self.stats.competes_visited += 1;
        self.stats.max_consecutive_competes = self.stats.max_consecutive_competes.max(self.consecutive);
        self.events.push(ColoringEvent::EnterCompete { i });
    }

    fn enter_request(&mut self, leader: NodeId, tick: u64, rng: &mut NodeRng) {
        let mr_until = tick + self.k.kappa_s;
        self.core = Core::Request {
            leader,
            mr_until,
            timeout_at: tick + self.k.request_timeout,
        };
        self.main = Clock::arm(self.k.p_s, tick, mr_until, rng);
        self.consecutive = 0;
        self.events.push(ColoringEvent::EnterRequest { leader });
    }

    fn enter_announce(&mut self, color: u32, tick: u64, rng: &mut NodeRng) {
        let (len, p) = if self.k.is_leader_color(color) {
            (self.k.kappa_l, self.k.p_l)
        } else {
            (self.k.kappa_s, self.k.p_s)
        };
        let stage1_until = tick + len;
        self.core = Core::Announce {
            color,
            stage1_until,
            until: stage1_until + self.k.kappa_s,
        };
        self.main = Clock::arm(p, tick, stage1_until, rng);
        self.consecutive = 0;
        self.events.push(ColoringEvent::EnterAnnounce { color });
    }

    fn enter_colored(&mut self, color: u32, tick: u64, rng: &mut NodeRng) {
        self.core = Core::Colored { color, since: tick };
        self.main = Clock::arm(self.k.p_s, tick, u64::MAX, rng);
        self.consecutive = 0;
        self.stats.color = Some(color);
        self.stats.colored_at_slot = Some(self.core_slot(tick));
        self.events.push(ColoringEvent::Colored { color });
    }

    fn resign(&mut self, tick: u64) {
        let Core::Colored { color, .. } = self.core else {
            return;
        };
        self.stats.resigned_count += 1;
        self.stats.color = None;
        self.stats.colored_at_slot = None;
        self.events.push(ColoringEvent::Resigned { color });
        if self.current.is_some() {
            self.resign_pending = true;
        } else {
            self.queue.clear();
            self.enter_wait(tick, false);
        }
    }

    fn wait_test(&self, tick: u64) -> Option<Next> {
        if self.k.mis
            && self
                .in_set
                .iter()
                .any(|&w| self.known_colored(w, tick) == Some(0))
        {
            return Some(Next::NotInMis);
        }
        let dominated = self
            .in_set
            .iter()
            .filter(|w| !self.out_set.contains(w))
            .any(|&w| self.known_colored(w, tick).is_none());
        if dominated {
            return None;
        }
        if !self.k.mis {
            let leader = self
                .in_set
                .iter()
                .filter(|w| self.out_set.contains(w))
                .find(|&&w| {
                    self.known_colored(w, tick)
                        .is_some_and(|c| self.k.is_leader_color(c))
                });
            if let Some(&w) = leader {
                return Some(Next::Request(w));
            }
        }
        Some(Next::Compete0)
    }

    fn apply_next(&mut self, next: Next, tick: u64, rng: &mut NodeRng) {
        match next {
            Next::Request(w) => self.enter_request(w, tick, rng),
            Next::Compete0 => self.enter_compete(0, tick),
            Next::NotInMis => self.enter_colored(1, tick, rng),
        }
    }

    fn counter_at(base: i64, base_tick: u64, tick: u64) -> i64 {
        base + (tick as i64 - base_tick as i64)
    }

    /// New counter value avoiding every competitor. Estimates from a node
    /// with the other slot parity can be one tick off, so keep one tick of
    /// slack beyond `zeta`.
    fn chi_at(&self, competitors: &[(NodeId, i64, u64)], zeta: u64, tick: u64) -> i64 {
        let ds: Vec<i64> = competitors
            .iter()
            .map(|&(_, c, t)| c + (tick as i64 - t as i64))
            .collect();
        chi(&ds, zeta + 1)
    }

    fn note_counter(&mut self, i: u32, value: i64) {
        if i == 0 {
            self.stats.min_counter_leader = self.stats.min_counter_leader.min(value);
        } else {
            self.stats.min_counter_other = self.stats.min_counter_other.min(value);
        }
    }

    fn leader_color_choice(&self, tick: u64) -> Result<u32> {
        (0..self.k.leader_color_count)
            .find(|c| !self.taken.get(c).is_some_and(|&(_, exp)| exp > tick))
            .ok_or_else(|| Error::InvalidArgument("no free leader color".into()))
    }

    // ---- message handling ----

    fn add_in(&mut self, w: NodeId) -> bool {
        self.in_set.insert(w)
    }

    fn handle(&mut self, d: &Delivery<ColoringMessage>, ltick: u64, ctick: u64, new_in: &mut Vec<NodeId>, rng: &mut NodeRng) {
        let u = d.sender;
        match d.payload {
            ColoringMessage::LearnReq { .. } => {
                if self.add_in(u) {
                    new_in.push(u);
                }
                if self.replied.insert(u) {
                    self.push_task(LearnTask::Reply(u), ltick, rng);
                }
            }
            ColoringMessage::LearnReply { to, .. } => {
                if self.add_in(u) {
                    new_in.push(u);
                }
                if to == self.id {
                    self.out_set.insert(u);
                    if self.acked.insert(u) {
                        self.push_task(LearnTask::Ack(u), ltick, rng);
                    }
                }
            }
            ColoringMessage::LearnAck { to, .. } => {
                if self.add_in(u) {
                    new_in.push(u);
                }
                if to == self.id {
                    self.out_set.insert(u);
                }
            }
            ColoringMessage::Mc { i, .. } => self.on_mc(u, i, ctick, rng),
            ColoringMessage::Ma { i, counter, .. } => self.on_ma(u, i, counter, ctick),
            ColoringMessage::Mr { leader, .. } => {
                if leader == self.id && self.color().is_some() && !self.resign_pending {
                    let busy = self.current.is_some_and(|(r, _, _)| r == u);
                    let recent = self.recent.get(&u).is_some_and(|&g| g > ctick);
                    if !busy && !recent && !self.queue.contains(&u) {
                        self.queue.push_back(u);
                    }
                }
            }
            ColoringMessage::Ms { to, color, .. } => {
                if to == self.id {
                    if let Core::Request { leader, .. } = self.core {
                        if leader == u {
                            self.enter_compete(color, ctick);
                        }
                    }
                }
            }
        }
    }

    fn on_mc(&mut self, u: NodeId, i: u32, ctick: u64, rng: &mut NodeRng) {
        let exp = ctick + self.k.kappa_s;
        self.known.insert(u, (i, exp));
        if self.k.is_leader_color(i) {
            // announcements come at rate p_l, so remember them for a long round
            self.taken.insert(i, (u, ctick + self.k.kappa_l + self.k.kappa_s));
        }
        let mis = self.k.mis;
        match self.core {
            Core::Wait { .. } if mis && i == 0 => self.enter_colored(1, ctick, rng),
            Core::Compete { i: ci, .. } => {
                if mis {
                    if i == 0 {
                        self.enter_colored(1, ctick, rng);
                    }
                } else if ci == 0 {
                    if self.k.is_leader_color(i) && self.in_set.contains(&u) && self.out_set.contains(&u) {
                        self.enter_request(u, ctick, rng);
                    }
                } else if i == ci {
                    self.enter_compete(ci + 1, ctick);
                }
            }
            Core::Colored { color, .. } if color == i && !self.out_set.contains(&u) => {
                if mis {
                    if color == 0 {
                        self.stats.resigned_count += 1;
                        self.events.push(ColoringEvent::Resigned { color });
                        self.enter_colored(1, ctick, rng);
                    }
                } else if !self.resign_pending {
                    self.resign(ctick);
                }
            }
            _ => {}
        }
    }

    fn on_ma(&mut self, u: NodeId, i: u32, counter: i64, ctick: u64) {
        let zeta = self.k.zeta(i);
        let reference = ctick.saturating_sub(1);
        let Core::Compete {
            i: ci,
            started,
            base,
            base_tick,
            ref mut competitors,
            ..
        } = self.core
        else {
            return;
        };
        if ci != i {
            return;
        }
        match competitors.iter_mut().find(|e| e.0 == u) {
            Some(e) => *e = (u, counter, reference),
            None => competitors.push((u, counter, reference)),
        }
        if !started {
            return;
        }
        let mine = Self::counter_at(base, base_tick, reference);
        if (mine - counter).unsigned_abs() > zeta {
            return;
        }
        let comps = competitors.clone();
        let x = self.chi_at(&comps, zeta, reference);
        if let Core::Compete { base, base_tick, .. } = &mut self.core {
            *base = x + 1;
            *base_tick = reference + 1;
        }
        self.stats.resets += 1;
        self.note_counter(i, x);
        self.events.push(ColoringEvent::Reset {
            i,
            culprit: u,
            from: mine,
            to: x,
        });
    }

    // ---- core tick ----

    fn core_tick(&mut self, tick: u64, rng: &mut NodeRng) -> Result<Option<ColoringMessage>> {
        self.core_done = Some(tick);
        for _ in 0..16 {
            if !self.advance(tick, rng)? {
                break;
            }
        }
        let ms = self.serve.fire(tick, rng);
        let main = self.main.fire(tick, rng);
        if ms {
            let (to, color, _) = self.current.expect("serve clock implies a service");
            return Ok(Some(ColoringMessage::Ms {
                from: self.id,
                to,
                color,
            }));
        }
        if !main {
            return Ok(None);
        }
        Ok(match &self.core {
            Core::Compete {
                i, base, base_tick, ..
            } => Some(ColoringMessage::Ma {
                i: *i,
                from: self.id,
                counter: Self::counter_at(*base, *base_tick, tick),
            }),
            Core::Request { leader, .. } => Some(ColoringMessage::Mr {
                from: self.id,
                leader: *leader,
            }),
            Core::Announce { color, .. } | Core::Colored { color, .. } => Some(ColoringMessage::Mc {
                i: *color,
                from: self.id,
            }),
            Core::Learning | Core::Wait { .. } => None,
        })
    }

    /// Apply at most one due transition at `tick`. Returns whether one happened.
    fn advance(&mut self, tick: u64, rng: &mut NodeRng) -> Result<bool> {
        match self.core {
            Core::Learning => {
                if tick >= self.k.learning_len {
                    self.enter_wait(tick, true);
                    return Ok(true);
                }
            }
            Core::Wait { listen_until } => {
                if tick >= listen_until {
                    if let Some(next) = self.wait_test(tick) {
                        self.apply_next(next, tick, rng);
                        return Ok(true);
                    }
                }
            }
            Core::Compete {
                i,
                listen_until,
                started,
                base,
                base_tick,
                ref competitors,
            } => {
                if !started {
                    if tick >= listen_until {
                        let x = self.chi_at(competitors, self.k.zeta(i), tick - 1);
                        if let Core::Compete {
                            started, base, base_tick, ..
                        } = &mut self.core
                        {
                            *started = true;
                            *base = x + 1;
                            *base_tick = tick;
                        }
                        self.note_counter(i, x);
                        self.main = Clock::arm(self.k.p_s, tick, u64::MAX, rng);
                        self.events.push(ColoringEvent::CounterStart { i, counter: x + 1 });
                        return Ok(true);
                    }
                } else if Self::counter_at(base, base_tick, tick) > self.k.kappa_s as i64 {
                    let color = if self.k.mis || i > 0 {
                        i
                    } else {
                        self.leader_color_choice(tick)
                            .map_err(|e| Error::protocol(self.id, self.core_slot(tick), e.to_string()))?
                    };
                    self.enter_announce(color, tick, rng);
                    return Ok(true);
                }
            }
            Core::Request { timeout_at, .. } => {
                if tick >= timeout_at {
                    self.enter_wait(tick, false);
                    return Ok(true);
                }
            }
            Core::Announce {
                color,
                stage1_until,
                until,
            } => {
                if tick >= until {
                    self.enter_colored(color, tick, rng);
                    return Ok(true);
                }
                if tick >= stage1_until && self.main.until <= stage1_until {
                    self.main = Clock::arm(self.k.p_s, stage1_until, until, rng);
                    return Ok(true);
                }
            }
            Core::Colored { color, since } => {
                if let Some((req, _, end)) = self.current {
                    if tick >= end {
                        self.recent.insert(req, end + self.k.kappa_s);
                        self.current = None;
                        self.serve = Clock::OFF;
                        if self.resign_pending {
                            self.resign_pending = false;
                            self.queue.clear();
                            self.enter_wait(tick, false);
                        }
                        return Ok(true);
                    }
                }
                let serves = !self.k.mis && self.k.is_leader_color(color);
                if serves && self.current.is_none() && tick > since + self.k.listen_len && !self.resign_pending {
                    if let Some(req) = self.queue.pop_front() {
                        let (j, reused) = match self.reuse.get(&req) {
                            Some(&j) => (j, true),
                            None => {
                                let j = self.serve_count * self.k.request_interval;
                                self.serve_count += 1;
                                self.reuse.insert(req, j);
                                (j, false)
                            }
                        };
                        let end = tick + self.k.kappa_l;
                        self.current = Some((req, j, end));
                        self.serve = Clock::arm(self.k.p_l, tick, end, rng);
                        self.events.push(ColoringEvent::Assigned {
                            requester: req,
                            color: j,
                            reused,
                        });
                        return Ok(true);
                    }
                }
            }
        }
        Ok(false)
    }

    fn pending(done: Option<u64>, tick: u64) -> bool {
        done.is_none_or(|d| tick > d)
    }

    fn core_wakeup(&self) -> Option<u64> {
        let done = self.core_done;
        let mut best: Option<u64> = None;
        let mut consider = |t: u64| {
            if Self::pending(done, t) {
                best = Some(best.map_or(t, |b| b.min(t)));
            }
        };
        if let Some(t) = self.main.next {
            consider(t);
        }
        if let Some(t) = self.serve.next {
            consider(t);
        }
        let next_tick = done.map_or(0, |d| d + 1);
        match &self.core {
            Core::Learning => consider(self.k.learning_len),
            Core::Wait { listen_until } => consider(*listen_until),
            Core::Compete {
                listen_until,
                started,
                base,
                base_tick,
                ..
            } => {
                if *started {
                    let need = self.k.kappa_s as i64 + 1 - base;
                    consider((*base_tick as i64 + need.max(0)) as u64);
                } else {
                    consider(*listen_until);
                }
            }
            Core::Request { timeout_at, .. } => consider(*timeout_at),
            Core::Announce {
                stage1_until,
                until,
                ..
            } => {
                consider(*until);
                if self.main.until <= *stage1_until {
                    consider(*stage1_until);
                }
            }
            Core::Colored { since, color } => {
                if let Some((_, _, end)) = self.current {
                    consider(end.max(next_tick));
                } else if !self.queue.is_empty()
                    && !self.k.mis
                    && self.k.is_leader_color(*color)
                    && !self.resign_pending
                {
                    consider((since + self.k.listen_len + 1).max(next_tick));
                }
            }
        }
        best
    }

    fn learn_wakeup(&self) -> Option<u64> {
        let done = self.learn_done;
        let mut best = self.learn.next.filter(|&t| Self::pending(done, t));
        if !self.tasks.is_empty() {
            let next_tick = done.map_or(0, |d| d + 1);
            let t = self.task.map_or(next_tick, |(_, end)| end.max(next_tick));
            best = Some(best.map_or(t, |b| b.min(t)));
        }
        best
    }
}

impl Protocol for ColoringNode {
    type Message = ColoringMessage;
    type Event = ColoringEvent;

    fn step(
        &mut self,
        ctx: &StepContext,
        inbox: &[Delivery<ColoringMessage>],
        rng: &mut NodeRng,
    ) -> Result<Action<ColoringMessage>> {
        let slot = ctx.slot;
        if self.wake.is_none() {
            self.wake = Some(slot);
            self.tasks.push_back(LearnTask::Req);
        }
        let (ltick, ctick) = self.tick_time(slot);

        let mut new_in = Vec::new();
        for d in inbox {
            self.handle(d, ltick, ctick, &mut new_in, rng);
        }
        if matches!(self.core, Core::Compete { .. } | Core::Request { .. })
            && new_in
                .iter()
                .any(|w| !self.out_set.contains(w) && self.known_colored(*w, ctick).is_none())
        {
            self.enter_wait(ctick, false);
        }
        if self.force_at.is_some_and(|f| f <= slot) {
            self.force_at = None;
            if self.color().is_some() && !self.resign_pending {
                self.resign(ctick);
            }
        }
        if let Core::Wait { listen_until } = self.core {
            if ctick >= listen_until && !inbox.is_empty() {
                if let Some(next) = self.wait_test(ctick) {
                    self.apply_next(next, ctick, rng);
                }
            }
        }

        let r = slot - self.wake.expect("set above");
        let msg = if r.is_multiple_of(2) {
            if Self::pending(self.learn_done, r / 2) {
                self.learn_tick(r / 2, rng)
            } else {
                None
            }
        } else if Self::pending(self.core_done, (r - 1) / 2) {
            self.core_tick((r - 1) / 2, rng)?
        } else {
            None
        };
        Ok(match msg {
            Some(payload) => Action::Transmit {
                payload,
                power: None,
            },
            None => Action::Listen,
        })
    }

    fn next_wakeup(&self) -> Option<u64> {
        self.wake?;
        let l = self.learn_wakeup().map(|t| self.learn_slot(t));
        let c = self.core_wakeup().map(|t| self.core_slot(t));
        [l, c, self.force_at].into_iter().flatten().min()
    }

    fn transmit_probability(&self, slot: u64) -> f64 {
        let Some(wake) = self.wake else {
            return 0.0;
        };
        if slot < wake {
            return 0.0;
        }
        let r = slot - wake;
        if r.is_multiple_of(2) {
            let tick = r / 2;
            if self.task_active(tick) || !self.tasks.is_empty() {
                return self.k.p_s;
            }
            return 0.0;
        }
        let tick = (r - 1) / 2;
        match &self.core {
            Core::Learning | Core::Wait { .. } => 0.0,
            Core::Compete { listen_until, .. } => {
                if tick >= *listen_until {
                    self.k.p_s
                } else {
                    0.0
                }
            }
            Core::Request { mr_until, .. } => {
                if tick < *mr_until {
                    self.k.p_s
                } else {
                    0.0
                }
            }
            Core::Announce {
                color,
                stage1_until,
                until,
            } => {
                if tick < *stage1_until {
                    if self.k.is_leader_color(*color) {
                        self.k.p_l
                    } else {
                        self.k.p_s
                    }
                } else if tick < *until {
                    self.k.p_s
                } else {
                    0.0
                }
            }
            Core::Colored { .. } => {
                let serving = self.current.is_some_and(|(_, _, end)| tick < end);
                self.k.p_s + if serving { self.k.p_l } else { 0.0 }
            }
        }
    }

    fn is_complete(&self) -> bool {
        matches!(self.core, Core::Colored { .. }) && !self.resign_pending && self.force_at.is_none()
    }

    fn drain_events(&mut self, out: &mut Vec<ColoringEvent>) {
        out.append(&mut self.events);
    }
}
