//! Slotted physical layer and the simulation loop.
//!
//! Each node runs a [`Protocol`] state machine. The loop delivers the
//! previous slot's receptions, steps the nodes, resolves the SINR outcome of
//! the slot and records it. By default only nodes with something to do are
//! stepped (wake-up, pending inbox or a self-scheduled wakeup) and empty
//! stretches of slots are skipped; [`Stepping::Dense`] steps every awake node
//! in every slot and must produce the same trace.

mod physical;
mod sim;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::NodeId;

pub use physical::{resolve_slot, sinr_check, SlotOutcome, Transmission};
pub use sim::{
    run_simulation, SafetyReport, SimConfig, SimTrace, Simulation, Stepping, TraceMode,
    TraceRecord,
};

/// Per-node random stream.
pub type NodeRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream for `node` under `root`, unaffected by other nodes.
pub fn node_rng(root: u64, node: NodeId) -> NodeRng {
    NodeRng::seed_from_u64(splitmix64(root ^ splitmix64(u64::from(node.0) + 1)))
}

/// Short label of a message variant, used in trace export and filtering.
pub trait MessageKind {
    fn kind(&self) -> &'static str;
}

impl MessageKind for () {
    fn kind(&self) -> &'static str {
        "unit"
    }
}

/// A message delivered to a node, stamped with the slot it was received in.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery<M> {
    pub sender: NodeId,
    pub slot: u64,
    pub payload: M,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action<M> {
    Listen,
    /// `power: None` uses the node's configured power.
    Transmit { payload: M, power: Option<f64> },
}

/// What the engine tells a node when stepping it.
#[derive(Debug, Clone, Copy)]
pub struct StepContext {
    pub slot: u64,
    pub node: NodeId,
    pub wake_slot: u64,
}

/// A per-node state machine.
///
/// Contract with the loop:
/// - `step` may be called in any slot where the node is awake; when nothing is
///   due and the inbox is empty it must return `Listen` and leave the state
///   unchanged, so that skipping such slots is invisible.
/// - `next_wakeup` names the next slot where something is due.
/// - `transmit_probability` only changes inside `step`, apart from any
///   dependence on the slot itself.
pub trait Protocol {
    type Message: Clone + fmt::Debug + MessageKind;
    type Event: Clone + fmt::Debug;

    fn step(
        &mut self,
        ctx: &StepContext,
        inbox: &[Delivery<Self::Message>],
        rng: &mut NodeRng,
    ) -> Result<Action<Self::Message>>;

    fn next_wakeup(&self) -> Option<u64>;

    fn transmit_probability(&self, slot: u64) -> f64;

    fn is_complete(&self) -> bool;

    fn drain_events(&mut self, _out: &mut Vec<Self::Event>) {}
}

/// Draw the number of failures before the first success at probability `p`.
///
/// Returns `None` when `p <= 0`, so the caller never transmits.
pub fn geometric_gap(p: f64, rng: &mut NodeRng) -> Option<u64> {
    use rand::distr::Distribution;
    if !(p > 0.0) {
        return None;
    }
    if p >= 1.0 {
        return Some(0);
    }
    let g = rand_distr::Geometric::new(p).expect("p in (0, 1)");
    Some(g.sample(rng))
}
