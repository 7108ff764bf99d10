//! Physical-layer resolution of a single slot.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Network, NetworkParams, Node, NodeId};

/// One transmission in one slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transmission<M> {
    pub sender: NodeId,
    pub slot: u64,
    pub power: f64,
    pub payload: M,
}

/// Everything that happened on the channel in one slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotOutcome<M> {
    pub slot: u64,
    pub transmissions: Vec<Transmission<M>>,
    /// `(listener, index into transmissions)`.
    pub receptions: Vec<(NodeId, usize)>,
}

impl<M> SlotOutcome<M> {
    pub fn received(&self) -> impl Iterator<Item = (NodeId, &Transmission<M>)> {
        self.receptions
            .iter()
            .map(move |&(l, t)| (l, &self.transmissions[t]))
    }
}

/// Whether `sender` is decoded at `listener` with `interferers` active.
///
/// Uses the true path-loss exponent, threshold and noise.
pub fn sinr_check(
    sender: &Node,
    listener: &Node,
    interferers: &[&Node],
    params: &NetworkParams,
) -> Result<bool> {
    let gain = |from: &Node| -> Result<f64> {
        let d = from.distance_to(listener);
        if d == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "node {} coincides with listener {}",
                from.id, listener.id
            )));
        }
        Ok(d.powf(-params.alpha_true))
    };
    let signal = sender.power * gain(sender)?;
    let mut interference = 0.0;
    for u in interferers {
        interference += u.power * gain(u)?;
    }
    Ok(signal / (interference + params.noise_true) >= params.beta_true)
}

/// Path gains `d^-alpha_true` for every ordered pair, zero on the diagonal.
#[derive(Debug, Clone)]
pub(crate) struct Gains {
    n: usize,
    g: Vec<f64>,
}

impl Gains {
    pub(crate) fn new(net: &Network) -> Self {
        let n = net.len();
        let alpha = net.params().alpha_true;
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    g[i * n + j] = net.distance(i, j).powf(-alpha);
                }
            }
        }
        Gains { n, g }
    }

    #[inline]
    pub(crate) fn get(&self, from: usize, to: usize) -> f64 {
        self.g[from * self.n + to]
    }
}

/// A transmission in index space, as used by the simulation loop.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Emission {
    pub node: usize,
    /// Power counted as signal in this slot.
    pub power: f64,
}

/// Resolve receptions for indexed emissions.
///
/// `extra[l]` is additional interference at listener `l` (slot spill-over
/// from phase offsets). Returns `(listener, emission index)` pairs.
pub(crate) fn resolve_indexed(
    net: &Network,
    gains: &Gains,
    slot: u64,
    emissions: &[Emission],
    extra: Option<&[f64]>,
    out: &mut Vec<(usize, usize)>,
) {
    out.clear();
    if emissions.is_empty() {
        return;
    }
    let params = net.params();
    let mut received = vec![0.0; emissions.len()];
    for l in 0..net.len() {
        if !net.node(l).is_awake(slot) || emissions.iter().any(|e| e.node == l) {
            continue;
        }
        for (k, e) in emissions.iter().enumerate() {
            received[k] = e.power * gains.get(e.node, l);
        }
        let noise = params.noise_true + extra.map_or(0.0, |x| x[l]);
        let mut hit = None;
        let mut hits = 0;
        for k in 0..emissions.len() {
            let mut interference = 0.0;
            for (m, r) in received.iter().enumerate() {
                if m != k {
                    interference += r;
                }
            }
            if received[k] / (interference + noise) >= params.beta_true {
                hits += 1;
                hit = Some(k);
            }
        }
        // two simultaneous captures only happen for beta_true <= 1; drop both
        if hits == 1 {
            out.push((l, hit.expect("one hit")));
        }
    }
}

/// Resolve a slot given explicit transmissions.
pub fn resolve_slot<M: Clone>(
    net: &Network,
    slot: u64,
    transmissions: &[Transmission<M>],
) -> Result<SlotOutcome<M>> {
    let mut emissions = Vec::with_capacity(transmissions.len());
    for t in transmissions {
        if t.slot != slot {
            return Err(Error::InvalidArgument(format!(
                "transmission for slot {} resolved in slot {slot}",
                t.slot
            )));
        }
        let idx = net.index_of(t.sender)?;
        if !net.node(idx).is_awake(slot) {
            return Err(Error::protocol(t.sender, slot, "transmission while asleep"));
        }
        if !(t.power > 0.0) {
            return Err(Error::protocol(t.sender, slot, "non-positive transmit power"));
        }
        if emissions.iter().any(|e: &Emission| e.node == idx) {
            return Err(Error::protocol(t.sender, slot, "two transmissions in one slot"));
        }
        emissions.push(Emission {
            node: idx,
            power: t.power,
        });
    }
    let gains = Gains::new(net);
    let mut pairs = Vec::new();
    resolve_indexed(net, &gains, slot, &emissions, None, &mut pairs);
    Ok(SlotOutcome {
        slot,
        transmissions: transmissions.to_vec(),
        receptions: pairs
            .into_iter()
            .map(|(l, k)| (net.node(l).id, k))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(alpha: f64, beta: f64, noise: f64) -> NetworkParams {
        NetworkParams::exact(alpha, beta, noise, 2.0, 2.0)
    }

    #[test]
    fn sinr_examples() {
        let p = params(2.0, 2.0, 1.0);
        let s = Node::new(0, 0.0, 0.0, 10.0);
        let l = Node::new(1, 1.0, 0.0, 1.0);
        assert!(sinr_check(&s, &l, &[], &p).unwrap());
        let far = Node::new(2, 11.0, 0.0, 10.0);
        assert!(sinr_check(&s, &l, &[&far], &p).unwrap());
        let weak = Node::new(0, 0.0, 0.0, 1.0);
        assert!(!sinr_check(&weak, &l, &[], &p).unwrap());
        let clash = Node::new(3, 1.0, 0.0, 1.0);
        assert!(sinr_check(&s, &l, &[&clash], &p).is_err());
    }

    #[test]
    fn half_duplex_pair() {
        let net = Network::build(
            vec![Node::new(0, 0.0, 0.0, 4.0), Node::new(1, 1.0, 0.0, 4.0)],
            params(2.0, 1.0, 1.0),
        )
        .unwrap();
        let tx = |id| Transmission {
            sender: NodeId(id),
            slot: 0,
            power: 4.0,
            payload: (),
        };
        let out = resolve_slot(&net, 0, &[tx(0), tx(1)]).unwrap();
        assert!(out.receptions.is_empty());
        let out = resolve_slot(&net, 0, &[tx(0)]).unwrap();
        assert_eq!(out.receptions, vec![(NodeId(1), 0)]);
        let empty: Vec<Transmission<()>> = Vec::new();
        assert!(resolve_slot(&net, 0, &empty).unwrap().receptions.is_empty());
    }

    #[test]
    fn sleeping_sender_rejected() {
        let mut a = Node::new(0, 0.0, 0.0, 4.0);
        a.wake_slot = 5;
        let net = Network::build(vec![a, Node::new(1, 1.0, 0.0, 4.0)], params(2.0, 1.0, 1.0)).unwrap();
        let t = Transmission {
            sender: NodeId(0),
            slot: 2,
            power: 4.0,
            payload: (),
        };
        assert!(matches!(
            resolve_slot(&net, 2, &[t]),
            Err(Error::ProtocolViolation { .. })
        ));
    }

    #[test]
    fn equal_signals_at_midpoint_not_decoded() {
        // beta >= 1 leaves no room for two captures at one listener
        let mut p = params(2.0, 1.0, 1.0);
        p.beta_lo = 1.0;
        p.beta_true = 1.0;
        p.noise_true = 1e-9;
        p.noise_lo = 1e-9;
        let net = Network::build(
            vec![
                Node::new(0, -1.0, 0.0, 4.0),
                Node::new(1, 1.0, 0.0, 4.0),
                Node::new(2, 0.0, 0.0, 4.0),
            ],
            p,
        )
        .unwrap();
        let tx = |id| Transmission {
            sender: NodeId(id),
            slot: 0,
            power: 4.0,
            payload: (),
        };
        let out = resolve_slot(&net, 0, &[tx(0), tx(1)]).unwrap();
        assert!(out.receptions.iter().all(|&(l, _)| l != NodeId(2)));
    }
}
