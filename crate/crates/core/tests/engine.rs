use std::collections::BTreeSet;

use proptest::prelude::*;

use sinr_core::broadcast::{BroadcastSetup, FixedProbBroadcaster};
use sinr_core::coloring::{ColoringConstants, ColoringNode};
use sinr_core::engine::{
    geometric_gap, node_rng, resolve_slot, run_simulation, SimConfig, Stepping, TraceMode, Transmission,
};
use sinr_core::harness::{default_params, generate_topology, TopologySpec};
use sinr_core::model::{Network, NetworkParams, Node, NodeId};

/// Decoded `(listener, transmission)` pairs straight from the SINR formula.
fn oracle(net: &Network, senders: &[(usize, f64)]) -> BTreeSet<(u32, usize)> {
    let k = net.params();
    let mut out = BTreeSet::new();
    for l in 0..net.len() {
        if senders.iter().any(|&(s, _)| s == l) {
            continue;
        }
        let rx = |&(s, p): &(usize, f64)| p / net.distance(s, l).powf(k.alpha_true);
        let total: f64 = senders.iter().map(rx).sum();
        let decoded: Vec<usize> = senders
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                let sig = rx(t);
                sig / (total - sig + k.noise_true) >= k.beta_true
            })
            .map(|(i, _)| i)
            .collect();
        if decoded.len() == 1 {
            out.insert((net.node(l).id.0, decoded[0]));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn resolution_matches_sinr_formula(
        pts in prop::collection::vec((0.0..5.0f64, 0.0..5.0f64, 1.0..10.0f64), 2..10),
        mask in prop::collection::vec(any::<bool>(), 10),
        boost in prop::collection::vec(1.0..2.0f64, 10),
    ) {
        let nodes: Vec<Node> = pts.iter().enumerate().map(|(i, &(x, y, p))| Node::new(i as u32, x, y, p)).collect();
        let Ok(net) = Network::build(nodes, NetworkParams::exact(3.0, 1.0, 0.5, 2.0, 2.0)) else { return Ok(()); };
        let senders: Vec<(usize, f64)> = (0..net.len())
            .filter(|&i| mask[i])
            .map(|i| (i, net.node(i).power * boost[i]))
            .collect();
        let txs: Vec<Transmission<()>> = senders
            .iter()
            .map(|&(i, p)| Transmission { sender: net.node(i).id, slot: 5, power: p, payload: () })
            .collect();
        let got: BTreeSet<(u32, usize)> = resolve_slot(&net, 5, &txs).unwrap().receptions.iter().map(|&(l, t)| (l.0, t)).collect();
        prop_assert_eq!(got, oracle(&net, &senders));
    }

    #[test]
    fn geometric_gap_is_nonnegative_and_seeded(p in 0.001..1.0f64, seed in any::<u64>()) {
        let mut a = node_rng(seed, NodeId(1));
        let mut b = node_rng(seed, NodeId(1));
        for _ in 0..20 {
            let x = geometric_gap(p, &mut a);
            prop_assert!(x.is_some());
            prop_assert_eq!(x, geometric_gap(p, &mut b));
        }
    }
}

#[test]
fn broadcast_sparse_equals_dense() {
    let net = generate_topology(
        &"random:n=12,side=3,pmin=1,pmax=8".parse::<TopologySpec>().unwrap(),
        &default_params(2.0),
        5,
    )
    .unwrap();
    let setup = BroadcastSetup::from_network(&net);
    for seed in 0..3 {
        let run = |stepping| {
            let mut cfg = SimConfig::new(setup.fixed_budget() + 1, seed);
            cfg.stepping = stepping;
            cfg.trace = TraceMode::Full;
            let (t, _) = run_simulation(&net, |_, n| FixedProbBroadcaster::from_setup(n.id, &setup), cfg).unwrap();
            let mut lines = Vec::new();
            t.write_lines(&mut lines).unwrap();
            lines
        };
        assert_eq!(run(Stepping::Sparse), run(Stepping::Dense));
    }
}

#[test]
fn coloring_sparse_equals_dense() {
    let k = NetworkParams::exact(3.0, 1.0, 1.0, 2.0, 2.0);
    // two hear each other, the third hears only the first
    let net = Network::build(
        vec![
            Node::new(0, 0.0, 0.0, 16.0),
            Node::new(1, 0.5, 0.0, 16.0),
            Node::new(2, -1.8, 0.0, 2.0),
        ],
        k,
    )
    .unwrap();
    let consts = ColoringConstants::from_network(&net, false);
    let run = |stepping| {
        let mut cfg = SimConfig::new(consts.termination_budget(net.ell()), 9);
        cfg.stepping = stepping;
        cfg.trace = TraceMode::Full;
        cfg.stop_when_complete = true;
        let (t, nodes) = run_simulation(&net, |_, n| Ok(ColoringNode::new(n.id, consts)), cfg).unwrap();
        let mut lines = Vec::new();
        t.write_lines(&mut lines).unwrap();
        (lines, format!("{:?}", t.events), nodes.iter().map(|n| n.color()).collect::<Vec<_>>())
    };
    let sparse = run(Stepping::Sparse);
    assert!(sparse.2.iter().all(Option::is_some));
    assert_eq!(sparse, run(Stepping::Dense));
}

#[test]
fn zero_phase_offsets_change_nothing() {
    let net = generate_topology(&"clique:n=6".parse::<TopologySpec>().unwrap(), &default_params(2.0), 0).unwrap();
    let setup = BroadcastSetup::from_network(&net);
    let run = |offsets: Option<Vec<f64>>| {
        let mut cfg = SimConfig::new(setup.fixed_budget(), 4);
        cfg.phase_offsets = offsets;
        let (t, _) = run_simulation(&net, |_, n| FixedProbBroadcaster::from_setup(n.id, &setup), cfg).unwrap();
        (t.transmission_count, t.reception_count)
    };
    assert_eq!(run(None), run(Some(vec![0.0; 6])));
    let mut bad = SimConfig::new(10, 0);
    bad.phase_offsets = Some(vec![1.0; 6]);
    assert!(run_simulation(&net, |_, n| FixedProbBroadcaster::from_setup(n.id, &setup), bad).is_err());
}

#[test]
fn same_seed_same_trace() {
    let net = generate_topology(&"clique:n=5".parse::<TopologySpec>().unwrap(), &default_params(2.0), 0).unwrap();
    let setup = BroadcastSetup::from_network(&net);
    let lines = |seed| {
        let mut cfg = SimConfig::new(setup.fixed_budget(), seed);
        cfg.trace = TraceMode::Full;
        let (t, _) = run_simulation(&net, |_, n| FixedProbBroadcaster::from_setup(n.id, &setup), cfg).unwrap();
        let mut out = Vec::new();
        t.write_lines(&mut out).unwrap();
        out
    };
    assert_eq!(lines(3), lines(3));
    assert_ne!(lines(3), lines(4));
}
