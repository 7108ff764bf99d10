use proptest::prelude::*;

use sinr_core::broadcast::{
    per_slot_success, verify_local_broadcast, BroadcastSetup, FixedProbBroadcaster, PowerSchedule, ReceptionLog,
    SlowStartBroadcaster, SlowStartConfig, SlowStartPlan, Token,
};
use sinr_core::engine::{node_rng, run_simulation, Action, Delivery, Protocol, SimConfig};
use sinr_core::harness::{default_params, generate_topology, TopologySpec};
use sinr_core::model::{Network, NetworkParams, Node, NodeId};

fn pair(p0: f64, p1: f64, d: f64) -> Network {
    Network::build(
        vec![Node::new(0, 0.0, 0.0, p0), Node::new(1, d, 0.0, p1)],
        NetworkParams::exact(2.0, 1.0, 1.0, 2.0, 2.0),
    )
    .unwrap()
}

#[test]
fn pair_reception_rate() {
    // alone in the plane each slot decodes iff exactly one side transmits
    let net = pair(4.0, 4.0, 1.0);
    let p = 0.3;
    let slots = 20_000;
    let (trace, _) = run_simulation(
        &net,
        |_, n| FixedProbBroadcaster::new(n.id, p, slots),
        SimConfig::new(slots, 11),
    )
    .unwrap();
    let log = ReceptionLog::from_trace(&trace);
    let (hits, total) = per_slot_success(&log, NodeId(0), NodeId(1), (0, slots));
    let expect = p * (1.0 - p);
    let sd = (expect * (1.0 - expect) / total as f64).sqrt();
    let rate = hits as f64 / total as f64;
    assert!((rate - expect).abs() < 5.0 * sd, "rate {rate} expected {expect}");
}

#[test]
fn verifier_cases() {
    // 0 reaches 1 but not the other way round
    let net = pair(16.0, 1.0, 2.0);
    assert!(net.has_edge(0, 1) && !net.has_edge(1, 0));
    let (trace, _) = run_simulation(
        &net,
        |_, n| FixedProbBroadcaster::new(n.id, 0.5, 200),
        SimConfig::new(200, 3),
    )
    .unwrap();
    assert!(verify_local_broadcast(&trace, &net, NodeId(0), (0, 200)).unwrap());
    // nobody in range of 1
    assert!(verify_local_broadcast(&trace, &net, NodeId(1), (0, 200)).unwrap());
    // an empty window hears nothing
    assert!(!verify_local_broadcast(&trace, &net, NodeId(0), (0, 0)).unwrap());
    assert!(verify_local_broadcast(&trace, &net, NodeId(7), (0, 1)).is_err());

    // a receiver that sleeps through part of the window is not owed delivery
    let mut nodes = net.nodes().to_vec();
    nodes[1].sleep_slot = Some(5);
    let sleepy = Network::build(nodes, *net.params()).unwrap();
    let (trace, _) = run_simulation(
        &sleepy,
        |_, n| FixedProbBroadcaster::new(n.id, 0.0001, 10),
        SimConfig::new(10, 3),
    )
    .unwrap();
    assert!(verify_local_broadcast(&trace, &sleepy, NodeId(0), (0, 10)).unwrap());
}

#[test]
fn two_level_counts_by_hand() {
    // period 4, two high slots: over [2, 13) the powers are
    // 2:lo 3:lo 4:hi 5:hi 6:lo 7:lo 8:hi 9:hi 10:lo 11:lo 12:hi
    let s = PowerSchedule::TwoLevel {
        low: 2.0,
        high: 8.0,
        period: 4,
        high_slots: 2,
    };
    let t = s.trace(NodeId(0), 2, 13).unwrap();
    assert_eq!(t.levels(), vec![0.0, 2.0, 8.0]);
    assert_eq!(t.counts(), vec![11, 11, 5]);
    assert_eq!(t.len(), 11);
}

fn inbox(slot: u64) -> Vec<Delivery<Token>> {
    vec![Delivery {
        sender: NodeId(9),
        slot,
        payload: Token(NodeId(9)),
    }]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Probability stays within `[p_init, gamma/16]` whatever is heard,
    /// doubles at phase boundaries and halves on receptions.
    #[test]
    fn slowstart_probability_stays_capped(
        n in 2usize..64,
        seed in any::<u64>(),
        hear in prop::collection::vec(prop::bool::weighted(0.05), 3000),
    ) {
        let net = generate_topology(&TopologySpec::Clique { n, power: 8.0 }, &default_params(2.0), 0).unwrap();
        let setup = BroadcastSetup::from_network(&net);
        let plan = SlowStartPlan::new(&setup, &SlowStartConfig::default());
        prop_assert!((plan.p_cap - setup.gamma / 16.0).abs() < 1e-15);
        let mut b = SlowStartBroadcaster::new(NodeId(0), plan);
        let mut rng = node_rng(seed, NodeId(0));
        let mut prev = plan.p_init;
        for (s, &h) in hear.iter().enumerate() {
            let s = s as u64;
            let msgs = if h { inbox(s) } else { Vec::new() };
            let a = b.slowstart_step(s, &msgs, &mut rng).unwrap();
            let p = b.current_probability();
            prop_assert!(p >= plan.p_init * (1.0 - 1e-12));
            prop_assert!(p <= plan.p_cap);
            prop_assert!(b.peak_probability() <= plan.p_cap);
            if h && !b.is_complete() && s > 0 && !s.is_multiple_of(plan.phase_len) {
                prop_assert!(p == (prev / 2.0).max(plan.p_init));
            }
            if b.is_complete() {
                prop_assert!(matches!(a, Action::Listen));
            }
            prev = p;
        }
    }
}

#[test]
fn slowstart_silence_doubles_each_phase() {
    let net = generate_topology(&TopologySpec::Clique { n: 8, power: 8.0 }, &default_params(2.0), 0).unwrap();
    let setup = BroadcastSetup::from_network(&net);
    let plan = SlowStartPlan::new(&setup, &SlowStartConfig::default());
    let mut b = SlowStartBroadcaster::new(NodeId(0), plan);
    let mut rng = node_rng(0, NodeId(0));
    b.slowstart_step(0, &[], &mut rng).unwrap();
    for k in 1..=3u64 {
        b.slowstart_step(k * plan.phase_len, &[], &mut rng).unwrap();
        let expect = (plan.p_init * 2f64.powi(k as i32)).min(plan.p_cap);
        assert!((b.current_probability() - expect).abs() < 1e-15);
    }
}
