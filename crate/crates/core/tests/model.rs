use proptest::prelude::*;

use sinr_core::model::{Network, NetworkParams, Node, NodeId, RingClass, TopologyFile};
use sinr_core::Error;

mod oracle {
    use super::*;

    pub fn r_max(p: f64, k: &NetworkParams) -> f64 {
        (p / (k.noise_hi * k.beta_hi)).powf(1.0 / k.alpha_hi)
    }

    pub fn r_b(p: f64, k: &NetworkParams) -> f64 {
        (p / (k.delta * k.noise_hi * k.beta_hi)).powf(1.0 / k.alpha_lo)
    }

    fn d(a: &Node, b: &Node) -> f64 {
        ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
    }

    pub fn edge(nodes: &[Node], k: &NetworkParams, a: usize, b: usize) -> bool {
        a != b && d(&nodes[a], &nodes[b]) <= r_b(nodes[a].power, k)
    }

    pub fn delta(nodes: &[Node], k: &NetworkParams) -> usize {
        (0..nodes.len())
            .map(|v| {
                (0..nodes.len())
                    .filter(|&w| w != v && d(&nodes[v], &nodes[w]) <= r_max(nodes[v].power, k))
                    .count()
            })
            .max()
            .unwrap()
    }

    /// All maximal unidirectional paths, by exhaustive DFS over simple paths.
    pub fn uni_paths(nodes: &[Node], k: &NetworkParams) -> Vec<Vec<usize>> {
        let n = nodes.len();
        let uni = |a: usize, b: usize| edge(nodes, k, a, b) && !edge(nodes, k, b, a);
        let mut out = Vec::new();
        fn dfs(path: &mut Vec<usize>, n: usize, uni: &dyn Fn(usize, usize) -> bool, out: &mut Vec<Vec<usize>>) {
            let last = *path.last().unwrap();
            let mut extended = false;
            for w in 0..n {
                if !path.contains(&w) && uni(last, w) {
                    extended = true;
                    path.push(w);
                    dfs(path, n, uni, out);
                    path.pop();
                }
            }
            if !extended {
                out.push(path.clone());
            }
        }
        for s in 0..n {
            dfs(&mut vec![s], n, &uni, &mut out);
        }
        out
    }

    pub fn ring(dist: f64, r: f64) -> RingClass {
        if dist < 3.0 * r {
            return RingClass::Proximity;
        }
        let mut i = 2u32;
        loop {
            if (f64::from(i) + 1.0) * r <= dist && dist <= (f64::from(i) + 2.0) * r {
                return RingClass::Ring(i);
            }
            i += 1;
        }
    }
}

fn params_strategy() -> impl Strategy<Value = NetworkParams> {
    (2.0..4.0f64, 1.0..2.0f64, 0.5..2.0f64, 1.2..3.0f64).prop_map(|(a, b, n, d)| NetworkParams::exact(a, b, n, d, 2.0))
}

fn nodes_strategy(max_n: usize) -> impl Strategy<Value = Vec<Node>> {
    prop::collection::vec((0.0..6.0f64, 0.0..6.0f64, 1.0..16.0f64), 1..=max_n).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (x, y, p))| Node::new(i as u32, x, y, p))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn structure_matches_brute_force(nodes in nodes_strategy(12), k in params_strategy()) {
        let net = match Network::build(nodes.clone(), k) {
            Ok(n) => n,
            Err(Error::CoincidentNodes(..)) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        prop_assert_eq!(net.delta_max(), oracle::delta(&nodes, &k));
        let rm: Vec<f64> = nodes.iter().map(|n| oracle::r_max(n.power, &k)).collect();
        let hi = rm.iter().cloned().fold(f64::MIN, f64::max);
        let lo = rm.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!((net.gamma_ratio() - hi / lo).abs() <= 1e-12 * hi / lo);
        prop_assert!(net.gamma_ratio() >= 1.0);
        for a in 0..nodes.len() {
            prop_assert!(net.r_bcast(a) <= net.r_max(a));
            for b in 0..nodes.len() {
                prop_assert_eq!(net.has_edge(a, b), oracle::edge(&nodes, &k, a, b));
            }
        }
        let paths = oracle::uni_paths(&nodes, &k);
        let ell = paths.iter().map(|p| p.len() - 1).max().unwrap_or(0);
        prop_assert_eq!(net.ell(), ell);
        prop_assert_eq!(net.longest_directed_path().unwrap(), ell);
        // ranges shrink along unidirectional paths
        for p in &paths {
            for w in p.windows(2) {
                prop_assert!(rm[w[0]] >= rm[w[1]]);
            }
        }
    }

    #[test]
    fn ring_index_matches_definition(nodes in nodes_strategy(12), k in params_strategy()) {
        let Ok(net) = Network::build(nodes, k) else { return Ok(()); };
        let r = net.r_max_global();
        for a in 0..net.len() {
            for b in 0..net.len() {
                if a != b {
                    prop_assert_eq!(net.ring_index(a, b).unwrap(), oracle::ring(net.distance(a, b), r));
                }
            }
        }
    }

    #[test]
    fn topology_round_trip(nodes in nodes_strategy(10), k in params_strategy()) {
        let Ok(net) = Network::build(nodes, k) else { return Ok(()); };
        let file = net.to_topology();
        let back = TopologyFile::from_json(&file.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &file);
        let again = back.build().unwrap();
        prop_assert_eq!(again.nodes(), net.nodes());
    }
}

#[test]
fn ring_boundary_takes_smaller_index() {
    let k = NetworkParams::exact(3.0, 1.0, 1.0, 2.0, 2.0);
    // both nodes have r_max 1
    let nodes = vec![Node::new(0, 0.0, 0.0, 1.0), Node::new(1, 4.0, 0.0, 1.0), Node::new(2, 3.5, 0.1, 1.0)];
    let net = Network::build(nodes, k).unwrap();
    assert_eq!(net.ring_index(0, 1).unwrap(), RingClass::Ring(2));
    assert_eq!(net.ring_index(0, 2).unwrap(), RingClass::Ring(2));
}

#[test]
fn three_node_decreasing_chain() {
    let k = NetworkParams::exact(2.0, 1.0, 1.0, 2.0, 2.0);
    // ranges 4, 2, 1: each reaches only its successor
    let nodes = vec![
        Node::new(0, 0.0, 0.0, 32.0),
        Node::new(1, 3.0, 0.0, 8.0),
        Node::new(2, 4.5, 0.0, 2.0),
    ];
    let net = Network::build(nodes, k).unwrap();
    assert!(net.is_unidirectional(0, 1));
    assert!(net.is_unidirectional(1, 2));
    assert_eq!(net.ell(), 2);
}

#[test]
fn duplicate_and_unknown_ids() {
    let k = NetworkParams::exact(2.0, 1.0, 1.0, 2.0, 2.0);
    let dup = Network::build(vec![Node::new(3, 0.0, 0.0, 1.0), Node::new(3, 1.0, 0.0, 1.0)], k);
    assert!(matches!(dup, Err(Error::DuplicateId(NodeId(3)))));
    let net = Network::build(vec![Node::new(0, 0.0, 0.0, 1.0)], k).unwrap();
    assert!(matches!(net.index_of(NodeId(9)), Err(Error::UnknownNode(_))));
}
