//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use budgetcast::sim::{draw_population, RETRY_DELAY};
use budgetcast::{Forest, ForestSnapshot, Overlay, PeerId, PeerSnapshot, ScenarioConfig};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Builds a forest from `(budget, balance, per-tree parent)` rows. Row `k`
/// becomes peer `k + 1`; the server gets `server_budget`.
pub fn forest_from_rows(num_trees: usize, server_budget: u32, rows: &[(u32, i64, Vec<Option<u32>>)]) -> Forest {
    let mut peers = BTreeMap::new();
    peers.insert(
        PeerId::SERVER,
        PeerSnapshot { budget: server_budget, balance: server_budget as i64, parents: vec![None; num_trees] },
    );
    for (k, (budget, balance, parents)) in rows.iter().enumerate() {
        assert_eq!(parents.len(), num_trees);
        peers.insert(
            PeerId(k as u32 + 1),
            PeerSnapshot {
                budget: *budget,
                balance: *balance,
                parents: parents.iter().map(|p| p.map(PeerId)).collect(),
            },
        );
    }
    let forest = Forest::from_snapshot(&ForestSnapshot { num_trees, donations: 0, peers }).unwrap();
    forest.validate().expect("fixture must be a valid forest");
    forest
}

/// Named peers of the four-peer join example.
pub struct Golden {
    pub overlay: Overlay,
    pub joiner: PeerId,
    pub a: PeerId,
    pub b: PeerId,
    pub c: PeerId,
    pub d: PeerId,
}

/// Four trees, budget 4 everywhere that matters. Prices of the neighbors:
/// `a` and `d` have `(2, 3, 1, 1)` (dominant tree 1, one child in tree 0),
/// `b` is saturated in tree 3 and `c` in tree 2. Helper peers `y` and `y2`
/// feed `a` and `b` in trees 2 and 3 so that `d` is the shallowest seller
/// there.
pub fn golden() -> Golden {
    const S: Option<u32> = Some(0);
    let (a, b, c, d, y, y2) = (1u32, 2, 3, 4, 5, 6);
    let mut rows: Vec<(u32, i64, Vec<Option<u32>>)> = vec![
        (4, 1, vec![S, S, Some(y), Some(y2)]),
        (4, 0, vec![S, S, Some(y), S]),
        (4, 0, vec![S, S, S, S]),
        (4, 1, vec![S, S, S, S]),
        (2, 0, vec![None, None, S, None]),
        (1, 0, vec![None, None, None, S]),
    ];
    let mut leaf = |tree: usize, parent: u32| {
        let mut parents = vec![None; 4];
        parents[tree] = Some(parent);
        rows.push((0, 0, parents));
    };
    leaf(0, a);
    leaf(0, d);
    for _ in 0..2 {
        leaf(1, a);
        leaf(1, d);
    }
    for _ in 0..4 {
        leaf(2, c);
        leaf(3, b);
    }
    rows.push((4, 4, vec![None; 4]));
    let joiner = PeerId(rows.len() as u32);
    let forest = forest_from_rows(4, 15, &rows);
    Golden {
        overlay: Overlay::new(forest),
        joiner,
        a: PeerId(a),
        b: PeerId(b),
        c: PeerId(c),
        d: PeerId(d),
    }
}

/// Broadcast capacity by linear programming: choose edge rates within each
/// node's upload capacity so that every receiver gets rate `r` from the
/// server as a flow; maximize `r`.
pub fn lp_max_rate(server: f64, peers: &[f64]) -> f64 {
    let caps: Vec<f64> = std::iter::once(server).chain(peers.iter().copied()).collect();
    let nodes = caps.len();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let r = lp.add_var(1.0, (0.0, f64::INFINITY));
    let edges: Vec<(usize, usize)> =
        (0..nodes).flat_map(|u| (1..nodes).filter(move |&v| v != u).map(move |v| (u, v))).collect();
    let x: Vec<_> = edges.iter().map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
    for (u, &cap) in caps.iter().enumerate() {
        let out: Vec<_> = edges.iter().zip(&x).filter(|(e, _)| e.0 == u).map(|(_, &v)| (v, 1.0)).collect();
        if !out.is_empty() {
            lp.add_constraint(out.as_slice(), ComparisonOp::Le, cap);
        }
    }
    for t in 1..nodes {
        let f: Vec<_> = edges.iter().map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
        for (&fe, &xe) in f.iter().zip(&x) {
            lp.add_constraint([(fe, 1.0), (xe, -1.0)], ComparisonOp::Le, 0.0);
        }
        for w in 1..nodes {
            let mut expr: Vec<_> = Vec::new();
            for (e, &fe) in edges.iter().zip(&f) {
                if e.1 == w {
                    expr.push((fe, 1.0));
                }
                if e.0 == w {
                    expr.push((fe, -1.0));
                }
            }
            if w == t {
                expr.push((r, -1.0));
            }
            lp.add_constraint(expr.as_slice(), ComparisonOp::Eq, 0.0);
        }
    }
    lp.solve().expect("broadcast LP is always feasible").objective()
}

/// Every multiset of `n` capacities drawn from `0..=max_cap`.
pub fn capacity_multisets(n: usize, max_cap: u32) -> Vec<Vec<u32>> {
    fn rec(n: usize, lo: u32, max_cap: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for c in lo..=max_cap {
            cur.push(c);
            rec(n, c, max_cap, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, 0, max_cap, &mut Vec::new(), &mut out);
    out
}

/// Explicit optimal forest with one server slot per tree: tree `k` is a
/// breadth-first `fanout`-ary tree over the peers rotated by `k` blocks, so
/// interior sets barely overlap. Budgets are left loose: only the level
/// structure matters here.
pub fn build_optimal_forest(n: usize, fanout: usize) -> Forest {
    let block = n.div_ceil(fanout);
    let budget = (fanout * fanout) as u32;
    let mut rows: Vec<(u32, i64, Vec<Option<u32>>)> = vec![(budget, 0, vec![None; fanout]); n];
    for tree in 0..fanout {
        let order: Vec<usize> = (0..n).map(|i| (i + tree * block) % n).collect();
        for (pos, &peer) in order.iter().enumerate() {
            let parent = if pos == 0 { 0 } else { order[(pos - 1) / fanout] as u32 + 1 };
            rows[peer].2[tree] = Some(parent);
        }
    }
    forest_from_rows(fanout, fanout as u32, &rows)
}

/// Peers with at least one child, per hop level, summed over all trees.
pub fn uploaders_by_level(forest: &Forest) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::new();
    for id in forest.peer_ids() {
        for tree in 0..forest.num_trees() {
            if forest.children(id, tree).unwrap().is_empty() {
                continue;
            }
            let l = forest.hop_count(id, tree).unwrap() as usize;
            if counts.len() < l {
                counts.resize(l, 0);
            }
            counts[l - 1] += 1;
        }
    }
    counts
}

pub fn forest_avg_hop(forest: &Forest) -> f64 {
    let ids: Vec<PeerId> = forest.peer_ids().collect();
    ids.iter().map(|&id| forest.average_hop_count(id).unwrap()).sum::<f64>() / ids.len() as f64
}

/// Incomplete peers of the run's join order and single delayed retry under
/// an idealized fluid model: any spare slot serves any tree, a joiner covers
/// up to `budget` trees by inserting itself into a position, and each
/// remaining tree takes a spare slot owned by someone else.
pub fn capacity_bound_incomplete(config: &ScenarioConfig) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (budgets, order) = draw_population(config, &mut rng);
    let trees = config.num_substreams as i64;
    let mut pool = config.server_budget as i64;
    let mut missing = vec![0i64; config.n + 1];
    let mut queue: VecDeque<PeerId> = order.into();
    let mut retries: VecDeque<(usize, PeerId)> = VecDeque::new();
    let mut processed = 0usize;
    let mut incomplete = 0usize;
    loop {
        let due = retries.front().is_some_and(|&(at, _)| at <= processed);
        let (peer, retry) = if due || queue.is_empty() {
            match retries.pop_front() {
                Some((_, p)) => (p, true),
                None => break,
            }
        } else {
            (queue.pop_front().unwrap(), false)
        };
        processed += 1;
        let idx = peer.0 as usize;
        let mut surplus = 0;
        if !retry {
            let budget = budgets[idx - 1] as i64;
            let inserted = budget.min(trees);
            surplus = budget - inserted;
            missing[idx] = trees - inserted;
        }
        let taken = missing[idx].min(pool);
        pool += surplus - taken;
        missing[idx] -= taken;
        if missing[idx] > 0 {
            if retry {
                incomplete += 1;
            } else {
                retries.push_back((processed + RETRY_DELAY, peer));
            }
        }
    }
    incomplete
}
