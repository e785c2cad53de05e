//! Closed-form capacity and optimality bounds.
//!
//! All capacities are in sub-stream units. The optimal forest is the
//! homogeneous one where every peer uploads `N` sub-stream copies and each
//! tree is a complete `N`-ary tree hanging from the server.

use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::scenario::ScenarioConfig;

/// Upper bound on the streaming rate: the server cannot push more than its
/// own capacity, and the whole system cannot deliver more than the total
/// capacity shared among `n` receivers.
pub fn max_streaming_rate(server_capacity: f64, peer_capacities: &[f64]) -> Result<f64, AnalysisError> {
    if peer_capacities.is_empty() {
        return Err(AnalysisError::DegenerateInput("no peers"));
    }
    if server_capacity < 0.0 || peer_capacities.iter().any(|&u| u < 0.0) {
        return Err(AnalysisError::DegenerateInput("negative capacity"));
    }
    let total = server_capacity + peer_capacities.iter().sum::<f64>();
    Ok(server_capacity.min(total / peer_capacities.len() as f64))
}

/// Available capacity over demand, `(u_s + n * sum f_c m_c) / (N * n)`.
pub fn resource_index(config: &ScenarioConfig) -> f64 {
    let n = config.n as f64;
    let mean_budget: f64 = config.peer_classes.iter().map(|c| c.fraction * c.budget as f64).sum();
    (config.server_budget as f64 + n * mean_budget) / (config.stream_rate() * n)
}

/// Smallest `d` such that a complete `N`-ary tree of depth `d` holds `n`
/// peers. Fan-out below 2 degenerates to a chain.
pub fn optimal_depth(n: usize, fanout: usize) -> u32 {
    if fanout < 2 {
        return n as u32;
    }
    let mut d = 0u32;
    let mut capacity = 0usize;
    let mut level = 1usize;
    while capacity < n {
        capacity = capacity.saturating_add(level);
        level = level.saturating_mul(fanout);
        d += 1;
    }
    d
}

/// `sum_{i=1..l} N^(i-1)`, saturating.
fn geometric_sum(fanout: usize, l: u32) -> usize {
    let mut sum = 0usize;
    let mut term = 1usize;
    for _ in 0..l {
        sum = sum.saturating_add(term);
        term = term.saturating_mul(fanout);
    }
    sum
}

/// Uploaders at level `l` across all `N` trees of the optimal forest with
/// one server slot per tree:
/// `N * min(N^(l-1), ceil((n - sum_{i=1..l} N^(i-1)) / N))`.
pub fn optimal_uploaders_per_level(n: usize, fanout: usize, l: u32) -> usize {
    if l < 1 || fanout == 0 || l > optimal_depth(n, fanout) {
        return 0;
    }
    let placed = geometric_sum(fanout, l);
    let rest = n.saturating_sub(placed);
    let width = fanout.saturating_pow(l - 1);
    fanout * width.min(rest.div_ceil(fanout))
}

/// Mean hop-count over all peers and trees of the optimal forest.
pub fn optimal_avg_hop(n: usize, fanout: usize, server_slots: usize) -> f64 {
    OptimalForest::new(n, fanout, server_slots).average_hop()
}

/// Level occupancy of an optimal forest, built level by level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimalForest {
    pub n: usize,
    pub fanout: usize,
    pub server_slots: usize,
    /// Server slots heading each tree.
    pub heads: Vec<usize>,
    /// `levels[k][l - 1]` peers at hop `l` in tree `k`.
    pub levels: Vec<Vec<usize>>,
}

impl OptimalForest {
    /// Server slots are dealt to trees round-robin. A tree left without a
    /// slot (fewer slots than trees) shares a head with the others, so it
    /// still gets one.
    pub fn new(n: usize, fanout: usize, server_slots: usize) -> Self {
        let trees = fanout.max(1);
        let mut heads = vec![0usize; trees];
        for slot in 0..server_slots {
            heads[slot % trees] += 1;
        }
        for h in &mut heads {
            *h = (*h).max(1);
        }
        let levels = heads
            .iter()
            .map(|&h| {
                let mut occ = Vec::new();
                let mut left = n;
                let mut width = h;
                while left > 0 {
                    let here = width.min(left);
                    occ.push(here);
                    left -= here;
                    width = width.saturating_mul(fanout);
                }
                occ
            })
            .collect();
        OptimalForest { n, fanout, server_slots, heads, levels }
    }

    pub fn depth(&self) -> u32 {
        self.levels.iter().map(|t| t.len()).max().unwrap_or(0) as u32
    }

    /// Peers with at least one child, per level (index 0 is hop 1), summed
    /// over all trees. Children are packed left to right.
    pub fn uploaders_per_level(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.depth() as usize];
        for tree in &self.levels {
            for (l, &occ) in tree.iter().enumerate() {
                let below = tree.get(l + 1).copied().unwrap_or(0);
                counts[l] += occ.min(below.div_ceil(self.fanout.max(1)));
            }
        }
        counts
    }

    pub fn average_hop(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let total: usize = self
            .levels
            .iter()
            .flat_map(|t| t.iter().enumerate().map(|(l, &occ)| (l + 1) * occ))
            .sum();
        total as f64 / (self.n * self.levels.len()) as f64
    }
}

/// Every bound for one scenario, as printed by the `analyze` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub scenario: String,
    pub n: usize,
    pub num_substreams: usize,
    pub server_budget: u32,
    pub resource_index: f64,
    /// In sub-stream units; full quality needs `num_substreams`.
    pub max_streaming_rate: f64,
    pub optimal_depth: u32,
    pub optimal_avg_hop: f64,
    pub optimal_uploaders_per_level: Vec<usize>,
}

pub fn analyze(config: &ScenarioConfig) -> Result<AnalysisReport, AnalysisError> {
    let capacities: Vec<f64> = config.budgets().into_iter().map(f64::from).collect();
    let forest = OptimalForest::new(config.n, config.num_substreams, config.server_budget as usize);
    Ok(AnalysisReport {
        scenario: config.name.clone(),
        n: config.n,
        num_substreams: config.num_substreams,
        server_budget: config.server_budget,
        resource_index: resource_index(config),
        max_streaming_rate: max_streaming_rate(config.server_budget as f64, &capacities)?,
        optimal_depth: forest.depth(),
        optimal_avg_hop: forest.average_hop(),
        optimal_uploaders_per_level: forest.uploaders_per_level(),
    })
}
