use serde::{Deserialize, Serialize};

use crate::analysis::OptimalForest;
use crate::forest::{Forest, PeerId};
use crate::freeset::FreeSetCounters;
use crate::scenario::ScenarioConfig;

use super::Scheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub scenario: String,
    pub scheme: Scheme,
    pub neighbors: usize,
    pub seed: u64,
    pub n: usize,
    pub num_substreams: usize,
    pub server_budget: u32,
}

/// Everything measured at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub meta: RunMetadata,
    /// Per peer with a non-zero budget, in id order.
    pub saturation: Vec<f64>,
    /// Per fully subscribed peer, in id order.
    pub hop_counts: Vec<f64>,
    pub avg_saturation: f64,
    pub avg_hop_count: f64,
    /// Free-set lookups (or spare group requests for the baseline).
    pub requests: u64,
    /// Share of peers that issued at least one request.
    pub request_fraction: f64,
    /// `uploaders[l - 1]` peers with a child at hop `l`, over all trees.
    pub uploaders: Vec<usize>,
    pub optimal_uploaders: Vec<usize>,
    pub incomplete_peers: Vec<PeerId>,
    pub retries: usize,
    pub residual_free_slots: u64,
    pub donations: u64,
    pub max_depth: u32,
    pub min_balance: i64,
    pub freeset: Option<FreeSetCounters>,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Empirical CDF as `(value, fraction of samples <= value)` at every
/// distinct value.
pub fn cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = frac,
            _ => out.push((v, frac)),
        }
    }
    out
}

impl MetricsReport {
    /// `requests[id]` holds the requests issued by peer `id`.
    pub fn collect(forest: &Forest, config: &ScenarioConfig, scheme: Scheme, requests: &[u64]) -> Self {
        let mut saturation = Vec::new();
        let mut hop_counts = Vec::new();
        let mut incomplete_peers = Vec::new();
        let mut uploaders: Vec<usize> = Vec::new();
        for id in forest.peer_ids() {
            if let Ok(s) = forest.saturation_fraction(id) {
                saturation.push(s);
            }
            if forest.is_complete(id).unwrap_or(false) {
                hop_counts.push(forest.average_hop_count(id).unwrap_or(0.0));
            } else {
                incomplete_peers.push(id);
            }
            for tree in 0..forest.num_trees() {
                let link = forest.link(id, tree).expect("peer listed by the forest");
                if let (Some(depth), false) = (link.depth, link.children.is_empty()) {
                    let l = depth as usize;
                    if uploaders.len() < l {
                        uploaders.resize(l, 0);
                    }
                    uploaders[l - 1] += 1;
                }
            }
        }
        let optimal_uploaders =
            OptimalForest::new(config.n, config.num_substreams, config.server_budget as usize)
                .uploaders_per_level();
        let issuing = requests.iter().skip(1).filter(|&&r| r > 0).count();
        MetricsReport {
            meta: RunMetadata {
                scenario: config.name.clone(),
                scheme,
                neighbors: config.neighbor_count,
                seed: config.seed,
                n: config.n,
                num_substreams: config.num_substreams,
                server_budget: config.server_budget,
            },
            avg_saturation: mean(&saturation),
            avg_hop_count: mean(&hop_counts),
            saturation,
            hop_counts,
            requests: requests.iter().sum(),
            request_fraction: if config.n == 0 { 0.0 } else { issuing as f64 / config.n as f64 },
            uploaders,
            optimal_uploaders,
            incomplete_peers,
            retries: 0,
            residual_free_slots: forest.total_free_slots(),
            donations: forest.donations(),
            max_depth: forest.max_depth(),
            min_balance: 0,
            freeset: None,
        }
    }

    /// Levels present in either the run or the optimal forest.
    pub fn uploader_rows(&self) -> Vec<(usize, usize, usize)> {
        let levels = self.uploaders.len().max(self.optimal_uploaders.len());
        (0..levels)
            .map(|i| {
                (
                    i + 1,
                    self.uploaders.get(i).copied().unwrap_or(0),
                    self.optimal_uploaders.get(i).copied().unwrap_or(0),
                )
            })
            .collect()
    }
}
