use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioConfig;

use super::{format_number, run_scenario, Scheme, Validation};

/// Cross product to run: every scenario against the baseline (at the
/// scenario's own neighbor count) and the budget scheme at each multiple
/// of `N` neighbors.
#[derive(Debug, Clone)]
pub struct CompareRequest {
    pub scenarios: Vec<ScenarioConfig>,
    pub seeds: Vec<u64>,
    pub neighbor_multipliers: Vec<usize>,
    pub include_baseline: bool,
    pub validation: Validation,
}

impl CompareRequest {
    pub fn new(scenarios: Vec<ScenarioConfig>, seeds: Vec<u64>) -> Self {
        CompareRequest {
            scenarios,
            seeds,
            neighbor_multipliers: vec![1, 2, 4],
            include_baseline: true,
            validation: Validation::Final,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Stat::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareCell {
    pub scenario: String,
    pub scheme: Scheme,
    pub neighbors: usize,
    pub num_substreams: usize,
    pub saturation: Stat,
    pub hop_count: Stat,
    pub request_fraction: Stat,
    pub incomplete_peers: usize,
    pub retries: usize,
    /// Error messages of seeds that failed outright.
    pub failures: Vec<String>,
}

impl CompareCell {
    pub fn failed(&self) -> bool {
        !self.failures.is_empty() || self.incomplete_peers > 0
    }

    fn column(&self) -> String {
        let n_sub = self.num_substreams.max(1);
        match self.scheme {
            Scheme::Baseline => "baseline".to_string(),
            Scheme::Proposed if self.neighbors.is_multiple_of(n_sub) => {
                let k = self.neighbors / n_sub;
                if k == 1 { "D=N".to_string() } else { format!("D={k}N") }
            }
            Scheme::Proposed => format!("D={}", self.neighbors),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub seeds: Vec<u64>,
    pub cells: Vec<CompareCell>,
}

impl CompareTable {
    /// One row per scenario and metric, one column per scheme setting.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        for (title, pick) in [
            ("Average saturation fraction", (|c: &CompareCell| c.saturation) as fn(&CompareCell) -> Stat),
            ("Average hop-count", |c: &CompareCell| c.hop_count),
        ] {
            out.push_str(&format!("## {title}\n\n"));
            let mut rows: Vec<(String, Vec<(String, String)>)> = Vec::new();
            for cell in &self.cells {
                let value = if cell.failed() {
                    "failed".to_string()
                } else {
                    let s = pick(cell);
                    format!("{} ± {}", format_number(s.mean), format_number(s.std))
                };
                match rows.iter_mut().find(|r| r.0 == cell.scenario) {
                    Some(r) => r.1.push((cell.column(), value)),
                    None => rows.push((cell.scenario.clone(), vec![(cell.column(), value)])),
                }
            }
            let header: Vec<String> = rows.first().map(|r| r.1.iter().map(|c| c.0.clone()).collect()).unwrap_or_default();
            out.push_str(&format!("| scenario | {} |\n", header.join(" | ")));
            out.push_str(&format!("|---|{}\n", "---|".repeat(header.len())));
            for (name, cols) in rows {
                let values: Vec<String> = cols.into_iter().map(|c| c.1).collect();
                out.push_str(&format!("| {name} | {} |\n", values.join(" | ")));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scenario,scheme,neighbors,saturation_mean,saturation_std,hop_mean,hop_std,request_fraction_mean,incomplete_peers,retries,failed\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                c.scenario,
                c.scheme.name(),
                c.neighbors,
                format_number(c.saturation.mean),
                format_number(c.saturation.std),
                format_number(c.hop_count.mean),
                format_number(c.hop_count.std),
                format_number(c.request_fraction.mean),
                c.incomplete_peers,
                c.retries,
                c.failed()
            ));
        }
        out
    }
}

/// Runs every cell of the request, seeds in parallel, and aggregates.
pub fn compare(request: &CompareRequest) -> CompareTable {
    let mut settings: Vec<(ScenarioConfig, Scheme)> = Vec::new();
    for base in &request.scenarios {
        if request.include_baseline {
            settings.push((base.clone(), Scheme::Baseline));
        }
        for &k in &request.neighbor_multipliers {
            settings.push((base.clone().with_neighbors(k * base.num_substreams), Scheme::Proposed));
        }
    }
    let jobs: Vec<(usize, u64)> =
        (0..settings.len()).flat_map(|i| request.seeds.iter().map(move |&s| (i, s))).collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let (cfg, scheme) = &settings[i];
            let cfg = cfg.clone().with_seed(seed);
            (i, run_scenario(&cfg, *scheme, request.validation).map(|o| o.metrics))
        })
        .collect();

    let cells = settings
        .iter()
        .enumerate()
        .map(|(i, (cfg, scheme))| {
            let mut sat = Vec::new();
            let mut hop = Vec::new();
            let mut req = Vec::new();
            let mut cell = CompareCell {
                scenario: cfg.name.clone(),
                scheme: *scheme,
                neighbors: cfg.neighbor_count,
                num_substreams: cfg.num_substreams,
                saturation: Stat::default(),
                hop_count: Stat::default(),
                request_fraction: Stat::default(),
                incomplete_peers: 0,
                retries: 0,
                failures: Vec::new(),
            };
            for (_, r) in results.iter().filter(|(j, _)| *j == i) {
                match r {
                    Ok(m) => {
                        sat.push(m.avg_saturation);
                        hop.push(m.avg_hop_count);
                        req.push(m.request_fraction);
                        cell.incomplete_peers += m.incomplete_peers.len();
                        cell.retries += m.retries;
                    }
                    Err(e) => cell.failures.push(e.to_string()),
                }
            }
            cell.saturation = Stat::of(&sat);
            cell.hop_count = Stat::of(&hop);
            cell.request_fraction = Stat::of(&req);
            cell
        })
        .collect();
    CompareTable { seeds: request.seeds.clone(), cells }
}
