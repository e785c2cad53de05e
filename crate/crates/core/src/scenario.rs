use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// One class of peers: budget in sub-stream slots and population share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeerClass {
    pub budget: u32,
    pub fraction: f64,
}

/// A simulation scenario. Capacities are normalized to sub-stream units,
/// so the stream rate equals `num_substreams` and each sub-stream has rate 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub n: usize,
    pub num_substreams: usize,
    pub server_budget: u32,
    pub peer_classes: Vec<PeerClass>,
    pub neighbor_count: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Names of the built-in scenarios, in table order.
pub const PRESETS: [&str; 8] =
    ["HM4-1", "HM4-2", "HM8-1", "HM8-2", "HT4-1", "HT4-2", "HT8-1", "HT8-2"];

/// Population shares of the low, medium and high capacity classes.
const HETEROGENEOUS_SHARES: [f64; 3] = [0.37, 0.27, 0.36];

impl ScenarioConfig {
    /// A built-in scenario with `n = 10000` and `D = 4N`.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let (n_sub, server, budgets): (usize, u32, &[u32]) = match name {
            "HM4-1" => (4, 4, &[4]),
            "HM4-2" => (4, 5, &[5]),
            "HM8-1" => (8, 8, &[8]),
            "HM8-2" => (8, 10, &[10]),
            "HT4-1" => (4, 4, &[1, 3, 8]),
            "HT4-2" => (4, 4, &[1, 4, 10]),
            "HT8-1" => (8, 8, &[2, 6, 16]),
            "HT8-2" => (8, 8, &[3, 7, 20]),
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        };
        let peer_classes = if budgets.len() == 1 {
            vec![PeerClass { budget: budgets[0], fraction: 1.0 }]
        } else {
            budgets
                .iter()
                .zip(HETEROGENEOUS_SHARES)
                .map(|(&budget, fraction)| PeerClass { budget, fraction })
                .collect()
        };
        Ok(ScenarioConfig {
            name: name.to_string(),
            n: 10_000,
            num_substreams: n_sub,
            server_budget: server,
            peer_classes,
            neighbor_count: 4 * n_sub,
            seed: 0,
        })
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_neighbors(mut self, d: usize) -> Self {
        self.neighbor_count = d;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn stream_rate(&self) -> f64 {
        self.num_substreams as f64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |reason: &str| {
            Err(ConfigError::Invalid { name: self.name.clone(), reason: reason.to_string() })
        };
        if self.n == 0 {
            return fail("n must be at least 1");
        }
        if self.num_substreams == 0 {
            return fail("num_substreams must be at least 1");
        }
        if self.server_budget == 0 {
            return fail("server_budget must be at least 1");
        }
        if self.neighbor_count == 0 {
            return fail("neighbor_count must be at least 1");
        }
        if self.peer_classes.is_empty() {
            return fail("at least one peer class is required");
        }
        if self.peer_classes.iter().any(|c| !(0.0..=1.0).contains(&c.fraction)) {
            return fail("class fractions must lie in [0, 1]");
        }
        let total: f64 = self.peer_classes.iter().map(|c| c.fraction).sum();
        if (total - 1.0).abs() > 1e-9 {
            return fail("class fractions must sum to 1");
        }
        Ok(())
    }

    /// Exact per-class head counts: `fraction * n` rounded by largest
    /// remainder, so the counts always sum to `n`.
    pub fn class_counts(&self) -> Vec<usize> {
        let exact: Vec<f64> = self.peer_classes.iter().map(|c| c.fraction * self.n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut left = self.n.saturating_sub(counts.iter().sum());
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }

    /// The budget list of the whole population, grouped by class.
    pub fn budgets(&self) -> Vec<u32> {
        self.peer_classes
            .iter()
            .zip(self.class_counts())
            .flat_map(|(c, count)| std::iter::repeat_n(c.budget, count))
            .collect()
    }

    /// Resolves a preset name or a path to a JSON config file.
    pub fn load(name_or_path: &str) -> Result<Self, ConfigError> {
        if let Ok(cfg) = Self::preset(name_or_path) {
            return Ok(cfg);
        }
        let text = std::fs::read_to_string(name_or_path)
            .map_err(|_| ConfigError::UnknownPreset(name_or_path.to_string()))?;
        let cfg: ScenarioConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
            name: name_or_path.to_string(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in PRESETS {
            let cfg = ScenarioConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            assert_eq!(cfg.budgets().len(), 10_000);
        }
        assert!(ScenarioConfig::preset("HM5-1").is_err());
    }

    #[test]
    fn class_counts_follow_the_shares() {
        let cfg = ScenarioConfig::preset("HT4-2").unwrap();
        assert_eq!(cfg.class_counts(), vec![3700, 2700, 3600]);
        let odd = cfg.with_n(7);
        assert_eq!(odd.class_counts().iter().sum::<usize>(), 7);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ScenarioConfig::preset("HM4-1").unwrap();
        cfg.peer_classes[0].fraction = 0.9;
        assert!(cfg.validate().is_err());
        let cfg = ScenarioConfig::preset("HM4-1").unwrap().with_neighbors(0);
        assert!(cfg.validate().is_err());
        let cfg = ScenarioConfig::preset("HM4-1").unwrap().with_n(0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ScenarioConfig::preset("HT8-2").unwrap().with_seed(9);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ScenarioConfig>(&json).unwrap(), cfg);
    }
}
