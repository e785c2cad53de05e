//! Scenario runner: budgets, join order, tracker sampling and the retry
//! policy, for both the budget scheme and the baseline.

mod compare;
mod metrics;
mod report;

use std::collections::VecDeque;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineEvent, BaselineJoinReport, BaselineOverlay};
use crate::error::SimError;
use crate::forest::{Forest, PeerId};
use crate::reconfig::ReconfigReceipt;
use crate::scenario::ScenarioConfig;
use crate::scheduler::{JoinReport, Overlay};

pub use compare::{compare, CompareCell, CompareRequest, CompareTable, Stat};
pub use metrics::{cdf, MetricsReport, RunMetadata};
pub use report::{emit_report, format_number, REPORT_FILES};

/// Joins processed before a failed peer gets its second attempt.
pub const RETRY_DELAY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Proposed,
    Baseline,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(Scheme::Proposed),
            "baseline" => Ok(Scheme::Baseline),
            other => Err(format!("unknown scheme `{other}` (expected proposed or baseline)")),
        }
    }
}

/// How often the forest invariants are checked during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Validation {
    /// After every join attempt.
    #[default]
    EveryJoin,
    /// Once, at the end of the run.
    Final,
}

/// One line of `receipts.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogRecord {
    Receipt(ReconfigReceipt),
    Join(JoinReport),
    Link(BaselineEvent),
    Attempt(BaselineJoinReport),
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub metrics: MetricsReport,
    pub log: Vec<LogRecord>,
    pub forest: Forest,
}

impl SimOutcome {
    /// Fails with `IncompleteRun` if any peer misses a sub-stream.
    pub fn require_complete(self) -> Result<Self, SimError> {
        match self.metrics.incomplete_peers.len() {
            0 => Ok(self),
            incomplete => Err(SimError::IncompleteRun { incomplete }),
        }
    }
}

/// `d` distinct peers drawn uniformly from `population`. A population
/// smaller than `d` is returned whole, together with the server.
pub fn tracker_sample<R: Rng + ?Sized>(population: &[PeerId], d: usize, rng: &mut R) -> Vec<PeerId> {
    if population.len() < d {
        let mut all = population.to_vec();
        all.push(PeerId::SERVER);
        return all;
    }
    population.choose_multiple(rng, d).copied().collect()
}

/// Budgets shuffled over ids `1..=n` and the join order, as consumed by
/// [`run_scenario`] from a fresh generator seeded with `config.seed`.
pub fn draw_population(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> (Vec<u32>, Vec<PeerId>) {
    let mut budgets = config.budgets();
    budgets.shuffle(rng);
    let mut order: Vec<PeerId> = (1..=config.n as u32).map(PeerId).collect();
    order.shuffle(rng);
    (budgets, order)
}

/// Delivers the join order with failed peers requeued once, after
/// [`RETRY_DELAY`] further joins.
struct JoinQueue {
    order: VecDeque<PeerId>,
    retries: VecDeque<(usize, PeerId)>,
    processed: usize,
}

impl JoinQueue {
    fn new(order: Vec<PeerId>) -> Self {
        JoinQueue { order: order.into(), retries: VecDeque::new(), processed: 0 }
    }

    /// Next peer and whether this is its retry.
    fn next(&mut self) -> Option<(PeerId, bool)> {
        let due = self.retries.front().is_some_and(|&(at, _)| at <= self.processed);
        let item = if due || self.order.is_empty() {
            self.retries.pop_front().map(|(_, p)| (p, true))
        } else {
            self.order.pop_front().map(|p| (p, false))
        };
        if item.is_some() {
            self.processed += 1;
        }
        item
    }

    fn requeue(&mut self, peer: PeerId) {
        self.retries.push_back((self.processed + RETRY_DELAY, peer));
    }
}

/// Runs one scenario. The result carries incomplete peers in its metrics;
/// see [`SimOutcome::require_complete`].
pub fn run_scenario(
    config: &ScenarioConfig,
    scheme: Scheme,
    validation: Validation,
) -> Result<SimOutcome, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (budgets, order) = draw_population(config, &mut rng);
    let mut forest = Forest::new(config.num_substreams, config.server_budget);
    for &b in &budgets {
        forest.add_peer(b);
    }
    match scheme {
        Scheme::Proposed => run_proposed(config, forest, order, rng, validation),
        Scheme::Baseline => run_baseline(config, forest, order, rng, validation),
    }
}

fn check(forest: &Forest, peer: PeerId) -> Result<(), SimError> {
    forest.validate().map_err(|violation| SimError::InvariantViolated { peer, violation })
}

fn run_proposed(
    config: &ScenarioConfig,
    forest: Forest,
    order: Vec<PeerId>,
    mut rng: ChaCha8Rng,
    validation: Validation,
) -> Result<SimOutcome, SimError> {
    let mut overlay = Overlay::new(forest);
    let mut queue = JoinQueue::new(order);
    let mut population: Vec<PeerId> = Vec::with_capacity(config.n);
    let mut log = Vec::new();
    let mut requests = vec![0u64; config.n + 1];
    let mut retries = 0usize;
    let mut min_balance = 0i64;

    while let Some((peer, retry)) = queue.next() {
        let neighbors = tracker_sample(&population, config.neighbor_count, &mut rng);
        if !retry {
            population.push(peer);
        } else {
            retries += 1;
        }
        let report = match overlay.join(peer, neighbors, &mut rng) {
            Ok(report) => report,
            Err(incomplete) => {
                if !retry {
                    queue.requeue(peer);
                }
                incomplete.report
            }
        };
        requests[peer.0 as usize] += report.freeset_requests;
        min_balance = min_balance.min(report.min_balance);
        log.extend(report.receipts.iter().cloned().map(LogRecord::Receipt));
        log.push(LogRecord::Join(report));
        if validation == Validation::EveryJoin {
            check(&overlay.forest, peer)?;
        }
    }
    check(&overlay.forest, PeerId::SERVER)?;

    let mut metrics = MetricsReport::collect(&overlay.forest, config, Scheme::Proposed, &requests);
    metrics.retries = retries;
    metrics.min_balance = min_balance;
    metrics.freeset = Some(overlay.freeset.counters());
    Ok(SimOutcome { metrics, log, forest: overlay.forest })
}

fn run_baseline(
    config: &ScenarioConfig,
    forest: Forest,
    order: Vec<PeerId>,
    mut rng: ChaCha8Rng,
    validation: Validation,
) -> Result<SimOutcome, SimError> {
    let mut overlay = BaselineOverlay::new(forest, &mut rng);
    let mut queue = JoinQueue::new(order);
    let mut population: Vec<PeerId> = Vec::with_capacity(config.n);
    let mut log = Vec::new();
    let mut retries = 0usize;

    while let Some((peer, retry)) = queue.next() {
        let candidates = tracker_sample(&population, config.neighbor_count, &mut rng);
        if !retry {
            population.push(peer);
        } else {
            retries += 1;
        }
        let report = match overlay.baseline_join(peer, &candidates) {
            Ok(report) => report,
            Err((report, _)) => {
                if !retry {
                    queue.requeue(peer);
                }
                report
            }
        };
        log.extend(report.events.iter().copied().map(LogRecord::Link));
        log.push(LogRecord::Attempt(report));
        if validation == Validation::EveryJoin {
            check(&overlay.forest, peer)?;
        }
    }
    check(&overlay.forest, PeerId::SERVER)?;

    let requests: Vec<u64> = (0..=config.n as u32).map(|i| overlay.requests(PeerId(i)) as u64).collect();
    let mut metrics = MetricsReport::collect(&overlay.forest, config, Scheme::Baseline, &requests);
    metrics.retries = retries;
    Ok(SimOutcome { metrics, log, forest: overlay.forest })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracker_sample_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pop: Vec<PeerId> = (1..=100).map(PeerId).collect();
        let s = tracker_sample(&pop, 16, &mut rng);
        let distinct: std::collections::BTreeSet<_> = s.iter().collect();
        assert_eq!(distinct.len(), 16);
        assert!(!s.contains(&PeerId::SERVER));

        let small = [PeerId(4), PeerId(7), PeerId(9)];
        let s = tracker_sample(&small, 16, &mut rng);
        assert_eq!(s, vec![PeerId(4), PeerId(7), PeerId(9), PeerId::SERVER]);

        let a = tracker_sample(&pop, 16, &mut ChaCha8Rng::seed_from_u64(5));
        let b = tracker_sample(&pop, 16, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn queue_retries_after_delay() {
        let mut q = JoinQueue::new((1..=15).map(PeerId).collect());
        assert_eq!(q.next(), Some((PeerId(1), false)));
        q.requeue(PeerId(1));
        for i in 2..=11 {
            assert_eq!(q.next(), Some((PeerId(i), false)));
        }
        assert_eq!(q.next(), Some((PeerId(1), true)));
        assert_eq!(q.next(), Some((PeerId(12), false)));
    }

    #[test]
    fn queue_drains_retries_after_the_order() {
        let mut q = JoinQueue::new(vec![PeerId(1), PeerId(2)]);
        q.next();
        q.requeue(PeerId(1));
        q.next();
        assert_eq!(q.next(), Some((PeerId(1), true)));
        assert_eq!(q.next(), None);
    }

    #[test]
    fn single_peer_run() {
        let cfg = ScenarioConfig::preset("HM4-1").unwrap().with_n(1);
        let out = run_scenario(&cfg, Scheme::Proposed, Validation::EveryJoin).unwrap();
        assert_eq!(out.metrics.avg_hop_count, 1.0);
        assert_eq!(out.metrics.avg_saturation, 0.0);
        assert!(out.metrics.incomplete_peers.is_empty());
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("baseline".parse::<Scheme>(), Ok(Scheme::Baseline));
        assert!("other".parse::<Scheme>().is_err());
    }
}
