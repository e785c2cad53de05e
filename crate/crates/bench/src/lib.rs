//! Fixtures shared by the benchmarks.

use budgetcast::sim::{draw_population, tracker_sample};
use budgetcast::{Forest, Overlay, PeerId, ScenarioConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// An overlay after the first `joined` peers of the scenario's join order,
/// plus the peers still waiting and the tracker population.
pub struct Warm {
    pub overlay: Overlay,
    pub population: Vec<PeerId>,
    pub pending: Vec<PeerId>,
    pub rng: ChaCha8Rng,
}

pub fn warm(config: &ScenarioConfig, joined: usize) -> Warm {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (budgets, order) = draw_population(config, &mut rng);
    let mut forest = Forest::new(config.num_substreams, config.server_budget);
    for b in budgets {
        forest.add_peer(b);
    }
    let mut overlay = Overlay::new(forest);
    let mut population = Vec::with_capacity(config.n);
    let (head, tail) = order.split_at(joined.min(order.len()));
    for &peer in head {
        let neighbors = tracker_sample(&population, config.neighbor_count, &mut rng);
        population.push(peer);
        let _ = overlay.join(peer, neighbors, &mut rng);
    }
    Warm { overlay, population, pending: tail.to_vec(), rng }
}
