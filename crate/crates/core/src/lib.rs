//! Budget-model scheduling of multi-tree peer-to-peer live streaming.
//!
//! Peers earn a balance from their upload budget and spend it to buy
//! positions in the sub-stream trees. The crate holds the forest model,
//! the three reconfiguration primitives, the two-phase join scheduler, the
//! free-set directory, a SplitStream-style baseline, analytic bounds and a
//! simulator producing metric reports.

pub mod analysis;
pub mod baseline;
pub mod error;
pub mod forest;
pub mod freeset;
pub mod reconfig;
pub mod scenario;
pub mod scheduler;
pub mod sim;

pub use error::{
    AnalysisError, BaselineError, ConfigError, FreeSetError, JoinError, ModelError, ReconfigError,
    SimError,
};
pub use forest::{Balance, Forest, ForestSnapshot, PeerId, PeerSnapshot, PeerState, PriceVector, TreeLink, Violation};
pub use freeset::{FindResult, FreeSetCounters, FreeSetDirectory};
pub use reconfig::{ReconfigKind, ReconfigReceipt, TopologyObserver};
pub use scenario::{PeerClass, ScenarioConfig, PRESETS};
pub use scheduler::{IncompleteJoin, JoinContext, JoinReport, JoinSession, Overlay};
pub use sim::{run_scenario, LogRecord, MetricsReport, Scheme, SimOutcome, Validation};
