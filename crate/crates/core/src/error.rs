use thiserror::Error;

use crate::forest::PeerId;

/// Lookup and metric errors raised by the forest model.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown peer {0}")]
    NotFound(PeerId),
    #[error("tree index {tree} out of range (forest has {num_trees} trees)")]
    TreeOutOfRange { tree: usize, num_trees: usize },
    #[error("peer {peer} is not subscribed to tree {tree}")]
    NotSubscribed { peer: PeerId, tree: usize },
    #[error("peer {0} has budget 0 and is excluded from saturation statistics")]
    ExcludedFromMetric(PeerId),
}

/// Precondition failures of the three reconfiguration primitives.
///
/// A primitive that returns one of these has not touched the forest.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReconfigError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("peer {0} has no free upload slot")]
    NoFreeCapacity(PeerId),
    #[error("provider {0} has no balance left to donate a slot")]
    ProviderBroke(PeerId),
    #[error("peer {peer} is already subscribed to tree {tree}")]
    AlreadySubscribed { peer: PeerId, tree: usize },
    #[error("seller {seller} is saturated with respect to tree {tree}")]
    SellerSaturated { seller: PeerId, tree: usize },
    #[error("peer {peer} holds {balance} but {required} is required")]
    InsufficientBalance {
        peer: PeerId,
        balance: i64,
        required: i64,
    },
    #[error("peer {peer} has {free} free slots but {required} are required")]
    InsufficientSlots { peer: PeerId, free: u32, required: u32 },
    #[error("payment {payment} exceeds price {price}")]
    PriceExceeded { payment: u32, price: u32 },
    #[error("payment must be at least one unit")]
    ZeroPayment,
    #[error("peer {giver} has no child to give in tree {tree}")]
    NoChildToGive { giver: PeerId, tree: usize },
    #[error("tree {tree} is the dominant sub-stream of giver {giver}")]
    TreeIsGiversDominant { giver: PeerId, tree: usize },
    #[error("tree {tree} is neither dominant nor the declared target of {taker}")]
    NotTakersTarget { taker: PeerId, tree: usize },
    #[error("the server only donates slots and never trades")]
    ServerCannotTrade,
    #[error("a peer cannot trade with itself")]
    SelfTrade,
}

/// Free-set directory errors.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FreeSetError {
    #[error("peer {0} is already a free-set member")]
    AlreadyMember(PeerId),
    #[error("peer {0} is not a free-set member")]
    NotMember(PeerId),
}

/// Errors raised while scheduling a joining peer.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JoinError {
    #[error("free set exhausted while peer {peer} still misses {missing} sub-streams")]
    FreeSetExhausted { peer: PeerId, missing: usize },
    #[error(transparent)]
    Reconfig(#[from] ReconfigError),
}

/// Baseline (SplitStream-style) join errors.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BaselineError {
    #[error("spare capacity group has no member able to adopt peer {peer} in tree {tree}")]
    SpareGroupExhausted { peer: PeerId, tree: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid scenario `{name}`: {reason}")]
    Invalid { name: String, reason: String },
    #[error("unknown scenario preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{incomplete} peers still miss sub-streams at the end of the run")]
    IncompleteRun { incomplete: usize },
    #[error("forest invariant violated after joining peer {peer}: {violation}")]
    InvariantViolated {
        peer: PeerId,
        violation: crate::forest::Violation,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
