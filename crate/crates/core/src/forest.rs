//! The multi-tree overlay: one spanning tree per sub-stream, all rooted at
//! the media server, plus each peer's budget and money balance.
//!
//! Peer `0` is always the server. It sits at depth 0 of every tree, owns
//! `server_budget` upload slots and only ever donates them.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Identifier of a peer in the overlay. `PeerId::SERVER` is the media server.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeerId(pub u32);

impl PeerId {
    pub const SERVER: PeerId = PeerId(0);

    pub fn is_server(self) -> bool {
        self == Self::SERVER
    }

    pub(crate) fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_server() {
            write!(f, "server")
        } else {
            write!(f, "p{}", self.0)
        }
    }
}

/// Money units. Signed so that a corrupted state is representable and
/// reported by [`Forest::validate`] instead of wrapping.
pub type Balance = i64;

/// One peer's role in one tree.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TreeLink {
    pub parent: Option<PeerId>,
    /// Children in insertion order.
    pub children: Vec<PeerId>,
    /// Cached hop count from the server; `None` while unsubscribed.
    pub depth: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerState {
    pub id: PeerId,
    /// Maximum number of children across all trees.
    pub budget: u32,
    pub balance: Balance,
    /// Neighbor set handed out by the tracker at join time.
    pub neighbors: Vec<PeerId>,
    pub links: Vec<TreeLink>,
    total_children: u32,
}

impl PeerState {
    pub fn total_children(&self) -> u32 {
        self.total_children
    }

    pub fn subscriptions(&self) -> usize {
        self.links.iter().filter(|l| l.depth.is_some()).count()
    }
}

/// Price vector `C_i`: children of the peer in each tree, plus one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriceVector(pub Vec<u32>);

impl PriceVector {
    /// Tree with the highest price; ties go to the lowest tree index.
    pub fn dominant(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = k;
            }
        }
        best
    }

    /// All `budget` children sit in exactly one tree.
    pub fn saturated_tree(&self, budget: u32) -> Option<usize> {
        if budget == 0 {
            return None;
        }
        let k = self.dominant();
        let rest_empty = self.0.iter().enumerate().all(|(h, &p)| h == k || p == 1);
        (self.0[k] == budget + 1 && rest_empty).then_some(k)
    }
}

/// The first invariant violation found by [`Forest::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Cycle { tree: usize, peer: PeerId },
    Disconnected { tree: usize, peer: PeerId },
    ParentChildMismatch { tree: usize, parent: PeerId, child: PeerId },
    DepthMismatch { tree: usize, peer: PeerId, cached: Option<u32>, expected: Option<u32> },
    Capacity { peer: PeerId, children: u32, budget: u32 },
    NegativeBalance { peer: PeerId, balance: Balance },
    ServerHasParent { tree: usize },
    EdgeCount { tree: usize, edges: usize, subscribers: usize },
    SlotConservation { children: u64, subscriptions: u64 },
    MoneyConservation { total: Balance, expected: Balance },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle { tree, peer } => write!(f, "cycle through {peer} in tree {tree}"),
            Violation::Disconnected { tree, peer } => {
                write!(f, "{peer} is not connected to the server in tree {tree}")
            }
            Violation::ParentChildMismatch { tree, parent, child } => {
                write!(f, "parent/child maps disagree on {parent} -> {child} in tree {tree}")
            }
            Violation::DepthMismatch { tree, peer, cached, expected } => write!(
                f,
                "cached depth of {peer} in tree {tree} is {cached:?}, expected {expected:?}"
            ),
            Violation::Capacity { peer, children, budget } => {
                write!(f, "{peer} has {children} children but budget {budget}")
            }
            Violation::NegativeBalance { peer, balance } => {
                write!(f, "{peer} has negative balance {balance}")
            }
            Violation::ServerHasParent { tree } => write!(f, "server has a parent in tree {tree}"),
            Violation::EdgeCount { tree, edges, subscribers } => write!(
                f,
                "tree {tree} has {edges} edges for {subscribers} subscribers"
            ),
            Violation::SlotConservation { children, subscriptions } => write!(
                f,
                "{children} children slots in use for {subscriptions} subscriptions"
            ),
            Violation::MoneyConservation { total, expected } => {
                write!(f, "total balance {total}, expected {expected}")
            }
        }
    }
}

impl std::error::Error for Violation {}

#[derive(Debug, Clone)]
pub struct Forest {
    num_trees: usize,
    peers: Vec<PeerState>,
    /// Money ever created: initial balances of every peer and the server.
    minted: Balance,
    /// Way-1 adoptions ever performed; each burns one unit of the provider.
    donations: u64,
}

impl Forest {
    /// An empty overlay with `num_trees` trees and a server owning
    /// `server_budget` slots (and as many money units).
    pub fn new(num_trees: usize, server_budget: u32) -> Self {
        assert!(num_trees >= 1, "a forest needs at least one tree");
        let server = PeerState {
            id: PeerId::SERVER,
            budget: server_budget,
            balance: server_budget as Balance,
            neighbors: Vec::new(),
            links: (0..num_trees)
                .map(|_| TreeLink { parent: None, children: Vec::new(), depth: Some(0) })
                .collect(),
            total_children: 0,
        };
        Forest {
            num_trees,
            peers: vec![server],
            minted: server_budget as Balance,
            donations: 0,
        }
    }

    /// Registers a new, unsubscribed peer whose balance starts at its budget.
    pub fn add_peer(&mut self, budget: u32) -> PeerId {
        self.add_peer_with_balance(budget, budget as Balance)
    }

    pub fn add_peer_with_balance(&mut self, budget: u32, balance: Balance) -> PeerId {
        let id = PeerId(self.peers.len() as u32);
        self.peers.push(PeerState {
            id,
            budget,
            balance,
            neighbors: Vec::new(),
            links: vec![TreeLink::default(); self.num_trees],
            total_children: 0,
        });
        self.minted += balance;
        id
    }

    pub fn num_trees(&self) -> usize {
        self.num_trees
    }

    /// Number of peers, excluding the server.
    pub fn num_peers(&self) -> usize {
        self.peers.len() - 1
    }

    pub fn peer_ids(&self) -> impl Iterator<Item = PeerId> + '_ {
        (1..self.peers.len()).map(|i| PeerId(i as u32))
    }

    pub fn contains(&self, id: PeerId) -> bool {
        id.index() < self.peers.len()
    }

    pub fn peer(&self, id: PeerId) -> Result<&PeerState, ModelError> {
        self.peers.get(id.index()).ok_or(ModelError::NotFound(id))
    }

    pub(crate) fn peer_mut(&mut self, id: PeerId) -> Result<&mut PeerState, ModelError> {
        self.peers.get_mut(id.index()).ok_or(ModelError::NotFound(id))
    }

    fn check_tree(&self, tree: usize) -> Result<(), ModelError> {
        if tree < self.num_trees {
            Ok(())
        } else {
            Err(ModelError::TreeOutOfRange { tree, num_trees: self.num_trees })
        }
    }

    pub fn link(&self, id: PeerId, tree: usize) -> Result<&TreeLink, ModelError> {
        self.check_tree(tree)?;
        Ok(&self.peer(id)?.links[tree])
    }

    pub fn budget(&self, id: PeerId) -> Result<u32, ModelError> {
        Ok(self.peer(id)?.budget)
    }

    pub fn balance(&self, id: PeerId) -> Result<Balance, ModelError> {
        Ok(self.peer(id)?.balance)
    }

    pub fn parent(&self, id: PeerId, tree: usize) -> Result<Option<PeerId>, ModelError> {
        Ok(self.link(id, tree)?.parent)
    }

    pub fn children(&self, id: PeerId, tree: usize) -> Result<&[PeerId], ModelError> {
        Ok(&self.link(id, tree)?.children)
    }

    pub fn child_count(&self, id: PeerId, tree: usize) -> Result<u32, ModelError> {
        Ok(self.link(id, tree)?.children.len() as u32)
    }

    pub fn is_subscribed(&self, id: PeerId, tree: usize) -> Result<bool, ModelError> {
        Ok(self.link(id, tree)?.depth.is_some())
    }

    /// Subscribed to every sub-stream.
    pub fn is_complete(&self, id: PeerId) -> Result<bool, ModelError> {
        Ok(self.peer(id)?.links.iter().all(|l| l.depth.is_some()))
    }

    pub fn unsubscribed_trees(&self, id: PeerId) -> Result<Vec<usize>, ModelError> {
        Ok(self
            .peer(id)?
            .links
            .iter()
            .enumerate()
            .filter(|(_, l)| l.depth.is_none())
            .map(|(k, _)| k)
            .collect())
    }

    /// `C_i[k]`: children of the peer in `tree`, plus one.
    pub fn price(&self, id: PeerId, tree: usize) -> Result<u32, ModelError> {
        Ok(self.child_count(id, tree)? + 1)
    }

    pub fn price_vector(&self, id: PeerId) -> Result<PriceVector, ModelError> {
        let peer = self.peer(id)?;
        Ok(PriceVector(peer.links.iter().map(|l| l.children.len() as u32 + 1).collect()))
    }

    pub fn dominant_substream(&self, id: PeerId) -> Result<usize, ModelError> {
        let peer = self.peer(id)?;
        let mut best = 0;
        let mut best_count = peer.links[0].children.len();
        for (k, l) in peer.links.iter().enumerate().skip(1) {
            if l.children.len() > best_count {
                best = k;
                best_count = l.children.len();
            }
        }
        Ok(best)
    }

    pub fn is_saturated(&self, id: PeerId) -> Result<bool, ModelError> {
        Ok(self.saturated_tree(id)?.is_some())
    }

    /// The tree a saturated peer holds all its children in.
    pub fn saturated_tree(&self, id: PeerId) -> Result<Option<usize>, ModelError> {
        let peer = self.peer(id)?;
        if peer.budget == 0 || peer.total_children != peer.budget {
            return Ok(None);
        }
        Ok(peer
            .links
            .iter()
            .position(|l| l.children.len() as u32 == peer.budget))
    }

    pub fn free_capacity(&self, id: PeerId) -> Result<u32, ModelError> {
        let peer = self.peer(id)?;
        Ok(peer.budget.saturating_sub(peer.total_children))
    }

    pub fn total_children(&self, id: PeerId) -> Result<u32, ModelError> {
        Ok(self.peer(id)?.total_children)
    }

    /// Links on the path from the server; a direct child of the server has
    /// hop count 1.
    pub fn hop_count(&self, id: PeerId, tree: usize) -> Result<u32, ModelError> {
        self.link(id, tree)?
            .depth
            .ok_or(ModelError::NotSubscribed { peer: id, tree })
    }

    /// Children in the dominant tree divided by the budget.
    pub fn saturation_fraction(&self, id: PeerId) -> Result<f64, ModelError> {
        let peer = self.peer(id)?;
        if peer.budget == 0 {
            return Err(ModelError::ExcludedFromMetric(id));
        }
        let dominant = peer.links.iter().map(|l| l.children.len()).max().unwrap_or(0);
        Ok(dominant as f64 / peer.budget as f64)
    }

    /// Mean hop count over the trees the peer is subscribed to.
    pub fn average_hop_count(&self, id: PeerId) -> Result<f64, ModelError> {
        let peer = self.peer(id)?;
        let depths: Vec<u32> = peer.links.iter().filter_map(|l| l.depth).collect();
        if depths.is_empty() {
            return Err(ModelError::NotSubscribed { peer: id, tree: 0 });
        }
        Ok(depths.iter().map(|&d| d as f64).sum::<f64>() / depths.len() as f64)
    }

    /// Deepest hop count over all trees.
    pub fn max_depth(&self) -> u32 {
        self.peers
            .iter()
            .flat_map(|p| p.links.iter().filter_map(|l| l.depth))
            .max()
            .unwrap_or(0)
    }

    pub fn donations(&self) -> u64 {
        self.donations
    }

    pub fn total_balance(&self) -> Balance {
        self.peers.iter().map(|p| p.balance).sum()
    }

    /// Free upload slots over the server and every peer.
    pub fn total_free_slots(&self) -> u64 {
        self.peers
            .iter()
            .map(|p| p.budget.saturating_sub(p.total_children) as u64)
            .sum()
    }

    pub fn set_neighbors(&mut self, id: PeerId, neighbors: Vec<PeerId>) -> Result<(), ModelError> {
        self.peer_mut(id)?.neighbors = neighbors;
        Ok(())
    }

    // ---- raw mutations used by the reconfiguration primitives ----------

    pub(crate) fn adjust_balance(&mut self, id: PeerId, delta: Balance) {
        self.peers[id.index()].balance += delta;
    }

    pub(crate) fn record_donation(&mut self) {
        self.donations += 1;
    }

    /// Makes `child` (currently parentless in `tree`) a child of `parent`
    /// and refreshes the depth cache of `child`'s subtree.
    pub(crate) fn attach(&mut self, tree: usize, child: PeerId, parent: PeerId) {
        debug_assert!(self.peers[child.index()].links[tree].parent.is_none());
        self.peers[child.index()].links[tree].parent = Some(parent);
        let p = &mut self.peers[parent.index()];
        p.links[tree].children.push(child);
        p.total_children += 1;
        self.refresh_depths(tree, child);
    }

    /// Removes `child` from its parent's child list. The subtree keeps its
    /// (now stale) depth cache until it is attached again.
    pub(crate) fn detach(&mut self, tree: usize, child: PeerId) -> Option<PeerId> {
        let parent = self.peers[child.index()].links[tree].parent.take()?;
        let p = &mut self.peers[parent.index()];
        let pos = p.links[tree]
            .children
            .iter()
            .position(|&c| c == child)
            .expect("parent/child maps out of sync");
        p.links[tree].children.remove(pos);
        p.total_children -= 1;
        Some(parent)
    }

    /// Puts `newcomer` (unsubscribed in `tree`) at the exact position of
    /// `incumbent`: same parent, same slot in the parent's child list. The
    /// incumbent is left parentless.
    pub(crate) fn replace_in_parent(&mut self, tree: usize, incumbent: PeerId, newcomer: PeerId) {
        let parent = self.peers[incumbent.index()].links[tree]
            .parent
            .take()
            .expect("incumbent must have a parent");
        let slot = self.peers[parent.index()].links[tree]
            .children
            .iter_mut()
            .find(|c| **c == incumbent)
            .expect("parent/child maps out of sync");
        *slot = newcomer;
        let depth = self.peers[incumbent.index()].links[tree].depth;
        let link = &mut self.peers[newcomer.index()].links[tree];
        link.parent = Some(parent);
        link.depth = depth;
    }

    /// Recomputes cached depths below (and including) `root` from its parent.
    pub(crate) fn refresh_depths(&mut self, tree: usize, root: PeerId) {
        let base = match self.peers[root.index()].links[tree].parent {
            Some(p) => self.peers[p.index()].links[tree].depth.map(|d| d + 1),
            None if root.is_server() => Some(0),
            None => None,
        };
        let mut queue = VecDeque::from([(root, base)]);
        while let Some((node, depth)) = queue.pop_front() {
            let link = &mut self.peers[node.index()].links[tree];
            if link.depth == depth && node != root {
                continue;
            }
            link.depth = depth;
            let next = depth.map(|d| d + 1);
            for &c in &self.peers[node.index()].links[tree].children {
                queue.push_back((c, next));
            }
        }
    }

    // ---- validation ----------------------------------------------------

    /// Checks every structural, capacity and accounting invariant and
    /// returns the first violation found.
    pub fn validate(&self) -> Result<(), Violation> {
        let mut slot_children: u64 = 0;
        let mut subscriptions: u64 = 0;
        for peer in &self.peers {
            if peer.balance < 0 {
                return Err(Violation::NegativeBalance { peer: peer.id, balance: peer.balance });
            }
            let counted: u32 = peer.links.iter().map(|l| l.children.len() as u32).sum();
            if counted != peer.total_children || counted > peer.budget {
                return Err(Violation::Capacity {
                    peer: peer.id,
                    children: counted,
                    budget: peer.budget,
                });
            }
            slot_children += counted as u64;
            if !peer.id.is_server() {
                subscriptions += peer.links.iter().filter(|l| l.parent.is_some()).count() as u64;
            }
        }

        for tree in 0..self.num_trees {
            self.validate_tree(tree)?;
        }

        if slot_children != subscriptions {
            return Err(Violation::SlotConservation { children: slot_children, subscriptions });
        }
        let expected = self.minted - self.donations as Balance;
        let total = self.total_balance();
        if total != expected {
            return Err(Violation::MoneyConservation { total, expected });
        }
        Ok(())
    }

    fn validate_tree(&self, tree: usize) -> Result<(), Violation> {
        let server = &self.peers[0].links[tree];
        if server.parent.is_some() {
            return Err(Violation::ServerHasParent { tree });
        }

        let mut edges = 0;
        for peer in &self.peers {
            for &c in &peer.links[tree].children {
                edges += 1;
                let ok = self
                    .peers
                    .get(c.index())
                    .is_some_and(|cs| cs.links[tree].parent == Some(peer.id));
                if !ok {
                    return Err(Violation::ParentChildMismatch { tree, parent: peer.id, child: c });
                }
            }
            if let Some(p) = peer.links[tree].parent {
                let ok = self
                    .peers
                    .get(p.index())
                    .is_some_and(|ps| ps.links[tree].children.contains(&peer.id));
                if !ok {
                    return Err(Violation::ParentChildMismatch { tree, parent: p, child: peer.id });
                }
            }
        }

        // From-scratch breadth-first depths.
        let mut fresh: Vec<Option<u32>> = vec![None; self.peers.len()];
        fresh[0] = Some(0);
        let mut queue = VecDeque::from([PeerId::SERVER]);
        while let Some(node) = queue.pop_front() {
            let d = fresh[node.index()].unwrap();
            for &c in &self.peers[node.index()].links[tree].children {
                if fresh[c.index()].is_some() {
                    return Err(Violation::Cycle { tree, peer: c });
                }
                fresh[c.index()] = Some(d + 1);
                queue.push_back(c);
            }
        }

        let mut subscribers = 0;
        for peer in self.peers.iter().skip(1) {
            let link = &peer.links[tree];
            if link.parent.is_some() {
                subscribers += 1;
                if fresh[peer.id.index()].is_none() {
                    return Err(if self.on_cycle(tree, peer.id) {
                        Violation::Cycle { tree, peer: peer.id }
                    } else {
                        Violation::Disconnected { tree, peer: peer.id }
                    });
                }
            }
            if link.depth != fresh[peer.id.index()] {
                return Err(Violation::DepthMismatch {
                    tree,
                    peer: peer.id,
                    cached: link.depth,
                    expected: fresh[peer.id.index()],
                });
            }
        }
        if edges != subscribers {
            return Err(Violation::EdgeCount { tree, edges, subscribers });
        }
        Ok(())
    }

    fn on_cycle(&self, tree: usize, start: PeerId) -> bool {
        let mut node = start;
        for _ in 0..self.peers.len() {
            match self.peers[node.index()].links[tree].parent {
                Some(p) if p == start => return true,
                Some(p) => node = p,
                None => return false,
            }
        }
        true
    }

    // ---- snapshots -----------------------------------------------------

    pub fn snapshot(&self) -> ForestSnapshot {
        let peers = self
            .peers
            .iter()
            .map(|p| {
                (
                    p.id,
                    PeerSnapshot {
                        budget: p.budget,
                        balance: p.balance,
                        parents: p.links.iter().map(|l| l.parent).collect(),
                    },
                )
            })
            .collect();
        ForestSnapshot { num_trees: self.num_trees, donations: self.donations, peers }
    }

    /// Rebuilds a forest from a snapshot without enforcing any invariant;
    /// run [`Forest::validate`] on the result. Children are ordered by id.
    pub fn from_snapshot(snap: &ForestSnapshot) -> Result<Self, ModelError> {
        let count = snap.peers.keys().map(|id| id.index() + 1).max().unwrap_or(1);
        let server_budget = snap.peers.get(&PeerId::SERVER).map_or(0, |s| s.budget);
        let mut forest = Forest::new(snap.num_trees, server_budget);
        forest.minted = 0;
        for i in 1..count {
            forest.add_peer_with_balance(0, 0);
            forest.peers[i].id = PeerId(i as u32);
        }
        for (&id, ps) in &snap.peers {
            if ps.parents.len() != snap.num_trees {
                return Err(ModelError::TreeOutOfRange {
                    tree: ps.parents.len(),
                    num_trees: snap.num_trees,
                });
            }
            let peer = &mut forest.peers[id.index()];
            peer.budget = ps.budget;
            peer.balance = ps.balance;
            forest.minted += ps.balance;
        }
        for (&id, ps) in &snap.peers {
            for (tree, parent) in ps.parents.iter().enumerate() {
                if let Some(p) = *parent {
                    if !forest.contains(p) {
                        return Err(ModelError::NotFound(p));
                    }
                    forest.peers[id.index()].links[tree].parent = Some(p);
                    let ps = &mut forest.peers[p.index()];
                    ps.links[tree].children.push(id);
                    ps.total_children += 1;
                }
            }
        }
        forest.donations = snap.donations;
        forest.minted += snap.donations as Balance;
        for tree in 0..snap.num_trees {
            forest.refresh_depths(tree, PeerId::SERVER);
        }
        Ok(forest)
    }
}

/// Debug/golden-test view of a forest: peer id to per-tree parent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestSnapshot {
    pub num_trees: usize,
    /// Way-1 adoptions performed so far (money burnt).
    #[serde(default)]
    pub donations: u64,
    pub peers: BTreeMap<PeerId, PeerSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerSnapshot {
    pub budget: u32,
    pub balance: Balance,
    pub parents: Vec<Option<PeerId>>,
}
