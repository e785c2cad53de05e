//! SplitStream-style comparator.
//!
//! Peers get random digit strings and tree `k` gets a group id starting
//! with digit `k`. A peer only acts as an interior node of the tree whose
//! group id shares its first digit, which keeps interior sets disjoint.
//! Full parents evict the child with the worst prefix match, and peers
//! without a parent fall back to the spare capacity group: every peer with
//! a free slot. There is no DHT; parents come from the tracker sample.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::BaselineError;
use crate::forest::{Forest, PeerId};
use crate::reconfig::is_ancestor;

/// Length of every peer id in digits.
pub const ID_DIGITS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineEventKind {
    /// Attached under a sampled candidate.
    Attach,
    /// Took the place of an evicted child.
    Displace,
    /// Attached under a spare group member.
    Spare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineEvent {
    pub kind: BaselineEventKind,
    pub peer: PeerId,
    pub parent: PeerId,
    pub tree: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineJoinReport {
    pub peer: PeerId,
    pub spare_requests: u32,
    pub evictions: u32,
    pub completed: bool,
    #[serde(skip)]
    pub events: Vec<BaselineEvent>,
}

#[derive(Debug, Clone)]
pub struct BaselineOverlay {
    pub forest: Forest,
    digits: Vec<[u8; ID_DIGITS]>,
    /// Peers (server included) with at least one free slot.
    spare: BTreeSet<PeerId>,
    requests: Vec<u32>,
}

impl BaselineOverlay {
    /// Draws a random id for every peer already in `forest`.
    pub fn new<R: Rng + ?Sized>(forest: Forest, rng: &mut R) -> Self {
        let base = forest.num_trees().max(2) as u8;
        let mut digits = vec![[0u8; ID_DIGITS]; forest.num_peers() + 1];
        for d in digits.iter_mut().skip(1) {
            for x in d.iter_mut() {
                *x = rng.random_range(0..base);
            }
        }
        let mut spare = BTreeSet::new();
        for id in std::iter::once(PeerId::SERVER).chain(forest.peer_ids()) {
            if forest.free_capacity(id).unwrap_or(0) > 0 {
                spare.insert(id);
            }
        }
        let requests = vec![0; forest.num_peers() + 1];
        BaselineOverlay { forest, digits, spare, requests }
    }

    /// Overrides a peer's id digits. The first digit picks the tree in
    /// which the peer may forward.
    pub fn set_digits(&mut self, peer: PeerId, digits: [u8; ID_DIGITS]) {
        self.digits[peer.0 as usize] = digits;
    }

    pub fn digits(&self, peer: PeerId) -> [u8; ID_DIGITS] {
        self.digits[peer.0 as usize]
    }

    /// Length of the prefix shared with the group id of `tree`, which is
    /// digit `tree` followed by zeros. The server roots every tree and
    /// matches fully.
    pub fn prefix_match(&self, peer: PeerId, tree: usize) -> usize {
        if peer.is_server() {
            return ID_DIGITS + 1;
        }
        let d = &self.digits[peer.0 as usize];
        if d[0] as usize != tree {
            return 0;
        }
        1 + d[1..].iter().take_while(|&&x| x == 0).count()
    }

    /// Spare group requests issued by `peer` so far.
    pub fn requests(&self, peer: PeerId) -> u32 {
        self.requests.get(peer.0 as usize).copied().unwrap_or(0)
    }

    pub fn total_requests(&self) -> u64 {
        self.requests.iter().map(|&r| r as u64).sum()
    }

    fn track(&mut self, peer: PeerId) {
        if self.forest.free_capacity(peer).unwrap_or(0) > 0 {
            self.spare.insert(peer);
        } else {
            self.spare.remove(&peer);
        }
    }

    fn attach(&mut self, tree: usize, child: PeerId, parent: PeerId) {
        self.forest.attach(tree, child, parent);
        self.track(parent);
    }

    /// Shallowest spare group member subscribed to `tree` that can adopt
    /// `peer` without creating a cycle, lowest id on ties. Counts one
    /// request for `peer`.
    pub fn spare_group_request(&mut self, peer: PeerId, tree: usize) -> Option<PeerId> {
        if let Some(r) = self.requests.get_mut(peer.0 as usize) {
            *r += 1;
        }
        let mut found: Vec<(u32, PeerId)> = self
            .spare
            .iter()
            .copied()
            .filter(|&m| m != peer)
            .filter_map(|m| self.forest.hop_count(m, tree).ok().map(|d| (d, m)))
            .collect();
        found.sort_unstable();
        found
            .into_iter()
            .map(|(_, m)| m)
            .find(|&m| !is_ancestor(&self.forest, tree, peer, m))
    }

    /// Picks the child of `parent` in `tree` to evict in favor of
    /// `new_child`: the worst prefix match, lowest id on ties. May return
    /// `new_child` itself.
    pub fn reject_child(&self, parent: PeerId, new_child: PeerId, tree: usize) -> PeerId {
        let children = self.forest.children(parent, tree).unwrap_or(&[]);
        children
            .iter()
            .copied()
            .chain(std::iter::once(new_child))
            .min_by_key(|&c| (self.prefix_match(c, tree), c))
            .unwrap_or(new_child)
    }

    /// Joins `peer` in every tree it misses, using `candidates` as the
    /// possible parents.
    pub fn baseline_join(
        &mut self,
        peer: PeerId,
        candidates: &[PeerId],
    ) -> Result<BaselineJoinReport, (BaselineJoinReport, BaselineError)> {
        let mut report = BaselineJoinReport { peer, ..BaselineJoinReport::default() };
        let before = self.requests(peer);
        let mut failure = None;
        for tree in 0..self.forest.num_trees() {
            if self.forest.is_subscribed(peer, tree).unwrap_or(true) {
                continue;
            }
            if let Err(e) = self.join_tree(peer, candidates, tree, &mut report) {
                failure.get_or_insert(e);
            }
        }
        report.spare_requests = self.requests(peer) - before;
        report.completed = self.forest.is_complete(peer).unwrap_or(false);
        match failure {
            None => Ok(report),
            Some(e) => Err((report, e)),
        }
    }

    /// `peer` takes the place of `evicted` under `parent`.
    fn displace(&mut self, tree: usize, peer: PeerId, evicted: PeerId, parent: PeerId, report: &mut BaselineJoinReport) {
        self.forest.detach(tree, evicted);
        self.attach(tree, peer, parent);
        report.evictions += 1;
        report.events.push(BaselineEvent { kind: BaselineEventKind::Displace, peer, parent, tree });
    }

    fn join_tree(
        &mut self,
        peer: PeerId,
        candidates: &[PeerId],
        tree: usize,
        report: &mut BaselineJoinReport,
    ) -> Result<(), BaselineError> {
        let mut eligible: Vec<PeerId> = candidates
            .iter()
            .copied()
            .filter(|&c| {
                c != peer
                    && self.prefix_match(c, tree) > 0
                    && self.forest.is_subscribed(c, tree).unwrap_or(false)
                    && !is_ancestor(&self.forest, tree, peer, c)
            })
            .collect();
        eligible.sort_by_key(|&c| (std::cmp::Reverse(self.prefix_match(c, tree)), c));

        if let Some(&parent) = eligible.iter().find(|&&c| self.forest.free_capacity(c).unwrap_or(0) > 0) {
            self.attach(tree, peer, parent);
            report.events.push(BaselineEvent { kind: BaselineEventKind::Attach, peer, parent, tree });
            return Ok(());
        }

        // Full parent: the worst-matching child makes room and looks for a
        // new parent in the spare group, the newcomer included.
        let best = eligible.first().copied();
        if let Some(parent) = best {
            let evicted = self.reject_child(parent, peer, tree);
            if evicted != peer {
                self.displace(tree, peer, evicted, parent, report);
                if let Some(spare) = self.spare_group_request(evicted, tree) {
                    self.attach(tree, evicted, spare);
                    report.events.push(BaselineEvent { kind: BaselineEventKind::Spare, peer: evicted, parent: spare, tree });
                    return Ok(());
                }
                self.forest.detach(tree, peer);
                self.forest.refresh_depths(tree, peer);
                self.attach(tree, evicted, parent);
                report.evictions -= 1;
                report.events.pop();
            }
        }

        if let Some(parent) = self.spare_group_request(peer, tree) {
            self.attach(tree, peer, parent);
            report.events.push(BaselineEvent { kind: BaselineEventKind::Spare, peer, parent, tree });
            return Ok(());
        }

        // Push-down: a newcomer with upload capacity takes the slot of the
        // worst child of the best candidate and adopts it.
        if let Some(parent) = best {
            if self.forest.free_capacity(peer).unwrap_or(0) > 0 {
                let evicted = self
                    .forest
                    .children(parent, tree)
                    .unwrap_or(&[])
                    .iter()
                    .copied()
                    .min_by_key(|&c| (self.prefix_match(c, tree), c));
                if let Some(evicted) = evicted {
                    self.displace(tree, peer, evicted, parent, report);
                    self.attach(tree, evicted, peer);
                    report.events.push(BaselineEvent { kind: BaselineEventKind::Spare, peer: evicted, parent: peer, tree });
                    return Ok(());
                }
            }
        }
        Err(BaselineError::SpareGroupExhausted { peer, tree })
    }
}
