//! Free-set membership maintained over the trees themselves.
//!
//! A member announces itself to every ancestor in every tree it belongs to,
//! so the server knows all members and any peer on a member's path knows
//! it. Lookups climb from a random parent of the requester until they hit
//! a peer that knows some member. Messages are counted, never sent.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::FreeSetError;
use crate::forest::{Forest, PeerId};
use crate::reconfig::TopologyObserver;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeSetCounters {
    pub join_messages: u64,
    pub leave_messages: u64,
    pub update_messages: u64,
    pub find_requests: u64,
    pub find_hops: u64,
    /// Calls whose message or hop count exceeded the depth bound.
    pub bound_violations: u64,
}

#[derive(Debug, Clone)]
pub struct FreeSetDirectory {
    num_trees: usize,
    members: BTreeSet<PeerId>,
    /// `knowledge[peer][tree]`: members in the subtree of `peer` in `tree`,
    /// the peer itself included when it is a member.
    knowledge: Vec<Vec<BTreeSet<PeerId>>>,
    counters: FreeSetCounters,
}

/// Outcome of one lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FindResult {
    pub member: Option<PeerId>,
    pub hops: u32,
}

impl FreeSetDirectory {
    pub fn new(num_trees: usize) -> Self {
        FreeSetDirectory {
            num_trees,
            members: BTreeSet::new(),
            knowledge: Vec::new(),
            counters: FreeSetCounters::default(),
        }
    }

    pub fn members(&self) -> &BTreeSet<PeerId> {
        &self.members
    }

    pub fn is_member(&self, peer: PeerId) -> bool {
        self.members.contains(&peer)
    }

    pub fn counters(&self) -> FreeSetCounters {
        self.counters
    }

    /// Members known to `peer` through its subtree in `tree`.
    pub fn known_in(&self, peer: PeerId, tree: usize) -> impl Iterator<Item = PeerId> + '_ {
        self.knowledge
            .get(peer.index())
            .into_iter()
            .flat_map(move |k| k[tree].iter().copied())
    }

    /// Lowest-id member known to `peer` through any of its trees.
    pub fn lowest_known(&self, peer: PeerId) -> Option<PeerId> {
        self.knowledge
            .get(peer.index())?
            .iter()
            .filter_map(|s| s.first().copied())
            .min()
    }

    /// A peer qualifies while it is fully subscribed and owns both a free
    /// slot and a money unit to donate.
    pub fn qualifies(forest: &Forest, peer: PeerId) -> bool {
        forest.peer(peer).is_ok_and(|p| {
            p.total_children() < p.budget
                && p.balance >= 1
                && p.links.iter().all(|l| l.depth.is_some())
        })
    }

    fn slot(&mut self, peer: PeerId) -> &mut Vec<BTreeSet<PeerId>> {
        let idx = peer.index();
        if self.knowledge.len() <= idx {
            self.knowledge.resize_with(idx + 1, || vec![BTreeSet::new(); self.num_trees]);
        }
        &mut self.knowledge[idx]
    }

    /// Announces `peer` along its path to the server in every tree it is
    /// subscribed to. Returns the number of messages sent.
    pub fn fs_join(&mut self, forest: &Forest, peer: PeerId) -> Result<u64, FreeSetError> {
        if !self.members.insert(peer) {
            return Err(FreeSetError::AlreadyMember(peer));
        }
        let mut messages = 0;
        let mut deepest = 0;
        for tree in 0..self.num_trees {
            self.slot(peer)[tree].insert(peer);
            let mut node = peer;
            while let Some(parent) = forest.link(node, tree).ok().and_then(|l| l.parent) {
                self.slot(parent)[tree].insert(peer);
                messages += 1;
                node = parent;
            }
            deepest = deepest.max(forest.link(peer, tree).ok().and_then(|l| l.depth).unwrap_or(0));
        }
        if messages > self.num_trees as u64 * deepest as u64 {
            self.counters.bound_violations += 1;
        }
        self.counters.join_messages += messages;
        Ok(messages)
    }

    /// Withdraws `peer` from every peer on its paths to the server.
    pub fn fs_leave(&mut self, forest: &Forest, peer: PeerId) -> Result<u64, FreeSetError> {
        if !self.members.remove(&peer) {
            return Err(FreeSetError::NotMember(peer));
        }
        let mut messages = 0;
        let mut deepest = 0;
        for tree in 0..self.num_trees {
            self.slot(peer)[tree].remove(&peer);
            let mut node = peer;
            while let Some(parent) = forest.link(node, tree).ok().and_then(|l| l.parent) {
                self.slot(parent)[tree].remove(&peer);
                messages += 1;
                node = parent;
            }
            deepest = deepest.max(forest.link(peer, tree).ok().and_then(|l| l.depth).unwrap_or(0));
        }
        if messages > self.num_trees as u64 * deepest as u64 {
            self.counters.bound_violations += 1;
        }
        self.counters.leave_messages += messages;
        Ok(messages)
    }

    /// Joins or leaves according to [`FreeSetDirectory::qualifies`]. The
    /// server is treated like any other peer.
    pub fn refresh(&mut self, forest: &Forest, peer: PeerId) -> u64 {
        match (self.is_member(peer), Self::qualifies(forest, peer)) {
            (false, true) => self.fs_join(forest, peer).unwrap_or(0),
            (true, false) => self.fs_leave(forest, peer).unwrap_or(0),
            _ => 0,
        }
    }

    /// Re-announces a member that moved from `old_parent` to `new_parent`
    /// in `tree`: leave along the old path and join along the new one, up
    /// to the peer where both paths meet. The forest must already show the
    /// new parent.
    pub fn fs_update_on_reparent(
        &mut self,
        forest: &Forest,
        member: PeerId,
        tree: usize,
        old_parent: Option<PeerId>,
        new_parent: PeerId,
    ) -> u64 {
        if !self.is_member(member) {
            return 0;
        }
        self.move_known(forest, tree, &[member], old_parent, new_parent)
    }

    fn move_known(
        &mut self,
        forest: &Forest,
        tree: usize,
        moved: &[PeerId],
        old_parent: Option<PeerId>,
        new_parent: PeerId,
    ) -> u64 {
        let meet = old_parent.and_then(|op| meeting_point(forest, tree, op, new_parent));
        let mut per_member = 0u64;

        let mut node = old_parent;
        while let Some(n) = node {
            if Some(n) == meet {
                break;
            }
            let set = &mut self.slot(n)[tree];
            for m in moved {
                set.remove(m);
            }
            per_member += 1;
            node = forest.link(n, tree).ok().and_then(|l| l.parent);
        }
        let mut node = Some(new_parent);
        while let Some(n) = node {
            if Some(n) == meet {
                break;
            }
            let set = &mut self.slot(n)[tree];
            set.extend(moved.iter().copied());
            per_member += 1;
            node = forest.link(n, tree).ok().and_then(|l| l.parent);
        }

        let d = forest.link(new_parent, tree).ok().and_then(|l| l.depth).unwrap_or(0) as u64 + 1;
        let old_d = old_parent
            .and_then(|op| forest.link(op, tree).ok().and_then(|l| l.depth))
            .map_or(0, |x| x as u64 + 1);
        if per_member > d + old_d {
            self.counters.bound_violations += 1;
        }
        let messages = per_member * moved.len() as u64;
        self.counters.update_messages += messages;
        messages
    }

    /// Looks up a member on behalf of `requester`, starting from one of its
    /// parents picked uniformly at random. A requester without any parent
    /// asks the server directly. Every call counts as one request.
    pub fn fs_find<R: Rng + ?Sized>(&mut self, forest: &Forest, requester: PeerId, rng: &mut R) -> FindResult {
        self.counters.find_requests += 1;
        if self.members.is_empty() {
            return FindResult { member: None, hops: 0 };
        }
        let parents: Vec<(usize, PeerId)> = forest
            .peer(requester)
            .map(|p| {
                p.links
                    .iter()
                    .enumerate()
                    .filter_map(|(k, l)| l.parent.map(|par| (k, par)))
                    .collect()
            })
            .unwrap_or_default();
        if parents.is_empty() {
            self.counters.find_hops += 1;
            let member = self.lowest_known(PeerId::SERVER);
            return FindResult { member, hops: 1 };
        }
        let (tree, first) = parents[rng.random_range(0..parents.len())];
        let bound = forest.link(requester, tree).ok().and_then(|l| l.depth).unwrap_or(1);

        let mut hops = 1;
        let mut node = first;
        let member = loop {
            if let Some(m) = self.lowest_known(node) {
                break Some(m);
            }
            match forest.link(node, tree).ok().and_then(|l| l.parent) {
                Some(p) => {
                    node = p;
                    hops += 1;
                }
                None => break None,
            }
        };
        if hops > bound {
            self.counters.bound_violations += 1;
        }
        self.counters.find_hops += hops as u64;
        FindResult { member, hops }
    }

    /// Checks that every member is known along each of its tree paths
    /// (so the server knows every member) and that no peer knows a
    /// non-member or a member outside its subtree. Returns the first
    /// offending (member, tree) pair.
    pub fn check_invariants(&self, forest: &Forest) -> Result<(), (PeerId, usize)> {
        for &m in &self.members {
            for tree in 0..self.num_trees {
                let mut node = Some(m);
                while let Some(n) = node {
                    let known = self.knowledge.get(n.index()).is_some_and(|k| k[tree].contains(&m));
                    if !known {
                        return Err((m, tree));
                    }
                    node = forest.link(n, tree).ok().and_then(|l| l.parent);
                }
            }
        }
        for (idx, sets) in self.knowledge.iter().enumerate() {
            let holder = PeerId(idx as u32);
            for (tree, set) in sets.iter().enumerate() {
                for &m in set {
                    if !self.is_member(m) || !crate::reconfig::is_ancestor(forest, tree, holder, m) {
                        return Err((m, tree));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Deepest common ancestor of `a` and `b` in `tree`, if they share a root.
fn meeting_point(forest: &Forest, tree: usize, a: PeerId, b: PeerId) -> Option<PeerId> {
    let depth = |p: PeerId| forest.link(p, tree).ok().and_then(|l| l.depth);
    let parent = |p: PeerId| forest.link(p, tree).ok().and_then(|l| l.parent);
    let (mut a, mut b) = (a, b);
    let (mut da, mut db) = (depth(a)?, depth(b)?);
    while da > db {
        a = parent(a)?;
        da -= 1;
    }
    while db > da {
        b = parent(b)?;
        db -= 1;
    }
    while a != b {
        a = parent(a)?;
        b = parent(b)?;
    }
    Some(a)
}

impl TopologyObserver for FreeSetDirectory {
    fn subtree_moved(
        &mut self,
        forest: &Forest,
        tree: usize,
        root: PeerId,
        old_parent: Option<PeerId>,
        new_parent: PeerId,
    ) {
        let moved: Vec<PeerId> = match self.knowledge.get(root.index()) {
            Some(k) if !k[tree].is_empty() => k[tree].iter().copied().collect(),
            _ => return,
        };
        self.move_known(forest, tree, &moved, old_parent, new_parent);
    }
}
