//! Two-phase join of a peer into the overlay.
//!
//! Phase one picks a target tree `q*` in which several neighbors hold
//! children they would rather give away, buys into it (step 1), collects
//! children from the other backers (step 2) and lets neighbors with spare
//! slots adopt the joiner in their dominant trees (step 3). Phase two
//! completes the remaining subscriptions: cheapest purchase (step 4), free
//! slots of neighbors or of the free set (step 5), and one last pass of
//! child collection for `q*` (step 6).

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{JoinError, ReconfigError};
use crate::forest::{Forest, PeerId};
use crate::freeset::FreeSetDirectory;
use crate::reconfig::{way1_adopt, way2_buy, way3_swap, ReconfigKind, ReconfigReceipt};

/// The forest together with the free-set directory that tracks it.
#[derive(Debug, Clone)]
pub struct Overlay {
    pub forest: Forest,
    pub freeset: FreeSetDirectory,
}

impl Overlay {
    /// Wraps an existing forest and enrolls every qualifying peer (server
    /// included) in the free set.
    pub fn new(forest: Forest) -> Self {
        let mut freeset = FreeSetDirectory::new(forest.num_trees());
        freeset.refresh(&forest, PeerId::SERVER);
        for id in forest.peer_ids() {
            freeset.refresh(&forest, id);
        }
        Overlay { forest, freeset }
    }

    /// Starts a join session for `joiner` with neighbor set `neighbors`.
    pub fn session<'a, R: Rng + ?Sized>(
        &'a mut self,
        joiner: PeerId,
        neighbors: Vec<PeerId>,
        rng: &'a mut R,
    ) -> Result<JoinSession<'a, R>, ReconfigError> {
        let unsubscribed: BTreeSet<usize> = self.forest.unsubscribed_trees(joiner)?.into_iter().collect();
        let neighbors: Vec<PeerId> = neighbors
            .into_iter()
            .filter(|&j| j != joiner && self.forest.contains(j))
            .collect();
        self.forest.set_neighbors(joiner, neighbors.clone())?;
        Ok(JoinSession {
            overlay: self,
            rng,
            ctx: JoinContext {
                joiner,
                neighbors,
                unsubscribed,
                target: None,
                backers: Vec::new(),
                seller: None,
            },
            report: JoinReport { peer: joiner, ..JoinReport::default() },
        })
    }

    /// Runs the whole two-phase join for `joiner`. Also resumes a join that
    /// previously stopped on an exhausted free set.
    pub fn join<R: Rng + ?Sized>(
        &mut self,
        joiner: PeerId,
        neighbors: Vec<PeerId>,
        rng: &mut R,
    ) -> Result<JoinReport, Box<IncompleteJoin>> {
        let session = match self.session(joiner, neighbors, rng) {
            Ok(s) => s,
            Err(e) => {
                return Err(Box::new(IncompleteJoin {
                    report: JoinReport { peer: joiner, ..JoinReport::default() },
                    error: e.into(),
                }))
            }
        };
        session.run()
    }
}

/// Scheduling state of one joining peer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinContext {
    pub joiner: PeerId,
    /// `U_i`.
    pub neighbors: Vec<PeerId>,
    /// `P_i`: trees not subscribed yet.
    pub unsubscribed: BTreeSet<usize>,
    /// `q*`, the joiner's potential dominant sub-stream.
    pub target: Option<usize>,
    /// `U_i*`: neighbors holding non-dominant children in `q*`.
    pub backers: Vec<PeerId>,
    /// The backer bought from in step 1.
    pub seller: Option<PeerId>,
}

/// Summary of one join, serialized as one JSON line per join.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinReport {
    pub peer: PeerId,
    /// Money paid by the joiner, in order (Way-2 and Way-3 only).
    pub payments: Vec<u32>,
    pub freeset_requests: u64,
    pub completed: bool,
    #[serde(skip)]
    pub receipts: Vec<ReconfigReceipt>,
    #[serde(skip)]
    pub step6_ran: bool,
    /// Lowest balance of a receipt party right after any receipt.
    #[serde(skip)]
    pub min_balance: i64,
}

#[derive(Debug, Error)]
#[error("join of {} stopped early: {error}", report.peer)]
pub struct IncompleteJoin {
    pub report: JoinReport,
    #[source]
    pub error: JoinError,
}

pub struct JoinSession<'a, R: Rng + ?Sized> {
    overlay: &'a mut Overlay,
    rng: &'a mut R,
    ctx: JoinContext,
    report: JoinReport,
}

impl<'a, R: Rng + ?Sized> JoinSession<'a, R> {
    pub fn context(&self) -> &JoinContext {
        &self.ctx
    }

    pub fn forest(&self) -> &Forest {
        &self.overlay.forest
    }

    pub fn report(&self) -> &JoinReport {
        &self.report
    }

    /// Runs every step in order and registers the joiner in the free set if
    /// it keeps spare capacity.
    pub fn run(mut self) -> Result<JoinReport, Box<IncompleteJoin>> {
        let (target, backers) = self.select_target();
        self.ctx.target = target;
        self.ctx.backers = backers;
        self.phase1_step1();
        self.phase1_step2();
        self.phase1_step3();
        if !self.ctx.unsubscribed.is_empty() {
            self.phase2_step4();
            if let Err(error) = self.phase2_step5() {
                self.overlay.freeset.refresh(&self.overlay.forest, self.ctx.joiner);
                return Err(Box::new(IncompleteJoin { report: self.report, error }));
            }
        }
        self.phase2_step6();
        self.report.completed = true;
        self.overlay.freeset.refresh(&self.overlay.forest, self.ctx.joiner);
        Ok(self.report)
    }

    fn hop(&self, peer: PeerId, tree: usize) -> u32 {
        self.overlay.forest.hop_count(peer, tree).unwrap_or(u32::MAX)
    }

    fn balance(&self, peer: PeerId) -> i64 {
        self.overlay.forest.balance(peer).unwrap_or(0)
    }

    fn free(&self, peer: PeerId) -> u32 {
        self.overlay.forest.free_capacity(peer).unwrap_or(0)
    }

    fn subscribed(&self, peer: PeerId, tree: usize) -> bool {
        self.overlay.forest.is_subscribed(peer, tree).unwrap_or(false)
    }

    fn dominant(&self, peer: PeerId) -> usize {
        self.overlay.forest.dominant_substream(peer).unwrap_or(0)
    }

    /// Books a receipt: payments, `P_i` and free-set membership of the
    /// counterparty.
    fn record(&mut self, receipt: ReconfigReceipt) {
        let joiner = self.ctx.joiner;
        if receipt.payer == joiner {
            if receipt.kind != ReconfigKind::Way1 {
                self.report.payments.push(receipt.payment);
            }
            if receipt.kind != ReconfigKind::Way3 {
                self.ctx.unsubscribed.remove(&receipt.tree);
            }
        }
        for peer in [receipt.payer, receipt.payee] {
            self.report.min_balance = self.report.min_balance.min(self.balance(peer));
            if peer != joiner {
                self.overlay.freeset.refresh(&self.overlay.forest, peer);
            }
        }
        self.report.receipts.push(receipt);
    }

    fn adopt(&mut self, provider: PeerId, tree: usize) -> Result<(), ReconfigError> {
        let Overlay { forest, freeset } = &mut *self.overlay;
        let r = way1_adopt(forest, freeset, provider, self.ctx.joiner, tree)?;
        self.record(r);
        Ok(())
    }

    fn buy(&mut self, seller: PeerId, tree: usize, payment: u32) -> Result<(), ReconfigError> {
        let Overlay { forest, freeset } = &mut *self.overlay;
        let r = way2_buy(forest, freeset, self.ctx.joiner, seller, tree, payment)?;
        self.record(r);
        Ok(())
    }

    fn take_child(&mut self, giver: PeerId, tree: usize) -> Result<(), ReconfigError> {
        let Overlay { forest, freeset } = &mut *self.overlay;
        let r = way3_swap(forest, freeset, self.ctx.joiner, giver, tree, Some(tree))?;
        self.record(r);
        Ok(())
    }

    /// Adoption by `provider` in its dominant tree, when that tree is still
    /// missing and the provider can afford a slot.
    fn adopt_in_dominant(&mut self, provider: PeerId) {
        let tree = self.dominant(provider);
        if !self.subscribed(self.ctx.joiner, tree)
            && self.free(provider) >= 1
            && self.balance(provider) >= 1
        {
            let _ = self.adopt(provider, tree);
        }
    }

    /// Counts, per unsubscribed tree, the neighbors holding children there
    /// in a tree that is not their dominant one. Returns the tree with the
    /// highest count (lowest index on ties) and its contributors.
    pub fn select_target(&self) -> (Option<usize>, Vec<PeerId>) {
        let mut best: (Option<usize>, Vec<PeerId>) = (None, Vec::new());
        for &q in &self.ctx.unsubscribed {
            let backers: Vec<PeerId> = self
                .ctx
                .neighbors
                .iter()
                .copied()
                .filter(|&j| {
                    !j.is_server()
                        && self.subscribed(j, q)
                        && self.overlay.forest.child_count(j, q).unwrap_or(0) >= 1
                        && self.dominant(j) != q
                })
                .collect();
            if backers.len() > best.1.len() {
                best = (Some(q), backers);
            }
        }
        best
    }

    /// Step 1: buy `q*` from the shallowest backer.
    pub fn phase1_step1(&mut self) -> Vec<ReconfigReceipt> {
        let start = self.report.receipts.len();
        let joiner = self.ctx.joiner;
        let Some(target) = self.ctx.target else { return Vec::new() };
        let beta = self.balance(joiner);
        if beta < 1 || !self.ctx.unsubscribed.contains(&target) {
            return Vec::new();
        }
        let Some(seller) = self.ctx.backers.iter().copied().min_by_key(|&j| (self.hop(j, target), j))
        else {
            return Vec::new();
        };
        let price = self.overlay.forest.price(seller, target).unwrap_or(1) as i64;
        let reserve = self.ctx.unsubscribed.len() as i64 - 2;
        let payment = price
            .min(beta - reserve)
            .min(beta)
            .min(self.free(joiner) as i64)
            .max(1) as u32;
        if self.buy(seller, target, payment).is_ok() {
            self.ctx.seller = Some(seller);
            if payment > 1 {
                self.adopt_in_dominant(seller);
            }
        }
        self.report.receipts[start..].to_vec()
    }

    /// Step 2: one child of `q*` from every other backer, each paid one
    /// unit while a unit per missing sub-stream stays in reserve minus the
    /// one being bought; the backer then adopts the joiner in its dominant
    /// tree.
    pub fn phase1_step2(&mut self) -> Vec<ReconfigReceipt> {
        let start = self.report.receipts.len();
        let joiner = self.ctx.joiner;
        let Some(target) = self.ctx.target else { return Vec::new() };
        if !self.subscribed(joiner, target) {
            return Vec::new();
        }
        let mut others: Vec<PeerId> =
            self.ctx.backers.iter().copied().filter(|&j| Some(j) != self.ctx.seller).collect();
        others.sort_by_key(|&j| (self.hop(j, target), j));
        for giver in others {
            let reserve = self.ctx.unsubscribed.len() as i64;
            if self.balance(joiner) >= reserve.max(1) && self.free(joiner) >= 1 {
                let _ = self.take_child(giver, target);
            }
            self.adopt_in_dominant(giver);
        }
        self.report.receipts[start..].to_vec()
    }

    /// Step 3: neighbors with a free slot whose dominant tree is still
    /// missing adopt the joiner there, until none is left.
    pub fn phase1_step3(&mut self) -> Vec<ReconfigReceipt> {
        let start = self.report.receipts.len();
        loop {
            let candidate = self
                .ctx
                .neighbors
                .iter()
                .copied()
                .filter_map(|j| {
                    let q = self.dominant(j);
                    let ok = self.ctx.unsubscribed.contains(&q)
                        && self.subscribed(j, q)
                        && self.free(j) >= 1
                        && self.balance(j) >= 1;
                    ok.then_some((self.hop(j, q), j, q))
                })
                .min();
            match candidate {
                Some((_, j, q)) => {
                    if self.adopt(j, q).is_err() {
                        break;
                    }
                }
                None => break,
            }
        }
        self.report.receipts[start..].to_vec()
    }

    /// Step 4: buy every missing tree from the cheapest eligible neighbor
    /// (hop count, then id, break price ties). Unaffordable trees are left
    /// for step 5.
    pub fn phase2_step4(&mut self) -> Vec<ReconfigReceipt> {
        let start = self.report.receipts.len();
        let joiner = self.ctx.joiner;
        let missing: Vec<usize> = self.ctx.unsubscribed.iter().copied().collect();
        for q in missing {
            let forest = &self.overlay.forest;
            let best = self
                .ctx
                .neighbors
                .iter()
                .copied()
                .filter(|&j| {
                    !j.is_server()
                        && self.subscribed(j, q)
                        && self.dominant(j) != q
                        && forest.saturated_tree(j).ok().flatten() != Some(q)
                })
                .map(|j| (forest.price(j, q).unwrap_or(u32::MAX), self.hop(j, q), j))
                .min();
            let Some((price, _, seller)) = best else { continue };
            if price as i64 <= self.balance(joiner) && self.free(joiner) >= price {
                let _ = self.buy(seller, q, price);
            }
        }
        self.report.receipts[start..].to_vec()
    }

    /// Step 5: free slots of neighbors first (preferring a neighbor whose
    /// dominant tree is the missing one), then the free set.
    pub fn phase2_step5(&mut self) -> Result<Vec<ReconfigReceipt>, JoinError> {
        let start = self.report.receipts.len();
        let joiner = self.ctx.joiner;
        let missing: Vec<usize> = self.ctx.unsubscribed.iter().copied().collect();
        for q in missing {
            let local = self
                .ctx
                .neighbors
                .iter()
                .copied()
                .filter(|&j| self.subscribed(j, q) && self.free(j) >= 1 && self.balance(j) >= 1)
                .min_by_key(|&j| (self.dominant(j) != q, self.hop(j, q), j));
            if let Some(j) = local {
                if self.adopt(j, q).is_ok() {
                    continue;
                }
            }
            self.report.freeset_requests += 1;
            let found = {
                let Overlay { forest, freeset } = &mut *self.overlay;
                freeset.fs_find(forest, joiner, &mut *self.rng)
            };
            let adopted = match found.member {
                Some(m) => self.adopt(m, q).is_ok(),
                None => false,
            };
            if !adopted {
                return Err(JoinError::FreeSetExhausted {
                    peer: joiner,
                    missing: self.ctx.unsubscribed.len(),
                });
            }
        }
        Ok(self.report.receipts[start..].to_vec())
    }

    /// Step 6: a single pass over the backers collecting as many `q*`
    /// children as spare slots and balance allow.
    pub fn phase2_step6(&mut self) -> Vec<ReconfigReceipt> {
        let start = self.report.receipts.len();
        let joiner = self.ctx.joiner;
        let Some(target) = self.ctx.target else { return Vec::new() };
        if !self.ctx.unsubscribed.is_empty()
            || self.free(joiner) == 0
            || self.balance(joiner) < 1
            || self.ctx.backers.is_empty()
        {
            return Vec::new();
        }
        self.report.step6_ran = true;
        let mut backers = self.ctx.backers.clone();
        backers.sort_by_key(|&j| (self.hop(j, target), j));
        for giver in backers {
            while self.free(joiner) >= 1 && self.balance(joiner) >= 1 {
                if self.take_child(giver, target).is_err() {
                    break;
                }
            }
        }
        self.report.receipts[start..].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    /// A complete peer directly under the server in every tree.
    fn top_peer(f: &mut Forest, budget: u32) -> PeerId {
        let p = f.add_peer(budget);
        for k in 0..f.num_trees() {
            f.attach(k, p, PeerId::SERVER);
        }
        p
    }

    fn leaf(f: &mut Forest, parent: PeerId, tree: usize) -> PeerId {
        let c = f.add_peer(0);
        f.attach(tree, c, parent);
        c
    }

    #[test]
    fn first_peer_subscribes_through_the_server() {
        let mut ov = Overlay::new(Forest::new(4, 4));
        let p = ov.forest.add_peer(4);
        let report = ov.join(p, vec![PeerId::SERVER], &mut rng()).unwrap();
        assert!(report.completed);
        assert!(report.payments.is_empty());
        for k in 0..4 {
            assert_eq!(ov.forest.parent(p, k).unwrap(), Some(PeerId::SERVER));
        }
        assert_eq!(ov.forest.validate(), Ok(()));
        assert!(ov.freeset.is_member(p));
        assert!(!ov.freeset.is_member(PeerId::SERVER));
    }

    #[test]
    fn select_target_prefers_more_backers_then_lower_index() {
        let mut f = Forest::new(4, 16);
        let a = top_peer(&mut f, 4);
        let b = top_peer(&mut f, 4);
        // a: dominant 0, one child in tree 2; b: dominant 0, one child in
        // tree 1 and one in tree 2.
        for _ in 0..2 {
            leaf(&mut f, a, 0);
            leaf(&mut f, b, 0);
        }
        leaf(&mut f, a, 2);
        leaf(&mut f, b, 1);
        leaf(&mut f, b, 2);
        let mut ov = Overlay::new(f);
        let i = ov.forest.add_peer(4);
        let mut r = rng();
        let s = ov.session(i, vec![a, b], &mut r).unwrap();
        assert_eq!(s.select_target(), (Some(2), vec![a, b]));

        // Symmetric state: trees 1 and 3 each backed by both neighbors.
        let mut f = Forest::new(4, 16);
        let a = top_peer(&mut f, 4);
        let b = top_peer(&mut f, 4);
        for p in [a, b] {
            leaf(&mut f, p, 0);
            leaf(&mut f, p, 0);
            leaf(&mut f, p, 1);
            leaf(&mut f, p, 3);
        }
        let mut ov = Overlay::new(f);
        let i = ov.forest.add_peer(4);
        let s = ov.session(i, vec![b, a], &mut r).unwrap();
        assert_eq!(s.select_target(), (Some(1), vec![b, a]));
    }

    #[test]
    fn select_target_is_empty_when_every_neighbor_is_saturated() {
        let mut f = Forest::new(4, 16);
        let a = top_peer(&mut f, 4);
        for _ in 0..4 {
            leaf(&mut f, a, 3);
        }
        let mut ov = Overlay::new(f);
        let i = ov.forest.add_peer(4);
        let mut r = rng();
        let s = ov.session(i, vec![a], &mut r).unwrap();
        assert_eq!(s.select_target(), (None, vec![]));
    }

    #[test]
    fn step1_caps_payment_by_reserve() {
        // Seller price 4 in tree 1 (3 children, dominant elsewhere).
        let mut f = Forest::new(4, 16);
        let j = top_peer(&mut f, 8);
        for _ in 0..4 {
            leaf(&mut f, j, 0);
        }
        for _ in 0..3 {
            leaf(&mut f, j, 1);
        }
        let mut ov = Overlay::new(f);
        let i = ov.forest.add_peer(4);
        let mut r = rng();
        let mut s = ov.session(i, vec![j], &mut r).unwrap();
        let (t, b) = s.select_target();
        assert_eq!(t, Some(1));
        s.ctx.target = t;
        s.ctx.backers = b;
        let receipts = s.phase1_step1();
        // min(4, 4 - (4 - 2)) = 2, then j adopts i in its dominant tree 0.
        assert_eq!(receipts[0].payment, 2);
        assert_eq!(receipts[1].kind, ReconfigKind::Way1);
        assert_eq!(receipts[1].tree, 0);
    }

    #[test]
    fn step1_is_skipped_without_balance() {
        let mut f = Forest::new(4, 16);
        let j = top_peer(&mut f, 8);
        leaf(&mut f, j, 0);
        leaf(&mut f, j, 0);
        leaf(&mut f, j, 1);
        let mut ov = Overlay::new(f);
        let i = ov.forest.add_peer_with_balance(4, 0);
        let mut r = rng();
        let mut s = ov.session(i, vec![j], &mut r).unwrap();
        let (t, b) = s.select_target();
        s.ctx.target = t;
        s.ctx.backers = b;
        assert!(s.phase1_step1().is_empty());
    }

    #[test]
    fn step2_reserve_withholds_swap_but_not_adoption() {
        // i already holds tree 1 (q*) with balance 1 and three trees missing:
        // 1 < |P_i| = 3, so no swap; the giver still adopts i in its
        // dominant tree 0.
        let mut f = Forest::new(4, 16);
        let g = top_peer(&mut f, 6);
        leaf(&mut f, g, 0);
        leaf(&mut f, g, 0);
        leaf(&mut f, g, 1);
        let i = f.add_peer_with_balance(4, 1);
        f.attach(1, i, PeerId::SERVER);
        let mut ov = Overlay::new(f);
        let mut r = rng();
        let mut s = ov.session(i, vec![g], &mut r).unwrap();
        s.ctx.target = Some(1);
        s.ctx.backers = vec![g];
        let receipts = s.phase1_step2();
        assert_eq!(receipts.len(), 1);
        assert_eq!(receipts[0].kind, ReconfigKind::Way1);
        assert_eq!(receipts[0].tree, 0);
        assert_eq!(s.forest().child_count(g, 1).unwrap(), 1);
    }

    #[test]
    fn step2_without_other_backers_is_a_noop() {
        let mut f = Forest::new(4, 16);
        let g = top_peer(&mut f, 6);
        let i = f.add_peer(4);
        f.attach(1, i, PeerId::SERVER);
        let mut ov = Overlay::new(f);
        let mut r = rng();
        let mut s = ov.session(i, vec![g], &mut r).unwrap();
        s.ctx.target = Some(1);
        s.ctx.backers = vec![g];
        s.ctx.seller = Some(g);
        assert!(s.phase1_step2().is_empty());
    }

    #[test]
    fn step3_adopts_in_neighbor_dominant_tree() {
        let mut f = Forest::new(4, 16);
        let j = top_peer(&mut f, 4);
        leaf(&mut f, j, 2);
        let mut ov = Overlay::new(f);
        let i = ov.forest.add_peer(4);
        let mut r = rng();
        let mut s = ov.session(i, vec![j], &mut r).unwrap();
        let receipts = s.phase1_step3();
        // j has 3 free slots but after adopting i in tree 2 its dominant
        // tree is still 2, which i now holds: exactly one adoption.
        assert_eq!(receipts.len(), 1);
        assert_eq!(receipts[0].tree, 2);
        assert_eq!(s.context().unsubscribed.len(), 3);
    }

    #[test]
    fn step3_with_nothing_missing_is_a_noop() {
        let mut f = Forest::new(1, 4);
        let j = top_peer(&mut f, 4);
        let i = top_peer(&mut f, 4);
        let mut ov = Overlay::new(f);
        let mut r = rng();
        let mut s = ov.session(i, vec![j], &mut r).unwrap();
        assert!(s.phase1_step3().is_empty());
    }

    #[test]
    fn step4_breaks_price_ties_by_hop_count() {
        let mut f = Forest::new(2, 16);
        let shallow = top_peer(&mut f, 4);
        let mid = top_peer(&mut f, 4);
        // deep sits at hop 3 in tree 1, shallow at hop 1 but with a child.
        let deep = f.add_peer(4);
        f.attach(0, deep, PeerId::SERVER);
        let c = leaf(&mut f, mid, 1);
        let _ = c;
        f.attach(1, deep, c);
        // Both shallow and deep: price 2 in tree 1? make them equal.
        leaf(&mut f, shallow, 1);
        leaf(&mut f, deep, 1);
        for p in [shallow, deep] {
            leaf(&mut f, p, 0);
            leaf(&mut f, p, 0);
        }
        let mut ov = Overlay::new(f);
        let i = ov.forest.add_peer(4);
        ov.forest.attach(0, i, PeerId::SERVER);
        let mut r = rng();
        let mut s = ov.session(i, vec![deep, shallow], &mut r).unwrap();
        let receipts = s.phase2_step4();
        assert_eq!(receipts.len(), 1);
        assert_eq!(receipts[0].payee, shallow);
        assert_eq!(receipts[0].payment, 2);
    }

    #[test]
    fn step4_defers_unaffordable_trees() {
        let mut f = Forest::new(2, 16);
        let j = top_peer(&mut f, 6);
        for _ in 0..3 {
            leaf(&mut f, j, 0);
        }
        for _ in 0..2 {
            leaf(&mut f, j, 1);
        }
        let mut ov = Overlay::new(f);
        let i = ov.forest.add_peer_with_balance(4, 1);
        ov.forest.attach(0, i, PeerId::SERVER);
        let mut r = rng();
        let mut s = ov.session(i, vec![j], &mut r).unwrap();
        assert!(s.phase2_step4().is_empty());
        assert!(s.context().unsubscribed.contains(&1));
    }

    #[test]
    fn step5_falls_back_to_the_free_set() {
        // The only neighbor is full; the server still has a slot.
        let mut f = Forest::new(2, 3);
        let j = top_peer(&mut f, 1);
        leaf(&mut f, j, 0);
        let mut ov = Overlay::new(f);
        let i = ov.forest.add_peer(0);
        let mut r = rng();
        let mut s = ov.session(i, vec![j], &mut r).unwrap();
        s.ctx.unsubscribed = [1].into_iter().collect();
        s.phase2_step5().unwrap();
        assert_eq!(s.forest().hop_count(i, 1).unwrap(), 1);
        assert_eq!(s.report().freeset_requests, 1);
    }

    #[test]
    fn step5_reports_exhaustion() {
        let mut f = Forest::new(2, 2);
        let j = top_peer(&mut f, 1);
        leaf(&mut f, j, 0);
        let mut ov = Overlay::new(f);
        let i = ov.forest.add_peer(0);
        let err = ov.join(i, vec![j], &mut rng()).unwrap_err();
        assert!(matches!(err.error, JoinError::FreeSetExhausted { missing: 2, .. }));
        assert!(!err.report.completed);
        assert_eq!(ov.forest.validate(), Ok(()));
    }

    #[test]
    fn step6_is_limited_by_spare_slots() {
        // i holds all trees with one spare slot; two givers offer children
        // in q* = tree 1.
        let mut f = Forest::new(2, 16);
        let g1 = top_peer(&mut f, 4);
        let g2 = top_peer(&mut f, 4);
        for g in [g1, g2] {
            leaf(&mut f, g, 0);
            leaf(&mut f, g, 0);
            leaf(&mut f, g, 1);
        }
        let i = top_peer(&mut f, 2);
        leaf(&mut f, i, 1);
        let mut ov = Overlay::new(f);
        let mut r = rng();
        let mut s = ov.session(i, vec![g1, g2], &mut r).unwrap();
        s.ctx.target = Some(1);
        s.ctx.backers = vec![g1, g2];
        let receipts = s.phase2_step6();
        assert_eq!(receipts.len(), 1);
        assert_eq!(receipts[0].kind, ReconfigKind::Way3);
    }

    #[test]
    fn step6_needs_backers() {
        let mut f = Forest::new(1, 4);
        let i = top_peer(&mut f, 2);
        let mut ov = Overlay::new(f);
        let mut r = rng();
        let mut s = ov.session(i, vec![], &mut r).unwrap();
        s.ctx.target = Some(0);
        assert!(s.phase2_step6().is_empty());
    }
}
