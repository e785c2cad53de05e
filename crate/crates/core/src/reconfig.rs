//! The three atomic tree reconfigurations.
//!
//! * Way-1: a peer with a free slot adopts an unsubscribed peer.
//! * Way-2: a buyer takes over a seller's position in a tree by paying for
//!   the seller and some of its children.
//! * Way-3: a peer takes one child from another peer for one money unit.
//!
//! Every primitive checks all of its preconditions before mutating, so a
//! returned error leaves the forest untouched.

use serde::{Deserialize, Serialize};

use crate::error::ReconfigError;
use crate::forest::{Forest, PeerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconfigKind {
    Way1,
    Way2,
    Way3,
}

/// Record of one applied reconfiguration.
///
/// `payer` is the peer that gained the position or child (the adoptee for
/// Way-1, the buyer for Way-2, the taker for Way-3); `payee` is the
/// provider, seller or giver.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconfigReceipt {
    pub kind: ReconfigKind,
    pub payer: PeerId,
    pub payee: PeerId,
    pub payment: u32,
    pub tree: usize,
    pub transferred_children: Vec<PeerId>,
}

/// Notified after a subtree changed parent. The forest passed in already
/// reflects the move; the path above `old_parent` is unaffected by it.
pub trait TopologyObserver {
    fn subtree_moved(
        &mut self,
        forest: &Forest,
        tree: usize,
        root: PeerId,
        old_parent: Option<PeerId>,
        new_parent: PeerId,
    );
}

impl TopologyObserver for () {
    fn subtree_moved(&mut self, _: &Forest, _: usize, _: PeerId, _: Option<PeerId>, _: PeerId) {}
}

fn require_balance(forest: &Forest, peer: PeerId, required: u32) -> Result<(), ReconfigError> {
    let balance = forest.balance(peer)?;
    if balance < required as i64 {
        return Err(ReconfigError::InsufficientBalance { peer, balance, required: required as i64 });
    }
    Ok(())
}

fn require_unsubscribed(forest: &Forest, peer: PeerId, tree: usize) -> Result<(), ReconfigError> {
    if forest.is_subscribed(peer, tree)? {
        return Err(ReconfigError::AlreadySubscribed { peer, tree });
    }
    Ok(())
}

fn require_subscribed(forest: &Forest, peer: PeerId, tree: usize) -> Result<(), ReconfigError> {
    if !forest.is_subscribed(peer, tree)? {
        return Err(crate::error::ModelError::NotSubscribed { peer, tree }.into());
    }
    Ok(())
}

/// Way-1: `provider` uses one free slot to adopt `adoptee` in `tree`.
///
/// The provider's balance drops by one; the adoptee pays nothing.
pub fn way1_adopt(
    forest: &mut Forest,
    obs: &mut impl TopologyObserver,
    provider: PeerId,
    adoptee: PeerId,
    tree: usize,
) -> Result<ReconfigReceipt, ReconfigError> {
    if provider == adoptee {
        return Err(ReconfigError::SelfTrade);
    }
    require_subscribed(forest, provider, tree)?;
    require_unsubscribed(forest, adoptee, tree)?;
    if forest.free_capacity(provider)? == 0 {
        return Err(ReconfigError::NoFreeCapacity(provider));
    }
    if forest.balance(provider)? < 1 {
        return Err(ReconfigError::ProviderBroke(provider));
    }

    forest.attach(tree, adoptee, provider);
    forest.adjust_balance(provider, -1);
    forest.record_donation();
    obs.subtree_moved(forest, tree, adoptee, None, provider);

    Ok(ReconfigReceipt {
        kind: ReconfigKind::Way1,
        payer: adoptee,
        payee: provider,
        payment: 0,
        tree,
        transferred_children: Vec::new(),
    })
}

/// Way-2: `buyer` pays `payment` units to take `seller`'s place in `tree`.
///
/// The buyer inherits the seller's parent and becomes the parent of the
/// seller and of the `payment - 1` lowest-id children of the seller; the
/// seller keeps its remaining children.
pub fn way2_buy(
    forest: &mut Forest,
    obs: &mut impl TopologyObserver,
    buyer: PeerId,
    seller: PeerId,
    tree: usize,
    payment: u32,
) -> Result<ReconfigReceipt, ReconfigError> {
    if buyer == seller {
        return Err(ReconfigError::SelfTrade);
    }
    if seller.is_server() || buyer.is_server() {
        return Err(ReconfigError::ServerCannotTrade);
    }
    require_subscribed(forest, seller, tree)?;
    require_unsubscribed(forest, buyer, tree)?;
    if forest.saturated_tree(seller)? == Some(tree) {
        return Err(ReconfigError::SellerSaturated { seller, tree });
    }
    if payment == 0 {
        return Err(ReconfigError::ZeroPayment);
    }
    let price = forest.price(seller, tree)?;
    if payment > price {
        return Err(ReconfigError::PriceExceeded { payment, price });
    }
    require_balance(forest, buyer, payment)?;
    let free = forest.free_capacity(buyer)?;
    if free < payment {
        return Err(ReconfigError::InsufficientSlots { peer: buyer, free, required: payment });
    }

    let mut moved: Vec<PeerId> = forest.children(seller, tree)?.to_vec();
    moved.sort_unstable();
    moved.truncate(payment as usize - 1);

    let old_parent = forest.parent(seller, tree)?.expect("subscribed non-server has a parent");
    forest.replace_in_parent(tree, seller, buyer);
    obs.subtree_moved(forest, tree, buyer, None, old_parent);
    forest.attach(tree, seller, buyer);
    obs.subtree_moved(forest, tree, seller, Some(old_parent), buyer);
    for &child in &moved {
        forest.detach(tree, child);
        forest.attach(tree, child, buyer);
        obs.subtree_moved(forest, tree, child, Some(seller), buyer);
    }
    forest.adjust_balance(buyer, -(payment as i64));
    forest.adjust_balance(seller, payment as i64);

    Ok(ReconfigReceipt {
        kind: ReconfigKind::Way2,
        payer: buyer,
        payee: seller,
        payment,
        tree,
        transferred_children: moved,
    })
}

/// Way-3: `taker` pays one unit for the lowest-id child of `giver` in
/// `tree`.
///
/// `tree` must be the taker's dominant sub-stream, or `declared_target`
/// (a joining peer's potential dominant sub-stream), and must not be the
/// giver's dominant sub-stream.
pub fn way3_swap(
    forest: &mut Forest,
    obs: &mut impl TopologyObserver,
    taker: PeerId,
    giver: PeerId,
    tree: usize,
    declared_target: Option<usize>,
) -> Result<ReconfigReceipt, ReconfigError> {
    if taker == giver {
        return Err(ReconfigError::SelfTrade);
    }
    if taker.is_server() || giver.is_server() {
        return Err(ReconfigError::ServerCannotTrade);
    }
    require_subscribed(forest, taker, tree)?;
    require_subscribed(forest, giver, tree)?;
    if declared_target != Some(tree) && forest.dominant_substream(taker)? != tree {
        return Err(ReconfigError::NotTakersTarget { taker, tree });
    }
    if forest.child_count(giver, tree)? == 0 {
        return Err(ReconfigError::NoChildToGive { giver, tree });
    }
    if forest.dominant_substream(giver)? == tree {
        return Err(ReconfigError::TreeIsGiversDominant { giver, tree });
    }
    if forest.free_capacity(taker)? == 0 {
        return Err(ReconfigError::NoFreeCapacity(taker));
    }
    require_balance(forest, taker, 1)?;

    // The taker must not end up below its own new child.
    let child = forest
        .children(giver, tree)?
        .iter()
        .copied()
        .filter(|&c| !is_ancestor(forest, tree, c, taker))
        .min()
        .ok_or(ReconfigError::NoChildToGive { giver, tree })?;

    forest.detach(tree, child);
    forest.attach(tree, child, taker);
    obs.subtree_moved(forest, tree, child, Some(giver), taker);
    forest.adjust_balance(taker, -1);
    forest.adjust_balance(giver, 1);

    Ok(ReconfigReceipt {
        kind: ReconfigKind::Way3,
        payer: taker,
        payee: giver,
        payment: 1,
        tree,
        transferred_children: vec![child],
    })
}

/// Whether `ancestor` lies on the path from `node` to the server.
pub(crate) fn is_ancestor(forest: &Forest, tree: usize, ancestor: PeerId, node: PeerId) -> bool {
    let mut cur = Some(node);
    while let Some(n) = cur {
        if n == ancestor {
            return true;
        }
        cur = forest.peer(n).ok().and_then(|p| p.links[tree].parent);
    }
    false
}
