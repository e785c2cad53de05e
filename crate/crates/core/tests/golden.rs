mod common;

use budgetcast::{PeerId, ReconfigKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn fixture_matches_the_example_prices() {
    let g = common::golden();
    let f = &g.overlay.forest;
    for p in [g.a, g.d] {
        assert_eq!(f.price_vector(p).unwrap().0, vec![2, 3, 1, 1]);
        assert_eq!(f.dominant_substream(p).unwrap(), 1);
    }
    assert_eq!(f.saturated_tree(g.b).unwrap(), Some(3));
    assert_eq!(f.saturated_tree(g.c).unwrap(), Some(2));
    assert_eq!(f.free_capacity(PeerId::SERVER).unwrap(), 0);
}

#[test]
fn join_reproduces_the_example_trace() {
    let mut g = common::golden();
    let (i, a, d) = (g.joiner, g.a, g.d);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let report = g.overlay.join(i, vec![g.a, g.b, g.c, g.d], &mut rng).unwrap();

    assert!(report.completed);
    assert_eq!(report.payments, vec![2, 1, 1]);
    assert_eq!(report.freeset_requests, 0);
    assert!(!report.step6_ran);

    let steps: Vec<_> = report.receipts.iter().map(|r| (r.kind, r.payer, r.payee, r.tree, r.payment)).collect();
    assert_eq!(
        steps,
        vec![
            (ReconfigKind::Way2, i, a, 0, 2),
            (ReconfigKind::Way1, i, a, 1, 0),
            (ReconfigKind::Way3, i, d, 0, 1),
            (ReconfigKind::Way2, i, d, 2, 1),
            (ReconfigKind::Way1, i, d, 3, 0),
        ]
    );

    let f = &g.overlay.forest;
    assert_eq!(f.balance(i).unwrap(), 0);
    assert_eq!(f.child_count(i, 0).unwrap(), 3);
    assert_eq!(f.child_count(i, 2).unwrap(), 1);
    assert_eq!(f.total_children(i).unwrap(), 4);
    assert_eq!(f.parent(i, 0).unwrap(), Some(PeerId::SERVER));
    assert_eq!(f.parent(i, 1).unwrap(), Some(a));
    assert_eq!(f.parent(i, 2).unwrap(), Some(PeerId::SERVER));
    assert_eq!(f.parent(i, 3).unwrap(), Some(d));
    assert_eq!(f.parent(a, 0).unwrap(), Some(i));
    assert_eq!(f.parent(d, 2).unwrap(), Some(i));
    assert_eq!(f.validate(), Ok(()));
}
