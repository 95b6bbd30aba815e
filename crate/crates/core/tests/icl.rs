mod common;

use bnmm_core::effects::adjusted_rand_index;
use bnmm_core::sbm::{select_q, IclMode};

#[test]
fn icl_recovers_planted_block_count() {
    for q in [3, 4, 5] {
        let (hits, picks) = common::icl_recovery(q, 100 + q as u64);
        assert!(hits >= 8, "q = {q}: picks {picks:?}");
    }
}

#[test]
fn icl_recovers_planted_partition() {
    let (ds, truth) = common::planted(9, 4, 40, 4, 2);
    let fit = select_q(&ds, 4, 4, 0, IclMode::Layered).unwrap();
    let ari = adjusted_rand_index(fit.best().allocation.labels(), &truth);
    assert!((ari - 1.0).abs() < 1e-12, "ARI {ari}");
}
