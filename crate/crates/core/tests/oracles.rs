mod common;

use crashsim::app::markov::TransitionMatrix;
use crashsim::app::{workload_mix_check, OpCatalog};
use crashsim::runtime::ComponentCatalog;

use common::*;

#[test]
fn ledger_matches_replay_on_random_traces() {
    let bad = ledger_mismatches(1000, 10_000);
    assert!(bad.is_empty(), "seeds {bad:?}");
}

#[test]
fn replay_counts_a_hand_trace() {
    let t = [
        LedgerOp::Record { action: 1, at: 100 },
        LedgerOp::Record { action: 1, at: 1_500 },
        LedgerOp::Record { action: 2, at: 1_600 },
        LedgerOp::Resolve { action: 1, good: false, at: 2_100 },
        LedgerOp::Abandon { action: 2 },
        LedgerOp::Resolve { action: 2, good: true, at: 2_200 },
    ];
    let r = replay(&t);
    assert_eq!(r.rows.len(), 3);
    assert_eq!((r.rows[0].bad_requests, r.rows[1].bad_requests), (1, 1));
    assert_eq!(r.rows[2].bad_actions, 1);
    assert_eq!(r.rows.iter().map(|x| x.good_requests + x.good_actions).sum::<u64>(), 0);
    assert_eq!((r.abandoned, r.unresolved), (1, 0));
}

#[test]
fn recovery_groups_match_reverse_reachability() {
    let bad = group_mismatches(1000);
    assert!(bad.is_empty(), "seeds {bad:?}");
}

#[test]
fn stationary_vector_matches_direct_solve() {
    let c = ComponentCatalog::demo();
    let ops = OpCatalog::demo(&c);
    let m = TransitionMatrix::demo(&ops);
    let iter = m.stationary().unwrap();
    let lu = stationary_lu(&m);
    assert_eq!(iter.len(), 25);
    for (a, b) in iter.iter().zip(&lu) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    // Table 1 mix, recomputed from the direct solve.
    let target = [32.0, 23.0, 12.0, 12.0, 11.0, 10.0];
    let mix = workload_mix_check(&m, &ops).unwrap();
    for ((cat, _), want) in mix.iter().zip(target) {
        let share: f64 = ops.ids().filter(|i| ops.get(*i).category == *cat).map(|i| lu[i.index()]).sum();
        assert!((100.0 * share - want).abs() <= 2.0, "{cat}: {share}");
    }
}
