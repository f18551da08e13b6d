mod common;

use proptest::prelude::*;

use crashsim::app::FunctionalGroup;
use crashsim::cluster::six_nines_budget;
use crashsim::faultlib::{CorruptionMode, FaultClass};
use crashsim::harness::output::merged_timeline;
use crashsim::harness::scenario::{FaultEntry, Scenario};
use crashsim::recoverymgr::{detection_headroom, fp_headroom, RecoveryLevel};
use crashsim::runtime::dependents_closure;
use crashsim::world::{simulate, FailureInterval};

use common::*;

fn op() -> impl Strategy<Value = LedgerOp> {
    let action = 0..8u64;
    prop_oneof![
        4 => (action.clone(), 0..20_000u64).prop_map(|(action, at)| LedgerOp::Record { action, at }),
        2 => (action.clone(), any::<bool>(), 0..20_000u64)
            .prop_map(|(action, good, at)| LedgerOp::Resolve { action, good, at }),
        1 => action.prop_map(|action| LedgerOp::Abandon { action }),
        1 => (0..20_000u64).prop_map(|at| LedgerOp::Extend { at }),
    ]
}

fn digraph() -> impl Strategy<Value = Vec<Vec<usize>>> {
    (1..=12usize).prop_flat_map(|n| {
        prop::collection::vec(prop::collection::btree_set(0..n, 0..n), n)
            .prop_map(|rows| rows.into_iter().map(|s| s.into_iter().collect()).collect())
    })
}

fn fault() -> impl Strategy<Value = (FaultClass, &'static str, Option<CorruptionMode>)> {
    prop::sample::select(vec![
        (FaultClass::CorruptTxMap, "Item", Some(CorruptionMode::Null)),
        (FaultClass::CorruptRegistryEntry, "RegisterNewUser", Some(CorruptionMode::Null)),
        (FaultClass::TransientException, "BrowseCategories", None),
        (FaultClass::CorruptInprocSession, "WAR", Some(CorruptionMode::Null)),
        (FaultClass::Deadlock, "Item", None),
    ])
}

proptest! {
    #[test]
    fn ledger_agrees_with_replay(mut trace in prop::collection::vec(op(), 0..200)) {
        // The simulator only ever moves forward in time.
        let mut now = 0;
        for o in &mut trace {
            match o {
                LedgerOp::Record { at, .. } | LedgerOp::Resolve { at, .. } | LedgerOp::Extend { at } => {
                    now = now.max(*at);
                    *at = now;
                }
                LedgerOp::Abandon { .. } => {}
            }
        }
        let l = apply(&trace);
        let r = replay(&trace);
        prop_assert_eq!(l.rows(), &r.rows[..]);
        prop_assert_eq!(l.unresolved(), r.unresolved);
        let recorded = trace.iter().filter(|o| matches!(o, LedgerOp::Record { .. })).count() as u64;
        let t = l.totals();
        prop_assert!(t.good_requests + t.bad_requests <= recorded);
    }

    #[test]
    fn recovery_group_is_closed_under_dependents(deps in digraph(), pick in any::<prop::sample::Index>()) {
        let anchor = pick.index(deps.len());
        let g = dependents_closure(&deps, anchor);
        prop_assert!(g.contains(&anchor));
        for (from, tos) in deps.iter().enumerate() {
            if tos.iter().any(|t| g.contains(t)) {
                prop_assert!(g.contains(&from));
            }
        }
        prop_assert_eq!(g, reverse_reachable(&deps, anchor));
    }

    #[test]
    fn timeline_merge_preserves_coverage(iv in prop::collection::vec((0..4usize, 0..100u64, 0..20u64), 0..30)) {
        let input: Vec<FailureInterval> = iv
            .iter()
            .map(|&(g, s, len)| FailureInterval { group: FunctionalGroup::ALL[g], start_ms: s, end_ms: s + len })
            .collect();
        let out = merged_timeline(&input);
        for g in FunctionalGroup::ALL {
            let mine: Vec<_> = out.iter().filter(|f| f.group == g).collect();
            for w in mine.windows(2) {
                prop_assert!(w[0].end_ms < w[1].start_ms);
            }
            for t in 0..130 {
                let covered = |set: &[&FailureInterval]| set.iter().any(|f| f.start_ms <= t && t < f.end_ms);
                let before: Vec<_> = input.iter().filter(|f| f.group == g).collect();
                prop_assert_eq!(covered(&before), covered(&mine), "t={}", t);
            }
        }
    }

    #[test]
    fn budget_shrinks_as_incidents_cost_more(a in 1.0..5_000.0f64, b in 1.0..5_000.0f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let rpy = 53.3e9;
        prop_assert!(six_nines_budget(rpy, lo, 0.999999).unwrap() >= six_nines_budget(rpy, hi, 0.999999).unwrap());
    }

    #[test]
    fn headroom_grows_with_restart_cost(c_micro in 1.0..500.0f64, extra in 1.0..10_000.0f64, rate in 1.0..200.0f64) {
        let c_full = c_micro + extra;
        let (n, fp) = fp_headroom(c_micro, c_full).unwrap();
        prop_assert!(n as f64 * c_micro <= c_full + 1e-6);
        prop_assert!((0.0..1.0).contains(&fp) || n == 0);
        let d1 = detection_headroom(rate, c_micro, c_full).unwrap();
        let d2 = detection_headroom(rate, c_micro, c_full * 2.0).unwrap();
        prop_assert!(d2 >= d1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn short_runs_keep_invariants(
        seed in 0..1_000u64,
        clients in 1..80u32,
        (class, target, mode) in fault(),
        at_s in 5..40u64,
        restart in any::<bool>(),
    ) {
        let mut s = Scenario {
            seed,
            duration_ms: 60_000,
            clients_per_node: clients,
            faults: vec![FaultEntry::new(at_s * 1000, class, Some(target), mode)],
            ..Scenario::default()
        };
        if restart {
            s.policy.start_level = RecoveryLevel::RestartProcess;
        }
        let a = simulate(&s, s.resolve().unwrap());
        prop_assert!(a.violations().is_empty(), "{:?}", a.violations());
        for r in &a.recoveries {
            prop_assert!(r.start_ms <= r.end_ms);
        }
        let b = simulate(&s, s.resolve().unwrap());
        prop_assert_eq!(a.ledger.rows(), b.ledger.rows());
        prop_assert_eq!(a.failed_requests(), b.failed_requests());
        prop_assert_eq!(a.events, b.events);
    }
}
