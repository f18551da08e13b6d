use crashsim::faultlib::FaultClass;
use crashsim::harness::output::SLOW_MS;
use crashsim::harness::scenario::{FaultEntry, Scenario};
use crashsim::recoverymgr::RecoveryLevel;
use crashsim::world::simulate;

#[test]
fn fault_free_run_has_no_bad_requests() {
    let s = Scenario {
        duration_ms: 300_000,
        ..Scenario::default()
    };
    let r = simulate(&s, s.resolve().unwrap());
    let rows = r.ledger.taw_series().unwrap();
    assert!(rows.iter().all(|x| x.bad_requests == 0 && x.bad_actions == 0));
    let t = r.ledger.totals();
    // Requests of abandoned actions are in the log but in neither tally.
    assert!(t.good_requests <= r.requests.len() as u64);
    assert!(t.good_requests as f64 >= 0.9 * r.requests.len() as f64);
    let lat = r.latency.summary(SLOW_MS);
    assert_eq!(lat.count_over_threshold, 0);
    // Two cores at about half utilisation queue a little above the raw service time.
    assert!((12.0..=22.0).contains(&lat.mean_ms), "{}", lat.mean_ms);
}

#[test]
fn failover_under_doubled_load_slows_restart_only() {
    let over = |level| {
        let mut s = Scenario {
            duration_ms: 180_000,
            clients_per_node: 1_000,
            faults: vec![FaultEntry::new(
                60_000,
                FaultClass::TransientException,
                Some("BrowseCategories"),
                None,
            )],
            ..Scenario::default()
        };
        s.cluster.nodes = 2;
        s.policy.failover = true;
        s.policy.start_level = level;
        let r = simulate(&s, s.resolve().unwrap());
        assert!(r.violations().is_empty());
        r.latency.summary(SLOW_MS).count_over_threshold
    };
    let micro = over(RecoveryLevel::MurbGroup);
    let restart = over(RecoveryLevel::RestartProcess);
    assert!(micro < restart, "{micro} vs {restart}");
}
