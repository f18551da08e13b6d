//! Brute-force reference models shared by the oracle tests and the
//! acceptance run.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crashsim::app::markov::TransitionMatrix;
use crashsim::runtime::{ComponentCatalog, ComponentKind, ComponentSpec, Registry};
use crashsim::simcore::Millis;
use crashsim::workload::{TawLedger, TawRow};

#[derive(Debug, Clone, Copy)]
pub enum LedgerOp {
    Record { action: u64, at: Millis },
    Resolve { action: u64, good: bool, at: Millis },
    Abandon { action: u64 },
    Extend { at: Millis },
}

/// A trace with a monotone clock, as the simulator produces.
pub fn random_trace(seed: u64, len: usize) -> Vec<LedgerOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = rng.gen_range(1..400u64);
    let mut now: Millis = 0;
    (0..len)
        .map(|_| {
            now += rng.gen_range(0..400);
            let action = rng.gen_range(0..actions);
            match rng.gen_range(0..100) {
                0..=59 => LedgerOp::Record { action, at: now },
                60..=89 => LedgerOp::Resolve {
                    action,
                    good: rng.gen_bool(0.7),
                    at: now,
                },
                90..=94 => LedgerOp::Abandon { action },
                _ => LedgerOp::Extend { at: now },
            }
        })
        .collect()
}

pub fn apply(trace: &[LedgerOp]) -> TawLedger {
    let mut l = TawLedger::new();
    for op in trace {
        match *op {
            LedgerOp::Record { action, at } => l.record_request(action, at),
            LedgerOp::Resolve { action, good, at } => l.resolve(action, good, at),
            LedgerOp::Abandon { action } => l.abandon(action),
            LedgerOp::Extend { at } => l.extend_to(at),
        }
    }
    l
}

#[derive(Debug, PartialEq, Eq)]
pub struct Replay {
    pub rows: Vec<TawRow>,
    pub abandoned: u64,
    pub unresolved: usize,
}

/// Classifies every recorded request by the first terminal event of its
/// action that follows it, found with a backward sweep.
pub fn replay(trace: &[LedgerOp]) -> Replay {
    let mut next_terminal: Vec<Option<usize>> = vec![None; trace.len()];
    let mut upcoming: HashMap<u64, usize> = HashMap::new();
    for (i, op) in trace.iter().enumerate().rev() {
        match *op {
            LedgerOp::Record { action, .. } => next_terminal[i] = upcoming.get(&action).copied(),
            LedgerOp::Resolve { action, .. } | LedgerOp::Abandon { action } => {
                upcoming.insert(action, i);
            }
            LedgerOp::Extend { .. } => {}
        }
    }

    // (second, good) per classified request, and per counted action.
    let mut requests = Vec::new();
    let mut actions = Vec::new();
    let mut live: BTreeSet<u64> = BTreeSet::new();
    let mut abandoned = 0;
    let mut len = 0usize;
    for (i, op) in trace.iter().enumerate() {
        match *op {
            LedgerOp::Record { action, at } => {
                live.insert(action);
                if let Some(LedgerOp::Resolve { good, .. }) = next_terminal[i].map(|j| trace[j]) {
                    requests.push((at / 1000, good));
                }
            }
            LedgerOp::Resolve { action, good, at } => {
                if live.remove(&action) {
                    actions.push((at / 1000, good));
                }
            }
            LedgerOp::Abandon { action } => {
                if live.remove(&action) {
                    abandoned += 1;
                }
            }
            LedgerOp::Extend { at } => {
                if at > 0 {
                    len = len.max(((at - 1) / 1000 + 1) as usize);
                }
            }
        }
    }
    for &(s, _) in requests.iter().chain(&actions) {
        len = len.max(s as usize + 1);
    }
    let mut rows: Vec<TawRow> = (0..len as u64)
        .map(|second| TawRow {
            second,
            ..Default::default()
        })
        .collect();
    for (s, good) in requests {
        let r = &mut rows[s as usize];
        if good {
            r.good_requests += 1;
        } else {
            r.bad_requests += 1;
        }
    }
    for (s, good) in actions {
        let r = &mut rows[s as usize];
        if good {
            r.good_actions += 1;
        } else {
            r.bad_actions += 1;
        }
    }
    Replay {
        rows,
        abandoned,
        unresolved: live.len(),
    }
}

/// Runs `traces` random traces of `len` events each and returns the seeds
/// where ledger and replay disagree.
pub fn ledger_mismatches(traces: u64, len: usize) -> Vec<u64> {
    (0..traces)
        .filter(|&seed| {
            let trace = random_trace(seed, len);
            let l = apply(&trace);
            let got = Replay {
                rows: l.rows().to_vec(),
                abandoned: l.totals().abandoned_actions,
                unresolved: l.unresolved(),
            };
            got != replay(&trace)
        })
        .collect()
}

pub fn random_digraph(seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=12);
    let p = rng.gen_range(0.0..0.4);
    (0..n)
        .map(|i| (0..n).filter(|&j| j != i && rng.gen_bool(p)).collect())
        .collect()
}

/// Anchor plus every node with a path to it, by Warshall closure.
pub fn reverse_reachable(deps: &[Vec<usize>], anchor: usize) -> BTreeSet<usize> {
    let n = deps.len();
    let mut reach = vec![vec![false; n]; n];
    for (i, tos) in deps.iter().enumerate() {
        for &j in tos {
            reach[i][j] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                reach[i][j] |= reach[i][k] && reach[k][j];
            }
        }
    }
    (0..n).filter(|&i| i == anchor || reach[i][anchor]).collect()
}

/// Deploys the digraph as a component catalog and returns the seeds whose
/// recovery groups differ from the closure.
pub fn group_mismatches(graphs: u64) -> Vec<u64> {
    (0..graphs)
        .filter(|&seed| {
            let deps = random_digraph(seed);
            let names: Vec<String> = (0..deps.len()).map(|i| format!("c{i}")).collect();
            let specs = deps
                .iter()
                .enumerate()
                .map(|(i, tos)| {
                    let d: Vec<&str> = tos.iter().map(|&j| names[j].as_str()).collect();
                    ComponentSpec::new(&names[i], ComponentKind::Entity, 0, 100).with_deps(&d)
                })
                .collect();
            let reg = Registry::deploy(ComponentCatalog::new(specs, Vec::new()).unwrap());
            let differs = reg.catalog().ids().any(|id| {
                let got: BTreeSet<usize> = reg.recovery_group(id).members.iter().map(|m| m.index()).collect();
                got != reverse_reachable(&deps, id.index())
            });
            differs
        })
        .collect()
}

/// Stationary vector from a direct solve of `pi (P - I) = 0, sum(pi) = 1`.
pub fn stationary_lu(m: &TransitionMatrix) -> Vec<f64> {
    let n = m.len();
    let mut a = DMatrix::from_fn(n, n, |i, j| m.prob(j, i) - if i == j { 1.0 } else { 0.0 });
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = a.lu().solve(&b).expect("chain has a unique stationary vector");
    x.iter().copied().collect()
}
