//! WebAssembly bindings for the browser demo in `www/`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use crashsim::cluster::six_nines_budget;
use crashsim::faultlib::{CorruptionMode, FaultClass};
use crashsim::harness::scenario::{FaultEntry, Scenario};
use crashsim::recoverymgr::{detection_headroom, fp_headroom, RecoveryLevel};
use crashsim::world::{simulate, RunResult};

/// Fault choices offered by the page.
pub const FAULTS: [&str; 4] = ["tx_map", "registry", "transient", "session"];

#[wasm_bindgen]
pub fn budget(requests_per_year: f64, per_incident: f64, nines: f64) -> Result<f64, JsError> {
    Ok(six_nines_budget(requests_per_year, per_incident, nines)? as f64)
}

#[derive(Debug, Serialize)]
pub struct Headroom {
    pub false_positives: u64,
    pub fp_rate: f64,
    pub detection_s: Option<f64>,
}

pub fn headroom_of(c_micro: f64, c_full: f64, rate: f64) -> Result<Headroom, String> {
    let (n, fp) = fp_headroom(c_micro, c_full).map_err(|e| e.to_string())?;
    let detection_s = (rate > 0.0)
        .then(|| detection_headroom(rate, c_micro, c_full))
        .transpose()
        .map_err(|e| e.to_string())?;
    Ok(Headroom {
        false_positives: n,
        fp_rate: fp,
        detection_s,
    })
}

/// JSON `{false_positives, fp_rate, detection_s}`; `rate <= 0` skips the
/// detection limit.
#[wasm_bindgen]
pub fn headroom(c_micro: f64, c_full: f64, rate: f64) -> Result<String, JsError> {
    let h = headroom_of(c_micro, c_full, rate).map_err(|e| JsError::new(&e))?;
    Ok(serde_json::to_string(&h)?)
}

#[derive(Debug, Serialize)]
pub struct Series {
    pub label: &'static str,
    pub good: Vec<u64>,
    pub bad: Vec<u64>,
    pub bad_total: u64,
    pub session_lost: u64,
    pub recovery_ms: u64,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub fault_at_s: u64,
    pub runs: Vec<Series>,
}

fn fault_entry(name: &str, at: u64) -> Option<FaultEntry> {
    let (class, target, mode) = match name {
        "tx_map" => (FaultClass::CorruptTxMap, "Item", Some(CorruptionMode::Null)),
        "registry" => (FaultClass::CorruptRegistryEntry, "RegisterNewUser", Some(CorruptionMode::Null)),
        "transient" => (FaultClass::TransientException, "BrowseCategories", None),
        "session" => (FaultClass::CorruptInprocSession, "WAR", Some(CorruptionMode::Null)),
        _ => return None,
    };
    Some(FaultEntry::new(at, class, Some(target), mode))
}

fn series(label: &'static str, r: &RunResult) -> Series {
    let rows = r.ledger.rows();
    Series {
        label,
        good: rows.iter().map(|x| x.good_requests).collect(),
        bad: rows.iter().map(|x| x.bad_requests).collect(),
        bad_total: r.ledger.totals().bad_requests,
        session_lost: r.session_lost(),
        recovery_ms: r.recoveries.iter().map(|x| x.duration_ms()).sum(),
    }
}

/// Runs the same fault twice, recovering by microreboot and by process
/// restart, and returns per-second T_aw for both.
pub fn compare_runs(fault: &str, clients: u32, seed: u64) -> Result<Comparison, String> {
    let at = 60_000;
    let entry = fault_entry(fault, at).ok_or_else(|| format!("unknown fault `{fault}`"))?;
    let mut runs = Vec::new();
    for (label, level) in [("microreboot", RecoveryLevel::MurbGroup), ("restart", RecoveryLevel::RestartProcess)] {
        let s = Scenario {
            name: label.into(),
            seed,
            duration_ms: 180_000,
            clients_per_node: clients.clamp(1, 2000),
            faults: vec![entry.clone()],
            policy: crashsim::recoverymgr::PolicyConfig {
                start_level: level,
                ..Default::default()
            },
            ..Scenario::default()
        };
        let catalogs = s.resolve().map_err(|e| e.to_string())?;
        runs.push(series(label, &simulate(&s, catalogs)));
    }
    Ok(Comparison {
        fault_at_s: at / 1000,
        runs,
    })
}

#[wasm_bindgen]
pub fn compare(fault: &str, clients: u32, seed: u32) -> Result<String, JsError> {
    let c = compare_runs(fault, clients, u64::from(seed)).map_err(|e| JsError::new(&e))?;
    Ok(serde_json::to_string(&c)?)
}
