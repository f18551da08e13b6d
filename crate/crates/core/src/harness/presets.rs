//! Canned experiments. Each returns typed measurements plus the runs that
//! produced them, so callers can both check numbers and write artifacts.

use std::fmt::Write as _;
use std::path::Path;
use std::{fs, io, thread};

use thiserror::Error;

use crate::cluster::{six_nines_budget, MaskingConfig};
use crate::detect::DetectorKind;
use crate::faultlib::{CorruptionMode, FaultClass};
use crate::harness::output::{incident_costs, write_run};
use crate::harness::scenario::{Catalogs, FaultEntry, Scenario, ScenarioError, ScheduledAction, ScheduledKind};
use crate::recoverymgr::{detection_headroom, fp_curve, fp_headroom, RecoveryLevel, RejuvenationMode};
use crate::runtime::{ComponentKind, Registry};
use crate::simcore::Millis;
use crate::statestore::StoreKind;
use crate::world::{simulate, RunResult};

pub const PRESETS: [&str; 9] = ["table3", "fig1", "fig3", "fig5a", "fig5b", "fig6", "table2", "table6", "sec61"];

/// Requests per year served by the reference 24-node cluster.
pub const REQUESTS_PER_YEAR: f64 = 53.3e9;
const MINUTE: Millis = 60_000;

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("unknown preset `{0}` (known: {list})", list = PRESETS.join(", "))]
    Unknown(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("writing results: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct PresetRun {
    pub label: String,
    pub scenario: Scenario,
    pub result: RunResult,
}

/// A finished preset: every run plus the plain-text report.
#[derive(Debug, Clone)]
pub struct PresetOutput {
    pub name: String,
    pub runs: Vec<PresetRun>,
    pub report: String,
}

impl PresetOutput {
    /// One subdirectory per run, plus `report.txt`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for r in &self.runs {
            let sub = dir.join(&r.label);
            write_run(&r.result, &sub)?;
            fs::write(sub.join("scenario.toml"), r.scenario.to_toml())?;
        }
        fs::write(dir.join("report.txt"), &self.report)
    }
}

fn base(name: &str, seed: u64, duration_ms: Millis) -> Scenario {
    Scenario {
        name: name.into(),
        seed,
        duration_ms,
        ..Scenario::default()
    }
}

/// Runs isolated worlds on all cores; results keep input order.
pub fn run_all(jobs: Vec<(String, Scenario)>) -> Result<Vec<PresetRun>, PresetError> {
    let catalogs: Vec<Catalogs> = jobs.iter().map(|(_, s)| s.resolve()).collect::<Result<_, _>>()?;
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let mut slots: Vec<Option<RunResult>> = vec![None; jobs.len()];
    let mut work: Vec<(usize, &Scenario, Catalogs)> =
        jobs.iter().zip(catalogs).enumerate().map(|(i, ((_, s), c))| (i, s, c)).collect();
    thread::scope(|scope| {
        let mut lanes: Vec<Vec<(usize, &Scenario, Catalogs)>> = (0..workers).map(|_| Vec::new()).collect();
        for (k, job) in work.drain(..).enumerate() {
            lanes[k % workers].push(job);
        }
        let handles: Vec<_> = lanes
            .into_iter()
            .map(|lane| {
                scope.spawn(move || {
                    lane.into_iter()
                        .map(|(i, s, c)| (i, simulate(s, c)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("simulation thread panicked") {
                slots[i] = Some(r);
            }
        }
    });
    Ok(jobs
        .into_iter()
        .zip(slots)
        .map(|((label, scenario), r)| PresetRun {
            label,
            scenario,
            result: r.expect("every job ran"),
        })
        .collect())
}

pub fn run_preset(name: &str, seed: u64) -> Result<PresetOutput, PresetError> {
    let (runs, report) = match name {
        "table3" => table3(seed).map(|p| (p.runs.clone(), p.report()))?,
        "fig1" => fig1(seed).map(|p| (p.runs.clone(), p.report()))?,
        "fig3" => fig3(seed).map(|p| (p.runs.clone(), p.report()))?,
        "fig5a" => fig5a(seed).map(|p| (p.runs.clone(), p.report()))?,
        "fig5b" => fig5b(seed).map(|p| (p.runs.clone(), p.report()))?,
        "fig6" => fig6(seed).map(|p| (p.runs.clone(), p.report()))?,
        "table2" => table2(seed).map(|p| (p.runs.clone(), p.report()))?,
        "table6" => table6(seed).map(|p| (p.runs.clone(), p.report()))?,
        "sec61" => sec61(seed).map(|p| (p.runs.clone(), p.report()))?,
        other => return Err(PresetError::Unknown(other.to_owned())),
    };
    Ok(PresetOutput {
        name: name.to_owned(),
        runs,
        report,
    })
}

// ---- recovery times ----

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timing {
    pub target: String,
    pub web: bool,
    pub measured_ms: Millis,
    pub configured_ms: Millis,
}

#[derive(Debug, Clone)]
pub struct Table3 {
    pub runs: Vec<PresetRun>,
    pub microreboots: Vec<Timing>,
    pub restart: Timing,
}

impl Table3 {
    pub fn ejb_range(&self) -> (Millis, Millis) {
        let ejb = self.microreboots.iter().filter(|t| !t.web).map(|t| t.measured_ms);
        (ejb.clone().min().unwrap_or(0), ejb.max().unwrap_or(0))
    }

    pub fn report(&self) -> String {
        let mut s = String::from("target,measured_ms,configured_ms\n");
        for t in self.microreboots.iter().chain([&self.restart]) {
            let _ = writeln!(s, "{},{},{}", t.target, t.measured_ms, t.configured_ms);
        }
        let (lo, hi) = self.ejb_range();
        let _ = writeln!(
            s,
            "\nEJB microreboots {lo}-{hi} ms; process restart {} ms ({:.1}x the slowest)",
            self.restart.measured_ms,
            self.restart.measured_ms as f64 / hi.max(1) as f64
        );
        s
    }
}

/// Microreboots every recovery group once, then restarts the process.
pub fn table3(seed: u64) -> Result<Table3, PresetError> {
    let catalogs = Catalogs::demo();
    let reg = Registry::deploy(catalogs.components.clone());
    let mut anchors = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for id in catalogs.components.ids() {
        let g = reg.recovery_group(id);
        if seen.insert(g.members.clone()) {
            anchors.push((id, reg.group_label(g), reg.group_duration(&g.members)));
        }
    }
    let mut s = base("table3", seed, 30_000 + anchors.len() as Millis * 5_000 + 60_000);
    s.clients_per_node = 100;
    s.policy.enabled = false;
    for (i, (id, _, _)) in anchors.iter().enumerate() {
        s.scheduled.push(ScheduledAction {
            at_ms: 30_000 + i as Millis * 5_000,
            kind: ScheduledKind::Microreboot,
            component: Some(catalogs.components.name(*id).to_owned()),
            node: 0,
        });
    }
    let restart_at = 30_000 + anchors.len() as Millis * 5_000;
    s.scheduled.push(ScheduledAction {
        at_ms: restart_at,
        kind: ScheduledKind::RestartProcess,
        component: None,
        node: 0,
    });
    let runs = run_all(vec![("recovery_times".into(), s)])?;
    let r = &runs[0].result;
    let web = catalogs.components.web_component();
    let microreboots = anchors
        .iter()
        .map(|(id, label, configured)| {
            let measured = r
                .recoveries
                .iter()
                .find(|x| x.kind == "microreboot" && &x.target == label)
                .map_or(0, |x| x.duration_ms());
            Timing {
                target: label.clone(),
                web: Some(*id) == web || catalogs.components.spec(*id).kind == ComponentKind::Web,
                measured_ms: measured,
                configured_ms: *configured,
            }
        })
        .collect();
    let restart = Timing {
        target: "process".into(),
        web: false,
        measured_ms: r
            .recoveries
            .iter()
            .find(|x| x.kind == "restart_process")
            .map_or(0, |x| x.duration_ms()),
        configured_ms: catalogs.components.process_restart.total(),
    };
    Ok(Table3 {
        runs,
        microreboots,
        restart,
    })
}

// ---- microreboot vs restart ----

#[derive(Debug, Clone)]
pub struct IncidentCost {
    pub label: String,
    pub bad_requests: u64,
    pub failed_requests: u64,
}

fn costs(r: &RunResult) -> Vec<IncidentCost> {
    incident_costs(r)
        .into_iter()
        .map(|i| IncidentCost {
            label: i.label,
            bad_requests: i.bad_requests,
            failed_requests: i.failed_requests,
        })
        .collect()
}

fn mean_bad(c: &[IncidentCost]) -> f64 {
    c.iter().map(|x| x.bad_requests as f64).sum::<f64>() / c.len().max(1) as f64
}

#[derive(Debug, Clone)]
pub struct Fig1 {
    pub runs: Vec<PresetRun>,
    pub micro: Vec<IncidentCost>,
    pub restart: Vec<IncidentCost>,
    pub micro_session_lost: u64,
    pub restart_session_lost: u64,
}

impl Fig1 {
    pub fn ratio(&self) -> f64 {
        mean_bad(&self.restart) / mean_bad(&self.micro).max(1.0)
    }

    pub fn report(&self) -> String {
        let mut s = String::from("incident,microreboot_bad,restart_bad,microreboot_failed,restart_failed\n");
        for (m, r) in self.micro.iter().zip(&self.restart) {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                m.label, m.bad_requests, r.bad_requests, m.failed_requests, r.failed_requests
            );
        }
        let _ = writeln!(
            s,
            "\nper incident: microreboot {:.0}, restart {:.0} (ratio {:.1})",
            mean_bad(&self.micro),
            mean_bad(&self.restart),
            self.ratio()
        );
        let _ = writeln!(
            s,
            "session-loss failures: microreboot {}, restart {}",
            self.micro_session_lost, self.restart_session_lost
        );
        for (label, per) in [("microreboot", mean_bad(&self.micro)), ("restart", mean_bad(&self.restart))] {
            if let Ok(b) = six_nines_budget(REQUESTS_PER_YEAR, per.max(1.0), 0.999999) {
                let _ = writeln!(s, "six-nines budget with {label}: {b} incidents/year");
            }
        }
        s
    }
}

pub fn fig1_scenario(seed: u64, level: RecoveryLevel) -> Scenario {
    let mut s = base("fig1", seed, 40 * MINUTE);
    s.policy.start_level = level;
    s.faults = vec![
        FaultEntry::new(10 * MINUTE, FaultClass::CorruptTxMap, Some("Item"), Some(CorruptionMode::Null)),
        FaultEntry::new(
            20 * MINUTE,
            FaultClass::CorruptRegistryEntry,
            Some("RegisterNewUser"),
            Some(CorruptionMode::Null),
        ),
        FaultEntry::new(30 * MINUTE, FaultClass::TransientException, Some("BrowseCategories"), None),
    ];
    s
}

pub fn fig1(seed: u64) -> Result<Fig1, PresetError> {
    let runs = run_all(vec![
        ("microreboot".into(), fig1_scenario(seed, RecoveryLevel::MurbGroup)),
        ("restart".into(), fig1_scenario(seed, RecoveryLevel::RestartProcess)),
    ])?;
    Ok(Fig1 {
        micro: costs(&runs[0].result),
        restart: costs(&runs[1].result),
        micro_session_lost: runs[0].result.session_lost(),
        restart_session_lost: runs[1].result.session_lost(),
        runs,
    })
}

// ---- cluster failover ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterPoint {
    pub nodes: usize,
    pub clients_per_node: u32,
    pub sessions_on_bad: usize,
    pub bad_requests: u64,
    pub fraction_failed: f64,
}

#[derive(Debug, Clone)]
pub struct Fig3 {
    pub runs: Vec<PresetRun>,
    pub micro: Vec<ClusterPoint>,
    pub restart: Vec<ClusterPoint>,
    /// Restart with failover on four nodes, varying per-node load.
    pub session_sweep: Vec<ClusterPoint>,
}

impl Fig3 {
    pub fn report(&self) -> String {
        let mut s = String::from("mode,nodes,clients_per_node,sessions_on_bad,bad_requests,fraction_failed\n");
        for (mode, pts) in [("microreboot", &self.micro), ("restart", &self.restart), ("restart_sweep", &self.session_sweep)] {
            for p in pts {
                let _ = writeln!(
                    s,
                    "{mode},{},{},{},{},{:.5}",
                    p.nodes, p.clients_per_node, p.sessions_on_bad, p.bad_requests, p.fraction_failed
                );
            }
        }
        s
    }
}

fn cluster_scenario(name: &str, seed: u64, nodes: usize, clients: u32, level: RecoveryLevel, failover: bool) -> Scenario {
    let mut s = base(name, seed, 10 * MINUTE);
    s.cluster.nodes = nodes;
    s.clients_per_node = clients;
    s.policy.start_level = level;
    s.policy.failover = failover;
    s.faults = vec![FaultEntry::new(
        5 * MINUTE,
        FaultClass::TransientException,
        Some("BrowseCategories"),
        None,
    )];
    s
}

fn cluster_point(r: &RunResult, clients_per_node: u32) -> ClusterPoint {
    let inc = &r.incidents[0];
    let bad = r.ledger.bad_between(inc.at_ms, Millis::MAX);
    let t = r.ledger.totals();
    ClusterPoint {
        nodes: r.nodes,
        clients_per_node,
        sessions_on_bad: inc.sessions_on_node,
        bad_requests: bad,
        fraction_failed: t.bad_requests as f64 / (t.good_requests + t.bad_requests).max(1) as f64,
    }
}

pub const CLUSTER_SIZES: [usize; 4] = [2, 4, 6, 8];

pub fn fig3(seed: u64) -> Result<Fig3, PresetError> {
    let mut jobs = Vec::new();
    for n in CLUSTER_SIZES {
        jobs.push((format!("microreboot_{n}"), cluster_scenario("fig3", seed, n, 500, RecoveryLevel::MurbGroup, true)));
    }
    for n in CLUSTER_SIZES {
        jobs.push((format!("restart_{n}"), cluster_scenario("fig3", seed, n, 500, RecoveryLevel::RestartProcess, true)));
    }
    let sweep = [125u32, 250, 375, 500];
    for c in sweep {
        jobs.push((format!("restart_4x{c}"), cluster_scenario("fig3", seed, 4, c, RecoveryLevel::RestartProcess, true)));
    }
    let runs = run_all(jobs)?;
    let clients: Vec<u32> = [500; 8].into_iter().chain(sweep).collect();
    let pts: Vec<ClusterPoint> = runs.iter().zip(clients).map(|(r, c)| cluster_point(&r.result, c)).collect();
    Ok(Fig3 {
        micro: pts[0..4].to_vec(),
        restart: pts[4..8].to_vec(),
        session_sweep: pts[8..12].to_vec(),
        runs,
    })
}

// ---- detection headroom ----

pub const DETECTION_SWEEP_S: [u64; 7] = [0, 10, 20, 30, 45, 60, 80];

#[derive(Debug, Clone)]
pub struct Fig5a {
    pub runs: Vec<PresetRun>,
    /// `(T_det seconds, bad requests)` with microreboot recovery.
    pub micro: Vec<(u64, u64)>,
    /// Restart recovery with instant detection.
    pub c_full: u64,
    /// Request rate while the fault is undetected.
    pub fail_rate: f64,
    pub formula_s: f64,
    pub simulated_s: Option<f64>,
}

impl Fig5a {
    pub fn report(&self) -> String {
        let mut s = String::from("t_det_s,microreboot_bad\n");
        for (t, c) in &self.micro {
            let _ = writeln!(s, "{t},{c}");
        }
        let _ = writeln!(s, "\nrestart with instant detection: {}", self.c_full);
        let _ = writeln!(s, "failure rate while undetected: {:.2}/s", self.fail_rate);
        let _ = writeln!(s, "formula crossover: {:.1} s", self.formula_s);
        match self.simulated_s {
            Some(x) => {
                let _ = writeln!(s, "simulated crossover: {x:.1} s");
            }
            None => s.push_str("simulated crossover: beyond the sweep\n"),
        }
        s
    }
}

fn detection_scenario(seed: u64, t_det_s: u64, level: RecoveryLevel) -> Scenario {
    let mut s = base("fig5a", seed, 10 * MINUTE);
    s.policy.start_level = level;
    s.detector.t_det_ms = t_det_s * 1000;
    // Every request passes the web tier, so every request fails until
    // recovery.
    s.faults = vec![FaultEntry::new(2 * MINUTE, FaultClass::TransientException, Some("WAR"), None)];
    s
}

/// First `T` at which the piecewise-linear `points` reach `level`.
pub fn crossover(points: &[(u64, u64)], level: f64) -> Option<f64> {
    points.windows(2).find_map(|w| {
        let (t0, c0) = (w[0].0 as f64, w[0].1 as f64);
        let (t1, c1) = (w[1].0 as f64, w[1].1 as f64);
        (c0 <= level && c1 >= level && c1 > c0).then(|| t0 + (level - c0) * (t1 - t0) / (c1 - c0))
    })
}

pub fn fig5a(seed: u64) -> Result<Fig5a, PresetError> {
    let mut jobs: Vec<(String, Scenario)> = DETECTION_SWEEP_S
        .iter()
        .map(|t| (format!("microreboot_tdet{t}"), detection_scenario(seed, *t, RecoveryLevel::MurbGroup)))
        .collect();
    jobs.push(("restart_tdet0".into(), detection_scenario(seed, 0, RecoveryLevel::RestartProcess)));
    let runs = run_all(jobs)?;
    let bad = |r: &RunResult| r.ledger.bad_between(r.incidents[0].at_ms, Millis::MAX);
    let micro: Vec<(u64, u64)> = DETECTION_SWEEP_S.iter().zip(&runs).map(|(t, r)| (*t, bad(&r.result))).collect();
    let c_full = bad(&runs.last().expect("restart run").result);
    let first = &runs[0].result;
    let fail_rate = first.throughput(MINUTE, 2 * MINUTE);
    let formula_s = detection_headroom(fail_rate, micro[0].1.max(1) as f64, c_full as f64).unwrap_or(f64::NAN);
    let simulated_s = crossover(&micro, c_full as f64);
    Ok(Fig5a {
        runs,
        micro,
        c_full,
        fail_rate,
        formula_s,
        simulated_s,
    })
}

// ---- false-positive headroom ----

#[derive(Debug, Clone)]
pub struct Fig5b {
    pub runs: Vec<PresetRun>,
    pub c_micro: u64,
    pub c_full: u64,
    pub headroom: (u64, f64),
    pub curve: Vec<(u64, f64, f64, f64)>,
}

impl Fig5b {
    pub fn report(&self) -> String {
        let mut s = String::from("n,fp_rate,f_micro,f_full\n");
        for (n, fp, m, f) in &self.curve {
            let _ = writeln!(s, "{n},{fp:.4},{m:.0},{f:.0}");
        }
        let _ = writeln!(
            s,
            "\nwith c_micro={} and c_full={}: up to {} useless microreboots ({:.0}% false positives)",
            self.c_micro,
            self.c_full,
            self.headroom.0,
            self.headroom.1 * 100.0
        );
        s
    }
}

pub fn fig5b(seed: u64) -> Result<Fig5b, PresetError> {
    let f = fig1(seed)?;
    let c_micro = mean_bad(&f.micro).round().max(1.0) as u64;
    let c_full = mean_bad(&f.restart).round() as u64;
    let headroom = fp_headroom(c_micro as f64, c_full as f64).unwrap_or((0, 0.0));
    let curve = fp_curve(headroom.0 + 10, c_micro as f64, c_full as f64);
    Ok(Fig5b {
        runs: f.runs,
        c_micro,
        c_full,
        headroom,
        curve,
    })
}

// ---- rejuvenation ----

#[derive(Debug, Clone)]
pub struct Fig6 {
    pub runs: Vec<PresetRun>,
    pub micro_failed: u64,
    pub restart_failed: u64,
    pub micro_zero_seconds: usize,
    pub order_after_first_pass: Vec<String>,
    pub m_sufficient: u64,
    /// `(free heap after, fell back to restart)` per microreboot pass.
    pub micro_passes: Vec<(u64, bool)>,
}

impl Fig6 {
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "failed requests: microrejuvenation {}, restart {}", self.micro_failed, self.restart_failed);
        let _ = writeln!(s, "seconds without good requests (micro): {}", self.micro_zero_seconds);
        let _ = writeln!(s, "candidates after first pass: {}", self.order_after_first_pass.join(" "));
        let _ = writeln!(s, "M_sufficient: {} bytes", self.m_sufficient);
        for (i, (free, restarted)) in self.micro_passes.iter().enumerate() {
            let _ = writeln!(s, "pass {}: free {} bytes{}", i + 1, free, if *restarted { ", restarted" } else { "" });
        }
        s
    }
}

pub fn fig6_scenario(seed: u64, mode: RejuvenationMode) -> Scenario {
    let mut s = base("fig6", seed, 30 * MINUTE);
    s.policy.enabled = false;
    s.rejuvenation.enabled = true;
    s.rejuvenation.mode = mode;
    let mut item = FaultEntry::new(0, FaultClass::AppMemoryLeak, Some("Item"), None);
    item.bytes_per_invoke = Some(2 * 1024);
    let mut view = FaultEntry::new(0, FaultClass::AppMemoryLeak, Some("ViewItem"), None);
    view.bytes_per_invoke = Some(250 * 1024);
    s.faults = vec![item, view];
    s
}

pub fn fig6(seed: u64) -> Result<Fig6, PresetError> {
    let runs = run_all(vec![
        ("microrejuvenation".into(), fig6_scenario(seed, RejuvenationMode::Micro)),
        ("restart".into(), fig6_scenario(seed, RejuvenationMode::Restart)),
    ])?;
    let m = &runs[0].result;
    let seconds = (m.duration_ms / 1000) as usize;
    let rows = m.ledger.rows();
    let micro_zero_seconds = (0..seconds)
        .filter(|s| rows.get(*s).is_none_or(|r| r.good_requests == 0))
        .count();
    let names = &m.component_names;
    let order_after_first_pass = m
        .passes
        .first()
        .map(|(_, p)| p.order_after.iter().map(|c| names[c.index()].clone()).collect())
        .unwrap_or_default();
    Ok(Fig6 {
        micro_failed: m.failed_requests(),
        restart_failed: runs[1].result.failed_requests(),
        micro_zero_seconds,
        order_after_first_pass,
        m_sufficient: m.m_sufficient_bytes.unwrap_or(0),
        micro_passes: m.passes.iter().map(|(_, p)| (p.free_after, p.restarted)).collect(),
        runs,
    })
}

// ---- fault/cure matrix ----

/// What a row's recovery ends up needing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CureScope {
    /// No episode: the fault disappears by itself or is masked.
    Unnecessary,
    Ejb,
    /// Any microreboot that includes the web component.
    War,
    Process,
    Node,
    Manual,
}

impl CureScope {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Unnecessary => "unnecessary",
            Self::Ejb => "EJB",
            Self::War => "WAR",
            Self::Process => "process",
            Self::Node => "node",
            Self::Manual => "manual",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Table2Row {
    pub label: String,
    pub expected: CureScope,
    pub expected_manual: bool,
    pub observed: CureScope,
    pub observed_manual: bool,
    pub actions: usize,
}

impl Table2Row {
    pub fn matches(&self) -> bool {
        self.expected == self.observed && self.expected_manual == self.observed_manual
    }
}

#[derive(Debug, Clone)]
pub struct Table2 {
    pub runs: Vec<PresetRun>,
    pub rows: Vec<Table2Row>,
}

impl Table2 {
    pub fn report(&self) -> String {
        let mut s = String::from("fault,expected,observed,manual_expected,manual_observed,actions,match\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.label,
                r.expected.as_str(),
                r.observed.as_str(),
                r.expected_manual,
                r.observed_manual,
                r.actions,
                r.matches()
            );
        }
        s
    }
}

struct RowSpec {
    label: &'static str,
    fault: FaultEntry,
    store: StoreKind,
    expected: CureScope,
    manual: bool,
}

const FAULT_AT: Millis = MINUTE;

fn row(label: &'static str, class: FaultClass, target: Option<&str>, mode: Option<CorruptionMode>, expected: CureScope, manual: bool) -> RowSpec {
    RowSpec {
        label,
        fault: FaultEntry::new(FAULT_AT, class, target, mode),
        store: StoreKind::InProcess,
        expected,
        manual,
    }
}

fn table2_rows() -> Vec<RowSpec> {
    use CorruptionMode::{Invalid, Null, Wrong};
    use CureScope::*;
    use FaultClass as F;
    let mut rows = vec![
        row("deadlock", F::Deadlock, Some("BrowseCategories"), None, Ejb, false),
        row("infinite_loop", F::InfiniteLoop, Some("BrowseCategories"), None, Ejb, false),
        row("app_memory_leak", F::AppMemoryLeak, Some("Item"), None, Ejb, false),
        row("transient_exception", F::TransientException, Some("BrowseCategories"), None, Ejb, false),
        row("primary_key_null", F::CorruptPrimaryKey, Some("Item"), Some(Null), Ejb, false),
        row("primary_key_invalid", F::CorruptPrimaryKey, Some("Item"), Some(Invalid), Ejb, false),
        row("primary_key_wrong", F::CorruptPrimaryKey, Some("Item"), Some(Wrong), Ejb, true),
        row("registry_null", F::CorruptRegistryEntry, Some("BrowseCategories"), Some(Null), Ejb, false),
        row("registry_invalid", F::CorruptRegistryEntry, Some("BrowseCategories"), Some(Invalid), Ejb, false),
        row("registry_wrong", F::CorruptRegistryEntry, Some("BrowseCategories"), Some(Wrong), Ejb, false),
        row("tx_map_null", F::CorruptTxMap, Some("Item"), Some(Null), Ejb, false),
        row("tx_map_invalid", F::CorruptTxMap, Some("Item"), Some(Invalid), Ejb, false),
        row("tx_map_wrong", F::CorruptTxMap, Some("Item"), Some(Wrong), Ejb, true),
        row("stateless_attr_null", F::CorruptStatelessAttr, Some("SearchItemsByRegion"), Some(Null), Unnecessary, false),
        row("stateless_attr_invalid", F::CorruptStatelessAttr, Some("SearchItemsByRegion"), Some(Invalid), Unnecessary, false),
        row("stateless_attr_wrong", F::CorruptStatelessAttr, Some("SearchItemsByRegion"), Some(Wrong), War, true),
        row("inproc_session_null", F::CorruptInprocSession, Some("WAR"), Some(Null), War, false),
        row("inproc_session_invalid", F::CorruptInprocSession, Some("WAR"), Some(Invalid), War, false),
        row("inproc_session_wrong", F::CorruptInprocSession, Some("WAR"), Some(Wrong), War, true),
        row("external_session", F::CorruptExternalSession, None, None, Unnecessary, false),
        row("db_row", F::CorruptDbRow, Some("Item"), None, Manual, true),
        row("leak_intra_process", F::LeakOutsideAppIntraProcess, None, None, Process, false),
        row("leak_outside_process", F::LeakOutsideProcess, None, None, Node, false),
        row("bitflip_memory", F::ProcessMemoryBitflip, None, None, Process, true),
        row("bitflip_registers", F::ProcessMemoryBitflip, None, None, Process, true),
        row("bad_syscall_returns", F::BadEnv, None, None, Process, false),
    ];
    for r in &mut rows {
        match r.fault.class {
            FaultClass::AppMemoryLeak | FaultClass::LeakOutsideAppIntraProcess => {
                r.fault.bytes_per_invoke = Some(1 << 20);
            }
            FaultClass::CorruptExternalSession => r.store = StoreKind::External,
            _ => {}
        }
    }
    rows
}

/// Maps the first episode's final action onto the matrix's columns.
fn observed_scope(r: &RunResult) -> (CureScope, bool, usize) {
    let Some(e) = r.episodes.first() else {
        return (CureScope::Unnecessary, false, 0);
    };
    let cat = Catalogs::demo().components;
    let web = cat.web_component().is_some_and(|w| cat.name(w) == e.target);
    let scope = match e.terminal_level {
        RecoveryLevel::MurbGroup if web => CureScope::War,
        RecoveryLevel::MurbGroup => CureScope::Ejb,
        RecoveryLevel::MurbWeb => CureScope::War,
        RecoveryLevel::RestartApplication | RecoveryLevel::RestartProcess => CureScope::Process,
        RecoveryLevel::RebootNode => CureScope::Node,
        RecoveryLevel::EscalateHuman => CureScope::Manual,
    };
    (scope, e.manual_repair, e.actions)
}

pub fn table2(seed: u64) -> Result<Table2, PresetError> {
    let specs = table2_rows();
    let jobs = specs
        .iter()
        .map(|r| {
            let mut s = base("table2", seed, FAULT_AT + 8 * MINUTE);
            s.detector.kind = DetectorKind::Comparison;
            s.cluster.store = r.store;
            s.faults = vec![r.fault.clone()];
            (r.label.to_owned(), s)
        })
        .collect();
    let runs = run_all(jobs)?;
    let rows = specs
        .iter()
        .zip(&runs)
        .map(|(spec, run)| {
            let (observed, observed_manual, actions) = observed_scope(&run.result);
            Table2Row {
                label: spec.label.to_owned(),
                expected: spec.expected,
                expected_manual: spec.manual,
                observed,
                observed_manual,
                actions,
            }
        })
        .collect();
    Ok(Table2 { runs, rows })
}

// ---- Retry-After masking ----

pub const MASKED_COMPONENTS: [&str; 4] = ["ViewItem", "BrowseCategories", "SearchItemsByCategory", "Authenticate"];
pub const MASKING_TRIALS: u64 = 10;
const MASK_WINDOW: Millis = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskingRow {
    pub no_retry: u64,
    pub retry: u64,
    pub drain_retry: u64,
}

#[derive(Debug, Clone)]
pub struct Table6 {
    pub runs: Vec<PresetRun>,
    /// Failed requests summed over trials, per component.
    pub rows: Vec<(String, MaskingRow)>,
}

impl Table6 {
    pub fn total(&self) -> MaskingRow {
        self.rows.iter().fold(MaskingRow { no_retry: 0, retry: 0, drain_retry: 0 }, |a, (_, r)| MaskingRow {
            no_retry: a.no_retry + r.no_retry,
            retry: a.retry + r.retry,
            drain_retry: a.drain_retry + r.drain_retry,
        })
    }

    pub fn masked_fraction(&self) -> f64 {
        let t = self.total();
        1.0 - t.retry as f64 / t.no_retry.max(1) as f64
    }

    pub fn report(&self) -> String {
        let mut s = String::from("component,no_retry,retry,drain_retry\n");
        for (c, r) in &self.rows {
            let _ = writeln!(s, "{c},{},{},{}", r.no_retry, r.retry, r.drain_retry);
        }
        let t = self.total();
        let _ = writeln!(s, "total,{},{},{}", t.no_retry, t.retry, t.drain_retry);
        let _ = writeln!(s, "\nretry masked {:.0}% of failures", self.masked_fraction() * 100.0);
        s
    }
}

fn masking_scenario(seed: u64, masking: MaskingConfig) -> Scenario {
    let mut s = base("table6", seed, 2 * MINUTE + MASKED_COMPONENTS.len() as Millis * 20_000);
    s.policy.enabled = false;
    s.cluster.masking = masking;
    s.scheduled = MASKED_COMPONENTS
        .iter()
        .enumerate()
        .map(|(i, c)| ScheduledAction {
            at_ms: MINUTE + i as Millis * 20_000,
            kind: ScheduledKind::Microreboot,
            component: Some((*c).to_owned()),
            node: 0,
        })
        .collect();
    s
}

pub fn table6(seed: u64) -> Result<Table6, PresetError> {
    let modes = [
        ("noretry", MaskingConfig::default()),
        (
            "retry",
            MaskingConfig {
                retry: true,
                ..MaskingConfig::default()
            },
        ),
        (
            "drain_retry",
            MaskingConfig {
                retry: true,
                drain_ms: Some(200),
                ..MaskingConfig::default()
            },
        ),
    ];
    let mut jobs = Vec::new();
    for t in 0..MASKING_TRIALS {
        for (name, m) in modes {
            jobs.push((format!("{name}_trial{t}"), masking_scenario(seed + t, m)));
        }
    }
    let runs = run_all(jobs)?;
    let mut rows: Vec<(String, MaskingRow)> = MASKED_COMPONENTS
        .iter()
        .map(|c| ((*c).to_owned(), MaskingRow { no_retry: 0, retry: 0, drain_retry: 0 }))
        .collect();
    for (k, run) in runs.iter().enumerate() {
        let r = &run.result;
        for (i, inc) in r.incidents.iter().enumerate() {
            let n = r.failed_between(inc.at_ms, inc.at_ms + MASK_WINDOW);
            let row = &mut rows[i].1;
            match k % 3 {
                0 => row.no_retry += n,
                1 => row.retry += n,
                _ => row.drain_retry += n,
            }
        }
    }
    Ok(Table6 { runs, rows })
}

// ---- failover vs none ----

pub const SEC61_SEEDS: u64 = 5;

#[derive(Debug, Clone)]
pub struct Sec61 {
    pub runs: Vec<PresetRun>,
    pub without_failover: Vec<u64>,
    pub with_failover: Vec<u64>,
}

impl Sec61 {
    pub fn totals(&self) -> (u64, u64) {
        (self.without_failover.iter().sum(), self.with_failover.iter().sum())
    }

    pub fn report(&self) -> String {
        let mut s = String::from("seed,microreboot,failover_then_microreboot\n");
        for (i, (a, b)) in self.without_failover.iter().zip(&self.with_failover).enumerate() {
            let _ = writeln!(s, "{i},{a},{b}");
        }
        let (a, b) = self.totals();
        let _ = writeln!(s, "total,{a},{b}");
        s
    }
}

pub fn sec61(seed: u64) -> Result<Sec61, PresetError> {
    let mut jobs = Vec::new();
    for k in 0..SEC61_SEEDS {
        for failover in [false, true] {
            let label = format!("{}_seed{k}", if failover { "failover" } else { "microreboot" });
            jobs.push((label, cluster_scenario("sec61", seed + k, 4, 500, RecoveryLevel::MurbGroup, failover)));
        }
    }
    let runs = run_all(jobs)?;
    let bad: Vec<u64> = runs
        .iter()
        .map(|r| cluster_point(&r.result, r.scenario.clients_per_node).bad_requests)
        .collect();
    Ok(Sec61 {
        without_failover: bad.iter().step_by(2).copied().collect(),
        with_failover: bad.iter().skip(1).step_by(2).copied().collect(),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossover_interpolates() {
        let pts = [(0, 100), (10, 600), (20, 1100)];
        assert_eq!(crossover(&pts, 850.0), Some(15.0));
        assert_eq!(crossover(&pts, 5000.0), None);
    }

    #[test]
    fn unknown_preset_is_an_error() {
        assert!(matches!(run_preset("nope", 1), Err(PresetError::Unknown(_))));
    }
}
