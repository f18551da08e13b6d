//! The simulated cluster: emulated clients, server nodes, stores, faults
//! and recovery managers, all driven by one event queue.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::rc::Rc;

use crate::app::markov::TransitionMatrix;
use crate::app::{expected_fingerprint, ErrorClass, FunctionalGroup, OpCatalog, OpId, Outcome, Response, SessionTouch};
use crate::cluster::{handle_sentinel, ClusterConfig, LbState, MaskingConfig, Route, SentinelAction};
use crate::detect::{classify_response, DetectorProfile, FailureReport, ReportChannel, Verdict};
use crate::faultlib::{ClearedFault, FaultClass, FaultSet};
use crate::harness::scenario::{Catalogs, Scenario, ScheduledKind};
use crate::recoverymgr::{
    EpisodeLogLine, EpisodeRecord, ObservationOutcome, PassRecord, PolicyConfig, RecoveryAction, RecoveryLevel,
    RecoveryManager, RejuvenationState, RejuvenationStep,
};
use crate::runtime::{
    ComponentCatalog, ComponentId, Holder, Lookup, MicrorebootOutcome, RecoveryGroup, Registry, RestartLevel,
    DEFAULT_SERVER_BASE_BYTES,
};
use crate::simcore::{mix64, EventQueue, Millis, RngStream};
use crate::statestore::{RowKey, SessionRead, SessionStore, StoreKind, TxStore};
use crate::workload::{next_operation, ClientState, LatencyStats, TawLedger, ThinkConfig};

const GC_PERIOD_MS: Millis = 60_000;
const PERTURBATION: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Purpose {
    Recovery,
    Rejuvenation,
    Scheduled,
}

impl Purpose {
    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::Recovery => "recovery",
            Purpose::Rejuvenation => "rejuvenation",
            Purpose::Scheduled => "scheduled",
        }
    }
}

#[derive(Debug, Clone)]
enum Event {
    Issue { client: u32, op: OpId },
    Retry { req: u64 },
    StoreDone { req: u64 },
    StepDone { req: u64 },
    Ttl { req: u64 },
    Report { report: FailureReport },
    Inject { index: usize },
    Scheduled { index: usize },
    MurbStart { node: usize, members: BTreeSet<ComponentId>, purpose: Purpose },
    MurbDone { node: usize, purpose: Purpose },
    RestartDone { node: usize, purpose: Purpose },
    ObserveEnd { node: usize },
    RejuvTick { node: usize },
    Gc,
}

#[derive(Debug, Clone)]
struct Req {
    id: u64,
    client: u32,
    action: u64,
    op: OpId,
    node: usize,
    session: Option<u64>,
    first_issued: Millis,
    arg: u64,
    step: usize,
    current: Option<ComponentId>,
    perturbed: bool,
    taint: bool,
    tx: Option<u64>,
    retried: bool,
    on_worker: bool,
    on_core: bool,
    hung: Option<(ComponentId, bool)>,
}

#[derive(Debug)]
struct Node {
    registry: Registry,
    store: SessionStore,
    restarting_until: Option<Millis>,
    workers_busy: usize,
    accept: VecDeque<u64>,
    cores_busy: usize,
    cpu: VecDeque<u64>,
    active: BTreeSet<u64>,
    /// Workers held by runaway invocations, per component.
    captured: BTreeMap<ComponentId, usize>,
    dispatching: bool,
    rm: RecoveryManager,
    rejuv: Option<RejuvenationState>,
}

/// One completed request, as written to the latency log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestLogRow {
    pub request_id: u64,
    pub op: OpId,
    pub node: usize,
    pub issued_ms: Millis,
    pub latency_ms: Millis,
    pub outcome: Option<ErrorClass>,
    pub divergent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryRecord {
    pub start_ms: Millis,
    pub end_ms: Millis,
    pub node: usize,
    pub purpose: Purpose,
    pub kind: String,
    pub target: String,
}

impl RecoveryRecord {
    pub fn duration_ms(&self) -> Millis {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidentRecord {
    pub at_ms: Millis,
    pub node: usize,
    pub label: String,
    /// Sessions homed on the node when the incident began.
    pub sessions_on_node: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailureInterval {
    pub group: FunctionalGroup,
    pub start_ms: Millis,
    pub end_ms: Millis,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub name: String,
    pub seed: u64,
    pub duration_ms: Millis,
    pub nodes: usize,
    pub clients: usize,
    pub ledger: TawLedger,
    pub latency: LatencyStats,
    pub requests: Vec<RequestLogRow>,
    pub recoveries: Vec<RecoveryRecord>,
    pub incidents: Vec<IncidentRecord>,
    pub episodes: Vec<EpisodeRecord>,
    pub episode_log: Vec<EpisodeLogLine>,
    pub passes: Vec<(usize, PassRecord)>,
    pub rejuvenation_order: Vec<(usize, Vec<String>)>,
    pub m_sufficient_bytes: Option<u64>,
    pub failures: Vec<FailureInterval>,
    pub failed_by_class: BTreeMap<ErrorClass, u64>,
    pub retries: u64,
    pub divergent: u64,
    pub manual_repairs: Vec<String>,
    pub tainted_rows: usize,
    pub events: u64,
    pub component_names: Vec<String>,
    pub op_names: Vec<String>,
}

impl RunResult {
    pub fn failed_requests(&self) -> u64 {
        self.failed_by_class.values().sum()
    }

    pub fn session_lost(&self) -> u64 {
        self.failed_by_class.get(&ErrorClass::SessionLost).copied().unwrap_or(0)
    }

    /// Requests that failed outright (not retroactively) in `[from, to)`.
    pub fn failed_between(&self, from: Millis, to: Millis) -> u64 {
        self.requests
            .iter()
            .filter(|r| r.outcome.is_some())
            .filter(|r| (from..to).contains(&(r.issued_ms + r.latency_ms)))
            .count() as u64
    }

    pub fn failed_of_class_between(&self, class: ErrorClass, from: Millis, to: Millis) -> u64 {
        self.requests
            .iter()
            .filter(|r| r.outcome == Some(class))
            .filter(|r| (from..to).contains(&(r.issued_ms + r.latency_ms)))
            .count() as u64
    }

    /// Consistency checks between the request log and derived counters.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let logged = self.requests.iter().filter(|r| r.outcome.is_some()).count() as u64;
        if logged != self.failed_requests() {
            v.push(format!("{logged} failed requests logged, {} counted", self.failed_requests()));
        }
        if let Err(e) = self.ledger.taw_series() {
            v.push(e.to_string());
        }
        let t = self.ledger.totals();
        if t.good_requests + t.bad_requests > self.requests.len() as u64 {
            v.push("ledger holds more requests than were completed".into());
        }
        if let Some(x) = self.recoveries.iter().find(|x| x.end_ms < x.start_ms) {
            v.push(format!("recovery of {} ends before it starts", x.target));
        }
        v
    }

    /// Completed requests per second over `[from, to)`.
    pub fn throughput(&self, from: Millis, to: Millis) -> f64 {
        let n = self
            .requests
            .iter()
            .filter(|r| (from..to).contains(&(r.issued_ms + r.latency_ms)))
            .count();
        n as f64 * 1000.0 / (to - from).max(1) as f64
    }
}

pub struct World {
    scenario: Scenario,
    components: ComponentCatalog,
    ops: Rc<OpCatalog>,
    matrix: TransitionMatrix,
    cluster: ClusterConfig,
    masking: MaskingConfig,
    think: ThinkConfig,
    detector: DetectorProfile,
    policy: PolicyConfig,
    end: Millis,
    q: EventQueue<Event>,
    nodes: Vec<Node>,
    lb: LbState,
    external: SessionStore,
    db: TxStore,
    faults: FaultSet,
    clients: Vec<ClientState>,
    reqs: BTreeMap<u64, Req>,
    retrying: BTreeMap<u64, Req>,
    next_req: u64,
    next_action: u64,
    ledger: TawLedger,
    latency: LatencyStats,
    log: Vec<RequestLogRow>,
    channel: ReportChannel,
    detect_rng: RngStream,
    lb_rng: RngStream,
    fault_rng: RngStream,
    admit_rng: RngStream,
    recoveries: Vec<RecoveryRecord>,
    incidents: Vec<IncidentRecord>,
    failures: Vec<FailureInterval>,
    failed_by_class: BTreeMap<ErrorClass, u64>,
    retries: u64,
    divergent: u64,
    manual_repairs: Vec<String>,
}

impl World {
    pub fn new(scenario: &Scenario, catalogs: Catalogs) -> Self {
        let Catalogs { components, ops, matrix } = catalogs;
        let cluster = scenario.cluster;
        let master = RngStream::master(scenario.seed);
        let nodes = (0..cluster.nodes)
            .map(|n| {
                let registry =
                    Registry::deploy_with_heap(components.clone(), cluster.heap_bytes, DEFAULT_SERVER_BASE_BYTES);
                let rejuv = scenario
                    .rejuvenation
                    .enabled
                    .then(|| RejuvenationState::new(&scenario.rejuvenation, &registry));
                Node {
                    rm: RecoveryManager::new(n, components.len(), scenario.policy),
                    registry,
                    store: SessionStore::new(StoreKind::InProcess),
                    restarting_until: None,
                    workers_busy: 0,
                    accept: VecDeque::new(),
                    cores_busy: 0,
                    cpu: VecDeque::new(),
                    active: BTreeSet::new(),
                    captured: BTreeMap::new(),
                    dispatching: false,
                    rejuv,
                }
            })
            .collect();
        let client_root = master.fork("clients");
        let total = scenario.clients_per_node as usize * cluster.nodes;
        let login = ops.login();
        let clients = (0..total as u32).map(|i| ClientState::new(i, login, &client_root)).collect();
        let mut w = Self {
            components,
            cluster,
            masking: cluster.masking,
            think: scenario.think,
            detector: scenario.detector,
            policy: scenario.policy,
            end: scenario.duration_ms,
            q: EventQueue::new(),
            nodes,
            lb: LbState::new(cluster.nodes),
            external: SessionStore::new(StoreKind::External).with_latency(cluster.external_latency_ms),
            db: TxStore::new(),
            faults: FaultSet::new(),
            clients,
            reqs: BTreeMap::new(),
            retrying: BTreeMap::new(),
            next_req: 0,
            next_action: 0,
            ledger: TawLedger::new(),
            latency: LatencyStats::new(),
            log: Vec::new(),
            channel: ReportChannel::new(&scenario.detector, master.fork("channel")),
            detect_rng: master.fork("detector"),
            lb_rng: master.fork("lb"),
            fault_rng: master.fork("faults"),
            admit_rng: master.fork("admission"),
            recoveries: Vec::new(),
            incidents: Vec::new(),
            failures: Vec::new(),
            failed_by_class: BTreeMap::new(),
            retries: 0,
            divergent: 0,
            manual_repairs: Vec::new(),
            ops: Rc::new(ops),
            matrix,
            scenario: scenario.clone(),
        };
        w.seed_events();
        w
    }

    fn seed_events(&mut self) {
        for c in 0..self.clients.len() {
            self.new_action(c as u32);
            self.schedule_next(c as u32, 0);
        }
        for i in 0..self.scenario.faults.len() {
            let at = self.scenario.faults[i].at_ms;
            self.at(at, Event::Inject { index: i });
        }
        for i in 0..self.scenario.scheduled.len() {
            let at = self.scenario.scheduled[i].at_ms;
            self.at(at, Event::Scheduled { index: i });
        }
        for n in 0..self.nodes.len() {
            if self.nodes[n].rejuv.is_some() {
                let p = self.scenario.rejuvenation.poll_ms.max(1);
                self.at(p, Event::RejuvTick { node: n });
            }
        }
        self.at(GC_PERIOD_MS, Event::Gc);
    }

    fn at(&mut self, t: Millis, e: Event) {
        self.q.schedule(t.max(self.q.now()), e).expect("never in the past");
    }

    pub fn now(&self) -> Millis {
        self.q.now()
    }

    pub fn end(&self) -> Millis {
        self.end
    }

    pub fn registry(&self, node: usize) -> &Registry {
        &self.nodes[node].registry
    }

    pub fn in_flight(&self) -> usize {
        self.reqs.len() + self.retrying.len()
    }

    pub fn completed_requests(&self) -> usize {
        self.log.len()
    }

    pub fn ledger(&self) -> &TawLedger {
        &self.ledger
    }

    pub fn sessions_on(&self, node: usize) -> usize {
        self.lb.sessions_on(node)
    }

    pub fn episodes(&self, node: usize) -> &[EpisodeRecord] {
        &self.nodes[node].rm.episodes
    }

    /// Processes every event up to `t` (capped at the end of the run).
    pub fn advance_to(&mut self, t: Millis) {
        let t = t.min(self.end);
        while let Some((now, e)) = self.q.pop_due(t) {
            self.handle(now, e);
        }
        if self.q.now() < t {
            self.q.advance_to(t).expect("forward");
        }
    }

    /// Runs to the end, lets in-flight requests drain, and returns the
    /// results.
    pub fn run(mut self) -> RunResult {
        self.advance_to(self.end);
        while self.in_flight() > 0 {
            let Some((now, e)) = self.q.pop_due(Millis::MAX) else {
                break;
            };
            self.handle(now, e);
        }
        self.finish()
    }

    fn finish(mut self) -> RunResult {
        let pending: Vec<u64> = self.ledger.pending_actions().collect();
        for a in pending {
            self.ledger.abandon(a);
        }
        self.ledger.extend_to(self.end);
        let mut episodes = Vec::new();
        let mut episode_log = Vec::new();
        let mut passes = Vec::new();
        let mut order = Vec::new();
        let mut m_sufficient = None;
        for (n, node) in self.nodes.iter().enumerate() {
            episodes.extend(node.rm.episodes.iter().cloned());
            episode_log.extend(node.rm.log.iter().cloned());
            if let Some(r) = &node.rejuv {
                passes.extend(r.passes.iter().cloned().map(|p| (n, p)));
                order.push((
                    n,
                    r.candidates().iter().map(|c| self.components.name(*c).to_owned()).collect(),
                ));
                m_sufficient = Some(r.m_sufficient_bytes);
            }
        }
        episode_log.sort_by_key(|l| (l.time, l.node));
        let mut failures = std::mem::take(&mut self.failures);
        failures.sort_by_key(|f| (f.group, f.start_ms, f.end_ms));
        RunResult {
            name: self.scenario.name.clone(),
            seed: self.scenario.seed,
            duration_ms: self.end,
            nodes: self.nodes.len(),
            clients: self.clients.len(),
            latency: self.latency,
            requests: self.log,
            recoveries: self.recoveries,
            incidents: self.incidents,
            episodes,
            episode_log,
            passes,
            rejuvenation_order: order,
            m_sufficient_bytes: m_sufficient,
            failures,
            failed_by_class: self.failed_by_class,
            retries: self.retries,
            divergent: self.divergent,
            manual_repairs: self.manual_repairs,
            tainted_rows: self.db.tainted_rows().count(),
            events: self.q.dispatched(),
            component_names: self.components.specs().iter().map(|s| s.name.clone()).collect(),
            op_names: self.ops.ops().iter().map(|o| o.name.clone()).collect(),
            ledger: self.ledger,
        }
    }

    fn handle(&mut self, now: Millis, e: Event) {
        let live = now <= self.end;
        match e {
            Event::Issue { client, op } => self.issue(client, op, now),
            Event::Retry { req } => {
                if let Some(r) = self.retrying.remove(&req) {
                    self.dispatch(r, now);
                }
            }
            Event::StoreDone { req } => {
                if self.reqs.contains_key(&req) {
                    self.queue_cpu(req, now);
                }
            }
            Event::StepDone { req } => self.step_done(req, now),
            Event::Ttl { req } => self.ttl(req, now),
            Event::Report { report } if live => self.ingest(report, now),
            Event::Inject { index } if live => self.inject(index, now),
            Event::Scheduled { index } if live => self.scheduled(index, now),
            Event::MurbStart { node, members, purpose } => self.murb_now(node, members, purpose, now),
            Event::MurbDone { node, purpose } => self.murb_done(node, purpose, now),
            Event::RestartDone { node, purpose } => self.restart_done(node, purpose, now),
            Event::ObserveEnd { node } => self.observe_end(node, now),
            Event::RejuvTick { node } if live => self.rejuv_tick(node, now),
            Event::Gc if live => {
                self.external.store_gc(now);
                for n in &mut self.nodes {
                    n.store.store_gc(now);
                    n.registry.reap_leases(now);
                }
                self.at(now + GC_PERIOD_MS, Event::Gc);
            }
            _ => {}
        }
    }

    // ---- clients ----

    fn new_action(&mut self, client: u32) {
        let c = &mut self.clients[client as usize];
        c.current_action = self.next_action;
        c.action_requests = 0;
        self.next_action += 1;
    }

    fn schedule_next(&mut self, client: u32, now: Millis) {
        let c = &mut self.clients[client as usize];
        let (op, at) = next_operation(c, now, &self.matrix, &self.ops, &self.think);
        if at >= self.end {
            let a = c.current_action;
            self.ledger.abandon(a);
            return;
        }
        self.at(at, Event::Issue { client, op });
    }

    fn issue(&mut self, client: u32, op: OpId, now: Millis) {
        let c = &mut self.clients[client as usize];
        c.arg_seq += 1;
        c.action_requests += 1;
        let arg = mix64(c.arg_seq ^ (u64::from(client) << 40));
        let req = Req {
            id: self.next_req,
            client,
            action: c.current_action,
            op,
            node: 0,
            session: c.session,
            first_issued: now,
            arg,
            step: 0,
            current: None,
            perturbed: false,
            taint: false,
            tx: None,
            retried: false,
            on_worker: false,
            on_core: false,
            hung: None,
        };
        self.next_req += 1;
        self.dispatch(req, now);
    }

    fn dispatch(&mut self, mut req: Req, now: Millis) {
        let op = self.ops.get(req.op);
        let route = match req.session {
            Some(s) if op.session_touch != SessionTouch::Create => self.lb.route(s, &mut self.lb_rng),
            _ => self.lb.route_login().map(Route::Home),
        };
        match route {
            Err(_) => {
                req.node = self.clients[req.client as usize].home_node.unwrap_or(0);
                self.conclude(req, Outcome::Error(ErrorClass::Connection), 0, now);
            }
            Ok(Route::Redirected { home, .. })
                if self.cluster.store == StoreKind::InProcess && op.session_touch != SessionTouch::None =>
            {
                // The session lives in the home node's memory.
                req.node = home;
                self.conclude(req, Outcome::Error(ErrorClass::SessionLost), 0, now);
            }
            Ok(r) => {
                req.node = r.node();
                self.admit(req, now);
            }
        }
    }

    // ---- server side ----

    fn admit(&mut self, req: Req, now: Millis) {
        let n = req.node;
        if self.nodes[n].restarting_until.is_some() {
            return self.conclude(req, Outcome::Error(ErrorClass::Connection), 0, now);
        }
        if self.faults.has_process_wide(n) {
            let (p, leak) = self.faults.admission_effects(n);
            if !self.allocate(n, Holder::Unattributed, leak, false) || self.admit_rng.chance(p) {
                return self.conclude(req, Outcome::Error(ErrorClass::Exception), 0, now);
            }
        }
        let id = req.id;
        self.reqs.insert(id, req);
        self.at(now + self.cluster.ttl_ms, Event::Ttl { req: id });
        self.nodes[n].accept.push_back(id);
        self.next_worker(n, now);
    }

    fn next_worker(&mut self, n: usize, now: Millis) {
        if self.nodes[n].dispatching || self.nodes[n].restarting_until.is_some() {
            return;
        }
        self.nodes[n].dispatching = true;
        while self.nodes[n].workers_busy < self.cluster.workers_per_node {
            let Some(id) = self.nodes[n].accept.pop_front() else {
                break;
            };
            let Some(r) = self.reqs.get_mut(&id) else { continue };
            r.on_worker = true;
            let node = &mut self.nodes[n];
            node.workers_busy += 1;
            node.active.insert(id);
            self.enter_step(id, 0, now);
        }
        self.nodes[n].dispatching = false;
    }

    fn enter_step(&mut self, id: u64, i: usize, now: Millis) {
        let (n, op_id, retried) = {
            let r = &self.reqs[&id];
            (r.node, r.op, r.retried)
        };
        let ops = Rc::clone(&self.ops);
        let op = ops.get(op_id);
        let comp = op.path[i];
        {
            let r = self.reqs.get_mut(&id).unwrap();
            r.step = i;
            r.current = Some(comp);
        }
        match self.nodes[n].registry.lookup(comp, now) {
            Lookup::Bound(_) => {}
            Lookup::Sentinel { .. } => {
                return match handle_sentinel(op.idempotent, retried, &self.masking, now) {
                    SentinelAction::RetryScheduled(t) => self.schedule_retry(id, t, now),
                    SentinelAction::Fail => self.fail(id, ErrorClass::ComponentUnavailable, now),
                };
            }
            Lookup::Stopped => return self.fail(id, ErrorClass::ComponentUnavailable, now),
            Lookup::NotBound | Lookup::WrongBinding { valid: false, .. } => {
                return self.fail(id, ErrorClass::Exception, now)
            }
            Lookup::WrongBinding { valid: true, .. } => self.reqs.get_mut(&id).unwrap().perturbed = true,
        }
        if self.faults.touches(n, comp) {
            let mut cleared = Vec::new();
            let e = self.faults.step_effects(n, comp, op, &mut self.fault_rng, &mut cleared);
            self.on_cleared(cleared);
            if !self.allocate(n, Holder::Component(comp), e.leak_bytes, true) {
                return self.fail(id, ErrorClass::Exception, now);
            }
            let r = self.reqs.get_mut(&id).unwrap();
            r.perturbed |= e.perturb;
            r.taint |= e.taint;
            if e.exception {
                return self.fail(id, ErrorClass::Exception, now);
            }
            if e.hang {
                r.hung = Some((comp, e.capture_worker));
                return;
            }
        }
        if op.tx_writes {
            let r = self.reqs.get_mut(&id).unwrap();
            let tx = *r.tx.get_or_insert_with(|| self.db.begin());
            self.db.enlist(tx, comp).expect("open transaction");
        }
        if i == 0 {
            let session = self.reqs[&id].session;
            let store = match self.cluster.store {
                StoreKind::InProcess => &mut self.nodes[n].store,
                StoreKind::External => &mut self.external,
            };
            if op.needs_session() {
                let ok = session.is_some_and(|k| matches!(store.session_read(k, now), SessionRead::Payload(_)));
                if !ok {
                    return self.fail(id, ErrorClass::SessionLost, now);
                }
            }
            let lat = store.latency();
            if lat > 0 && (session.is_some() || op.session_touch == SessionTouch::Create) {
                return self.at(now + lat, Event::StoreDone { req: id });
            }
        }
        self.queue_cpu(id, now);
    }

    /// Leaked allocations; an exhausted heap throws where the allocation
    /// happens.
    fn allocate(&mut self, n: usize, holder: Holder, bytes: u64, via_runtime: bool) -> bool {
        if bytes == 0 {
            return true;
        }
        let reg = &mut self.nodes[n].registry;
        if reg.free_heap() < bytes {
            return false;
        }
        reg.acquire_lease(holder, bytes, None, via_runtime);
        true
    }

    fn queue_cpu(&mut self, id: u64, now: Millis) {
        let n = self.reqs[&id].node;
        self.nodes[n].cpu.push_back(id);
        self.next_cpu(n, now);
    }

    fn next_cpu(&mut self, n: usize, now: Millis) {
        while self.nodes[n].cores_busy < self.cluster.cores_per_node {
            let Some(id) = self.nodes[n].cpu.pop_front() else {
                break;
            };
            let Some(r) = self.reqs.get_mut(&id) else { continue };
            r.on_core = true;
            self.nodes[n].cores_busy += 1;
            let service = self.ops.get(r.op).step_service_ms(r.step);
            self.at(now + service, Event::StepDone { req: id });
        }
    }

    fn step_done(&mut self, id: u64, now: Millis) {
        let Some(r) = self.reqs.get_mut(&id) else { return };
        r.on_core = false;
        let (n, step, len) = (r.node, r.step, self.ops.get(r.op).path.len());
        self.nodes[n].cores_busy -= 1;
        self.next_cpu(n, now);
        if step + 1 < len {
            self.enter_step(id, step + 1, now);
        } else {
            self.complete_ok(id, now);
        }
    }

    fn ttl(&mut self, id: u64, now: Millis) {
        let Some(r) = self.reqs.get_mut(&id) else { return };
        if let Some((comp, true)) = r.hung {
            // The runaway invocation keeps its thread.
            r.on_worker = false;
            let n = r.node;
            let node = &mut self.nodes[n];
            node.active.remove(&id);
            *node.captured.entry(comp).or_default() += 1;
        }
        self.fail(id, ErrorClass::TtlExpired, now);
    }

    fn schedule_retry(&mut self, id: u64, t: Millis, now: Millis) {
        let mut r = self.reqs.remove(&id).expect("live request");
        self.release(&r, now);
        r.id = self.next_req;
        self.next_req += 1;
        r.retried = true;
        r.on_worker = false;
        r.on_core = false;
        r.tx = None;
        r.hung = None;
        r.current = None;
        r.step = 0;
        r.perturbed = false;
        r.taint = false;
        self.retries += 1;
        let nid = r.id;
        self.retrying.insert(nid, r);
        self.at(t, Event::Retry { req: nid });
    }

    /// Frees the worker, core and open transaction held by `r`.
    fn release(&mut self, r: &Req, now: Millis) {
        let n = r.node;
        {
            let node = &mut self.nodes[n];
            if r.on_worker {
                node.workers_busy -= 1;
                node.active.remove(&r.id);
            }
            if r.on_core {
                node.cores_busy -= 1;
            }
        }
        if let Some(tx) = r.tx {
            if self.db.is_open(tx) {
                self.db.abort(tx).expect("open transaction");
            }
        }
        if r.on_core {
            self.next_cpu(n, now);
        }
        if r.on_worker {
            self.next_worker(n, now);
        }
    }

    fn fail(&mut self, id: u64, class: ErrorClass, now: Millis) {
        let r = self.reqs.remove(&id).expect("live request");
        self.release(&r, now);
        self.conclude(r, Outcome::Error(class), 0, now);
    }

    fn complete_ok(&mut self, id: u64, now: Millis) {
        let mut r = self.reqs.remove(&id).expect("live request");
        let ops = Rc::clone(&self.ops);
        let op = ops.get(r.op);
        if let Some(tx) = r.tx.take() {
            let table = op.path.last().copied().expect("non-empty path");
            let key = RowKey {
                table,
                row: r.arg % 4096,
            };
            self.db.write(tx, key, r.arg, r.taint).expect("open transaction");
            self.db.commit(tx).expect("open transaction");
        }
        self.release(&r, now);
        let n = r.node;
        let store = match self.cluster.store {
            StoreKind::InProcess => &mut self.nodes[n].store,
            StoreKind::External => &mut self.external,
        };
        let c = &mut self.clients[r.client as usize];
        match op.session_touch {
            SessionTouch::Create => {
                if let Some(old) = c.session.take() {
                    store.session_delete(old);
                    self.lb.unbind(old);
                }
                let key = c.next_session_key();
                store.session_write(key, r.arg, now).expect("node is up");
                self.lb.bind(key, n);
                c.session = Some(key);
                c.needs_login = false;
                c.home_node = Some(n);
            }
            SessionTouch::Update => {
                if let Some(k) = r.session {
                    store.session_write(k, r.arg, now).expect("node is up");
                }
            }
            SessionTouch::Delete => {
                if let Some(k) = r.session {
                    store.session_delete(k);
                    self.lb.unbind(k);
                }
                c.session = None;
                c.needs_login = true;
            }
            SessionTouch::Read | SessionTouch::None => {}
        }
        r.session = c.session;
        let mut fp = expected_fingerprint(r.op, r.arg, u64::from(r.client));
        if r.perturbed {
            fp ^= PERTURBATION;
        }
        self.conclude(r, Outcome::Ok, fp, now);
    }

    /// The client edge: detection, accounting and the next request.
    fn conclude(&mut self, r: Req, outcome: Outcome, fingerprint: u64, now: Millis) {
        let latency = now - r.first_issued;
        let ops = Rc::clone(&self.ops);
        let op = ops.get(r.op);
        let resp = Response {
            op: r.op,
            outcome,
            body_fingerprint: fingerprint,
            latency_ms: latency,
        };
        let expected = expected_fingerprint(r.op, r.arg, u64::from(r.client));
        if let Verdict::Faulty(class) = classify_response(&self.detector, &resp, Some(expected), &mut self.detect_rng) {
            let report = FailureReport {
                op: r.op,
                failure_class: class,
                observed_at: now,
                client_id: r.client,
                node: r.node,
            };
            if let Some(t) = self.channel.report(&report) {
                self.at(t, Event::Report { report });
            }
        }
        let divergent = outcome == Outcome::Ok && fingerprint != expected;
        self.divergent += u64::from(divergent);
        self.ledger.record_request(r.action, now);
        let error = match outcome {
            Outcome::Error(e) => Some(e),
            _ => None,
        };
        self.log.push(RequestLogRow {
            request_id: r.id,
            op: r.op,
            node: r.node,
            issued_ms: r.first_issued,
            latency_ms: latency,
            outcome: error,
            divergent,
        });
        match error {
            None => {
                self.latency.record(latency);
                if op.ends_action() {
                    self.ledger.resolve(r.action, true, now);
                    self.new_action(r.client);
                }
            }
            Some(e) => {
                *self.failed_by_class.entry(e).or_default() += 1;
                self.failures.push(FailureInterval {
                    group: op.group,
                    start_ms: r.first_issued,
                    end_ms: now,
                });
                self.ledger.resolve(r.action, false, now);
                self.new_action(r.client);
                let c = &mut self.clients[r.client as usize];
                if e == ErrorClass::SessionLost {
                    if let Some(k) = c.session.take() {
                        self.lb.unbind(k);
                    }
                    c.needs_login = true;
                } else if op.session_touch == SessionTouch::Create {
                    c.needs_login = true;
                }
            }
        }
        self.schedule_next(r.client, now);
    }

    // ---- faults ----

    fn on_cleared(&mut self, cleared: Vec<ClearedFault>) {
        for c in cleared {
            if let Some(t) = c.restore_binding {
                self.nodes[c.node].registry.set_corrupted_binding(t, None);
            }
            if c.requires_manual_data_repair {
                self.nodes[c.node].rm.note_manual_repair();
                self.manual_repairs.push(c.label);
            }
        }
    }

    fn inject(&mut self, index: usize, now: Millis) {
        let entry = self.scenario.faults[index].clone();
        let spec = entry.to_spec(index as u32);
        let n = entry.node;
        self.incidents.push(IncidentRecord {
            at_ms: now,
            node: n,
            label: spec.label(),
            sessions_on_node: self.lb.sessions_on(n),
        });
        if spec.class == FaultClass::CorruptExternalSession {
            // Checksums catch the damage on the next read; nothing stays armed.
            let keys: Vec<u64> = self.external.keys().collect();
            for k in keys {
                if self.fault_rng.chance(spec.params.probability) {
                    self.external.corrupt(k);
                }
            }
            return;
        }
        let (_, binding) = self
            .faults
            .inject(spec.clone(), &self.components, now)
            .expect("validated scenario");
        if let Some((t, b)) = binding {
            self.nodes[n].registry.set_corrupted_binding(t, Some(b));
        }
        if spec.class == FaultClass::CorruptDbRow {
            if let Some(t) = self.components.id(spec.target.as_deref().unwrap_or_default()) {
                self.db.taint_table(t);
            }
        }
    }

    fn scheduled(&mut self, index: usize, now: Millis) {
        let a = self.scenario.scheduled[index].clone();
        let label = match &a.component {
            Some(c) => format!("{}({c})", kind_str(a.kind)),
            None => kind_str(a.kind).to_owned(),
        };
        self.incidents.push(IncidentRecord {
            at_ms: now,
            node: a.node,
            label,
            sessions_on_node: self.lb.sessions_on(a.node),
        });
        match a.kind {
            ScheduledKind::Microreboot => {
                let id = self.components.id(a.component.as_deref().unwrap_or_default()).expect("validated");
                let members = self.nodes[a.node].registry.recovery_group(id).members.clone();
                self.begin_murb(a.node, members, Purpose::Scheduled, now);
            }
            ScheduledKind::RestartApplication => self.restart(a.node, RestartLevel::Application, Purpose::Scheduled, now),
            ScheduledKind::RestartProcess => self.restart(a.node, RestartLevel::Process, Purpose::Scheduled, now),
            ScheduledKind::RebootNode => self.restart(a.node, RestartLevel::Node, Purpose::Scheduled, now),
        }
    }

    // ---- recovery ----

    fn ingest(&mut self, report: FailureReport, now: Millis) {
        if !self.policy.enabled {
            return;
        }
        let n = report.node;
        let path = &self.ops.get(report.op).path;
        self.nodes[n].rm.ingest_report(&report, Some(path), now);
        let node = &mut self.nodes[n];
        if let Some(a) = node.rm.poll(now, &node.registry, &self.ops) {
            self.start_action(n, a, now);
        }
    }

    fn start_action(&mut self, n: usize, action: RecoveryAction, now: Millis) {
        if action.level == RecoveryLevel::EscalateHuman {
            self.nodes[n].rm.finish_escalation(now);
            return;
        }
        if self.policy.failover {
            self.lb.set_failover(n, true).expect("known node");
        }
        let web = self.components.web_component();
        let cleared = self.faults.apply_action(&action, web);
        self.on_cleared(cleared);
        match action.level {
            RecoveryLevel::MurbGroup | RecoveryLevel::MurbWeb => {
                self.begin_murb(n, action.members, Purpose::Recovery, now)
            }
            RecoveryLevel::RestartApplication => self.restart(n, RestartLevel::Application, Purpose::Recovery, now),
            RecoveryLevel::RestartProcess => self.restart(n, RestartLevel::Process, Purpose::Recovery, now),
            RecoveryLevel::RebootNode => self.restart(n, RestartLevel::Node, Purpose::Recovery, now),
            RecoveryLevel::EscalateHuman => unreachable!(),
        }
    }

    fn begin_murb(&mut self, n: usize, members: BTreeSet<ComponentId>, purpose: Purpose, now: Millis) {
        match self.masking.drain_ms {
            Some(d) if d > 0 => {
                let reg = &mut self.nodes[n].registry;
                let ready = now + d + reg.group_duration(&members);
                reg.begin_drain(&members, ready);
                self.at(now + d, Event::MurbStart { node: n, members, purpose });
            }
            _ => self.murb_now(n, members, purpose, now),
        }
    }

    fn murb_now(&mut self, n: usize, members: BTreeSet<ComponentId>, purpose: Purpose, now: Millis) {
        let until = match self.nodes[n].registry.microreboot(&members, now) {
            MicrorebootOutcome::Coalesced { until } => until,
            MicrorebootOutcome::Started { until, released } => {
                if purpose == Purpose::Rejuvenation {
                    if let Some(r) = self.nodes[n].rejuv.as_mut() {
                        r.record_release(&released);
                    }
                }
                self.abort_for(n, &members, now);
                let reg = &self.nodes[n].registry;
                let anchor = *members.iter().next().expect("non-empty group");
                let target = reg.group_label(&RecoveryGroup {
                    anchor,
                    members: members.clone(),
                });
                self.recoveries.push(RecoveryRecord {
                    start_ms: now,
                    end_ms: until,
                    node: n,
                    purpose,
                    kind: "microreboot".into(),
                    target,
                });
                until
            }
        };
        self.at(until, Event::MurbDone { node: n, purpose });
    }

    /// Aborts the in-flight requests a microreboot of `members` cuts off.
    fn abort_for(&mut self, n: usize, members: &BTreeSet<ComponentId>, now: Millis) {
        let retry = self.masking.retry;
        let victims: Vec<u64> = self.nodes[n]
            .active
            .iter()
            .copied()
            .filter(|id| {
                let r = &self.reqs[id];
                let path = &self.ops.get(r.op).path;
                r.current.is_some_and(|c| members.contains(&c))
                    || r
                        .tx
                        .and_then(|t| self.db.participants(t))
                        .is_some_and(|p| !p.is_disjoint(members))
                    || (!retry && path[r.step + 1..].iter().any(|c| members.contains(c)))
            })
            .collect();
        let node = &mut self.nodes[n];
        let freed: usize = members.iter().filter_map(|m| node.captured.remove(m)).sum();
        node.workers_busy -= freed;
        for v in victims {
            self.fail(v, ErrorClass::ComponentUnavailable, now);
        }
        self.db.abort_participants(members);
        if freed > 0 {
            self.next_worker(n, now);
        }
    }

    fn murb_done(&mut self, n: usize, purpose: Purpose, now: Millis) {
        self.nodes[n].registry.complete_microreboots(now);
        match purpose {
            Purpose::Recovery => self.action_done(n, now),
            Purpose::Rejuvenation => {
                let node = &mut self.nodes[n];
                let free = node.registry.free_heap();
                if let Some(r) = node.rejuv.as_mut() {
                    let step = r.advance(now, free, &node.registry);
                    self.act_rejuv(n, step, now);
                }
            }
            Purpose::Scheduled => {}
        }
    }

    fn restart(&mut self, n: usize, level: RestartLevel, purpose: Purpose, now: Millis) {
        let out = self.nodes[n].registry.full_restart(level, now, self.cluster.os_boot_ms);
        let kind = match level {
            RestartLevel::Application => "restart_application",
            RestartLevel::Process => "restart_process",
            RestartLevel::Node => "reboot_node",
        };
        self.recoveries.push(RecoveryRecord {
            start_ms: now,
            end_ms: out.until,
            node: n,
            purpose,
            kind: kind.into(),
            target: format!("node{n}"),
        });
        let mut victims: Vec<u64> = self.nodes[n].active.iter().copied().collect();
        let class = if level == RestartLevel::Application {
            ErrorClass::ComponentUnavailable
        } else {
            let node = &mut self.nodes[n];
            node.restarting_until = Some(out.until);
            node.store.wipe();
            node.store.available = false;
            victims.extend(node.accept.drain(..));
            node.cpu.clear();
            let captured: usize = node.captured.values().sum();
            node.workers_busy -= captured;
            node.captured.clear();
            ErrorClass::Connection
        };
        for v in victims {
            if self.reqs.contains_key(&v) {
                self.fail(v, class, now);
            }
        }
        self.at(out.until, Event::RestartDone { node: n, purpose });
    }

    fn restart_done(&mut self, n: usize, purpose: Purpose, now: Millis) {
        let node = &mut self.nodes[n];
        node.registry.complete_restart();
        node.restarting_until = None;
        node.store.available = true;
        if purpose == Purpose::Recovery {
            self.action_done(n, now);
        }
        self.next_worker(n, now);
    }

    fn action_done(&mut self, n: usize, now: Millis) {
        if self.policy.failover {
            self.lb.set_failover(n, false).expect("known node");
        }
        let delay = self.channel.delay_ms;
        if let Some(t) = self.nodes[n].rm.action_completed(now, delay) {
            self.at(t, Event::ObserveEnd { node: n });
        }
    }

    fn observe_end(&mut self, n: usize, now: Millis) {
        let node = &mut self.nodes[n];
        if let Some(ObservationOutcome::Escalate(a)) = node.rm.observation_ended(now, &node.registry) {
            self.start_action(n, a, now);
        }
    }

    fn rejuv_tick(&mut self, n: usize, now: Millis) {
        let poll = self.scenario.rejuvenation.poll_ms.max(1);
        self.at(now + poll, Event::RejuvTick { node: n });
        let node = &mut self.nodes[n];
        if node.restarting_until.is_some() || node.rm.in_episode() {
            return;
        }
        let free = node.registry.free_heap();
        if let Some(r) = node.rejuv.as_mut() {
            let step = r.tick(now, free, &node.registry);
            self.act_rejuv(n, step, now);
        }
    }

    fn act_rejuv(&mut self, n: usize, step: RejuvenationStep, now: Millis) {
        match step {
            RejuvenationStep::Idle => {}
            RejuvenationStep::Microreboot { members, .. } => self.begin_murb(n, members, Purpose::Rejuvenation, now),
            RejuvenationStep::RestartProcess => self.restart(n, RestartLevel::Process, Purpose::Rejuvenation, now),
        }
    }
}

fn kind_str(k: ScheduledKind) -> &'static str {
    match k {
        ScheduledKind::Microreboot => "microreboot",
        ScheduledKind::RestartApplication => "restart_application",
        ScheduledKind::RestartProcess => "restart_process",
        ScheduledKind::RebootNode => "reboot_node",
    }
}

/// Runs `scenario` to completion against `catalogs`.
pub fn simulate(scenario: &Scenario, catalogs: Catalogs) -> RunResult {
    World::new(scenario, catalogs).run()
}
