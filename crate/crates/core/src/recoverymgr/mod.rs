//! Recovery manager: path-scored diagnosis, the recursive recovery ladder
//! with escalation and loop detection, microrejuvenation, and the
//! detection/false-positive headroom calculators.

mod headroom;
mod rejuvenation;

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use headroom::{detection_headroom, fp_curve, fp_headroom, HeadroomError};
pub use rejuvenation::{PassRecord, RejuvenationConfig, RejuvenationMode, RejuvenationState, RejuvenationStep};

use crate::app::OpCatalog;
use crate::detect::{FailureClass, FailureReport};
use crate::runtime::{ComponentId, Registry};
use crate::simcore::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryLevel {
    MurbGroup,
    MurbWeb,
    RestartApplication,
    RestartProcess,
    RebootNode,
    EscalateHuman,
}

impl RecoveryLevel {
    pub const ALL: [RecoveryLevel; 6] = [
        RecoveryLevel::MurbGroup,
        RecoveryLevel::MurbWeb,
        RecoveryLevel::RestartApplication,
        RecoveryLevel::RestartProcess,
        RecoveryLevel::RebootNode,
        RecoveryLevel::EscalateHuman,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MurbGroup => "murb_group",
            Self::MurbWeb => "murb_web",
            Self::RestartApplication => "restart_application",
            Self::RestartProcess => "restart_process",
            Self::RebootNode => "reboot_node",
            Self::EscalateHuman => "escalate_human",
        }
    }

    pub fn next(self) -> Option<RecoveryLevel> {
        let i = Self::ALL.iter().position(|l| *l == self)?;
        Self::ALL.get(i + 1).copied()
    }

    pub fn is_microreboot(self) -> bool {
        matches!(self, Self::MurbGroup | Self::MurbWeb)
    }
}

impl fmt::Display for RecoveryLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One rung of the ladder. `members` is what gets rebooted; full restarts
/// list every component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryAction {
    pub level: RecoveryLevel,
    pub node: usize,
    pub members: BTreeSet<ComponentId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Without the manager, failures are only observed, never recovered.
    pub enabled: bool,
    pub threshold: f64,
    pub half_life_ms: Millis,
    pub observe_ms: Millis,
    pub recur_count: usize,
    pub recur_window_ms: Millis,
    /// First rung of every episode; `restart_process` models a
    /// restart-only operator.
    pub start_level: RecoveryLevel,
    /// Fail the node over for the duration of each recovery action.
    pub failover: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            threshold: 3.0,
            half_life_ms: 10_000,
            observe_ms: 5_000,
            recur_count: 3,
            recur_window_ms: 10 * 60 * 1000,
            start_level: RecoveryLevel::MurbGroup,
            failover: false,
        }
    }
}

/// Exponentially decaying per-component failure scores.
#[derive(Debug, Clone)]
pub struct ScoreBoard {
    scores: Vec<f64>,
    last_update: Millis,
    pub half_life_ms: Millis,
    pub threshold: f64,
}

impl ScoreBoard {
    pub fn new(components: usize, half_life_ms: Millis, threshold: f64) -> Self {
        Self {
            scores: vec![0.0; components],
            last_update: 0,
            half_life_ms,
            threshold,
        }
    }

    pub fn decay_to(&mut self, now: Millis) {
        if now <= self.last_update {
            return;
        }
        if self.half_life_ms > 0 {
            let f = 0.5f64.powf((now - self.last_update) as f64 / self.half_life_ms as f64);
            self.scores.iter_mut().for_each(|s| *s *= f);
        }
        self.last_update = now;
    }

    pub fn add(&mut self, c: ComponentId, amount: f64) {
        self.scores[c.index()] += amount;
    }

    pub fn score(&self, c: ComponentId) -> f64 {
        self.scores[c.index()]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn reset(&mut self) {
        self.scores.iter_mut().for_each(|s| *s = 0.0);
    }
}

/// Picks the component to recover: the highest score at or above the
/// threshold, excluding the web component unless it is the only
/// candidate. Ties go to the smallest recovery group, then to the
/// component on the fewest operation paths, then to the name.
pub fn diagnose(board: &ScoreBoard, registry: &Registry, ops: &OpCatalog) -> Option<ComponentId> {
    let catalog = registry.catalog();
    let web = catalog.web_component();
    let pick = |allow_web: bool| {
        let best = catalog
            .ids()
            .filter(|c| allow_web || Some(*c) != web)
            .map(|c| board.score(c))
            .fold(f64::NEG_INFINITY, f64::max);
        if best < board.threshold {
            return None;
        }
        let eps = 1e-9 * best.abs().max(1.0);
        catalog
            .ids()
            .filter(|c| allow_web || Some(*c) != web)
            .filter(|c| (board.score(*c) - best).abs() <= eps)
            .min_by_key(|c| (registry.recovery_group(*c).len(), ops.paths_containing(*c), catalog.name(*c)))
    };
    pick(false).or_else(|| pick(true))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeLogLine {
    pub time: Millis,
    pub node: usize,
    pub level: RecoveryLevel,
    pub target: String,
    pub result: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeRecord {
    pub node: usize,
    pub started_at: Millis,
    pub ended_at: Millis,
    pub target: String,
    pub terminal_level: RecoveryLevel,
    pub manual_repair: bool,
    pub actions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Acting { started_at: Millis },
    Observing { started_at: Millis, completed_at: Millis, failures: u32 },
}

#[derive(Debug, Clone)]
struct Episode {
    started_at: Millis,
    anchor: ComponentId,
    target: String,
    level: RecoveryLevel,
    phase: Phase,
    manual_repair: bool,
    actions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObservationOutcome {
    Escalate(RecoveryAction),
    Done(EpisodeRecord),
}

/// Per-node recovery manager.
#[derive(Debug, Clone)]
pub struct RecoveryManager {
    pub node: usize,
    pub config: PolicyConfig,
    pub board: ScoreBoard,
    episode: Option<Episode>,
    /// Reports observed before this instant belong to a finished episode.
    ignore_before: Millis,
    history: VecDeque<(Millis, String)>,
    pub awaiting_operator: bool,
    pub log: Vec<EpisodeLogLine>,
    pub episodes: Vec<EpisodeRecord>,
    pub ingested: u64,
}

impl RecoveryManager {
    pub fn new(node: usize, components: usize, config: PolicyConfig) -> Self {
        Self {
            node,
            board: ScoreBoard::new(components, config.half_life_ms, config.threshold),
            config,
            episode: None,
            ignore_before: 0,
            history: VecDeque::new(),
            awaiting_operator: false,
            log: Vec::new(),
            episodes: Vec::new(),
            ingested: 0,
        }
    }

    pub fn in_episode(&self) -> bool {
        self.episode.is_some()
    }

    /// Decays scores to `now` and credits every component on the report's
    /// path. Session-state loss reports are not component failures and are
    /// ignored, as are reports from before the last episode ended.
    pub fn ingest_report(&mut self, report: &FailureReport, path: Option<&[ComponentId]>, now: Millis) {
        if report.failure_class == FailureClass::AppCheck || report.observed_at < self.ignore_before {
            return;
        }
        let Some(path) = path else { return };
        self.ingested += 1;
        self.board.decay_to(now);
        for c in path {
            self.board.add(*c, 1.0);
        }
        if let Some(Episode {
            phase: Phase::Observing { completed_at, failures, .. },
            ..
        }) = &mut self.episode
        {
            if report.observed_at > *completed_at {
                *failures += 1;
            }
        }
    }

    fn members_for(&self, level: RecoveryLevel, anchor: ComponentId, registry: &Registry) -> BTreeSet<ComponentId> {
        let catalog = registry.catalog();
        match level {
            RecoveryLevel::MurbGroup => registry.recovery_group(anchor).members.clone(),
            RecoveryLevel::MurbWeb => {
                let mut m = registry.recovery_group(anchor).members.clone();
                if let Some(w) = catalog.web_component() {
                    m.extend(registry.recovery_group(w).members.iter().copied());
                }
                m
            }
            RecoveryLevel::EscalateHuman => BTreeSet::new(),
            _ => catalog.ids().collect(),
        }
    }

    fn action(&self, level: RecoveryLevel, anchor: ComponentId, registry: &Registry) -> RecoveryAction {
        RecoveryAction {
            level,
            node: self.node,
            members: self.members_for(level, anchor, registry),
        }
    }

    /// Starts an episode if idle and some component crossed the threshold.
    pub fn poll(&mut self, now: Millis, registry: &Registry, ops: &OpCatalog) -> Option<RecoveryAction> {
        if self.episode.is_some() || self.awaiting_operator {
            return None;
        }
        self.board.decay_to(now);
        let anchor = diagnose(&self.board, registry, ops)?;
        let target = registry.group_label(registry.recovery_group(anchor));
        while self
            .history
            .front()
            .is_some_and(|(t, _)| now.saturating_sub(*t) > self.config.recur_window_ms)
        {
            self.history.pop_front();
        }
        let recurrences = self.history.iter().filter(|(_, t)| *t == target).count();
        let level = if recurrences >= self.config.recur_count {
            RecoveryLevel::EscalateHuman
        } else {
            self.config.start_level
        };
        self.history.push_back((now, target.clone()));
        self.episode = Some(Episode {
            started_at: now,
            anchor,
            target,
            level,
            phase: Phase::Acting { started_at: now },
            manual_repair: false,
            actions: 1,
        });
        Some(self.action(level, anchor, registry))
    }

    /// Flags the running episode as needing manual data repair.
    pub fn note_manual_repair(&mut self) {
        if let Some(e) = &mut self.episode {
            e.manual_repair = true;
        }
    }

    /// Marks the current action finished; returns when observation ends.
    pub fn action_completed(&mut self, now: Millis, report_delay_ms: Millis) -> Option<Millis> {
        let e = self.episode.as_mut()?;
        let Phase::Acting { started_at } = e.phase else {
            return None;
        };
        e.phase = Phase::Observing {
            started_at,
            completed_at: now,
            failures: 0,
        };
        Some(now + self.config.observe_ms + report_delay_ms)
    }

    /// Terminal handling for `escalate_human`: the episode ends at once.
    pub fn finish_escalation(&mut self, now: Millis) -> Option<EpisodeRecord> {
        let e = self.episode.as_ref()?;
        if e.level != RecoveryLevel::EscalateHuman {
            return None;
        }
        self.log.push(EpisodeLogLine {
            time: now,
            node: self.node,
            level: e.level,
            target: e.target.clone(),
            result: "operator",
        });
        self.awaiting_operator = true;
        Some(self.end_episode(now, true))
    }

    fn end_episode(&mut self, now: Millis, manual: bool) -> EpisodeRecord {
        let e = self.episode.take().expect("episode running");
        self.board.reset();
        self.ignore_before = now;
        let rec = EpisodeRecord {
            node: self.node,
            started_at: e.started_at,
            ended_at: now,
            target: e.target,
            terminal_level: e.level,
            manual_repair: e.manual_repair || manual,
            actions: e.actions,
        };
        self.episodes.push(rec.clone());
        rec
    }

    pub fn observation_ended(&mut self, now: Millis, registry: &Registry) -> Option<ObservationOutcome> {
        let e = self.episode.as_mut()?;
        let Phase::Observing { started_at, failures, .. } = e.phase else {
            return None;
        };
        let persisted = failures > 0;
        self.log.push(EpisodeLogLine {
            time: started_at,
            node: self.node,
            level: e.level,
            target: e.target.clone(),
            result: if persisted { "failed" } else { "recovered" },
        });
        if !persisted {
            return Some(ObservationOutcome::Done(self.end_episode(now, false)));
        }
        let next = e.level.next().unwrap_or(RecoveryLevel::EscalateHuman);
        e.level = next;
        e.actions += 1;
        e.phase = Phase::Acting { started_at: now };
        let anchor = e.anchor;
        Some(ObservationOutcome::Escalate(self.action(next, anchor, registry)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::OpId;
    use crate::runtime::ComponentCatalog;

    fn setup() -> (Registry, OpCatalog) {
        let c = ComponentCatalog::demo();
        let ops = OpCatalog::demo(&c);
        (Registry::deploy(c), ops)
    }

    fn report(ops: &OpCatalog, op: &str, at: Millis) -> FailureReport {
        FailureReport {
            op: ops.id(op).unwrap(),
            failure_class: FailureClass::Keyword,
            observed_at: at,
            client_id: 0,
            node: 0,
        }
    }

    fn feed(rm: &mut RecoveryManager, ops: &OpCatalog, op: &str, at: Millis) {
        let r = report(ops, op, at);
        let path = ops.get(r.op).path.clone();
        rm.ingest_report(&r, Some(&path), at);
    }

    #[test]
    fn commit_bid_report_credits_whole_path() {
        let (reg, ops) = setup();
        let mut rm = RecoveryManager::new(0, reg.catalog().len(), PolicyConfig::default());
        feed(&mut rm, &ops, "CommitBid", 0);
        for n in ["WAR", "CommitBid", "Category", "Region", "User", "Item", "Bid"] {
            assert_eq!(rm.board.score(reg.id(n).unwrap()), 1.0, "{n}");
        }
        assert_eq!(rm.board.score(reg.id("ViewItem").unwrap()), 0.0);
    }

    #[test]
    fn scores_decay_to_nothing() {
        let mut b = ScoreBoard::new(1, 10_000, 3.0);
        b.add(ComponentId(0), 5.0);
        b.decay_to(100_000);
        assert!(b.score(ComponentId(0)) < 5.0 / 1000.0);
    }

    #[test]
    fn diagnosis_prefers_smallest_group() {
        let (reg, ops) = setup();
        let mut rm = RecoveryManager::new(0, reg.catalog().len(), PolicyConfig::default());
        for _ in 0..3 {
            feed(&mut rm, &ops, "MakeBid", 0);
        }
        assert_eq!(diagnose(&rm.board, &reg, &ops), reg.catalog().id("MakeBid"));
    }

    #[test]
    fn below_threshold_no_diagnosis() {
        let (reg, ops) = setup();
        let mut rm = RecoveryManager::new(0, reg.catalog().len(), PolicyConfig::default());
        feed(&mut rm, &ops, "ViewItem", 0);
        assert!(rm.poll(0, &reg, &ops).is_none());
    }

    #[test]
    fn ladder_escalates_and_ends() {
        let (reg, ops) = setup();
        let mut rm = RecoveryManager::new(0, reg.catalog().len(), PolicyConfig::default());
        for _ in 0..3 {
            feed(&mut rm, &ops, "BrowseCategories", 3);
        }
        let a = rm.poll(3, &reg, &ops).unwrap();
        assert_eq!(a.level, RecoveryLevel::MurbGroup);
        assert_eq!(a.members.len(), 1);
        let end = rm.action_completed(414, 0).unwrap();
        feed(&mut rm, &ops, "BrowseCategories", 500);
        let Some(ObservationOutcome::Escalate(b)) = rm.observation_ended(end, &reg) else {
            panic!("expected escalation")
        };
        assert_eq!(b.level, RecoveryLevel::MurbWeb);
        assert!(b.members.contains(&reg.id("WAR").unwrap()));
        let end = rm.action_completed(end + 1_028, 0).unwrap();
        let Some(ObservationOutcome::Done(rec)) = rm.observation_ended(end, &reg) else {
            panic!("expected end")
        };
        assert_eq!(rec.terminal_level, RecoveryLevel::MurbWeb);
        assert_eq!(rm.log.len(), 2);
    }

    #[test]
    fn recurring_target_goes_to_human() {
        let (reg, ops) = setup();
        let mut rm = RecoveryManager::new(0, reg.catalog().len(), PolicyConfig::default());
        let mut t = 0;
        for round in 0..4 {
            for _ in 0..3 {
                feed(&mut rm, &ops, "ViewItem", t);
            }
            let a = rm.poll(t, &reg, &ops).unwrap();
            if round < 3 {
                assert_eq!(a.level, RecoveryLevel::MurbGroup);
                let end = rm.action_completed(t + 446, 0).unwrap();
                rm.observation_ended(end, &reg);
                t = end + 1;
            } else {
                assert_eq!(a.level, RecoveryLevel::EscalateHuman);
                assert!(rm.finish_escalation(t).unwrap().manual_repair);
            }
        }
        assert!(rm.awaiting_operator);
    }

    #[test]
    fn app_check_reports_ignored() {
        let (reg, _) = setup();
        let mut rm = RecoveryManager::new(0, reg.catalog().len(), PolicyConfig::default());
        let r = FailureReport {
            op: OpId(0),
            failure_class: FailureClass::AppCheck,
            observed_at: 0,
            client_id: 0,
            node: 0,
        };
        rm.ingest_report(&r, Some(&[ComponentId(0)]), 0);
        assert_eq!(rm.ingested, 0);
    }

    #[test]
    fn level_order() {
        assert!(RecoveryLevel::MurbGroup < RecoveryLevel::EscalateHuman);
        assert_eq!(RecoveryLevel::RebootNode.next(), Some(RecoveryLevel::EscalateHuman));
        assert_eq!(RecoveryLevel::EscalateHuman.next(), None);
    }
}
