//! Memory-driven rolling microreboots.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::runtime::{ComponentId, ComponentKind, Registry};
use crate::simcore::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejuvenationMode {
    Micro,
    Restart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RejuvenationConfig {
    pub enabled: bool,
    pub mode: RejuvenationMode,
    /// Fractions of the heap capacity.
    pub alarm_fraction: f64,
    pub sufficient_fraction: f64,
    pub poll_ms: Millis,
}

impl Default for RejuvenationConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            mode: RejuvenationMode::Micro,
            alarm_fraction: 0.35,
            sufficient_fraction: 0.80,
            poll_ms: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejuvenationStep {
    Idle,
    Microreboot { anchor: ComponentId, members: BTreeSet<ComponentId> },
    RestartProcess,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassRecord {
    pub started_at: Millis,
    pub ended_at: Millis,
    pub rebooted: Vec<ComponentId>,
    pub restarted: bool,
    /// Free heap when the pass ended (before any fallback restart).
    pub free_after: u64,
    pub order_after: Vec<ComponentId>,
}

#[derive(Debug, Clone)]
struct ActivePass {
    started_at: Millis,
    cursor: usize,
    rebooted: BTreeSet<ComponentId>,
    order: Vec<ComponentId>,
}

#[derive(Debug, Clone)]
pub struct RejuvenationState {
    pub mode: RejuvenationMode,
    pub m_alarm_bytes: u64,
    pub m_sufficient_bytes: u64,
    candidates: Vec<ComponentId>,
    pub released_by_component: BTreeMap<ComponentId, u64>,
    pass: Option<ActivePass>,
    pub passes: Vec<PassRecord>,
}

impl RejuvenationState {
    /// Candidates start in catalog order with the web component last: its
    /// reboot stops every operation, so it is tried only when all
    /// application components have been.
    pub fn new(config: &RejuvenationConfig, registry: &Registry) -> Self {
        let catalog = registry.catalog();
        let heap = registry.heap_bytes() as f64;
        let mut candidates: Vec<ComponentId> = catalog
            .ids()
            .filter(|c| catalog.spec(*c).kind != ComponentKind::Web)
            .collect();
        candidates.extend(catalog.ids().filter(|c| catalog.spec(*c).kind == ComponentKind::Web));
        Self {
            mode: config.mode,
            m_alarm_bytes: (heap * config.alarm_fraction) as u64,
            m_sufficient_bytes: (heap * config.sufficient_fraction) as u64,
            candidates,
            released_by_component: BTreeMap::new(),
            pass: None,
            passes: Vec::new(),
        }
    }

    pub fn candidates(&self) -> &[ComponentId] {
        &self.candidates
    }

    pub fn in_pass(&self) -> bool {
        self.pass.is_some()
    }

    /// Periodic memory check. Starts a pass when free heap is below the
    /// alarm level.
    pub fn tick(&mut self, now: Millis, free: u64, registry: &Registry) -> RejuvenationStep {
        if self.pass.is_some() || free >= self.m_alarm_bytes {
            return RejuvenationStep::Idle;
        }
        self.pass = Some(ActivePass {
            started_at: now,
            cursor: 0,
            rebooted: BTreeSet::new(),
            order: Vec::new(),
        });
        if self.mode == RejuvenationMode::Restart {
            return self.finish(now, free, true);
        }
        self.advance(now, free, registry)
    }

    pub fn record_release(&mut self, released: &[(ComponentId, u64)]) {
        for &(c, b) in released {
            self.released_by_component.insert(c, b);
        }
    }

    /// Called after each rejuvenation microreboot completes.
    pub fn advance(&mut self, now: Millis, free: u64, registry: &Registry) -> RejuvenationStep {
        let Some(pass) = self.pass.as_mut() else {
            return RejuvenationStep::Idle;
        };
        if free >= self.m_sufficient_bytes && !pass.order.is_empty() {
            return self.finish(now, free, false);
        }
        while pass.cursor < self.candidates.len() {
            let c = self.candidates[pass.cursor];
            pass.cursor += 1;
            let members = &registry.recovery_group(c).members;
            if members.iter().any(|m| pass.rebooted.contains(m)) {
                continue;
            }
            pass.rebooted.extend(members.iter().copied());
            pass.order.push(c);
            return RejuvenationStep::Microreboot {
                anchor: c,
                members: members.clone(),
            };
        }
        if free >= self.m_sufficient_bytes {
            return self.finish(now, free, false);
        }
        self.finish(now, free, true)
    }

    fn finish(&mut self, now: Millis, free: u64, restart: bool) -> RejuvenationStep {
        let pass = self.pass.take().expect("pass running");
        let released = &self.released_by_component;
        self.candidates
            .sort_by_key(|c| std::cmp::Reverse(released.get(c).copied().unwrap_or(0)));
        self.passes.push(PassRecord {
            started_at: pass.started_at,
            ended_at: now,
            rebooted: pass.order,
            restarted: restart,
            free_after: free,
            order_after: self.candidates.clone(),
        });
        if restart {
            RejuvenationStep::RestartProcess
        } else {
            RejuvenationStep::Idle
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{ComponentCatalog, Holder, MicrorebootOutcome};

    #[test]
    fn no_action_above_alarm() {
        let reg = Registry::deploy(ComponentCatalog::demo());
        let mut s = RejuvenationState::new(&RejuvenationConfig::default(), &reg);
        assert_eq!(s.tick(0, reg.free_heap(), &reg), RejuvenationStep::Idle);
    }

    #[test]
    fn candidates_cover_every_component_once() {
        let reg = Registry::deploy(ComponentCatalog::demo());
        let s = RejuvenationState::new(&RejuvenationConfig::default(), &reg);
        let set: BTreeSet<_> = s.candidates().iter().collect();
        assert_eq!(set.len(), reg.catalog().len());
        assert_eq!(s.candidates().len(), reg.catalog().len());
    }

    #[test]
    fn first_pass_reaches_the_leaker_then_promotes_it() {
        let mut reg = Registry::deploy(ComponentCatalog::demo());
        let vi = reg.id("ViewItem").unwrap();
        let mut s = RejuvenationState::new(&RejuvenationConfig::default(), &reg);
        reg.acquire_lease(Holder::Component(vi), 700 << 20, None, true);
        let mut step = s.tick(0, reg.free_heap(), &reg);
        let mut t = 0;
        let mut n = 0;
        while let RejuvenationStep::Microreboot { members, .. } = step {
            n += 1;
            if let MicrorebootOutcome::Started { until, released } = reg.microreboot(&members, t) {
                s.record_release(&released);
                t = until;
            }
            reg.complete_microreboots(t);
            step = s.advance(t, reg.free_heap(), &reg);
        }
        assert_eq!(step, RejuvenationStep::Idle);
        assert!(n > 10);
        assert_eq!(s.candidates()[0], vi);
        assert!(s.passes[0].free_after >= s.m_sufficient_bytes);
    }

    #[test]
    fn restart_mode_restarts_on_alarm() {
        let mut reg = Registry::deploy(ComponentCatalog::demo());
        let cfg = RejuvenationConfig {
            mode: RejuvenationMode::Restart,
            ..Default::default()
        };
        let mut s = RejuvenationState::new(&cfg, &reg);
        reg.acquire_lease(Holder::Unattributed, 700 << 20, None, false);
        assert_eq!(s.tick(0, reg.free_heap(), &reg), RejuvenationStep::RestartProcess);
    }
}
