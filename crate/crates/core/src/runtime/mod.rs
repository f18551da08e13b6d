//! Component host model: registry, lifecycle, recovery groups, microreboot
//! and full-restart machinery, and the lease ledger.

mod catalog;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

pub use catalog::{
    CatalogError, ComponentCatalog, ComponentId, ComponentKind, ComponentSpec, GroupOverride,
    RestartCost,
};

use crate::simcore::Millis;

/// Fixed heap charge of the server process itself.
pub const DEFAULT_SERVER_BASE_BYTES: u64 = 64 << 20;
pub const DEFAULT_HEAP_BYTES: u64 = 1 << 30;
pub const DEFAULT_OS_BOOT_MS: Millis = 60_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuntimeError {
    #[error("unknown component `{0}`")]
    UnknownComponent(String),
    #[error("component id {0} is out of range")]
    BadId(u16),
    #[error("lease {0} does not exist")]
    UnknownLease(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Active,
    Microrebooting { until: Millis },
    Stopped,
}

/// Name-service binding as seen by callers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    Bound,
    Sentinel { ready_at: Millis },
    NotBound,
    /// Bound to the wrong object. `valid` means the object type-checks.
    Wrong { target: ComponentId, valid: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Bound(ComponentId),
    Sentinel { retry_after_ms: Millis },
    NotBound,
    WrongBinding { target: ComponentId, valid: bool },
    /// The component is stopped by an application or process restart.
    Stopped,
}

#[derive(Debug, Clone)]
pub struct ComponentState {
    pub status: Status,
    pub binding: Binding,
    /// Binding imposed by an injected fault; survives reboots until the
    /// fault is cleared.
    pub corrupted_binding: Option<Binding>,
    pub instance_pool_epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Holder {
    Component(ComponentId),
    Unattributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeaseRecord {
    pub resource_id: u64,
    pub holder: Holder,
    pub bytes: u64,
    pub expires_at: Option<Millis>,
    pub acquired_via_runtime: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryGroup {
    pub anchor: ComponentId,
    pub members: BTreeSet<ComponentId>,
}

impl RecoveryGroup {
    pub fn contains(&self, id: ComponentId) -> bool {
        self.members.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MicrorebootOutcome {
    Started {
        until: Millis,
        /// Bytes released per member, in member order.
        released: Vec<(ComponentId, u64)>,
    },
    /// A member was already microrebooting; the request joins that reboot.
    Coalesced { until: Millis },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RestartLevel {
    Application,
    Process,
    Node,
}

impl fmt::Display for RestartLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Application => "application",
            Self::Process => "process",
            Self::Node => "node",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RestartOutcome {
    pub level: RestartLevel,
    pub until: Millis,
    pub released_bytes: u64,
}

/// Reverse reachability over `depends_on` edges: the anchor plus every
/// component that transitively holds a reference to it.
pub fn dependents_closure(deps: &[Vec<usize>], anchor: usize) -> BTreeSet<usize> {
    let mut rev = vec![Vec::new(); deps.len()];
    for (from, tos) in deps.iter().enumerate() {
        for &to in tos {
            rev[to].push(from);
        }
    }
    let mut seen = BTreeSet::from([anchor]);
    let mut queue = VecDeque::from([anchor]);
    while let Some(n) = queue.pop_front() {
        for &m in &rev[n] {
            if seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    seen
}

/// Per-node component registry and lease ledger.
#[derive(Debug, Clone)]
pub struct Registry {
    catalog: ComponentCatalog,
    states: Vec<ComponentState>,
    groups: Vec<RecoveryGroup>,
    group_costs: Vec<(Millis, Millis)>,
    leases: BTreeMap<u64, LeaseRecord>,
    expiring: BTreeSet<(Millis, u64)>,
    charged: Vec<u64>,
    unattributed: u64,
    next_lease: u64,
    heap_bytes: u64,
    server_base_bytes: u64,
    footprint_bytes: u64,
}

impl Registry {
    /// Deploys every component of the catalog, all active and bound.
    pub fn deploy(catalog: ComponentCatalog) -> Self {
        Self::deploy_with_heap(catalog, DEFAULT_HEAP_BYTES, DEFAULT_SERVER_BASE_BYTES)
    }

    pub fn deploy_with_heap(catalog: ComponentCatalog, heap_bytes: u64, server_base_bytes: u64) -> Self {
        let deps: Vec<Vec<usize>> = catalog
            .specs()
            .iter()
            .map(|s| s.depends_on.iter().map(|d| catalog.id(d).unwrap().index()).collect())
            .collect();
        let groups: Vec<RecoveryGroup> = catalog
            .ids()
            .map(|id| RecoveryGroup {
                anchor: id,
                members: dependents_closure(&deps, id.index())
                    .into_iter()
                    .map(|i| ComponentId(i as u16))
                    .collect(),
            })
            .collect();
        let override_costs: Vec<(BTreeSet<ComponentId>, Millis, Millis)> = catalog
            .overrides()
            .iter()
            .map(|o| {
                let anchor = catalog.id(&o.anchor).unwrap();
                (groups[anchor.index()].members.clone(), o.crash_ms, o.init_ms)
            })
            .collect();
        let group_costs = groups
            .iter()
            .map(|g| {
                if let Some((_, c, i)) = override_costs.iter().find(|(m, _, _)| *m == g.members) {
                    return (*c, *i);
                }
                let crash = g.members.iter().map(|m| catalog.spec(*m).crash_ms).max().unwrap_or(0);
                let init = g.members.iter().map(|m| catalog.spec(*m).init_ms).max().unwrap_or(0);
                (crash, init)
            })
            .collect();
        let footprint_bytes = catalog.specs().iter().map(|s| s.mem_footprint_bytes).sum();
        let n = catalog.len();
        Self {
            states: vec![
                ComponentState {
                    status: Status::Active,
                    binding: Binding::Bound,
                    corrupted_binding: None,
                    instance_pool_epoch: 0,
                };
                n
            ],
            groups,
            group_costs,
            leases: BTreeMap::new(),
            expiring: BTreeSet::new(),
            charged: vec![0; n],
            unattributed: 0,
            next_lease: 0,
            heap_bytes,
            server_base_bytes,
            footprint_bytes,
            catalog,
        }
    }

    pub fn catalog(&self) -> &ComponentCatalog {
        &self.catalog
    }

    pub fn state(&self, id: ComponentId) -> &ComponentState {
        &self.states[id.index()]
    }

    pub fn id(&self, name: &str) -> Result<ComponentId, RuntimeError> {
        self.catalog
            .id(name)
            .ok_or_else(|| RuntimeError::UnknownComponent(name.to_owned()))
    }

    /// The precomputed recovery group anchored at `anchor`.
    pub fn recovery_group(&self, anchor: ComponentId) -> &RecoveryGroup {
        &self.groups[anchor.index()]
    }

    pub fn compute_recovery_group(&self, anchor: &str) -> Result<RecoveryGroup, RuntimeError> {
        Ok(self.recovery_group(self.id(anchor)?).clone())
    }

    /// Human-readable name of a group: the override label if one applies.
    pub fn group_label(&self, group: &RecoveryGroup) -> String {
        for o in self.catalog.overrides() {
            if let Some(a) = self.catalog.id(&o.anchor) {
                if self.groups[a.index()].members == group.members {
                    return o.label.clone();
                }
            }
        }
        if group.len() == 1 {
            return self.catalog.name(group.anchor).to_owned();
        }
        group
            .members
            .iter()
            .map(|m| self.catalog.name(*m))
            .collect::<Vec<_>>()
            .join("+")
    }

    /// Crash and init cost of microrebooting `members` together.
    pub fn group_cost(&self, members: &BTreeSet<ComponentId>) -> (Millis, Millis) {
        if let Some(g) = self.groups.iter().find(|g| g.members == *members) {
            return self.group_costs[g.anchor.index()];
        }
        let crash = members.iter().map(|m| self.catalog.spec(*m).crash_ms).max().unwrap_or(0);
        let init = members.iter().map(|m| self.catalog.spec(*m).init_ms).max().unwrap_or(0);
        (crash, init)
    }

    pub fn group_duration(&self, members: &BTreeSet<ComponentId>) -> Millis {
        let (c, i) = self.group_cost(members);
        c + i
    }

    pub fn lookup(&self, id: ComponentId, now: Millis) -> Lookup {
        let st = &self.states[id.index()];
        match st.status {
            Status::Stopped => return Lookup::Stopped,
            Status::Microrebooting { until } => {
                return Lookup::Sentinel {
                    retry_after_ms: until.saturating_sub(now),
                }
            }
            Status::Active => {}
        }
        if let Binding::Sentinel { ready_at } = st.binding {
            return Lookup::Sentinel {
                retry_after_ms: ready_at.saturating_sub(now),
            };
        }
        match st.corrupted_binding.unwrap_or(st.binding) {
            Binding::Bound => Lookup::Bound(id),
            Binding::NotBound => Lookup::NotBound,
            Binding::Wrong { target, valid } => Lookup::WrongBinding { target, valid },
            Binding::Sentinel { ready_at } => Lookup::Sentinel {
                retry_after_ms: ready_at.saturating_sub(now),
            },
        }
    }

    pub fn set_corrupted_binding(&mut self, id: ComponentId, binding: Option<Binding>) {
        self.states[id.index()].corrupted_binding = binding;
    }

    pub fn is_microrebooting(&self, id: ComponentId) -> bool {
        matches!(self.states[id.index()].status, Status::Microrebooting { .. })
    }

    /// Binds the sentinel ahead of a delayed microreboot while the old
    /// instances keep serving callers that already hold references.
    pub fn begin_drain(&mut self, members: &BTreeSet<ComponentId>, ready_at: Millis) {
        for m in members {
            let st = &mut self.states[m.index()];
            if st.status == Status::Active {
                st.binding = Binding::Sentinel { ready_at };
            }
        }
    }

    pub fn microreboot(&mut self, members: &BTreeSet<ComponentId>, now: Millis) -> MicrorebootOutcome {
        if let Some(until) = members.iter().find_map(|m| match self.states[m.index()].status {
            Status::Microrebooting { until } => Some(until),
            _ => None,
        }) {
            return MicrorebootOutcome::Coalesced { until };
        }
        let until = now + self.group_duration(members);
        let mut released = Vec::with_capacity(members.len());
        for &m in members {
            let st = &mut self.states[m.index()];
            st.status = Status::Microrebooting { until };
            st.binding = Binding::Sentinel { ready_at: until };
            st.instance_pool_epoch += 1;
            released.push((m, self.release_runtime_leases(Holder::Component(m))));
        }
        MicrorebootOutcome::Started { until, released }
    }

    /// Finishes every microreboot due at or before `now`; returns the
    /// components that became active again.
    pub fn complete_microreboots(&mut self, now: Millis) -> Vec<ComponentId> {
        let mut done = Vec::new();
        for (i, st) in self.states.iter_mut().enumerate() {
            if let Status::Microrebooting { until } = st.status {
                if until <= now {
                    st.status = Status::Active;
                    st.binding = Binding::Bound;
                    done.push(ComponentId(i as u16));
                }
            }
        }
        done
    }

    /// Stops every component. Application restarts release runtime
    /// leases; process and node restarts wipe the ledger entirely.
    pub fn full_restart(&mut self, level: RestartLevel, now: Millis, os_boot_ms: Millis) -> RestartOutcome {
        let cost = match level {
            RestartLevel::Application => self.catalog.application_restart.total(),
            RestartLevel::Process => self.catalog.process_restart.total(),
            RestartLevel::Node => self.catalog.process_restart.total() + os_boot_ms,
        };
        let before = self.charged_bytes();
        for st in &mut self.states {
            st.status = Status::Stopped;
            st.binding = Binding::NotBound;
            st.instance_pool_epoch += 1;
        }
        if level == RestartLevel::Application {
            for i in 0..self.states.len() {
                self.release_runtime_leases(Holder::Component(ComponentId(i as u16)));
            }
        } else {
            self.leases.clear();
            self.expiring.clear();
            self.charged.iter_mut().for_each(|c| *c = 0);
            self.unattributed = 0;
        }
        RestartOutcome {
            level,
            until: now + cost,
            released_bytes: before - self.charged_bytes(),
        }
    }

    pub fn complete_restart(&mut self) {
        for st in &mut self.states {
            st.status = Status::Active;
            st.binding = Binding::Bound;
        }
    }

    pub fn acquire_lease(
        &mut self,
        holder: Holder,
        bytes: u64,
        expires_at: Option<Millis>,
        acquired_via_runtime: bool,
    ) -> u64 {
        let id = self.next_lease;
        self.next_lease += 1;
        self.leases.insert(
            id,
            LeaseRecord {
                resource_id: id,
                holder,
                bytes,
                expires_at,
                acquired_via_runtime,
            },
        );
        if let Some(t) = expires_at {
            self.expiring.insert((t, id));
        }
        self.charge(holder, bytes as i64);
        id
    }

    pub fn release_lease(&mut self, id: u64) -> Result<LeaseRecord, RuntimeError> {
        let rec = self.leases.remove(&id).ok_or(RuntimeError::UnknownLease(id))?;
        if let Some(t) = rec.expires_at {
            self.expiring.remove(&(t, id));
        }
        self.charge(rec.holder, -(rec.bytes as i64));
        Ok(rec)
    }

    /// Releases every lease with `expires_at <= now`.
    pub fn reap_leases(&mut self, now: Millis) -> Vec<LeaseRecord> {
        let due: Vec<u64> = self
            .expiring
            .range(..=(now, u64::MAX))
            .map(|&(_, id)| id)
            .collect();
        due.into_iter().filter_map(|id| self.release_lease(id).ok()).collect()
    }

    fn charge(&mut self, holder: Holder, delta: i64) {
        let slot = match holder {
            Holder::Component(c) => &mut self.charged[c.index()],
            Holder::Unattributed => &mut self.unattributed,
        };
        *slot = (*slot as i64 + delta) as u64;
    }

    fn release_runtime_leases(&mut self, holder: Holder) -> u64 {
        let ids: Vec<u64> = self
            .leases
            .values()
            .filter(|l| l.holder == holder && l.acquired_via_runtime)
            .map(|l| l.resource_id)
            .collect();
        ids.into_iter()
            .filter_map(|id| self.release_lease(id).ok())
            .map(|l| l.bytes)
            .sum()
    }

    pub fn leases(&self) -> impl Iterator<Item = &LeaseRecord> {
        self.leases.values()
    }

    pub fn charged_to(&self, holder: Holder) -> u64 {
        match holder {
            Holder::Component(c) => self.charged[c.index()],
            Holder::Unattributed => self.unattributed,
        }
    }

    pub fn charged_bytes(&self) -> u64 {
        self.charged.iter().sum::<u64>() + self.unattributed
    }

    pub fn heap_bytes(&self) -> u64 {
        self.heap_bytes
    }

    pub fn free_heap(&self) -> u64 {
        self.heap_bytes
            .saturating_sub(self.server_base_bytes + self.footprint_bytes + self.charged_bytes())
    }
}
