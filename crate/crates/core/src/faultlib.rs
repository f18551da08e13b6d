//! Fault taxonomy, per-invocation symptom hooks, and table-driven cures.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::OpType;
use crate::recoverymgr::{RecoveryAction, RecoveryLevel};
use crate::runtime::{Binding, ComponentCatalog, ComponentId, ComponentKind};
use crate::simcore::{Millis, RngStream};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FaultError {
    #[error("fault target `{0}` is not a deployed component")]
    UnknownTarget(String),
    #[error("fault class `{0}` needs a component target")]
    MissingTarget(FaultClass),
    #[error("fault class `{0}` {1}")]
    BadMode(FaultClass, &'static str),
    #[error("fault class `{class}` cannot target {kind} component `{target}`")]
    WrongKind {
        class: FaultClass,
        kind: ComponentKind,
        target: String,
    },
    #[error("fault {0} is not armed")]
    UnknownHandle(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultClass {
    Deadlock,
    InfiniteLoop,
    AppMemoryLeak,
    TransientException,
    CorruptPrimaryKey,
    CorruptRegistryEntry,
    CorruptTxMap,
    CorruptStatelessAttr,
    CorruptInprocSession,
    CorruptExternalSession,
    CorruptDbRow,
    LeakOutsideAppIntraProcess,
    LeakOutsideProcess,
    ProcessMemoryBitflip,
    BadEnv,
}

impl FaultClass {
    pub const ALL: [FaultClass; 15] = [
        FaultClass::Deadlock,
        FaultClass::InfiniteLoop,
        FaultClass::AppMemoryLeak,
        FaultClass::TransientException,
        FaultClass::CorruptPrimaryKey,
        FaultClass::CorruptRegistryEntry,
        FaultClass::CorruptTxMap,
        FaultClass::CorruptStatelessAttr,
        FaultClass::CorruptInprocSession,
        FaultClass::CorruptExternalSession,
        FaultClass::CorruptDbRow,
        FaultClass::LeakOutsideAppIntraProcess,
        FaultClass::LeakOutsideProcess,
        FaultClass::ProcessMemoryBitflip,
        FaultClass::BadEnv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Deadlock => "deadlock",
            Self::InfiniteLoop => "infinite_loop",
            Self::AppMemoryLeak => "app_memory_leak",
            Self::TransientException => "transient_exception",
            Self::CorruptPrimaryKey => "corrupt_primary_key",
            Self::CorruptRegistryEntry => "corrupt_registry_entry",
            Self::CorruptTxMap => "corrupt_tx_map",
            Self::CorruptStatelessAttr => "corrupt_stateless_attr",
            Self::CorruptInprocSession => "corrupt_inproc_session",
            Self::CorruptExternalSession => "corrupt_external_session",
            Self::CorruptDbRow => "corrupt_db_row",
            Self::LeakOutsideAppIntraProcess => "leak_outside_app_intra_process",
            Self::LeakOutsideProcess => "leak_outside_process",
            Self::ProcessMemoryBitflip => "process_memory_bitflip",
            Self::BadEnv => "bad_env",
        }
    }

    pub fn is_corruption(self) -> bool {
        matches!(
            self,
            Self::CorruptPrimaryKey
                | Self::CorruptRegistryEntry
                | Self::CorruptTxMap
                | Self::CorruptStatelessAttr
                | Self::CorruptInprocSession
        )
    }

    /// Classes whose symptoms are process-wide rather than tied to one
    /// component.
    pub fn is_process_wide(self) -> bool {
        matches!(
            self,
            Self::LeakOutsideAppIntraProcess | Self::LeakOutsideProcess | Self::ProcessMemoryBitflip | Self::BadEnv
        )
    }

    fn needs_component(self) -> bool {
        !matches!(self, Self::CorruptExternalSession) && !self.is_process_wide()
    }
}

impl fmt::Display for FaultClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    Null,
    Invalid,
    Wrong,
}

impl CorruptionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Null => "null",
            Self::Invalid => "invalid",
            Self::Wrong => "wrong",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CureLevel {
    SelfClearing,
    Ejb,
    /// The target's group together with the web component.
    EjbAndWar,
    War,
    Application,
    Process,
    Node,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    Overt,
    WrongValue,
    SilentUntilExhaustion,
    /// Absorbed by the store (checksum discard) without reaching detectors
    /// as a component failure.
    Masked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CureProfile {
    pub min_cure_level: CureLevel,
    pub requires_manual_data_repair: bool,
    pub symptom_visibility: Visibility,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultParams {
    /// Heap charge per invocation for leak classes.
    pub bytes_per_invoke: u64,
    /// Per-invocation failure probability for exception-style classes.
    pub probability: f64,
}

impl Default for FaultParams {
    fn default() -> Self {
        Self {
            bytes_per_invoke: 256 * 1024,
            probability: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub fault_id: u32,
    pub class: FaultClass,
    pub target: Option<String>,
    pub mode: Option<CorruptionMode>,
    pub params: FaultParams,
    pub inject_at: Millis,
    pub node: usize,
}

impl FaultSpec {
    pub fn new(class: FaultClass, target: Option<&str>, mode: Option<CorruptionMode>, inject_at: Millis) -> Self {
        Self {
            fault_id: 0,
            class,
            target: target.map(str::to_owned),
            mode,
            params: FaultParams::default(),
            inject_at,
            node: 0,
        }
    }

    pub fn with_params(mut self, params: FaultParams) -> Self {
        self.params = params;
        self
    }

    pub fn on_node(mut self, node: usize) -> Self {
        self.node = node;
        self
    }

    /// Checks class/mode consistency and resolves the target.
    pub fn validate(&self, catalog: &ComponentCatalog) -> Result<Option<ComponentId>, FaultError> {
        match (self.class.is_corruption(), self.mode) {
            (true, None) => return Err(FaultError::BadMode(self.class, "needs a corruption mode")),
            (false, Some(_)) => return Err(FaultError::BadMode(self.class, "takes no corruption mode")),
            _ => {}
        }
        if !self.class.needs_component() {
            return Ok(None);
        }
        let name = self.target.as_deref().ok_or(FaultError::MissingTarget(self.class))?;
        let id = catalog.id(name).ok_or_else(|| FaultError::UnknownTarget(name.to_owned()))?;
        let kind = catalog.spec(id).kind;
        let ok = match self.class {
            FaultClass::CorruptPrimaryKey | FaultClass::CorruptDbRow => kind == ComponentKind::Entity,
            FaultClass::CorruptStatelessAttr => kind == ComponentKind::StatelessSession,
            FaultClass::CorruptInprocSession => kind == ComponentKind::Web,
            _ => true,
        };
        if !ok {
            return Err(FaultError::WrongKind {
                class: self.class,
                kind,
                target: name.to_owned(),
            });
        }
        Ok(Some(id))
    }

    /// Worst-case cure behaviour of each fault class and mode.
    pub fn cure_profile(&self) -> CureProfile {
        use CorruptionMode::*;
        use CureLevel as L;
        use FaultClass::*;
        let (level, manual, vis) = match (self.class, self.mode) {
            (Deadlock | InfiniteLoop | TransientException, _) => (L::Ejb, false, Visibility::Overt),
            (AppMemoryLeak, _) => (L::Ejb, false, Visibility::SilentUntilExhaustion),
            (CorruptPrimaryKey | CorruptTxMap, Some(Wrong)) => (L::Ejb, true, Visibility::WrongValue),
            (CorruptPrimaryKey | CorruptTxMap, _) => (L::Ejb, false, Visibility::Overt),
            (CorruptRegistryEntry, Some(Wrong)) => (L::Ejb, false, Visibility::WrongValue),
            (CorruptRegistryEntry, _) => (L::Ejb, false, Visibility::Overt),
            (CorruptStatelessAttr, Some(Wrong)) => (L::EjbAndWar, true, Visibility::WrongValue),
            (CorruptStatelessAttr, _) => (L::SelfClearing, false, Visibility::Overt),
            (CorruptInprocSession, Some(Wrong)) => (L::War, true, Visibility::WrongValue),
            (CorruptInprocSession, _) => (L::War, false, Visibility::Overt),
            (CorruptExternalSession, _) => (L::SelfClearing, false, Visibility::Masked),
            (CorruptDbRow, _) => (L::Manual, true, Visibility::WrongValue),
            (LeakOutsideAppIntraProcess, _) => (L::Process, false, Visibility::SilentUntilExhaustion),
            (LeakOutsideProcess, _) => (L::Node, false, Visibility::Overt),
            (ProcessMemoryBitflip, _) => (L::Process, true, Visibility::Overt),
            (BadEnv, _) => (L::Process, false, Visibility::Overt),
        };
        CureProfile {
            min_cure_level: level,
            requires_manual_data_repair: manual,
            symptom_visibility: vis,
        }
    }

    pub fn label(&self) -> String {
        let mut s = self.class.as_str().to_owned();
        if let Some(t) = &self.target {
            s.push('(');
            s.push_str(t);
            if let Some(m) = self.mode {
                s.push(',');
                s.push_str(m.as_str());
            }
            s.push(')');
        }
        s
    }
}

/// Whether `action` clears a fault with this profile on `target`.
pub fn is_cured(spec: &FaultSpec, target: Option<ComponentId>, web: Option<ComponentId>, action: &RecoveryAction) -> bool {
    let covers = |c: Option<ComponentId>| c.is_none_or(|c| action.members.contains(&c));
    let full = action.level >= RecoveryLevel::RestartApplication;
    match spec.cure_profile().min_cure_level {
        CureLevel::SelfClearing => true,
        CureLevel::Ejb => action.level != RecoveryLevel::EscalateHuman && (full || covers(target)),
        CureLevel::EjbAndWar | CureLevel::War => {
            action.level != RecoveryLevel::EscalateHuman && (full || (covers(target) && covers(web)))
        }
        CureLevel::Application => matches!(
            action.level,
            RecoveryLevel::RestartApplication | RecoveryLevel::RestartProcess | RecoveryLevel::RebootNode
        ),
        CureLevel::Process => matches!(action.level, RecoveryLevel::RestartProcess | RecoveryLevel::RebootNode),
        CureLevel::Node => action.level == RecoveryLevel::RebootNode,
        CureLevel::Manual => false,
    }
}

/// What an armed fault does to one invocation of a component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepEffects {
    /// The invocation never returns; the request is lost until its TTL.
    pub hang: bool,
    /// The hung invocation also keeps its worker after the TTL fires.
    pub capture_worker: bool,
    pub exception: bool,
    /// The response is computed from wrong data.
    pub perturb: bool,
    /// Transactional writes of this request land as wrong values.
    pub taint: bool,
    pub leak_bytes: u64,
}

impl StepEffects {
    fn merge(&mut self, o: StepEffects) {
        self.hang |= o.hang;
        self.capture_worker |= o.capture_worker;
        self.exception |= o.exception;
        self.perturb |= o.perturb;
        self.taint |= o.taint;
        self.leak_bytes += o.leak_bytes;
    }
}

#[derive(Debug, Clone)]
pub struct ArmedFault {
    pub handle: u32,
    pub spec: FaultSpec,
    pub target: Option<ComponentId>,
    pub injected_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClearedFault {
    pub handle: u32,
    pub label: String,
    pub node: usize,
    pub requires_manual_data_repair: bool,
    /// Component whose corrupted binding must be restored.
    pub restore_binding: Option<ComponentId>,
}

/// The armed faults of a world.
#[derive(Debug, Clone, Default)]
pub struct FaultSet {
    armed: BTreeMap<u32, ArmedFault>,
    next_handle: u32,
    /// Handles of armed faults keyed by the node and component they target.
    by_component: BTreeMap<(usize, ComponentId), Vec<u32>>,
}

impl FaultSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.armed.is_empty()
    }

    pub fn len(&self) -> usize {
        self.armed.len()
    }

    pub fn armed(&self) -> impl Iterator<Item = &ArmedFault> {
        self.armed.values()
    }

    pub fn get(&self, handle: u32) -> Option<&ArmedFault> {
        self.armed.get(&handle)
    }

    /// Arms `spec`. Returns the handle and, for registry corruption, the
    /// binding to impose on the target.
    pub fn inject(
        &mut self,
        spec: FaultSpec,
        catalog: &ComponentCatalog,
        now: Millis,
    ) -> Result<(u32, Option<(ComponentId, Binding)>), FaultError> {
        let target = spec.validate(catalog)?;
        let handle = self.next_handle;
        self.next_handle += 1;
        let binding = match (spec.class, spec.mode, target) {
            (FaultClass::CorruptRegistryEntry, Some(mode), Some(t)) => {
                let b = match mode {
                    CorruptionMode::Null => Binding::NotBound,
                    CorruptionMode::Invalid => Binding::Wrong { target: t, valid: false },
                    CorruptionMode::Wrong => {
                        let other = catalog
                            .ids()
                            .find(|c| *c != t && catalog.spec(*c).kind == catalog.spec(t).kind)
                            .unwrap_or(t);
                        Binding::Wrong { target: other, valid: true }
                    }
                };
                Some((t, b))
            }
            _ => None,
        };
        if let Some(t) = target {
            self.by_component.entry((spec.node, t)).or_default().push(handle);
        }
        self.armed.insert(
            handle,
            ArmedFault {
                handle,
                spec,
                target,
                injected_at: now,
            },
        );
        Ok((handle, binding))
    }

    pub fn clear(&mut self, handle: u32) -> Result<ClearedFault, FaultError> {
        let f = self.armed.remove(&handle).ok_or(FaultError::UnknownHandle(handle))?;
        if let Some(t) = f.target {
            if let Some(v) = self.by_component.get_mut(&(f.spec.node, t)) {
                v.retain(|h| *h != handle);
                if v.is_empty() {
                    self.by_component.remove(&(f.spec.node, t));
                }
            }
        }
        Ok(ClearedFault {
            handle,
            label: f.spec.label(),
            node: f.spec.node,
            requires_manual_data_repair: f.spec.cure_profile().requires_manual_data_repair,
            restore_binding: (f.spec.class == FaultClass::CorruptRegistryEntry)
                .then_some(f.target)
                .flatten(),
        })
    }

    pub fn touches(&self, node: usize, component: ComponentId) -> bool {
        self.by_component.contains_key(&(node, component))
    }

    /// Symptoms of one invocation of `component` on `node`. Self-clearing
    /// faults that fire are returned in `cleared`.
    pub fn step_effects(
        &mut self,
        node: usize,
        component: ComponentId,
        op: &OpType,
        rng: &mut RngStream,
        cleared: &mut Vec<ClearedFault>,
    ) -> StepEffects {
        let mut out = StepEffects::default();
        let Some(handles) = self.by_component.get(&(node, component)) else {
            return out;
        };
        let mut self_clear = Vec::new();
        for h in handles.clone() {
            let f = &self.armed[&h];
            let mode = f.spec.mode;
            let e = match f.spec.class {
                FaultClass::Deadlock => StepEffects {
                    hang: true,
                    ..Default::default()
                },
                FaultClass::InfiniteLoop => StepEffects {
                    hang: true,
                    capture_worker: true,
                    ..Default::default()
                },
                FaultClass::AppMemoryLeak => StepEffects {
                    leak_bytes: f.spec.params.bytes_per_invoke,
                    ..Default::default()
                },
                FaultClass::TransientException => StepEffects {
                    exception: rng.chance(f.spec.params.probability),
                    ..Default::default()
                },
                FaultClass::CorruptPrimaryKey | FaultClass::CorruptTxMap => match mode {
                    Some(CorruptionMode::Wrong) => StepEffects {
                        perturb: true,
                        taint: op.tx_writes,
                        ..Default::default()
                    },
                    _ => StepEffects {
                        exception: true,
                        ..Default::default()
                    },
                },
                FaultClass::CorruptStatelessAttr => match mode {
                    Some(CorruptionMode::Wrong) => StepEffects {
                        perturb: true,
                        taint: op.tx_writes,
                        ..Default::default()
                    },
                    _ => {
                        self_clear.push(h);
                        StepEffects {
                            exception: true,
                            ..Default::default()
                        }
                    }
                },
                FaultClass::CorruptInprocSession if op.needs_session() => match mode {
                    Some(CorruptionMode::Wrong) => StepEffects {
                        perturb: true,
                        taint: op.tx_writes,
                        ..Default::default()
                    },
                    _ => StepEffects {
                        exception: true,
                        ..Default::default()
                    },
                },
                FaultClass::CorruptDbRow => StepEffects {
                    perturb: true,
                    ..Default::default()
                },
                // Registry corruption acts through the binding; the rest are
                // process-wide or store-level.
                _ => StepEffects::default(),
            };
            out.merge(e);
        }
        for h in self_clear {
            if let Ok(c) = self.clear(h) {
                cleared.push(c);
            }
        }
        out
    }

    /// Process-wide symptoms at request admission on `node`: failure
    /// probability and unattributed heap charge.
    pub fn admission_effects(&self, node: usize) -> (f64, u64) {
        let mut p_ok = 1.0;
        let mut leak = 0;
        for f in self.armed.values().filter(|f| f.spec.node == node) {
            match f.spec.class {
                FaultClass::LeakOutsideAppIntraProcess => leak += f.spec.params.bytes_per_invoke,
                FaultClass::LeakOutsideProcess | FaultClass::ProcessMemoryBitflip | FaultClass::BadEnv => {
                    p_ok *= 1.0 - f.spec.params.probability
                }
                _ => {}
            }
        }
        (1.0 - p_ok, leak)
    }

    pub fn has_process_wide(&self, node: usize) -> bool {
        self.armed.values().any(|f| f.spec.node == node && f.spec.class.is_process_wide())
    }

    /// Clears every fault on `action.node` that the action cures.
    pub fn apply_action(&mut self, action: &RecoveryAction, web: Option<ComponentId>) -> Vec<ClearedFault> {
        let cured: Vec<u32> = self
            .armed
            .values()
            .filter(|f| f.spec.node == action.node)
            .filter(|f| f.spec.cure_profile().min_cure_level != CureLevel::SelfClearing)
            .filter(|f| is_cured(&f.spec, f.target, web, action))
            .map(|f| f.handle)
            .collect();
        cured.into_iter().filter_map(|h| self.clear(h).ok()).collect()
    }

    /// Faults on `node` with worker capture that are still armed.
    pub fn captures_workers(&self, node: usize, component: ComponentId) -> bool {
        self.by_component.get(&(node, component)).is_some_and(|hs| {
            hs.iter()
                .any(|h| self.armed[h].spec.class == FaultClass::InfiniteLoop)
        })
    }
}
