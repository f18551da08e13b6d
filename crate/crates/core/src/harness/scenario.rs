//! Scenario files (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::markov::{MarkovError, TransitionMatrix};
use crate::app::{OpCatalog, OpCatalogError};
use crate::cluster::ClusterConfig;
use crate::detect::DetectorProfile;
use crate::faultlib::{CorruptionMode, FaultClass, FaultError, FaultParams, FaultSpec};
use crate::recoverymgr::{PolicyConfig, RejuvenationConfig};
use crate::runtime::{CatalogError, ComponentCatalog};
use crate::simcore::Millis;
use crate::workload::ThinkConfig;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario syntax: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("component catalog: {0}")]
    Catalog(#[from] CatalogError),
    #[error("operation catalog: {0}")]
    Ops(#[from] OpCatalogError),
    #[error("transition matrix: {0}")]
    Matrix(#[from] MarkovError),
    #[error("fault {index}: {source}")]
    Fault {
        index: usize,
        #[source]
        source: FaultError,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEntry {
    pub at_ms: Millis,
    pub class: FaultClass,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub mode: Option<CorruptionMode>,
    #[serde(default)]
    pub node: usize,
    #[serde(default)]
    pub bytes_per_invoke: Option<u64>,
    #[serde(default)]
    pub probability: Option<f64>,
}

impl FaultEntry {
    pub fn new(at_ms: Millis, class: FaultClass, target: Option<&str>, mode: Option<CorruptionMode>) -> Self {
        Self {
            at_ms,
            class,
            target: target.map(str::to_owned),
            mode,
            node: 0,
            bytes_per_invoke: None,
            probability: None,
        }
    }

    pub fn to_spec(&self, fault_id: u32) -> FaultSpec {
        let d = FaultParams::default();
        let mut s = FaultSpec::new(self.class, self.target.as_deref(), self.mode, self.at_ms)
            .with_params(FaultParams {
                bytes_per_invoke: self.bytes_per_invoke.unwrap_or(d.bytes_per_invoke),
                probability: self.probability.unwrap_or(d.probability),
            })
            .on_node(self.node);
        s.fault_id = fault_id;
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduledKind {
    Microreboot,
    RestartApplication,
    RestartProcess,
    RebootNode,
}

/// Operator-initiated recovery at a fixed time, outside the recovery
/// manager.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledAction {
    pub at_ms: Millis,
    pub kind: ScheduledKind,
    #[serde(default)]
    pub component: Option<String>,
    #[serde(default)]
    pub node: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostOverride {
    pub component: String,
    pub crash_ms: Millis,
    pub init_ms: Millis,
}

/// Optional replacement data files, relative to the scenario file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataFiles {
    pub components: Option<String>,
    pub ops: Option<String>,
    pub matrix: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub duration_ms: Millis,
    pub seed: u64,
    pub clients_per_node: u32,
    pub cluster: ClusterConfig,
    pub think: ThinkConfig,
    pub detector: DetectorProfile,
    pub policy: PolicyConfig,
    pub rejuvenation: RejuvenationConfig,
    pub faults: Vec<FaultEntry>,
    pub scheduled: Vec<ScheduledAction>,
    pub cost_overrides: Vec<CostOverride>,
    pub data: DataFiles,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            duration_ms: 600_000,
            seed: 1,
            clients_per_node: 500,
            cluster: ClusterConfig::default(),
            think: ThinkConfig::default(),
            detector: DetectorProfile::default(),
            policy: PolicyConfig::default(),
            rejuvenation: RejuvenationConfig::default(),
            faults: Vec::new(),
            scheduled: Vec::new(),
            cost_overrides: Vec::new(),
            data: DataFiles::default(),
        }
    }
}

/// Catalogs a world runs against.
#[derive(Debug, Clone)]
pub struct Catalogs {
    pub components: ComponentCatalog,
    pub ops: OpCatalog,
    pub matrix: TransitionMatrix,
}

impl Catalogs {
    pub fn demo() -> Self {
        let components = ComponentCatalog::demo();
        let ops = OpCatalog::demo(&components);
        let matrix = TransitionMatrix::demo(&ops);
        Self { components, ops, matrix }
    }
}

fn read(base: &Path, rel: &str) -> Result<String, ScenarioError> {
    let p = base.join(rel);
    std::fs::read_to_string(&p).map_err(|source| ScenarioError::Io {
        path: p.display().to_string(),
        source,
    })
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut s = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            let base = base.to_string_lossy().into_owned();
            for f in [&mut s.data.components, &mut s.data.ops, &mut s.data.matrix].into_iter().flatten() {
                if Path::new(f.as_str()).is_relative() {
                    *f = Path::new(&base).join(&*f).to_string_lossy().into_owned();
                }
            }
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Loads the catalogs and checks every reference in the scenario.
    pub fn resolve(&self) -> Result<Catalogs, ScenarioError> {
        let here = Path::new(".");
        let mut components = match &self.data.components {
            Some(f) => read(here, f)?.parse::<ComponentCatalog>()?,
            None => ComponentCatalog::demo(),
        };
        for o in &self.cost_overrides {
            components = components.with_cost(&o.component, o.crash_ms, o.init_ms)?;
        }
        let ops = match &self.data.ops {
            Some(f) => OpCatalog::parse(&read(here, f)?, &components)?,
            None => OpCatalog::demo(&components),
        };
        let matrix = match &self.data.matrix {
            Some(f) => TransitionMatrix::parse(&read(here, f)?, &ops)?,
            None => TransitionMatrix::demo(&ops),
        };
        self.validate(&components)?;
        Ok(Catalogs { components, ops, matrix })
    }

    fn validate(&self, components: &ComponentCatalog) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.cluster.nodes == 0 {
            return bad("cluster.nodes must be at least 1".into());
        }
        if self.cluster.workers_per_node == 0 || self.cluster.cores_per_node == 0 {
            return bad("workers and cores per node must be positive".into());
        }
        for (index, f) in self.faults.iter().enumerate() {
            f.to_spec(index as u32)
                .validate(components)
                .map_err(|source| ScenarioError::Fault { index, source })?;
            if f.node >= self.cluster.nodes {
                return bad(format!("fault {index} targets node {} of {}", f.node, self.cluster.nodes));
            }
            if f.at_ms > self.duration_ms {
                return bad(format!("fault {index} at {} ms is past the end of the run", f.at_ms));
            }
        }
        for (i, a) in self.scheduled.iter().enumerate() {
            if a.node >= self.cluster.nodes {
                return bad(format!("scheduled action {i} targets node {}", a.node));
            }
            if a.at_ms > self.duration_ms {
                return bad(format!("scheduled action {i} is past the end of the run"));
            }
            match (&a.kind, &a.component) {
                (ScheduledKind::Microreboot, None) => {
                    return bad(format!("scheduled microreboot {i} needs a component"))
                }
                (ScheduledKind::Microreboot, Some(c)) if components.id(c).is_none() => {
                    return bad(format!("scheduled action {i}: unknown component `{c}`"))
                }
                _ => {}
            }
        }
        for p in [self.detector.fp_rate, self.detector.fn_rate, self.detector.drop_probability] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("detector probability {p} is outside [0, 1]"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let s = Scenario::parse("duration_ms = 1000\nseed = 4\n").unwrap();
        assert_eq!(s.clients_per_node, 500);
        assert_eq!(s.cluster.workers_per_node, 200);
        s.resolve().unwrap();
    }

    #[test]
    fn faults_and_schedule_parse() {
        let s = Scenario::parse(
            r#"
duration_ms = 60000
[[faults]]
at_ms = 1000
class = "corrupt_registry_entry"
target = "BrowseCategories"
mode = "null"
[[scheduled]]
at_ms = 2000
kind = "microreboot"
component = "ViewItem"
"#,
        )
        .unwrap();
        assert_eq!(s.faults[0].mode, Some(CorruptionMode::Null));
        s.resolve().unwrap();
    }

    #[test]
    fn bad_references_rejected() {
        let mut s = Scenario::default();
        s.faults.push(FaultEntry::new(0, FaultClass::Deadlock, Some("Ghost"), None));
        assert!(matches!(s.resolve(), Err(ScenarioError::Fault { index: 0, .. })));
        let mut s = Scenario::default();
        s.faults.push(FaultEntry::new(10_000_000, FaultClass::Deadlock, Some("Item"), None));
        assert!(s.resolve().is_err());
        assert!(Scenario::parse("bogus = 1").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut s = Scenario::default();
        s.faults.push(FaultEntry::new(5, FaultClass::TransientException, Some("Item"), None));
        assert_eq!(Scenario::parse(&s.to_toml()).unwrap(), s);
    }
}
