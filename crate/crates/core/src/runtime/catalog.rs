//! Line-oriented component catalog files.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::simcore::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentId(pub u16);

impl ComponentId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ComponentKind {
    Entity,
    StatelessSession,
    Web,
}

impl FromStr for ComponentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "entity" => Ok(Self::Entity),
            "stateless" => Ok(Self::StatelessSession),
            "web" => Ok(Self::Web),
            other => Err(format!("unknown component kind `{other}`")),
        }
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Entity => "entity",
            Self::StatelessSession => "stateless",
            Self::Web => "web",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSpec {
    pub name: String,
    pub kind: ComponentKind,
    pub depends_on: Vec<String>,
    pub crash_ms: Millis,
    pub init_ms: Millis,
    pub mem_footprint_bytes: u64,
}

impl ComponentSpec {
    pub fn new(name: &str, kind: ComponentKind, crash_ms: Millis, init_ms: Millis) -> Self {
        Self {
            name: name.to_owned(),
            kind,
            depends_on: Vec::new(),
            crash_ms,
            init_ms,
            mem_footprint_bytes: 1 << 20,
        }
    }

    pub fn with_deps(mut self, deps: &[&str]) -> Self {
        self.depends_on = deps.iter().map(|d| (*d).to_owned()).collect();
        self
    }

    pub fn recovery_ms(&self) -> Millis {
        self.crash_ms + self.init_ms
    }
}

/// Explicit cost for the recovery group anchored at `anchor`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupOverride {
    pub label: String,
    pub anchor: String,
    pub crash_ms: Millis,
    pub init_ms: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RestartCost {
    pub crash_ms: Millis,
    pub init_ms: Millis,
}

impl RestartCost {
    pub fn total(&self) -> Millis {
        self.crash_ms + self.init_ms
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CatalogError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("duplicate component `{0}`")]
    Duplicate(String),
    #[error("component `{from}` depends on undeployed component `{missing}`")]
    DanglingReference { from: String, missing: String },
    #[error("group override `{label}` names unknown anchor `{anchor}`")]
    UnknownAnchor { label: String, anchor: String },
    #[error("component `{0}` has init_ms = 0")]
    ZeroInit(String),
    #[error("no component or group named `{0}`")]
    Unknown(String),
}

/// A validated set of component specs plus group and restart costs.
#[derive(Debug, Clone)]
pub struct ComponentCatalog {
    specs: Vec<ComponentSpec>,
    by_name: BTreeMap<String, ComponentId>,
    overrides: Vec<GroupOverride>,
    pub application_restart: RestartCost,
    pub process_restart: RestartCost,
}

impl ComponentCatalog {
    pub fn new(specs: Vec<ComponentSpec>, overrides: Vec<GroupOverride>) -> Result<Self, CatalogError> {
        let mut by_name = BTreeMap::new();
        for (i, s) in specs.iter().enumerate() {
            if s.init_ms == 0 {
                return Err(CatalogError::ZeroInit(s.name.clone()));
            }
            if by_name.insert(s.name.clone(), ComponentId(i as u16)).is_some() {
                return Err(CatalogError::Duplicate(s.name.clone()));
            }
        }
        for s in &specs {
            for d in &s.depends_on {
                if !by_name.contains_key(d) {
                    return Err(CatalogError::DanglingReference {
                        from: s.name.clone(),
                        missing: d.clone(),
                    });
                }
            }
        }
        for o in &overrides {
            if !by_name.contains_key(&o.anchor) {
                return Err(CatalogError::UnknownAnchor {
                    label: o.label.clone(),
                    anchor: o.anchor.clone(),
                });
            }
        }
        Ok(Self {
            specs,
            by_name,
            overrides,
            application_restart: RestartCost { crash_ms: 33, init_ms: 7_666 },
            process_restart: RestartCost { crash_ms: 0, init_ms: 19_083 },
        })
    }

    /// The shipped demo application catalog.
    pub fn demo() -> Self {
        include_str!("../../data/components.txt")
            .parse()
            .expect("shipped component catalog is valid")
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ComponentId> + '_ {
        (0..self.specs.len()).map(|i| ComponentId(i as u16))
    }

    pub fn spec(&self, id: ComponentId) -> &ComponentSpec {
        &self.specs[id.index()]
    }

    pub fn specs(&self) -> &[ComponentSpec] {
        &self.specs
    }

    pub fn id(&self, name: &str) -> Option<ComponentId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ComponentId) -> &str {
        &self.specs[id.index()].name
    }

    pub fn overrides(&self) -> &[GroupOverride] {
        &self.overrides
    }

    /// Replaces the recovery cost of a component or of a labelled group.
    pub fn with_cost(mut self, name: &str, crash_ms: Millis, init_ms: Millis) -> Result<Self, CatalogError> {
        if init_ms == 0 {
            return Err(CatalogError::ZeroInit(name.to_owned()));
        }
        if let Some(o) = self.overrides.iter_mut().find(|o| o.label == name) {
            o.crash_ms = crash_ms;
            o.init_ms = init_ms;
            return Ok(self);
        }
        let id = self.id(name).ok_or_else(|| CatalogError::Unknown(name.to_owned()))?;
        let spec = &mut self.specs[id.index()];
        spec.crash_ms = crash_ms;
        spec.init_ms = init_ms;
        Ok(self)
    }

    /// The web (presentation) component, if one is deployed.
    pub fn web_component(&self) -> Option<ComponentId> {
        self.ids().find(|id| self.spec(*id).kind == ComponentKind::Web)
    }
}

fn parse_kv(tok: &str, line: usize) -> Result<(&str, &str), CatalogError> {
    tok.split_once('=').ok_or_else(|| CatalogError::Syntax {
        line,
        msg: format!("expected key=value, found `{tok}`"),
    })
}

fn parse_num(v: &str, key: &str, line: usize) -> Result<u64, CatalogError> {
    v.parse().map_err(|_| CatalogError::Syntax {
        line,
        msg: format!("`{key}` must be a non-negative integer, found `{v}`"),
    })
}

impl FromStr for ComponentCatalog {
    type Err = CatalogError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut specs = Vec::new();
        let mut overrides = Vec::new();
        let mut app = None;
        let mut process = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let toks: Vec<&str> = body.split_whitespace().collect();
            let syntax = |msg: String| CatalogError::Syntax { line, msg };
            match toks[0] {
                "component" => {
                    if toks.len() < 3 {
                        return Err(syntax("component needs a name and a kind".into()));
                    }
                    let kind = toks[2].parse::<ComponentKind>().map_err(syntax)?;
                    let mut spec = ComponentSpec::new(toks[1], kind, 0, 0);
                    let mut have = (false, false);
                    for tok in &toks[3..] {
                        let (k, v) = parse_kv(tok, line)?;
                        match k {
                            "crash" => {
                                spec.crash_ms = parse_num(v, k, line)?;
                                have.0 = true;
                            }
                            "init" => {
                                spec.init_ms = parse_num(v, k, line)?;
                                have.1 = true;
                            }
                            "mem" => spec.mem_footprint_bytes = parse_num(v, k, line)?,
                            "deps" => {
                                spec.depends_on = v
                                    .split(',')
                                    .filter(|d| !d.is_empty())
                                    .map(str::to_owned)
                                    .collect()
                            }
                            other => return Err(syntax(format!("unknown component key `{other}`"))),
                        }
                    }
                    if !(have.0 && have.1) {
                        return Err(syntax(format!("component `{}` needs crash= and init=", spec.name)));
                    }
                    specs.push(spec);
                }
                "group" => {
                    if toks.len() != 5 {
                        return Err(syntax("group needs a label, anchor=, crash= and init=".into()));
                    }
                    let mut o = GroupOverride {
                        label: toks[1].to_owned(),
                        anchor: String::new(),
                        crash_ms: 0,
                        init_ms: 0,
                    };
                    for tok in &toks[2..] {
                        let (k, v) = parse_kv(tok, line)?;
                        match k {
                            "anchor" => o.anchor = v.to_owned(),
                            "crash" => o.crash_ms = parse_num(v, k, line)?,
                            "init" => o.init_ms = parse_num(v, k, line)?,
                            other => return Err(syntax(format!("unknown group key `{other}`"))),
                        }
                    }
                    overrides.push(o);
                }
                "restart" => {
                    if toks.len() != 4 {
                        return Err(syntax("restart needs a level, crash= and init=".into()));
                    }
                    let mut cost = RestartCost { crash_ms: 0, init_ms: 0 };
                    for tok in &toks[2..] {
                        let (k, v) = parse_kv(tok, line)?;
                        match k {
                            "crash" => cost.crash_ms = parse_num(v, k, line)?,
                            "init" => cost.init_ms = parse_num(v, k, line)?,
                            other => return Err(syntax(format!("unknown restart key `{other}`"))),
                        }
                    }
                    match toks[1] {
                        "application" => app = Some(cost),
                        "process" => process = Some(cost),
                        other => return Err(syntax(format!("unknown restart level `{other}`"))),
                    }
                }
                other => return Err(syntax(format!("unknown record `{other}`"))),
            }
        }
        let mut catalog = ComponentCatalog::new(specs, overrides)?;
        if let Some(c) = app {
            catalog.application_restart = c;
        }
        if let Some(c) = process {
            catalog.process_restart = c;
        }
        Ok(catalog)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_catalog_parses() {
        let c = ComponentCatalog::demo();
        assert_eq!(c.len(), 27);
        assert_eq!(c.spec(c.id("BrowseCategories").unwrap()).recovery_ms(), 411);
        assert_eq!(c.spec(c.id("WAR").unwrap()).recovery_ms(), 1_028);
        assert_eq!(c.process_restart.total(), 19_083);
        assert_eq!(c.application_restart.total(), 7_699);
        assert_eq!(c.web_component(), c.id("WAR"));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = "component A web crash=1 init=2\n\ncomponent B stateless crash=x init=2"
            .parse::<ComponentCatalog>()
            .unwrap_err();
        assert!(matches!(err, CatalogError::Syntax { line: 3, .. }), "{err}");
    }

    #[test]
    fn dangling_reference_is_named() {
        let err = "component A stateless crash=1 init=2 deps=Ghost"
            .parse::<ComponentCatalog>()
            .unwrap_err();
        assert_eq!(
            err,
            CatalogError::DanglingReference {
                from: "A".into(),
                missing: "Ghost".into()
            }
        );
    }

    #[test]
    fn duplicates_rejected() {
        let err = "component A web crash=1 init=2\ncomponent A web crash=1 init=2"
            .parse::<ComponentCatalog>()
            .unwrap_err();
        assert_eq!(err, CatalogError::Duplicate("A".into()));
    }
}
