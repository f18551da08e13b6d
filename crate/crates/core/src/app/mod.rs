//! Operation catalog of the demo auction application.

pub mod markov;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use markov::{MarkovError, TransitionMatrix};

use crate::runtime::{ComponentCatalog, ComponentId, ComponentKind};
use crate::simcore::{fnv1a, mix64, Millis};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OpCatalogError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("operation `{op}` references unknown component `{component}`")]
    UnknownComponent { op: String, component: String },
    #[error("operation `{0}` path must start at the web component")]
    PathNotAtWeb(String),
    #[error("duplicate operation `{0}`")]
    Duplicate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Readonly,
    Session,
    Static,
    Search,
    SessionUpdate,
    DbUpdate,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Readonly,
        Category::Session,
        Category::Static,
        Category::Search,
        Category::SessionUpdate,
        Category::DbUpdate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Readonly => "readonly",
            Self::Session => "session",
            Self::Static => "static",
            Self::Search => "search",
            Self::SessionUpdate => "session_update",
            Self::DbUpdate => "db_update",
        }
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// End-user view of which features are up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FunctionalGroup {
    BidBuySell,
    BrowseView,
    Search,
    UserAccount,
}

impl FunctionalGroup {
    pub const ALL: [FunctionalGroup; 4] = [
        FunctionalGroup::BidBuySell,
        FunctionalGroup::BrowseView,
        FunctionalGroup::Search,
        FunctionalGroup::UserAccount,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::BidBuySell => "bid_buy_sell",
            Self::BrowseView => "browse_view",
            Self::Search => "search",
            Self::UserAccount => "user_account",
        }
    }
}

impl FromStr for FunctionalGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| format!("unknown functional group `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SessionTouch {
    None,
    Create,
    Read,
    Update,
    Delete,
}

impl FromStr for SessionTouch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "none" => Self::None,
            "create" => Self::Create,
            "read" => Self::Read,
            "update" => Self::Update,
            "delete" => Self::Delete,
            other => return Err(format!("unknown session touch `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OpId(pub u8);

impl OpId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpType {
    pub name: String,
    pub category: Category,
    pub group: FunctionalGroup,
    pub path: Vec<ComponentId>,
    pub is_commit_point: bool,
    pub idempotent: bool,
    pub session_touch: SessionTouch,
    pub tx_writes: bool,
    pub service_ms_mean: Millis,
}

impl OpType {
    /// CPU time spent at path step `i`. The remainder of an uneven split
    /// lands on the first step.
    pub fn step_service_ms(&self, i: usize) -> Millis {
        let n = self.path.len() as Millis;
        let base = self.service_ms_mean / n;
        if i == 0 {
            base + self.service_ms_mean % n
        } else {
            base
        }
    }

    /// Whether the op only succeeds inside an established session.
    pub fn needs_session(&self) -> bool {
        matches!(
            self.session_touch,
            SessionTouch::Read | SessionTouch::Update | SessionTouch::Delete
        )
    }

    /// Ends the current user action when it succeeds.
    pub fn ends_action(&self) -> bool {
        self.is_commit_point || self.session_touch == SessionTouch::Delete
    }
}

#[derive(Debug, Clone)]
pub struct OpCatalog {
    ops: Vec<OpType>,
}

impl OpCatalog {
    pub fn parse(text: &str, components: &ComponentCatalog) -> Result<Self, OpCatalogError> {
        let web = components.web_component();
        let mut ops: Vec<OpType> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let syntax = |msg: String| OpCatalogError::Syntax { line, msg };
            let toks: Vec<&str> = body.split_whitespace().collect();
            if toks[0] != "op" || toks.len() < 2 {
                return Err(syntax(format!("expected `op <Name> ...`, found `{body}`")));
            }
            let name = toks[1].to_owned();
            if ops.iter().any(|o| o.name == name) {
                return Err(OpCatalogError::Duplicate(name));
            }
            let mut category = None;
            let mut group = None;
            let mut path = Vec::new();
            let mut service = None;
            let mut session = SessionTouch::None;
            let (mut commit, mut idempotent, mut tx) = (false, true, false);
            for tok in &toks[2..] {
                match tok.split_once('=') {
                    Some(("category", v)) => category = Some(v.parse().map_err(syntax)?),
                    Some(("group", v)) => group = Some(v.parse().map_err(syntax)?),
                    Some(("session", v)) => session = v.parse().map_err(syntax)?,
                    Some(("service", v)) => {
                        service = Some(v.parse::<Millis>().map_err(|_| syntax(format!("bad service time `{v}`")))?)
                    }
                    Some(("path", v)) => {
                        for c in v.split(',') {
                            path.push(components.id(c).ok_or_else(|| OpCatalogError::UnknownComponent {
                                op: name.clone(),
                                component: c.to_owned(),
                            })?);
                        }
                    }
                    Some((k, _)) => return Err(syntax(format!("unknown key `{k}`"))),
                    None => match *tok {
                        "commit" => commit = true,
                        "nonidempotent" => idempotent = false,
                        "tx" => tx = true,
                        other => return Err(syntax(format!("unknown flag `{other}`"))),
                    },
                }
            }
            let (Some(category), Some(group), Some(service)) = (category, group, service) else {
                return Err(syntax(format!("op `{name}` needs category=, group= and service=")));
            };
            if path.is_empty() || Some(path[0]) != web {
                return Err(OpCatalogError::PathNotAtWeb(name));
            }
            ops.push(OpType {
                name,
                category,
                group,
                path,
                is_commit_point: commit,
                idempotent,
                session_touch: session,
                tx_writes: tx,
                service_ms_mean: service,
            });
        }
        Ok(Self { ops })
    }

    /// The shipped 25-operation catalog.
    pub fn demo(components: &ComponentCatalog) -> Self {
        Self::parse(include_str!("../../data/ops.txt"), components).expect("shipped op catalog is valid")
    }

    pub fn ops(&self) -> &[OpType] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn get(&self, id: OpId) -> &OpType {
        &self.ops[id.index()]
    }

    pub fn id(&self, name: &str) -> Option<OpId> {
        self.ops.iter().position(|o| o.name == name).map(|i| OpId(i as u8))
    }

    pub fn ids(&self) -> impl Iterator<Item = OpId> {
        (0..self.ops.len()).map(|i| OpId(i as u8))
    }

    pub fn login(&self) -> OpId {
        self.ids()
            .find(|i| self.get(*i).session_touch == SessionTouch::Create)
            .expect("catalog has a session-creating op")
    }

    /// Number of operation paths that traverse `c`.
    pub fn paths_containing(&self, c: ComponentId) -> usize {
        self.ops.iter().filter(|o| o.path.contains(&c)).count()
    }

    /// Components of `kind` that no operation path reaches.
    pub fn uncovered(&self, components: &ComponentCatalog, kind: Option<ComponentKind>) -> Vec<ComponentId> {
        components
            .ids()
            .filter(|c| kind.is_none_or(|k| components.spec(*c).kind == k))
            .filter(|c| self.paths_containing(*c) == 0)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ErrorClass {
    Connection,
    ComponentUnavailable,
    Exception,
    TtlExpired,
    SessionLost,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Connection => "connection",
            Self::ComponentUnavailable => "component_unavailable",
            Self::Exception => "exception",
            Self::TtlExpired => "ttl_expired",
            Self::SessionLost => "session_lost",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Error(ErrorClass),
    RetryAfter(Millis),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Response {
    pub op: OpId,
    pub outcome: Outcome,
    pub body_fingerprint: u64,
    pub latency_ms: Millis,
}

/// Digest a fault-free server would return for this request.
pub fn expected_fingerprint(op: OpId, arg: u64, user: u64) -> u64 {
    mix64(fnv1a(&[op.0]) ^ arg.rotate_left(17) ^ user.rotate_left(41))
}

/// Per-category stationary percentages of the workload chain.
pub fn workload_mix_check(
    matrix: &TransitionMatrix,
    ops: &OpCatalog,
) -> Result<Vec<(Category, f64)>, MarkovError> {
    let pi = matrix.stationary()?;
    Ok(Category::ALL
        .into_iter()
        .map(|c| {
            let share: f64 = ops
                .ids()
                .filter(|i| ops.get(*i).category == c)
                .map(|i| pi[i.index()])
                .sum();
            (c, 100.0 * share)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> (ComponentCatalog, OpCatalog) {
        let c = ComponentCatalog::demo();
        let o = OpCatalog::demo(&c);
        (c, o)
    }

    #[test]
    fn catalog_has_25_ops_covering_every_component() {
        let (c, o) = demo();
        assert_eq!(o.len(), 25);
        assert!(o.uncovered(&c, None).is_empty());
    }

    #[test]
    fn commit_bid_shape() {
        let (c, o) = demo();
        let op = o.get(o.id("CommitBid").unwrap());
        assert!(op.is_commit_point && !op.idempotent);
        let eg: Vec<_> = ["Category", "Region", "User", "Item", "Bid"]
            .iter()
            .map(|n| c.id(n).unwrap())
            .collect();
        assert!(eg.iter().all(|m| op.path.contains(m)));
    }

    #[test]
    fn home_is_static() {
        let (c, o) = demo();
        let op = o.get(o.id("Home").unwrap());
        assert_eq!(op.path, vec![c.id("WAR").unwrap()]);
        assert_eq!(op.session_touch, SessionTouch::None);
        assert_eq!(op.category, Category::Static);
    }

    #[test]
    fn step_service_sums_to_mean() {
        let (_, o) = demo();
        for op in o.ops() {
            let sum: Millis = (0..op.path.len()).map(|i| op.step_service_ms(i)).sum();
            assert_eq!(sum, op.service_ms_mean, "{}", op.name);
        }
    }

    #[test]
    fn unknown_component_rejected() {
        let c = ComponentCatalog::demo();
        let err = OpCatalog::parse("op X category=static group=search path=WAR,Nope service=1", &c).unwrap_err();
        assert!(matches!(err, OpCatalogError::UnknownComponent { .. }));
        let err = OpCatalog::parse("op X category=static group=search path=Item service=1", &c).unwrap_err();
        assert_eq!(err, OpCatalogError::PathNotAtWeb("X".into()));
    }

    #[test]
    fn shipped_mix_within_two_points() {
        let (_, o) = demo();
        let m = TransitionMatrix::demo(&o);
        let target = [32.0, 23.0, 12.0, 12.0, 11.0, 10.0];
        for ((cat, got), want) in workload_mix_check(&m, &o).unwrap().into_iter().zip(target) {
            assert!((got - want).abs() <= 2.0, "{cat}: {got}");
        }
    }
}
