//! Load balancing with session affinity, failover, Retry-After masking
//! and availability budgets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simcore::{Millis, RngStream};
use crate::statestore::StoreKind;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("every node is drained")]
    AllDrained,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("availability must be in (0, 1), got {0}")]
    BadAvailability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingConfig {
    pub retry: bool,
    pub retry_after_ms: Millis,
    /// Delay between binding the sentinel and starting the microreboot.
    pub drain_ms: Option<Millis>,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            retry: false,
            retry_after_ms: 2_000,
            drain_ms: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub nodes: usize,
    pub workers_per_node: usize,
    pub cores_per_node: usize,
    pub heap_bytes: u64,
    pub store: StoreKind,
    pub external_latency_ms: Millis,
    pub os_boot_ms: Millis,
    pub ttl_ms: Millis,
    pub masking: MaskingConfig,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            nodes: 1,
            workers_per_node: 200,
            cores_per_node: 2,
            heap_bytes: crate::runtime::DEFAULT_HEAP_BYTES,
            store: StoreKind::InProcess,
            external_latency_ms: crate::statestore::EXTERNAL_LATENCY_MS,
            os_boot_ms: crate::runtime::DEFAULT_OS_BOOT_MS,
            ttl_ms: 30_000,
            masking: MaskingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Home(usize),
    /// The home node is drained; served elsewhere.
    Redirected { to: usize, home: usize },
}

impl Route {
    pub fn node(self) -> usize {
        match self {
            Route::Home(n) | Route::Redirected { to: n, .. } => n,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbState {
    nodes: usize,
    affinity: BTreeMap<u64, usize>,
    failover: BTreeSet<usize>,
    login_cursor: usize,
}

impl LbState {
    pub fn new(nodes: usize) -> Self {
        Self {
            nodes,
            affinity: BTreeMap::new(),
            failover: BTreeSet::new(),
            login_cursor: 0,
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn is_drained(&self, node: usize) -> bool {
        self.failover.contains(&node)
    }

    /// Round-robin over nodes that are not failed over.
    pub fn route_login(&mut self) -> Result<usize, ClusterError> {
        for _ in 0..self.nodes {
            let n = self.login_cursor % self.nodes;
            self.login_cursor = (self.login_cursor + 1) % self.nodes;
            if !self.failover.contains(&n) {
                return Ok(n);
            }
        }
        Err(ClusterError::AllDrained)
    }

    pub fn bind(&mut self, session: u64, node: usize) {
        self.affinity.insert(session, node);
    }

    pub fn unbind(&mut self, session: u64) {
        self.affinity.remove(&session);
    }

    pub fn home(&self, session: u64) -> Option<usize> {
        self.affinity.get(&session).copied()
    }

    /// Honors affinity unless the home node is drained, in which case a
    /// uniformly random healthy node serves the request.
    pub fn route(&mut self, session: u64, rng: &mut RngStream) -> Result<Route, ClusterError> {
        let Some(home) = self.home(session) else {
            return self.route_login().map(Route::Home);
        };
        if !self.failover.contains(&home) {
            return Ok(Route::Home(home));
        }
        let healthy: Vec<usize> = (0..self.nodes).filter(|n| !self.failover.contains(n)).collect();
        if healthy.is_empty() {
            return Err(ClusterError::AllDrained);
        }
        let to = healthy[rng.below(healthy.len() as u64) as usize];
        Ok(Route::Redirected { to, home })
    }

    pub fn set_failover(&mut self, node: usize, active: bool) -> Result<(), ClusterError> {
        if node >= self.nodes {
            return Err(ClusterError::UnknownNode(node));
        }
        if active {
            self.failover.insert(node);
        } else {
            self.failover.remove(&node);
        }
        Ok(())
    }

    pub fn sessions_on(&self, node: usize) -> usize {
        self.affinity.values().filter(|n| **n == node).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SentinelAction {
    RetryScheduled(Millis),
    Fail,
}

/// What the client edge does with a Retry-After reply. Only idempotent
/// requests retry, and only once.
pub fn handle_sentinel(idempotent: bool, already_retried: bool, config: &MaskingConfig, now: Millis) -> SentinelAction {
    if config.retry && idempotent && !already_retried {
        SentinelAction::RetryScheduled(now + config.retry_after_ms)
    } else {
        SentinelAction::Fail
    }
}

/// Incidents per year that keep the failed-request fraction within
/// `1 - nines`.
pub fn six_nines_budget(requests_per_year: f64, failed_per_incident: f64, nines: f64) -> Result<u64, ClusterError> {
    if requests_per_year.is_nan() || requests_per_year <= 0.0 {
        return Err(ClusterError::NonPositive("requests per year"));
    }
    if failed_per_incident.is_nan() || failed_per_incident <= 0.0 {
        return Err(ClusterError::NonPositive("failed requests per incident"));
    }
    if !(nines > 0.0 && nines < 1.0) {
        return Err(ClusterError::BadAvailability(nines));
    }
    // Round the allowance to whole requests first so 1 - 0.999999 does not
    // leave float dust below an exact multiple.
    let allowed = (requests_per_year * (1.0 - nines) * 1e6).round() / 1e6;
    Ok((allowed / failed_per_incident).floor() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logins_spread_evenly() {
        let mut lb = LbState::new(2);
        let picks: Vec<usize> = (0..4).map(|_| lb.route_login().unwrap()).collect();
        assert_eq!(picks.iter().filter(|n| **n == 0).count(), 2);
    }

    #[test]
    fn drained_home_redirects_then_returns() {
        let mut lb = LbState::new(3);
        lb.bind(9, 1);
        let mut rng = RngStream::new(1, "lb");
        lb.set_failover(1, true).unwrap();
        for _ in 0..20 {
            match lb.route(9, &mut rng).unwrap() {
                Route::Redirected { to, home } => {
                    assert_ne!(to, 1);
                    assert_eq!(home, 1);
                }
                r => panic!("{r:?}"),
            }
        }
        lb.set_failover(1, false).unwrap();
        assert_eq!(lb.route(9, &mut rng).unwrap(), Route::Home(1));
        assert_eq!(lb.set_failover(7, true), Err(ClusterError::UnknownNode(7)));
    }

    #[test]
    fn sentinel_retries_idempotent_once() {
        let cfg = MaskingConfig {
            retry: true,
            ..Default::default()
        };
        assert_eq!(handle_sentinel(true, false, &cfg, 10), SentinelAction::RetryScheduled(2_010));
        assert_eq!(handle_sentinel(true, true, &cfg, 10), SentinelAction::Fail);
        assert_eq!(handle_sentinel(false, false, &cfg, 10), SentinelAction::Fail);
    }

    #[test]
    fn budgets() {
        let r = 53.3e9;
        assert_eq!(six_nines_budget(r, 2_280.0, 0.999999), Ok(23));
        assert_eq!(six_nines_budget(r, 162.0, 0.999999), Ok(329));
        assert_eq!(six_nines_budget(r, 78.0, 0.999999), Ok(683));
        assert!(six_nines_budget(r, 0.0, 0.999999).is_err());
    }
}
