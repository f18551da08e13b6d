//! Closed-loop emulated users and the throughput ledger.

mod ledger;

use serde::{Deserialize, Serialize};

pub use ledger::{LatencyStats, LatencySummary, LedgerError, TawLedger, TawRow, TawTotals};

use crate::app::markov::TransitionMatrix;
use crate::app::{OpCatalog, OpId};
use crate::simcore::{Millis, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThinkConfig {
    pub mean_ms: f64,
    pub max_ms: Millis,
}

impl Default for ThinkConfig {
    fn default() -> Self {
        Self {
            mean_ms: 7_000.0,
            max_ms: 70_000,
        }
    }
}

impl ThinkConfig {
    pub fn sample(&self, rng: &mut RngStream) -> Millis {
        (rng.exponential(self.mean_ms).round() as Millis).min(self.max_ms)
    }
}

/// One emulated user.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: u32,
    pub chain_state: OpId,
    pub session: Option<u64>,
    /// Sessions opened so far; the next session key derives from it.
    pub sessions_opened: u32,
    pub home_node: Option<usize>,
    pub current_action: u64,
    pub action_requests: u32,
    pub needs_login: bool,
    /// Seed for request arguments of the current action.
    pub arg_seq: u64,
    pub transition_rng: RngStream,
    pub think_rng: RngStream,
}

impl ClientState {
    /// Streams are keyed by client id, so adding clients never perturbs
    /// the draws of existing ones.
    pub fn new(client_id: u32, login: OpId, root: &RngStream) -> Self {
        let base = root.fork(&format!("client{client_id}"));
        Self {
            client_id,
            chain_state: login,
            session: None,
            sessions_opened: 0,
            home_node: None,
            current_action: 0,
            action_requests: 0,
            needs_login: true,
            arg_seq: 0,
            transition_rng: base.fork("transition"),
            think_rng: base.fork("think"),
        }
    }

    pub fn next_session_key(&mut self) -> u64 {
        self.sessions_opened += 1;
        (u64::from(self.client_id) << 32) | u64::from(self.sessions_opened)
    }
}

/// Picks the client's next operation and when to issue it. A client that
/// lost its session, or has none yet, logs in next.
pub fn next_operation(
    client: &mut ClientState,
    now: Millis,
    matrix: &TransitionMatrix,
    ops: &OpCatalog,
    think: &ThinkConfig,
) -> (OpId, Millis) {
    let op = if client.needs_login || client.session.is_none() {
        ops.login()
    } else {
        let mut next = matrix.sample(client.chain_state, &mut client.transition_rng);
        // A fresh Login inside a live session is only a page view of the
        // session; keep the chain moving.
        if next == ops.login() {
            next = matrix.sample(next, &mut client.transition_rng);
        }
        next
    };
    client.chain_state = op;
    (op, now + think.sample(&mut client.think_rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::ComponentCatalog;

    #[test]
    fn think_time_mean_and_cap() {
        let cfg = ThinkConfig::default();
        let mut rng = RngStream::new(3, "think");
        let n = 100_000;
        let xs: Vec<Millis> = (0..n).map(|_| cfg.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<Millis>() as f64 / n as f64;
        assert!((mean - 7_000.0).abs() < 350.0, "{mean}");
        assert!(xs.iter().all(|x| *x <= 70_000));
    }

    #[test]
    fn fresh_client_logs_in_first() {
        let cat = ComponentCatalog::demo();
        let ops = OpCatalog::demo(&cat);
        let m = TransitionMatrix::demo(&ops);
        let mut c = ClientState::new(7, ops.login(), &RngStream::master(1));
        let (op, at) = next_operation(&mut c, 100, &m, &ops, &ThinkConfig::default());
        assert_eq!(op, ops.login());
        assert!(at >= 100);
    }

    #[test]
    fn streams_independent_of_other_clients() {
        let root = RngStream::master(9);
        let a = ClientState::new(5, OpId(0), &root);
        let _other = ClientState::new(6, OpId(0), &root);
        let mut a2 = ClientState::new(5, OpId(0), &root);
        let mut a = a;
        assert_eq!(a.think_rng.next_u64(), a2.think_rng.next_u64());
    }
}
