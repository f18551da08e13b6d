//! Action-weighted throughput accounting.

use std::collections::BTreeMap;
use std::io::{self, Write};

use thiserror::Error;

use crate::simcore::Millis;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("{0} actions are still unresolved")]
    Unresolved(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TawRow {
    pub second: u64,
    pub good_requests: u64,
    pub bad_requests: u64,
    pub good_actions: u64,
    pub bad_actions: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TawTotals {
    pub good_requests: u64,
    pub bad_requests: u64,
    pub good_actions: u64,
    pub bad_actions: u64,
    pub abandoned_actions: u64,
}

/// Per-second good/bad tallies. A request is held until its action
/// resolves; a failed action turns all of its requests bad, in the seconds
/// they completed.
#[derive(Debug, Clone, Default)]
pub struct TawLedger {
    rows: Vec<TawRow>,
    pending: BTreeMap<u64, Vec<u64>>,
    abandoned: u64,
}

impl TawLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn row(&mut self, second: u64) -> &mut TawRow {
        let i = second as usize;
        if self.rows.len() <= i {
            let start = self.rows.len() as u64;
            self.rows.extend((start..=second).map(|s| TawRow {
                second: s,
                ..Default::default()
            }));
        }
        &mut self.rows[i]
    }

    /// Makes sure the series covers `[0, t_end)`.
    pub fn extend_to(&mut self, t_end: Millis) {
        if t_end > 0 {
            self.row((t_end - 1) / 1000);
        }
    }

    pub fn record_request(&mut self, action: u64, completed_at: Millis) {
        self.pending.entry(action).or_default().push(completed_at / 1000);
    }

    pub fn resolve(&mut self, action: u64, good: bool, at: Millis) {
        let Some(seconds) = self.pending.remove(&action) else {
            return;
        };
        for s in seconds {
            let r = self.row(s);
            if good {
                r.good_requests += 1;
            } else {
                r.bad_requests += 1;
            }
        }
        let n = self.row(at / 1000);
        if good {
            n.good_actions += 1;
        } else {
            n.bad_actions += 1;
        }
    }

    /// Drops an action that ended without a commit attempt or a failure.
    pub fn abandon(&mut self, action: u64) {
        if self.pending.remove(&action).is_some() {
            self.abandoned += 1;
        }
    }

    pub fn unresolved(&self) -> usize {
        self.pending.len()
    }

    pub fn pending_actions(&self) -> impl Iterator<Item = u64> + '_ {
        self.pending.keys().copied()
    }

    pub fn taw_series(&self) -> Result<&[TawRow], LedgerError> {
        if !self.pending.is_empty() {
            return Err(LedgerError::Unresolved(self.pending.len()));
        }
        Ok(&self.rows)
    }

    pub fn rows(&self) -> &[TawRow] {
        &self.rows
    }

    pub fn totals(&self) -> TawTotals {
        let mut t = self.rows.iter().fold(TawTotals::default(), |mut t, r| {
            t.good_requests += r.good_requests;
            t.bad_requests += r.bad_requests;
            t.good_actions += r.good_actions;
            t.bad_actions += r.bad_actions;
            t
        });
        t.abandoned_actions = self.abandoned;
        t
    }

    /// Bad requests over `[from, to)` in milliseconds, by completion second.
    pub fn bad_between(&self, from: Millis, to: Millis) -> u64 {
        let (a, b) = ((from / 1000) as usize, to.div_ceil(1000) as usize);
        self.rows
            .get(a.min(self.rows.len())..b.min(self.rows.len()))
            .map_or(0, |rs| rs.iter().map(|r| r.bad_requests).sum())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "second,good_requests,bad_requests,good_actions,bad_actions")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.second, r.good_requests, r.bad_requests, r.good_actions, r.bad_actions
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySummary {
    pub count: u64,
    pub mean_ms: f64,
    pub p95_ms: u64,
    pub count_over_threshold: u64,
}

/// Latencies of successful requests.
#[derive(Debug, Clone, Default)]
pub struct LatencyStats {
    samples: Vec<u32>,
}

impl LatencyStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, latency_ms: Millis) {
        self.samples.push(latency_ms.min(u32::MAX as u64) as u32);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn summary(&self, threshold_ms: Millis) -> LatencySummary {
        if self.samples.is_empty() {
            return LatencySummary {
                count: 0,
                mean_ms: 0.0,
                p95_ms: 0,
                count_over_threshold: 0,
            };
        }
        let mut sorted = self.samples.clone();
        sorted.sort_unstable();
        let n = sorted.len();
        let idx = ((n as f64 * 0.95).ceil() as usize).clamp(1, n) - 1;
        LatencySummary {
            count: n as u64,
            mean_ms: sorted.iter().map(|&x| x as f64).sum::<f64>() / n as f64,
            p95_ms: sorted[idx] as u64,
            count_over_threshold: sorted.iter().filter(|&&x| x as Millis > threshold_ms).count() as u64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_commit_turns_whole_action_bad() {
        let mut l = TawLedger::new();
        l.record_request(1, 5_000);
        l.record_request(1, 7_000);
        l.record_request(1, 9_000);
        l.resolve(1, false, 9_000);
        let rows = l.taw_series().unwrap();
        for s in [5, 7, 9] {
            assert_eq!(rows[s].bad_requests, 1);
            assert_eq!(rows[s].good_requests, 0);
        }
        assert_eq!(rows[9].bad_actions, 1);
    }

    #[test]
    fn successful_action_all_good() {
        let mut l = TawLedger::new();
        for t in [100, 200, 300] {
            l.record_request(2, t);
        }
        l.resolve(2, true, 300);
        assert_eq!(l.totals().good_requests, 3);
        assert_eq!(l.totals().good_actions, 1);
    }

    #[test]
    fn unresolved_blocks_series() {
        let mut l = TawLedger::new();
        l.record_request(3, 0);
        assert_eq!(l.taw_series(), Err(LedgerError::Unresolved(1)));
        l.abandon(3);
        assert!(l.taw_series().unwrap().is_empty());
        assert_eq!(l.totals().abandoned_actions, 1);
    }

    #[test]
    fn zero_duration_series_is_empty() {
        let mut l = TawLedger::new();
        l.extend_to(0);
        assert!(l.rows().is_empty());
        l.extend_to(2_500);
        assert_eq!(l.rows().len(), 3);
    }

    #[test]
    fn latency_threshold() {
        let mut s = LatencyStats::new();
        for x in [1, 2, 3, 9_000] {
            s.record(x);
        }
        let sum = s.summary(8_000);
        assert_eq!(sum.count_over_threshold, 1);
        assert_eq!(sum.p95_ms, 9_000);
        let mut z = LatencyStats::new();
        z.record(0);
        assert_eq!(z.summary(8_000).count_over_threshold, 0);
    }
}
