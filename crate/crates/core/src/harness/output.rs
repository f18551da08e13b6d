//! Run artifacts: per-second T_aw, request latencies, the episode log, the
//! failure timeline and a TOML summary.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::app::FunctionalGroup;
use crate::simcore::Millis;
use crate::workload::TawTotals;
use crate::world::{FailureInterval, RunResult};

/// Latency above which a request counts as too slow for a human user.
pub const SLOW_MS: Millis = 8_000;

#[derive(Debug, Clone, Serialize)]
pub struct TawSummary {
    pub good_requests: u64,
    pub bad_requests: u64,
    pub good_actions: u64,
    pub bad_actions: u64,
    pub abandoned_actions: u64,
}

impl From<TawTotals> for TawSummary {
    fn from(t: TawTotals) -> Self {
        Self {
            good_requests: t.good_requests,
            bad_requests: t.bad_requests,
            good_actions: t.good_actions,
            bad_actions: t.bad_actions,
            abandoned_actions: t.abandoned_actions,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencyOut {
    pub count: u64,
    pub mean_ms: f64,
    pub p95_ms: Millis,
    pub over_8s: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IncidentOut {
    pub at_ms: Millis,
    pub node: usize,
    pub label: String,
    /// Bad requests (including retroactive ones) until the next incident.
    pub bad_requests: u64,
    pub failed_requests: u64,
    pub sessions_on_node: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryOut {
    pub start_ms: Millis,
    pub node: usize,
    pub purpose: &'static str,
    pub kind: String,
    pub target: String,
    pub duration_ms: Millis,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeOut {
    pub node: usize,
    pub started_at_ms: Millis,
    pub ended_at_ms: Millis,
    pub target: String,
    pub terminal_level: &'static str,
    pub manual_repair: bool,
    pub actions: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PassOut {
    pub node: usize,
    pub started_at_ms: Millis,
    pub ended_at_ms: Millis,
    pub rebooted: Vec<String>,
    pub restarted: bool,
    pub free_after_bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub duration_ms: Millis,
    pub nodes: usize,
    pub clients: usize,
    pub throughput_rps: f64,
    pub failed_requests: u64,
    pub session_lost: u64,
    pub retries: u64,
    pub divergent_responses: u64,
    pub tainted_rows: usize,
    pub events: u64,
    pub manual_repairs: Vec<String>,
    pub failed_by_class: BTreeMap<String, u64>,
    pub taw: TawSummary,
    pub latency: LatencyOut,
    pub incidents: Vec<IncidentOut>,
    pub recoveries: Vec<RecoveryOut>,
    pub episodes: Vec<EpisodeOut>,
    pub passes: Vec<PassOut>,
}

/// Failed requests per incident, each incident owning the interval up to
/// the next one (the last runs to the end of the drain).
pub fn incident_costs(r: &RunResult) -> Vec<IncidentOut> {
    let horizon = r.requests.iter().map(|q| q.issued_ms + q.latency_ms + 1).max().unwrap_or(r.duration_ms);
    r.incidents
        .iter()
        .enumerate()
        .map(|(i, inc)| {
            let to = r.incidents.get(i + 1).map_or(horizon.max(r.duration_ms), |n| n.at_ms);
            IncidentOut {
                at_ms: inc.at_ms,
                node: inc.node,
                label: inc.label.clone(),
                bad_requests: r.ledger.bad_between(inc.at_ms, to),
                failed_requests: r.failed_between(inc.at_ms, to),
                sessions_on_node: inc.sessions_on_node,
            }
        })
        .collect()
}

pub fn summarize(r: &RunResult) -> Summary {
    let lat = r.latency.summary(SLOW_MS);
    let warmup = (r.duration_ms / 10).min(60_000);
    let names = &r.component_names;
    Summary {
        name: r.name.clone(),
        seed: r.seed,
        duration_ms: r.duration_ms,
        nodes: r.nodes,
        clients: r.clients,
        throughput_rps: (r.throughput(warmup, r.duration_ms) * 100.0).round() / 100.0,
        failed_requests: r.failed_requests(),
        session_lost: r.session_lost(),
        retries: r.retries,
        divergent_responses: r.divergent,
        tainted_rows: r.tainted_rows,
        events: r.events,
        manual_repairs: r.manual_repairs.clone(),
        failed_by_class: r.failed_by_class.iter().map(|(k, v)| (k.as_str().to_owned(), *v)).collect(),
        taw: r.ledger.totals().into(),
        latency: LatencyOut {
            count: lat.count,
            mean_ms: (lat.mean_ms * 100.0).round() / 100.0,
            p95_ms: lat.p95_ms,
            over_8s: lat.count_over_threshold,
        },
        incidents: incident_costs(r),
        recoveries: r
            .recoveries
            .iter()
            .map(|x| RecoveryOut {
                start_ms: x.start_ms,
                node: x.node,
                purpose: x.purpose.as_str(),
                kind: x.kind.clone(),
                target: x.target.clone(),
                duration_ms: x.duration_ms(),
            })
            .collect(),
        episodes: r
            .episodes
            .iter()
            .map(|e| EpisodeOut {
                node: e.node,
                started_at_ms: e.started_at,
                ended_at_ms: e.ended_at,
                target: e.target.clone(),
                terminal_level: e.terminal_level.as_str(),
                manual_repair: e.manual_repair,
                actions: e.actions,
            })
            .collect(),
        passes: r
            .passes
            .iter()
            .map(|(n, p)| PassOut {
                node: *n,
                started_at_ms: p.started_at,
                ended_at_ms: p.ended_at,
                rebooted: p.rebooted.iter().map(|c| names[c.index()].clone()).collect(),
                restarted: p.restarted,
                free_after_bytes: p.free_after,
            })
            .collect(),
    }
}

/// Unions overlapping failure intervals within each functional group.
pub fn merged_timeline(failures: &[FailureInterval]) -> Vec<FailureInterval> {
    let mut by_group: BTreeMap<FunctionalGroup, Vec<(Millis, Millis)>> = BTreeMap::new();
    for f in failures {
        by_group.entry(f.group).or_default().push((f.start_ms, f.end_ms));
    }
    let mut out = Vec::new();
    for (group, mut iv) in by_group {
        iv.sort_unstable();
        let mut cur: Option<(Millis, Millis)> = None;
        for (s, e) in iv {
            cur = match cur {
                Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
                Some((cs, ce)) => {
                    out.push(FailureInterval {
                        group,
                        start_ms: cs,
                        end_ms: ce,
                    });
                    Some((s, e))
                }
                None => Some((s, e)),
            };
        }
        if let Some((s, e)) = cur {
            out.push(FailureInterval {
                group,
                start_ms: s,
                end_ms: e,
            });
        }
    }
    out
}

fn create(dir: &Path, name: &str) -> io::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

/// Writes every artifact of `r` into `dir`, creating it if needed.
pub fn write_run(r: &RunResult, dir: &Path) -> io::Result<Summary> {
    fs::create_dir_all(dir)?;
    let mut w = create(dir, "taw.csv")?;
    r.ledger.write_csv(&mut w)?;
    w.flush()?;

    let mut w = create(dir, "latency.csv")?;
    writeln!(w, "request_id,op,node,issued_ms,latency_ms,outcome")?;
    for q in &r.requests {
        let outcome = match q.outcome {
            Some(e) => e.as_str(),
            None if q.divergent => "wrong_value",
            None => "ok",
        };
        writeln!(
            w,
            "{},{},{},{},{},{}",
            q.request_id, r.op_names[q.op.0 as usize], q.node, q.issued_ms, q.latency_ms, outcome
        )?;
    }
    w.flush()?;

    let mut w = create(dir, "episodes.log")?;
    for l in &r.episode_log {
        writeln!(w, "{} node{} {} {} {}", l.time, l.node, l.level, l.target, l.result)?;
    }
    w.flush()?;

    let mut w = create(dir, "timeline.csv")?;
    writeln!(w, "group,start_ms,end_ms")?;
    for f in merged_timeline(&r.failures) {
        writeln!(w, "{},{},{}", f.group.as_str(), f.start_ms, f.end_ms)?;
    }
    w.flush()?;

    let summary = summarize(r);
    let text = toml::to_string(&summary).map_err(io::Error::other)?;
    fs::write(dir.join("summary.toml"), text)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(group: FunctionalGroup, s: Millis, e: Millis) -> FailureInterval {
        FailureInterval {
            group,
            start_ms: s,
            end_ms: e,
        }
    }

    #[test]
    fn timeline_merges_per_group() {
        let g = FunctionalGroup::Search;
        let h = FunctionalGroup::BrowseView;
        let m = merged_timeline(&[iv(g, 10, 20), iv(h, 0, 5), iv(g, 15, 30), iv(g, 40, 41)]);
        assert_eq!(m, vec![iv(h, 0, 5), iv(g, 10, 30), iv(g, 40, 41)]);
    }
}
