//! Client-edge failure detection and the report channel to the recovery
//! manager.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::app::{ErrorClass, OpId, Outcome, Response};
use crate::simcore::{Millis, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FailureClass {
    Connection,
    HttpError,
    Keyword,
    AppCheck,
    Divergence,
}

impl fmt::Display for FailureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Connection => "connection",
            Self::HttpError => "http_error",
            Self::Keyword => "keyword",
            Self::AppCheck => "app_check",
            Self::Divergence => "divergence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureReport {
    pub op: OpId,
    pub failure_class: FailureClass,
    pub observed_at: Millis,
    pub client_id: u32,
    pub node: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Fast,
    Comparison,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorProfile {
    pub kind: DetectorKind,
    pub t_det_ms: Millis,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub channel_delay_ms: Millis,
    pub drop_probability: f64,
}

impl Default for DetectorProfile {
    fn default() -> Self {
        Self {
            kind: DetectorKind::Comparison,
            t_det_ms: 0,
            fp_rate: 0.0,
            fn_rate: 0.0,
            channel_delay_ms: 0,
            drop_probability: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    Faulty(FailureClass),
}

fn overt_class(outcome: Outcome) -> Option<FailureClass> {
    match outcome {
        Outcome::Ok | Outcome::RetryAfter(_) => None,
        Outcome::Error(e) => Some(match e {
            ErrorClass::Connection => FailureClass::Connection,
            ErrorClass::ComponentUnavailable | ErrorClass::TtlExpired => FailureClass::HttpError,
            ErrorClass::Exception => FailureClass::Keyword,
            ErrorClass::SessionLost => FailureClass::AppCheck,
        }),
    }
}

/// Compares digests; timing fields are not part of the fingerprint, so
/// latency differences never register. An absent oracle abstains.
pub fn compare_responses(resp: &Response, oracle_fingerprint: Option<u64>) -> Verdict {
    match oracle_fingerprint {
        Some(fp) if resp.outcome == Outcome::Ok && fp != resp.body_fingerprint => {
            Verdict::Faulty(FailureClass::Divergence)
        }
        _ => Verdict::Ok,
    }
}

/// Classifies a response, applying the profile's false-negative and
/// false-positive noise.
pub fn classify_response(
    profile: &DetectorProfile,
    resp: &Response,
    oracle_fingerprint: Option<u64>,
    rng: &mut RngStream,
) -> Verdict {
    let mut v = match overt_class(resp.outcome) {
        Some(c) => Verdict::Faulty(c),
        None => Verdict::Ok,
    };
    if v == Verdict::Ok && profile.kind == DetectorKind::Comparison {
        v = compare_responses(resp, oracle_fingerprint);
    }
    match v {
        Verdict::Faulty(_) if rng.chance(profile.fn_rate) => Verdict::Ok,
        Verdict::Ok if resp.outcome == Outcome::Ok && rng.chance(profile.fp_rate) => {
            Verdict::Faulty(FailureClass::Keyword)
        }
        v => v,
    }
}

/// Best-effort delivery of reports to the recovery manager.
#[derive(Debug)]
pub struct ReportChannel {
    pub delay_ms: Millis,
    pub drop_probability: f64,
    rng: RngStream,
    pub sent: u64,
    pub dropped: u64,
}

impl ReportChannel {
    pub fn new(profile: &DetectorProfile, rng: RngStream) -> Self {
        Self {
            delay_ms: profile.t_det_ms + profile.channel_delay_ms,
            drop_probability: profile.drop_probability,
            rng,
            sent: 0,
            dropped: 0,
        }
    }

    /// Ingestion time of `report`, or `None` if it was dropped.
    pub fn report(&mut self, report: &FailureReport) -> Option<Millis> {
        self.sent += 1;
        if self.rng.chance(self.drop_probability) {
            self.dropped += 1;
            return None;
        }
        Some(report.observed_at + self.delay_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(outcome: Outcome, fp: u64) -> Response {
        Response {
            op: OpId(0),
            outcome,
            body_fingerprint: fp,
            latency_ms: 10,
        }
    }

    fn fast() -> DetectorProfile {
        DetectorProfile {
            kind: DetectorKind::Fast,
            ..Default::default()
        }
    }

    #[test]
    fn exception_is_keyword() {
        let mut rng = RngStream::new(1, "d");
        let v = classify_response(&fast(), &resp(Outcome::Error(ErrorClass::Exception), 0), None, &mut rng);
        assert_eq!(v, Verdict::Faulty(FailureClass::Keyword));
    }

    #[test]
    fn wrong_value_missed_by_fast_caught_by_comparison() {
        let mut rng = RngStream::new(1, "d");
        let r = resp(Outcome::Ok, 5);
        assert_eq!(classify_response(&fast(), &r, Some(6), &mut rng), Verdict::Ok);
        let cmp = DetectorProfile::default();
        assert_eq!(
            classify_response(&cmp, &r, Some(6), &mut rng),
            Verdict::Faulty(FailureClass::Divergence)
        );
        assert_eq!(classify_response(&cmp, &r, Some(5), &mut rng), Verdict::Ok);
    }

    #[test]
    fn latency_differences_ignored() {
        let a = resp(Outcome::Ok, 9);
        let b = Response { latency_ms: 900, ..a };
        assert_eq!(compare_responses(&b, Some(a.body_fingerprint)), Verdict::Ok);
        assert_eq!(compare_responses(&a, None), Verdict::Ok);
    }

    #[test]
    fn channel_delay_and_drop() {
        let p = DetectorProfile {
            t_det_ms: 100,
            channel_delay_ms: 5,
            ..Default::default()
        };
        let mut ch = ReportChannel::new(&p, RngStream::new(1, "c"));
        let r = FailureReport {
            op: OpId(0),
            failure_class: FailureClass::Keyword,
            observed_at: 1_000,
            client_id: 0,
            node: 0,
        };
        assert_eq!(ch.report(&r), Some(1_105));
        ch.drop_probability = 1.0;
        assert_eq!(ch.report(&r), None);
    }
}
