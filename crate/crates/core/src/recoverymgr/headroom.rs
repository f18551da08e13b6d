//! How much detection slack cheap recovery buys.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HeadroomError {
    #[error("c_micro must be positive (got {0})")]
    NonPositiveMicro(f64),
    #[error("c_micro ({c_micro}) exceeds c_full ({c_full})")]
    MicroExceedsFull { c_micro: f64, c_full: f64 },
    #[error("failure rate must be positive (got {0})")]
    NonPositiveRate(f64),
}

fn check(c_micro: f64, c_full: f64) -> Result<(), HeadroomError> {
    if c_micro.is_nan() || c_micro <= 0.0 {
        return Err(HeadroomError::NonPositiveMicro(c_micro));
    }
    if c_micro > c_full {
        return Err(HeadroomError::MicroExceedsFull { c_micro, c_full });
    }
    Ok(())
}

/// Largest number `n` of useless microreboots that, followed by one useful
/// one, still cost no more than a single full restart; and the matching
/// false-positive rate `n / (n + 1)`.
pub fn fp_headroom(c_micro: f64, c_full: f64) -> Result<(u64, f64), HeadroomError> {
    check(c_micro, c_full)?;
    let mut n = (c_full / c_micro).floor() as u64;
    // Guard the float division against rounding on exact multiples.
    while n > 0 && (n as f64) * c_micro > c_full {
        n -= 1;
    }
    let n = n.saturating_sub(1);
    Ok((n, n as f64 / (n + 1) as f64))
}

/// Seconds a detector may take, with failures accruing at `fail_rate` per
/// second meanwhile, before microreboot recovery loses to an instantly
/// detected full restart.
pub fn detection_headroom(fail_rate: f64, c_micro: f64, c_full: f64) -> Result<f64, HeadroomError> {
    if fail_rate.is_nan() || fail_rate <= 0.0 {
        return Err(HeadroomError::NonPositiveRate(fail_rate));
    }
    check(c_micro, c_full)?;
    Ok((c_full - c_micro) / fail_rate)
}

/// `(n, fp_rate, f_micro(n), f_full(n))` for `n` false positives between
/// consecutive true detections.
pub fn fp_curve(n_max: u64, c_micro: f64, c_full: f64) -> Vec<(u64, f64, f64, f64)> {
    (0..=n_max)
        .map(|n| {
            let k = (n + 1) as f64;
            (n, n as f64 / k, k * c_micro, k * c_full)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_values() {
        let (n, rate) = fp_headroom(78.0, 3917.0).unwrap();
        assert_eq!(n, 49);
        assert_eq!((rate * 100.0).round(), 98.0);
        let t = detection_headroom(71.8, 78.0, 3917.0).unwrap();
        assert!((53.0..54.0).contains(&t), "{t}");
    }

    #[test]
    fn equal_costs() {
        assert_eq!(fp_headroom(5.0, 5.0).unwrap(), (0, 0.0));
        assert_eq!(detection_headroom(1.0, 5.0, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn invalid_inputs() {
        assert!(fp_headroom(0.0, 5.0).is_err());
        assert!(fp_headroom(6.0, 5.0).is_err());
        assert!(detection_headroom(0.0, 1.0, 5.0).is_err());
    }
}
