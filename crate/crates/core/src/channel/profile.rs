//! Tapped-delay-line power/delay profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 3GPP TR 38.901 TDL-C: normalized delay (units of the RMS delay spread) and power in dB.
///
/// The standard lists tap 5 (0.2176) after tap 4 (0.2329); the table here is
/// kept in the published order and sorted when a profile is built.
pub const TDL_C: [(f64, f64); 24] = [
    (0.0, -4.4),
    (0.2099, -1.2),
    (0.2219, -3.5),
    (0.2329, -5.2),
    (0.2176, -2.5),
    (0.6366, 0.0),
    (0.6448, -2.2),
    (0.6560, -3.9),
    (0.6584, -7.4),
    (0.7935, -7.1),
    (0.8213, -10.7),
    (0.9336, -11.1),
    (1.2285, -5.1),
    (1.3083, -6.8),
    (2.1704, -8.7),
    (2.7105, -13.2),
    (4.2589, -13.9),
    (4.6003, -13.9),
    (5.4902, -15.8),
    (5.6077, -17.1),
    (6.3065, -16.0),
    (6.6374, -15.7),
    (7.0427, -21.6),
    (8.6523, -22.8),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    /// Excess delay in seconds.
    pub delay: f64,
    /// Linear power.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapProfile {
    taps: Vec<Tap>,
    rms_delay_spread: f64,
}

impl TapProfile {
    /// Builds a profile from `(delay_s, linear_power)` pairs. Taps are sorted by
    /// delay and powers normalized to unit sum.
    pub fn new(mut taps: Vec<Tap>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidArgument("tap profile needs at least one tap".into()));
        }
        if taps.iter().any(|t| !(t.delay >= 0.0) || !t.delay.is_finite()) {
            return Err(Error::InvalidArgument("tap delays must be finite and nonnegative".into()));
        }
        if taps.iter().any(|t| !(t.power > 0.0) || !t.power.is_finite()) {
            return Err(Error::InvalidArgument("tap powers must be finite and positive".into()));
        }
        taps.sort_by(|a, b| a.delay.total_cmp(&b.delay));
        if taps.windows(2).any(|w| w[1].delay <= w[0].delay) {
            return Err(Error::InvalidArgument("tap delays must be strictly increasing".into()));
        }
        let total: f64 = taps.iter().map(|t| t.power).sum();
        for t in &mut taps {
            t.power /= total;
        }
        let mean: f64 = taps.iter().map(|t| t.power * t.delay).sum();
        let rms = taps
            .iter()
            .map(|t| t.power * (t.delay - mean).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(Self { taps, rms_delay_spread: rms })
    }

    /// Single tap at `delay` with unit power.
    pub fn single(delay: f64) -> Result<Self> {
        Self::new(vec![Tap { delay, power: 1.0 }])
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn rms_delay_spread(&self) -> f64 {
        self.rms_delay_spread
    }

    pub fn total_power(&self) -> f64 {
        self.taps.iter().map(|t| t.power).sum()
    }
}

/// TDL-C with delays scaled by `tau_rms` seconds.
pub fn make_tdlc_profile(tau_rms: f64) -> Result<TapProfile> {
    if !(tau_rms > 0.0) {
        return Err(Error::InvalidArgument(format!("rms delay spread must be positive, got {tau_rms}")));
    }
    TapProfile::new(
        TDL_C
            .iter()
            .map(|&(d, p_db)| Tap {
                delay: d * tau_rms,
                power: 10f64.powf(p_db / 10.0),
            })
            .collect(),
    )
}

/// Parses a tap table override: one `delay_ns power_db` pair per line.
/// Blank lines and `#` comments are ignored.
pub fn parse_tap_table(text: &str) -> Result<TapProfile> {
    let mut taps = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Malformed(format!("tap table line {}: bad number {s:?}", no + 1)))
        };
        match fields.as_slice() {
            [d, p] => taps.push(Tap {
                delay: parse(d)? * 1e-9,
                power: 10f64.powf(parse(p)? / 10.0),
            }),
            _ => {
                return Err(Error::Malformed(format!(
                    "tap table line {}: expected \"delay_ns power_db\", got {line:?}",
                    no + 1
                )))
            }
        }
    }
    TapProfile::new(taps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tdlc_starts_at_zero_and_is_normalized() {
        let p = make_tdlc_profile(251e-9).unwrap();
        assert_eq!(p.len(), 24);
        assert_eq!(p.taps()[0].delay, 0.0);
        assert!((p.total_power() - 1.0).abs() < 1e-9);
        assert!(p.taps().windows(2).all(|w| w[1].delay > w[0].delay));
        // The normalized table has unit RMS delay spread.
        assert!((p.rms_delay_spread() / 251e-9 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn doubling_spread_doubles_delays() {
        let a = make_tdlc_profile(100e-9).unwrap();
        let b = make_tdlc_profile(200e-9).unwrap();
        for (x, y) in a.taps().iter().zip(b.taps()) {
            assert!((2.0 * x.delay - y.delay).abs() < 1e-20);
            assert_eq!(x.power, y.power);
        }
    }

    #[test]
    fn rejects_bad_profiles() {
        assert!(make_tdlc_profile(0.0).is_err());
        assert!(TapProfile::new(vec![]).is_err());
        let dup = vec![Tap { delay: 1e-9, power: 1.0 }, Tap { delay: 1e-9, power: 1.0 }];
        assert!(TapProfile::new(dup).is_err());
    }

    #[test]
    fn parses_override_table() {
        let p = parse_tap_table("# custom\n0 0\n100 -3.0103\n\n").unwrap();
        assert_eq!(p.len(), 2);
        assert!((p.taps()[1].delay - 100e-9).abs() < 1e-18);
        assert!((p.taps()[0].power - 2.0 / 3.0).abs() < 1e-4);
        assert!(parse_tap_table("0 0 1\n").is_err());
        assert!(parse_tap_table("abc 0\n").is_err());
    }
}
