//! Round-indexed weights for the difference regularizer and the L1 term.
//!
//! The `sin` schedule is clamped at zero once `sin(a/10)` turns negative, and
//! the `square` schedule starts low: it is `0` for `a` in `[0, 10)`, `v` for
//! `[10, 20)`, and so on.

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const SQUARE_HALF_PERIOD: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Tanh,
    Fixed,
    Sin,
    Square,
    Frac,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 5] = [
        ScheduleKind::Tanh,
        ScheduleKind::Fixed,
        ScheduleKind::Sin,
        ScheduleKind::Square,
        ScheduleKind::Frac,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Tanh => "tanh",
            ScheduleKind::Fixed => "fixed",
            ScheduleKind::Sin => "sin",
            ScheduleKind::Square => "square",
            ScheduleKind::Frac => "frac",
        }
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown schedule {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    /// Cap of the schedule (`v1` or `v2`).
    pub v: f64,
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind, v: f64) -> Self {
        ScheduleSpec { kind, v }
    }

    /// Weight at global round `a` (0-based).
    pub fn weight(&self, a: u64) -> f64 {
        weight(self, a)
    }
}

pub fn weight(spec: &ScheduleSpec, a: u64) -> f64 {
    let v = spec.v;
    let x = a as f64 / 10.0;
    match spec.kind {
        ScheduleKind::Tanh => x.tanh() * v,
        ScheduleKind::Fixed => v,
        ScheduleKind::Sin => (x.sin() * v).max(0.0),
        ScheduleKind::Square => {
            if (a / SQUARE_HALF_PERIOD) % 2 == 1 {
                v
            } else {
                0.0
            }
        }
        ScheduleKind::Frac => v / (a as f64 + 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tanh_examples() {
        let s = ScheduleSpec::new(ScheduleKind::Tanh, 0.1);
        assert_eq!(s.weight(0), 0.0);
        assert!((s.weight(10) - 0.0761594155955765).abs() < 1e-12);
    }

    #[test]
    fn frac_examples() {
        let s = ScheduleSpec::new(ScheduleKind::Frac, 0.1);
        assert_eq!(s.weight(0), 0.1);
        assert!((s.weight(9) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn square_starts_low_and_alternates() {
        let s = ScheduleSpec::new(ScheduleKind::Square, 2.0);
        assert_eq!(s.weight(0), 0.0);
        assert_eq!(s.weight(9), 0.0);
        assert_eq!(s.weight(10), 2.0);
        assert_eq!(s.weight(19), 2.0);
        assert_eq!(s.weight(20), 0.0);
    }

    #[test]
    fn sin_is_clamped_at_zero() {
        let s = ScheduleSpec::new(ScheduleKind::Sin, 1.0);
        assert!(s.weight(15) > 0.0);
        // sin(4) < 0
        assert_eq!(s.weight(40), 0.0);
    }

    #[test]
    fn parses_kind_names() {
        for k in ScheduleKind::ALL {
            assert_eq!(k.as_str().parse::<ScheduleKind>().unwrap(), k);
        }
        assert!("cosine".parse::<ScheduleKind>().is_err());
    }

    proptest! {
        #[test]
        fn zero_cap_gives_zero(a in 0u64..10_000, kind in 0usize..5) {
            let s = ScheduleSpec::new(ScheduleKind::ALL[kind], 0.0);
            prop_assert_eq!(s.weight(a), 0.0);
        }

        #[test]
        fn weights_stay_within_cap(a in 0u64..10_000, kind in 0usize..5, v in 0.0f64..100.0) {
            let w = ScheduleSpec::new(ScheduleKind::ALL[kind], v).weight(a);
            prop_assert!(w >= 0.0 && w <= v);
        }

        #[test]
        fn tanh_nondecreasing(a in 0u64..500, v in 0.0f64..10.0) {
            let s = ScheduleSpec::new(ScheduleKind::Tanh, v);
            prop_assert!(s.weight(a) <= s.weight(a + 1));
        }
    }
}
