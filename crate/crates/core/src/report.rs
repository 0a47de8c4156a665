//! Named pass/fail checks shared by every verification routine.

use serde::{Deserialize, Serialize};

/// Relative slack for inequality checks.
pub const SLACK: f64 = 1e-6;

/// Absolute floor below which two sides of an inequality are treated as rounding noise.
pub const ABS_FLOOR: f64 = 1e-12;

/// Outcome of one inequality check. `margin > 0` means satisfied with room.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub bound: f64,
    pub margin: f64,
}

impl Check {
    /// Passes when `value <= bound` up to [`SLACK`].
    pub fn le(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::le_with(name, value, bound, SLACK)
    }

    pub fn le_with(name: impl Into<String>, value: f64, bound: f64, slack: f64) -> Self {
        let pass = value <= bound + slack * bound.abs() + ABS_FLOOR;
        Self { name: name.into(), pass, value, bound, margin: bound - value }
    }

    /// Passes when `value >= bound` up to [`SLACK`].
    pub fn ge(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::ge_with(name, value, bound, SLACK)
    }

    pub fn ge_with(name: impl Into<String>, value: f64, bound: f64, slack: f64) -> Self {
        let pass = value >= bound - slack * bound.abs() - ABS_FLOOR;
        Self { name: name.into(), pass, value, bound, margin: value - bound }
    }

    /// Passes when `|value - target| <= tol`.
    pub fn close(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        let err = (value - target).abs();
        Self { name: name.into(), pass: err <= tol, value, bound: target, margin: tol - err }
    }

    /// Passes when `lo <= value <= hi`.
    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        let margin = (value - lo).min(hi - value);
        Self { name: name.into(), pass: margin >= 0.0, value, bound: if value < lo { lo } else { hi }, margin }
    }

    pub fn flag(name: impl Into<String>, pass: bool) -> Self {
        Self { name: name.into(), pass, value: pass as u8 as f64, bound: 1.0, margin: if pass { 0.0 } else { -1.0 } }
    }

    /// Worst case over a family of checks, keeping the first failing or tightest entry.
    pub fn worst(name: impl Into<String>, checks: impl IntoIterator<Item = Check>) -> Self {
        let mut out: Option<Check> = None;
        for c in checks {
            out = match out {
                None => Some(c),
                Some(o) => {
                    let take = (!c.pass && o.pass) || (c.pass == o.pass && c.margin < o.margin);
                    Some(if take { c } else { o })
                }
            };
        }
        let mut c = out.unwrap_or_else(|| Check::flag("", true));
        c.name = name.into();
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inequality_slack() {
        assert!(Check::le("a", 1.0 + 1e-7, 1.0).pass);
        assert!(!Check::le("a", 1.0 + 1e-5, 1.0).pass);
        assert!(Check::le("a", 1e-13, 0.0).pass);
        assert!(Check::ge("b", 0.5, 0.5).pass);
        assert!(!Check::ge("b", 0.4, 0.5).pass);
    }

    #[test]
    fn worst_prefers_failures() {
        let w = Check::worst("w", vec![Check::le("x", 0.0, 1.0), Check::le("y", 2.0, 1.0), Check::le("z", 0.9, 1.0)]);
        assert!(!w.pass);
        assert_eq!(w.value, 2.0);
        assert_eq!(w.name, "w");
    }

    #[test]
    fn window_check() {
        assert!(Check::within("s", -2.0, -2.3, -1.7).pass);
        assert!(!Check::within("s", -1.5, -2.3, -1.7).pass);
    }
}
