//! Recorded comparisons between a measured quantity and a certified bound.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
}

/// Whether failed bound checks are errors (`Strict`) or recorded warnings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Strict,
    Permissive,
}

impl Mode {
    pub fn is_strict(self) -> bool {
        self == Mode::Strict
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub status: CheckStatus,
}

/// Relative slack applied to every `measured <= bound` comparison.
pub const REL_SLACK: f64 = 1e-12;

impl BoundCheck {
    /// `measured <= bound` up to [`REL_SLACK`]; failures become warnings in
    /// permissive mode.
    pub fn le(name: impl Into<String>, measured: f64, bound: f64, mode: Mode) -> Self {
        let ok = measured <= bound + REL_SLACK * bound.abs().max(f64::MIN_POSITIVE);
        let status = match (ok, mode) {
            (true, _) => CheckStatus::Pass,
            (false, Mode::Strict) => CheckStatus::Fail,
            (false, Mode::Permissive) => CheckStatus::Warn,
        };
        BoundCheck { name: name.into(), measured, bound, status }
    }

    /// Like [`BoundCheck::le`] but overshoots below `1 + tolerance` are only
    /// flagged as warnings. Used where truncation may move constants slightly.
    pub fn le_flag_within(
        name: impl Into<String>,
        measured: f64,
        bound: f64,
        tolerance: f64,
        mode: Mode,
    ) -> Self {
        let mut check = Self::le(name, measured, bound, mode);
        if check.status == CheckStatus::Fail && measured <= bound * (1.0 + tolerance) {
            check.status = CheckStatus::Warn;
        }
        check
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }
}

pub fn all_passed(checks: &[BoundCheck]) -> bool {
    checks.iter().all(BoundCheck::passed)
}

pub fn any_failed(checks: &[BoundCheck]) -> bool {
    checks.iter().any(|c| c.status == CheckStatus::Fail)
}
