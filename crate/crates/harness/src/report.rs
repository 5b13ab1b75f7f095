//! Machine-readable run reports.

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Kind};

pub const SCHEMA_VERSION: u32 = 1;

/// One pass/fail check derived from recorded numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    /// observed quantity; null when not finite
    pub value: Option<f64>,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl Criterion {
    /// Passes when |value − target| ≤ tolerance.
    pub fn within(name: impl Into<String>, value: f64, target: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: (value - target).abs() <= tolerance,
            value: finite(value),
            target: finite(target),
            tolerance: finite(tolerance),
            detail: detail.into(),
        }
    }

    /// Passes when |value/target − 1| ≤ tolerance.
    pub fn relative(
        name: impl Into<String>,
        value: f64,
        target: f64,
        tolerance: f64,
        detail: impl Into<String>,
    ) -> Self {
        let passed = target != 0.0 && (value / target - 1.0).abs() <= tolerance;
        Self {
            name: name.into(),
            passed,
            value: finite(value),
            target: finite(target),
            tolerance: finite(tolerance),
            detail: detail.into(),
        }
    }

    /// Passes when value > bound.
    pub fn above(name: impl Into<String>, value: f64, bound: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: value > bound,
            value: finite(value),
            target: finite(bound),
            tolerance: None,
            detail: detail.into(),
        }
    }

    /// Passes when value ≤ bound.
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: value <= bound,
            value: finite(value),
            target: None,
            tolerance: finite(bound),
            detail: detail.into(),
        }
    }

    pub fn flag(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            value: None,
            target: None,
            tolerance: None,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub kind: Kind,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub results: serde_json::Value,
    pub criteria: Vec<Criterion>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

impl Report {
    pub fn new(
        kind: Kind,
        config: &ExperimentConfig,
        results: serde_json::Value,
        criteria: Vec<Criterion>,
        warnings: Vec<String>,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            kind,
            seed: config.seed,
            config: config.clone(),
            results,
            passed: criteria.iter().all(|c| c.passed),
            criteria,
            warnings,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &Criterion> {
        self.criteria.iter().filter(|c| !c.passed)
    }

    pub fn criterion(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn criterion_rules() {
        assert!(Criterion::within("x", 1.05, 1.0, 0.1, "").passed);
        assert!(!Criterion::relative("x", 1.2, 1.0, 0.1, "").passed);
        assert!(!Criterion::relative("x", 0.0, 0.0, 0.1, "").passed);
        assert!(!Criterion::above("x", 0.01, 0.01, "").passed);
        assert!(Criterion::at_most("x", 0.01, 0.01, "").passed);
        let c = Criterion::within("x", f64::INFINITY, 1.0, 0.1, "");
        assert!(!c.passed);
        assert_eq!(c.value, None);
    }
}
