//! Experiment configuration, read from a JSON document.

use std::fmt;
use std::path::Path;

use coxq_core::{EnvSpec, QueueParams, ScalingRegime};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Analytic,
    Simulate,
    CltCheck,
    FcltCheck,
    LdpCheck,
    CorrCheck,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Kind::Analytic => "analytic",
            Kind::Simulate => "simulate",
            Kind::CltCheck => "clt-check",
            Kind::FcltCheck => "fclt-check",
            Kind::LdpCheck => "ldp-check",
            Kind::CorrCheck => "corr-check",
        };
        f.write_str(name)
    }
}

/// Initial condition of a simulation run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    /// empty queues at time 0
    #[default]
    Empty,
    /// round(N·ϱ₀) jobs in each queue at time 0
    Fluid,
    /// empty queues at −warmup, run long enough to forget the start
    Stationary,
}

/// Tail level: a scalar for one queue or one entry per queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Level {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Level {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Level::Scalar(a) => vec![*a],
            Level::Vector(v) => v.clone(),
        }
    }
}

/// Pass/fail thresholds of every criterion a run can evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// allowed distance in standard errors for Monte Carlo means and variances
    pub se_multiplier: f64,
    pub clt_variance_rel: f64,
    pub ad_p_min: f64,
    pub covariance_rel: f64,
    pub covariance_zero_abs: f64,
    pub correlation_rel: f64,
    pub slope_rel: f64,
    pub max_is_rel_err: f64,
    /// rel_err above which a warning is recorded
    pub warn_is_rel_err: f64,
    pub trichotomy_rel: f64,
    pub pgf_abs: f64,
    pub stationarity_residual: f64,
    pub dual_route_abs: f64,
    pub identity_abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            se_multiplier: 3.0,
            clt_variance_rel: 0.10,
            ad_p_min: 0.01,
            covariance_rel: 0.10,
            covariance_zero_abs: 1e-12,
            correlation_rel: 0.10,
            slope_rel: 0.10,
            max_is_rel_err: 0.10,
            warn_is_rel_err: 0.30,
            trichotomy_rel: 0.02,
            pgf_abs: 1e-10,
            stationarity_residual: 1e-6,
            dual_route_abs: 1e-9,
            identity_abs: 1e-8,
        }
    }
}

fn default_n_grid() -> Vec<u64> {
    vec![1]
}

fn default_replications() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    pub env: EnvSpec,
    pub queues: QueueParams,
    pub delta: f64,
    pub alpha: f64,
    #[serde(rename = "N_grid", alias = "n_grid", default = "default_n_grid")]
    pub n_grid: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Level>,
    /// fluid start ϱ₀ per queue; defaults to the stationary point 𝔼Λ/μ_i
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho0: Option<Vec<f64>>,
    #[serde(default)]
    pub start: Start,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_budget: Option<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be nonnegative, got {}", self.alpha));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return bad("N_grid must hold positive integers".into());
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("N_grid must be strictly increasing, got {:?}", self.n_grid));
        }
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        if let Some(t) = self.t {
            if !(t >= 0.0) || !t.is_finite() {
                return bad(format!("t must be nonnegative, got {t}"));
            }
        }
        if let Some(grid) = &self.grid {
            if grid.is_empty() || grid.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
                return bad("grid must be a nonempty list of nonnegative times".into());
            }
            if grid.windows(2).any(|w| w[1] <= w[0]) {
                return bad("grid must be strictly increasing".into());
            }
        }
        if let Some(rho0) = &self.rho0 {
            if rho0.len() != self.queues.d() || rho0.iter().any(|r| !(*r >= 0.0)) {
                return bad(format!("rho0 needs {} nonnegative entries", self.queues.d()));
            }
        }
        Ok(())
    }

    /// Applies command-line overrides.
    pub fn with_overrides(mut self, seed: Option<u64>, replications: Option<usize>) -> Result<Self, HarnessError> {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(r) = replications {
            self.replications = r;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn scaling(&self, n: u64) -> Result<ScalingRegime, HarnessError> {
        Ok(ScalingRegime::new(n, self.alpha, self.delta)?)
    }

    /// Readout times: `grid`, else `[t]`.
    pub fn readout_grid(&self) -> Result<Vec<f64>, HarnessError> {
        match (&self.grid, self.t) {
            (Some(g), _) => Ok(g.clone()),
            (None, Some(t)) => Ok(vec![t]),
            (None, None) => Err(HarnessError::Config("either t or grid is required".into())),
        }
    }

    pub fn require_t(&self) -> Result<f64, HarnessError> {
        self.t.ok_or_else(|| HarnessError::Config("t is required".into()))
    }

    /// ϱ₀, defaulting to the stationary fluid point.
    pub fn fluid_start(&self) -> Vec<f64> {
        match &self.rho0 {
            Some(r) => r.clone(),
            None => self.queues.mu().iter().map(|m| self.env.mean() / m).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str =
        r#"{"env": {"family": "exponential", "rate": 1.0}, "queues": [1.0], "delta": 1.0, "alpha": 0.5}"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.n_grid, vec![1]);
        assert_eq!(c.replications, 1000);
        assert_eq!(c.start, Start::Empty);
        assert_eq!(c.tolerances, Tolerances::default());
        assert!(c.kind.is_none());
    }

    #[test]
    fn round_trips() {
        let text = r#"{"kind": "ldp-check", "env": {"family": "deterministic", "lambda": 1.0}, "queues": [1.0, 2.0],
            "delta": 2.0, "alpha": 2.0, "N_grid": [50, 100], "t": 40.0, "a": [2.0, 0.7], "seed": 4,
            "tolerances": {"slope_rel": 0.2}}"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(c.a, Some(Level::Vector(vec![2.0, 0.7])));
        assert_eq!(c.tolerances.slope_rel, 0.2);
        assert_eq!(c.tolerances.pgf_abs, 1e-10);
        let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_grids() {
        for patch in [
            r#""N_grid": [100, 100]"#,
            r#""N_grid": []"#,
            r#""replications": 0"#,
            r#""grid": [1.0, 0.5]"#,
        ] {
            let text = MINIMAL.replacen('{', &format!("{{{patch}, "), 1);
            assert!(
                matches!(ExperimentConfig::from_json(&text), Err(HarnessError::Config(_))),
                "{patch}"
            );
        }
        let text = MINIMAL.replace("\"rate\": 1.0", "\"rate\": -1.0");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn overrides_apply() {
        let c = ExperimentConfig::from_json(MINIMAL)
            .unwrap()
            .with_overrides(Some(9), Some(20))
            .unwrap();
        assert_eq!((c.seed, c.replications), (9, 20));
        assert!(ExperimentConfig::from_json(MINIMAL)
            .unwrap()
            .with_overrides(None, Some(0))
            .is_err());
    }
}
