//! Run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domains::{FactorSpec, Term};
use crate::error::{Error, Result};
use crate::operators::OperatorDescriptor;
use crate::perturb::default_eps_grid;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative gap below which consecutive eigenvalues share a cluster.
    pub cluster_tol: f64,
    /// Kernel threshold relative to the spectrum scale `max(1, max|λ|)`.
    pub zero_tol: f64,
    /// First-order spread below which a factor does not split (relative to
    /// `|λ|`).
    pub spread_tol: f64,
    /// Relative gap every eigenvalue must keep after splitting.
    pub gamma: f64,
    /// Window endpoint guard; `None` means `1e-3` times the width.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guard: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { cluster_tol: 1e-8, zero_tol: 1e-9, spread_tol: 1e-9, gamma: 1e-3, guard: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuityConfig {
    /// Threshold `c`; eigenvalues above it are followed.
    pub threshold: f64,
    pub index_count: usize,
}

impl Default for ContinuityConfig {
    fn default() -> Self {
        Self { threshold: 0.5, index_count: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub operator: OperatorDescriptor,
    /// Conformal factors; `track` and `windows` sweep each in turn.
    pub factors: Vec<FactorSpec>,
    pub eps_grid: Vec<f64>,
    /// Counting / tracking window.
    pub window: WindowConfig,
    /// Half-width of the symmetric window `[-α, α]` used by `split`.
    pub alpha: f64,
    pub tolerances: Tolerances,
    /// Step of the central-difference slope estimate; `±slope_step` is added
    /// to the tracking grid.
    pub slope_step: f64,
    pub continuity: ContinuityConfig,
    pub max_steps: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// `split` replays this plan instead of searching for a new one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay_plan: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA,
            operator: OperatorDescriptor::torus_laplacian(16),
            factors: vec![FactorSpec::single(Term::cos(2, 0, 1.0))],
            eps_grid: default_eps_grid(),
            window: WindowConfig { lo: 0.5, hi: 4.5 },
            alpha: 4.5,
            tolerances: Tolerances::default(),
            slope_step: 1e-3,
            continuity: ContinuityConfig::default(),
            max_steps: 10,
            seed: 0,
            output_dir: PathBuf::from("out"),
            replay_plan: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Config(format!("unsupported schema {}, expected {SCHEMA}", self.schema)));
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("cluster_tol", t.cluster_tol),
            ("zero_tol", t.zero_tol),
            ("spread_tol", t.spread_tol),
            ("gamma", t.gamma),
            ("alpha", self.alpha),
            ("slope_step", self.slope_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::NonPositiveTolerance(name));
            }
        }
        if let Some(g) = t.guard {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::NonPositiveTolerance("guard"));
            }
        }
        if !self.eps_grid.contains(&0.0) {
            return Err(Error::GridMissingZero);
        }
        if self.eps_grid.iter().any(|e| !e.is_finite()) {
            return Err(Error::Config("eps_grid entries must be finite".into()));
        }
        if !(self.window.lo < self.window.hi) {
            return Err(Error::InvalidWindow(self.window.lo, self.window.hi));
        }
        if self.factors.is_empty() {
            return Err(Error::Config("at least one factor is required".into()));
        }
        Ok(())
    }

    pub fn guard(&self) -> f64 {
        self.tolerances.guard.unwrap_or(1e-3 * (self.window.hi - self.window.lo))
    }

    /// Tracking grid: `eps_grid` plus `±slope_step`, sorted and deduplicated.
    pub fn tracking_grid(&self) -> Vec<f64> {
        let mut g = self.eps_grid.clone();
        g.push(self.slope_step);
        g.push(-self.slope_step);
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }
}
