use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::{GameKind, GameSpec};
use crate::query::{EIG_TOL, TIKHONOV_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Recursive Kalman filter bank.
    #[default]
    Kalman,
    /// Ridge refit on the whole sample log at every update.
    Batch,
}

/// Sampling box `[m⁻, m⁺]` for the random initialization. A single entry is
/// broadcast to every coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub beta: Vec<f64>,
    pub k_in_fraction: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
}

/// Everything an experiment file may contain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub game: GameKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "K_in", default, skip_serializing_if = "Option::is_none")]
    pub k_in: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_in_fraction: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol_conv: f64,
    #[serde(default = "default_tol")]
    pub tol_theta: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<RangeSpec>,
    #[serde(default = "default_eig_tol")]
    pub eig_tol: f64,
    #[serde(default = "default_tikhonov")]
    pub tikhonov_eps: f64,
    #[serde(default = "default_true")]
    pub early_stop: bool,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn default_alpha() -> f64 {
    1e3
}

fn default_beta() -> f64 {
    1.0
}

fn default_tol() -> f64 {
    1e-6
}

fn default_window() -> usize {
    5
}

fn default_eig_tol() -> f64 {
    EIG_TOL
}

fn default_tikhonov() -> f64 {
    TIKHONOV_EPS
}

fn default_true() -> bool {
    true
}

fn default_reps() -> usize {
    1
}

/// `⌈f·K⌉`, guarded against representation error in `f`.
pub fn k_in_from_fraction(fraction: f64, k: usize) -> usize {
    (fraction * k as f64 - 1e-9).ceil().max(0.0) as usize
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn game_spec(&self) -> GameSpec {
        GameSpec {
            game: self.game,
            params: self.params.clone(),
        }
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let k_in = match (self.k_in, self.k_in_fraction) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidInput("give either K_in or k_in_fraction, not both".into()))
            }
            (Some(k), None) => k,
            (None, Some(f)) => k_in_from_fraction(f, self.k),
            (None, None) => 0,
        };
        let cfg = RunConfig {
            k: self.k,
            k_in,
            alpha: self.alpha,
            beta: self.beta,
            seed: self.seed,
            tol_conv: self.tol_conv,
            tol_theta: self.tol_theta,
            window: self.window,
            range: self.range.as_ref().map(|r| (r.lower.clone(), r.upper.clone())),
            eig_tol: self.eig_tol,
            tikhonov_eps: self.tikhonov_eps,
            early_stop: self.early_stop,
            estimator: self.estimator,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parameters of a single learning run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub k: usize,
    pub k_in: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub tol_conv: f64,
    pub tol_theta: f64,
    pub window: usize,
    pub range: Option<(Vec<f64>, Vec<f64>)>,
    pub eig_tol: f64,
    pub tikhonov_eps: f64,
    pub early_stop: bool,
    pub estimator: Estimator,
}

impl RunConfig {
    pub fn new(k: usize, k_in: usize, beta: f64, seed: u64) -> Self {
        Self {
            k,
            k_in,
            alpha: default_alpha(),
            beta,
            seed,
            tol_conv: default_tol(),
            tol_theta: default_tol(),
            window: default_window(),
            range: None,
            eig_tol: EIG_TOL,
            tikhonov_eps: TIKHONOV_EPS,
            early_stop: true,
            estimator: Estimator::Kalman,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.k_in >= self.k {
            return bad(format!("K_in ({}) must be smaller than K ({})", self.k_in, self.k));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be nonnegative, got {}", self.beta));
        }
        if !(self.tol_conv >= 0.0 && self.tol_theta >= 0.0) {
            return bad("tolerances must be nonnegative".into());
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if !(self.eig_tol > 0.0 && self.tikhonov_eps > 0.0) {
            return bad("eig_tol and tikhonov_eps must be positive".into());
        }
        if let Some((lo, hi)) = &self.range {
            if lo.len() != hi.len() || lo.is_empty() {
                return bad("range bounds must be nonempty and of equal length".into());
            }
            if lo.iter().zip(hi).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
                return bad("range requires finite lower <= upper".into());
            }
        }
        Ok(())
    }
}
