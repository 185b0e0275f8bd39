//! Blind channel identification solvers.
//!
//! All solvers minimize the cross-relation energy `hᵀ Q h` with `Q = AᵀA`
//! and differ only in the constraint set that excludes the trivial
//! solution `h = 0`:
//!
//! | solver              | constraints                                                  |
//! |---------------------|--------------------------------------------------------------|
//! | [`tong_l2`]          | `Σ‖h_i‖² = 1` (closed form, smallest eigenvector)           |
//! | [`anchor_l1`]        | `h_1(a) = 1`, `Σ‖h_i‖₁ ≤ ε`                                 |
//! | [`nonneg_anchor_l1`] | as above plus `h ≥ 0`                                        |
//! | [`il1c`]             | `p_nᵀ h_n = 1` per channel, `Σ h ≤ ε`, `h ≥ 0`, alternating |
//!
//! Every iterative solver runs the projected accelerated gradient method in
//! [`qp`] with an exact Euclidean projection onto its constraint set.

mod anchor;
mod config;
mod cv;
mod il1c;
pub mod qp;
mod tong;

use serde::{Deserialize, Serialize};

use crate::cross_relation::{assemble_normal_matrix, NormalMatrix};
use crate::error::{invalid, Result};
use crate::room::{AirSet, ObservationSet};

pub use anchor::{anchor_l1, anchor_l1_normal, nonneg_anchor_l1, nonneg_anchor_l1_normal};
pub use cv::{cross_validate_epsilon, cross_validate_with, default_epsilon_grid, CvOutcome};
pub use il1c::{il1c, il1c_from_start, il1c_normal, Il1cStart};
pub use qp::QpOutcome;
pub use tong::{subspace_error, tong_from_normal, tong_l2, TongSolution};

/// L1 budget of the sparse solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Epsilon {
    /// An absolute budget.
    Fixed(f64),
    /// A multiple of the L1 mass of the solver's starting point.
    InitMass(f64),
}

impl Epsilon {
    pub fn resolve(&self, init_mass: f64) -> f64 {
        match *self {
            Epsilon::Fixed(e) => e,
            Epsilon::InitMass(f) => f * init_mass,
        }
    }

    pub fn nominal(&self) -> f64 {
        match *self {
            Epsilon::Fixed(v) | Epsilon::InitMass(v) => v,
        }
    }
}

impl std::fmt::Display for Epsilon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Epsilon::Fixed(v) => write!(f, "{v}"),
            Epsilon::InitMass(v) => write!(f, "{v}x"),
        }
    }
}

impl std::str::FromStr for Epsilon {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (num, rel) = match s.strip_suffix('x') {
            Some(head) => (head, true),
            None => (s, false),
        };
        let v: f64 = num
            .trim()
            .parse()
            .map_err(|_| invalid(format!("bad epsilon '{s}'")))?;
        Ok(if rel {
            Epsilon::InitMass(v)
        } else {
            Epsilon::Fixed(v)
        })
    }
}

/// How IL1C builds its first slack vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Il1cInit {
    /// Closed-form unit-norm solution with negative taps clipped.
    RectifiedTong,
    /// Solution of the non-negative anchor problem.
    NonnegAnchor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub channel_len: usize,
    pub epsilon: Epsilon,
    /// Anchor tap of channel 0; `None` picks the largest-magnitude tap of the
    /// closed-form solution.
    pub anchor_index: Option<usize>,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub tol_inner: f64,
    pub tol_outer: f64,
    pub seed: u64,
    pub il1c_init: Il1cInit,
    pub cv_folds: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            channel_len: 192,
            epsilon: Epsilon::InitMass(1.0),
            anchor_index: None,
            max_outer_iters: 20,
            max_inner_iters: 5000,
            tol_inner: 1e-6,
            tol_outer: 1e-4,
            seed: 0,
            il1c_init: Il1cInit::RectifiedTong,
            cv_folds: 3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channel_len == 0 {
            return Err(invalid("channel_len must be at least 1"));
        }
        let eps = self.epsilon.nominal();
        if !(eps.is_finite() && eps > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        if let Some(a) = self.anchor_index {
            if a >= self.channel_len {
                return Err(invalid(format!(
                    "anchor_index {a} outside 0..{}",
                    self.channel_len
                )));
            }
        }
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return Err(invalid("iteration caps must be at least 1"));
        }
        if !(self.tol_inner > 0.0 && self.tol_outer > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        if self.cv_folds < 2 {
            return Err(invalid("cv_folds must be at least 2"));
        }
        Ok(())
    }
}

/// Largest violation of each constraint a solver declares; `None` when the
/// solver has no such constraint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub unit_norm: Option<f64>,
    pub anchor_equality: Option<f64>,
    pub slack_equality: Option<f64>,
    pub nonnegativity: Option<f64>,
    pub l1_budget: Option<f64>,
}

impl ConstraintReport {
    pub fn max_violation(&self) -> f64 {
        [
            self.unit_norm,
            self.anchor_equality,
            self.slack_equality,
            self.nonnegativity,
            self.l1_budget,
        ]
        .into_iter()
        .flatten()
        .fold(0.0, f64::max)
    }

    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        [
            ("unit_norm", self.unit_norm),
            ("anchor_equality", self.anchor_equality),
            ("slack_equality", self.slack_equality),
            ("nonnegativity", self.nonnegativity),
            ("l1_budget", self.l1_budget),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub airs: AirSet,
    /// Objective `hᵀQh` after each outer iteration (one entry for
    /// single-pass solvers).
    pub objective_trace: Vec<f64>,
    pub constraint_report: ConstraintReport,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub converged: bool,
    /// Resolved L1 budget, when the solver has one.
    pub epsilon: Option<f64>,
    pub anchor_index: Option<usize>,
    /// Eigengap test of the closed-form solution the solver started from.
    pub identifiable: Option<bool>,
    /// Final slack vectors (IL1C only), stacked like `airs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<Vec<f64>>,
}

impl SolverResult {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Identifier of a solver or multi-microphone strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Tong,
    AnchorL1,
    NonnegAnchorL1,
    Il1c,
    Il1cIncremental,
    Il1cEnsemble,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Tong,
        Method::AnchorL1,
        Method::NonnegAnchorL1,
        Method::Il1c,
        Method::Il1cIncremental,
        Method::Il1cEnsemble,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Method::Tong => "tong",
            Method::AnchorL1 => "anchor-l1",
            Method::NonnegAnchorL1 => "nn-anchor-l1",
            Method::Il1c => "il1c",
            Method::Il1cIncremental => "il1c-incremental",
            Method::Il1cEnsemble => "il1c-ensemble",
        }
    }

    pub fn uses_epsilon(&self) -> bool {
        !matches!(self, Method::Tong)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| invalid(format!("unknown solver '{s}'")))
    }
}

/// Shared precondition of every solver: a valid config, two or more
/// microphones and recordings at least one channel long.
pub fn check_inputs(obs: &ObservationSet, cfg: &SolverConfig) -> Result<()> {
    cfg.validate()?;
    if obs.n_mics() < 2 {
        return Err(invalid("at least two microphones are required"));
    }
    if obs.len() < cfg.channel_len {
        return Err(invalid(format!(
            "recording length {} shorter than channel length {}",
            obs.len(),
            cfg.channel_len
        )));
    }
    Ok(())
}

pub(crate) fn normal_for(obs: &ObservationSet, cfg: &SolverConfig) -> Result<NormalMatrix> {
    check_inputs(obs, cfg)?;
    assemble_normal_matrix(obs, cfg.channel_len)
}

pub(crate) fn l1_mass(h: &[f64]) -> f64 {
    h.iter().map(|v| v.abs()).sum()
}
