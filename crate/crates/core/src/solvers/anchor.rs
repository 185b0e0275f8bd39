use super::qp::{minimize, AnchorSet, QpOptions};
use super::tong::{tong_from_normal, TongSolution};
use super::{l1_mass, normal_for, ConstraintReport, SolverConfig, SolverResult};
use crate::cross_relation::NormalMatrix;
use crate::error::{invalid, Error, Result};
use crate::room::{AirSet, ObservationSet};

/// `min hᵀQh` s.t. `h_1(a) = 1`, `Σ‖h_i‖₁ ≤ ε`.
pub fn anchor_l1(obs: &ObservationSet, cfg: &SolverConfig) -> Result<SolverResult> {
    let nm = normal_for(obs, cfg)?;
    let tong = tong_from_normal(&nm)?;
    anchor_l1_normal(&nm, &tong, cfg, obs.sample_rate)
}

/// As [`anchor_l1`] with every tap constrained non-negative.
pub fn nonneg_anchor_l1(obs: &ObservationSet, cfg: &SolverConfig) -> Result<SolverResult> {
    let nm = normal_for(obs, cfg)?;
    let tong = tong_from_normal(&nm)?;
    nonneg_anchor_l1_normal(&nm, &tong, cfg, obs.sample_rate)
}

pub fn anchor_l1_normal(
    nm: &NormalMatrix,
    tong: &TongSolution,
    cfg: &SolverConfig,
    sample_rate: u32,
) -> Result<SolverResult> {
    solve(nm, tong, cfg, sample_rate, false)
}

pub fn nonneg_anchor_l1_normal(
    nm: &NormalMatrix,
    tong: &TongSolution,
    cfg: &SolverConfig,
    sample_rate: u32,
) -> Result<SolverResult> {
    solve(nm, tong, cfg, sample_rate, true)
}

fn solve(
    nm: &NormalMatrix,
    tong: &TongSolution,
    cfg: &SolverConfig,
    sample_rate: u32,
    nonneg: bool,
) -> Result<SolverResult> {
    cfg.validate()?;
    let l = nm.channel_len;
    if l != cfg.channel_len {
        return Err(invalid("normal matrix and config disagree on channel length"));
    }
    let anchor = match cfg.anchor_index {
        Some(a) => a,
        None => tong.h[..l]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0),
    };
    let pivot = tong.h[anchor];
    let mut h0: Vec<f64> = if pivot.abs() > 0.0 {
        tong.h.iter().map(|v| v / pivot).collect()
    } else {
        let mut e = vec![0.0; tong.h.len()];
        e[anchor] = 1.0;
        e
    };
    if nonneg {
        h0.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let epsilon = cfg.epsilon.resolve(l1_mass(&h0));
    if !(epsilon >= 1.0) {
        return Err(Error::InfeasibleConstraints(format!(
            "L1 budget {epsilon:.6e} is below the anchor tap's unit mass"
        )));
    }

    let set = AnchorSet {
        anchor,
        radius: epsilon - 1.0,
        nonneg,
    };
    let opts = QpOptions {
        max_iters: cfg.max_inner_iters,
        tol: cfg.tol_inner,
        ..QpOptions::default()
    };
    let out = minimize(&nm.matrix, tong.lambda_max, &set, &h0, &opts)?;
    let h = out.x;

    let mass = l1_mass(&h);
    let report = ConstraintReport {
        anchor_equality: Some((h[anchor] - 1.0).abs()),
        nonnegativity: nonneg.then(|| h.iter().fold(0.0f64, |m, v| m.max(-v)) + 0.0),
        l1_budget: Some((mass - epsilon).max(0.0)),
        ..ConstraintReport::default()
    };
    Ok(SolverResult {
        airs: AirSet::from_stacked(&h, nm.n_mics, sample_rate)?,
        objective_trace: vec![out.objective],
        constraint_report: report,
        outer_iters: 1,
        inner_iters: out.iters,
        converged: out.converged,
        epsilon: Some(epsilon),
        anchor_index: Some(anchor),
        identifiable: Some(tong.identifiable),
        slack: None,
    })
}
