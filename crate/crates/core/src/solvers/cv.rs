use serde::{Deserialize, Serialize};

use super::anchor::{anchor_l1_normal, nonneg_anchor_l1_normal};
use super::il1c::il1c_normal;
use super::tong::tong_from_normal;
use super::{check_inputs, Epsilon, Method, SolverConfig};
use crate::cross_relation::{assemble_normal_matrix_rows, NormalMatrix};
use crate::error::{invalid, Error, Result};
use crate::room::ObservationSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub chosen: Epsilon,
    /// Mean held-out score per grid entry, in grid order. Budgets that are
    /// infeasible on some fold score `+∞`.
    pub scores: Vec<(Epsilon, f64)>,
}

/// `{0.5, 1, 2, 4, 8}` times the L1 mass of each solver's starting point.
pub fn default_epsilon_grid() -> Vec<Epsilon> {
    [0.5, 1.0, 2.0, 4.0, 8.0]
        .into_iter()
        .map(Epsilon::InitMass)
        .collect()
}

/// Cross-validate the IL1C budget.
pub fn cross_validate_epsilon(
    obs: &ObservationSet,
    cfg: &SolverConfig,
    grid: &[Epsilon],
) -> Result<CvOutcome> {
    cross_validate_with(obs, cfg, grid, Method::Il1c)
}

/// Cross-validate the budget of `method` over contiguous folds of the
/// cross-relation equations.
///
/// Fold `f` holds out one contiguous window of equation rows; the solver
/// runs on the normal matrix of the remaining rows and is scored by the
/// held-out energy `hᵀQ_f h / ‖h‖²`, which is independent of the arbitrary
/// scale each constraint set imposes. Strategies are validated through
/// their joint IL1C problem.
pub fn cross_validate_with(
    obs: &ObservationSet,
    cfg: &SolverConfig,
    grid: &[Epsilon],
    method: Method,
) -> Result<CvOutcome> {
    check_inputs(obs, cfg)?;
    if grid.is_empty() {
        return Err(invalid("epsilon grid is empty"));
    }
    if method == Method::Tong {
        return Err(invalid("the unit-norm solver has no budget to validate"));
    }
    let l = cfg.channel_len;
    let folds = cfg.cv_folds;
    let total = obs.len() + l - 1;
    let seg = total / folds;
    if seg < 2 * l {
        return Err(invalid(format!(
            "{total} equation rows cannot be split into {folds} folds of at least {} rows",
            2 * l
        )));
    }
    let parts: Vec<NormalMatrix> = (0..folds)
        .map(|f| {
            let end = if f + 1 == folds { total } else { (f + 1) * seg };
            assemble_normal_matrix_rows(obs, l, f * seg..end)
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![0.0; grid.len()];
    for (f, held) in parts.iter().enumerate() {
        let mut train: Option<NormalMatrix> = None;
        for (g, part) in parts.iter().enumerate() {
            if g != f {
                train = Some(match train {
                    None => part.clone(),
                    Some(acc) => acc.add(part),
                });
            }
        }
        let train = train.expect("at least two folds");
        let tong = tong_from_normal(&train)?;
        for (k, eps) in grid.iter().enumerate() {
            let fold_cfg = SolverConfig {
                epsilon: *eps,
                ..cfg.clone()
            };
            let solved = match method {
                Method::AnchorL1 => anchor_l1_normal(&train, &tong, &fold_cfg, obs.sample_rate),
                Method::NonnegAnchorL1 => {
                    nonneg_anchor_l1_normal(&train, &tong, &fold_cfg, obs.sample_rate)
                }
                _ => il1c_normal(&train, &tong, &fold_cfg, obs.sample_rate),
            };
            match solved {
                Ok(res) => {
                    let h = res.airs.stacked();
                    let norm_sq: f64 = h.iter().map(|v| v * v).sum();
                    sums[k] += held.quad_form(&h) / norm_sq;
                }
                Err(Error::InfeasibleConstraints(_)) => sums[k] = f64::INFINITY,
                Err(e) => return Err(e),
            }
        }
    }

    let scores: Vec<(Epsilon, f64)> = grid
        .iter()
        .zip(&sums)
        .map(|(e, s)| (*e, s / folds as f64))
        .collect();
    let chosen = scores
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.nominal().total_cmp(&b.0.nominal())))
        .map(|s| s.0)
        .expect("grid is non-empty");
    if !scores.iter().any(|s| s.1.is_finite()) {
        return Err(Error::InfeasibleConstraints(
            "every budget in the grid is infeasible".into(),
        ));
    }
    Ok(CvOutcome { chosen, scores })
}
