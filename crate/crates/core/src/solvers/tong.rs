use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use super::{normal_for, ConstraintReport, SolverConfig, SolverResult};
use crate::cross_relation::NormalMatrix;
use crate::dsp::{dot, norm2};
use crate::error::{invalid, Error, Result};
use crate::room::{AirSet, ObservationSet};

/// Eigenvalues below this fraction of the mean eigenvalue count as zero
/// when testing identifiability.
const NULL_FLOOR: f64 = 1e-12;
/// Required ratio between the second-smallest and smallest eigenvalue.
const MIN_EIGENGAP: f64 = 10.0;

/// Smallest eigenpair of a normal matrix plus the spectral facts the
/// iterative solvers reuse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TongSolution {
    /// Unit-norm stacked eigenvector, largest-magnitude entry positive.
    pub h: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_second: f64,
    pub lambda_max: f64,
    pub identifiable: bool,
}

pub fn tong_from_normal(nm: &NormalMatrix) -> Result<TongSolution> {
    let dim = nm.dim();
    if dim < 2 {
        return Err(Error::NumericalFailure("normal matrix too small".into()));
    }
    if nm.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("normal matrix is not finite".into()));
    }
    let eig = SymmetricEigen::try_new(nm.matrix.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lambda_min = eig.eigenvalues[order[0]];
    let lambda_second = eig.eigenvalues[order[1]];
    let lambda_max = eig.eigenvalues[order[dim - 1]];

    let mut h: Vec<f64> = eig.eigenvectors.column(order[0]).iter().copied().collect();
    let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    let peak = h
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0);
    let sign = if peak < 0.0 { -1.0 } else { 1.0 };
    h.iter_mut().for_each(|v| *v *= sign / norm);

    let floor = NULL_FLOOR * (nm.trace() / dim as f64).max(0.0);
    let identifiable = lambda_second > MIN_EIGENGAP * lambda_min.abs().max(floor);
    Ok(TongSolution {
        h,
        lambda_min,
        lambda_second,
        lambda_max,
        identifiable,
    })
}

/// Unit-norm minimizer of the cross-relation energy.
pub fn tong_l2(obs: &ObservationSet, cfg: &SolverConfig) -> Result<SolverResult> {
    let nm = normal_for(obs, cfg)?;
    let sol = tong_from_normal(&nm)?;
    let objective = nm.quad_form(&sol.h);
    let norm_sq: f64 = sol.h.iter().map(|v| v * v).sum();
    Ok(SolverResult {
        airs: AirSet::from_stacked(&sol.h, obs.n_mics(), obs.sample_rate)?,
        objective_trace: vec![objective],
        constraint_report: ConstraintReport {
            unit_norm: Some((norm_sq - 1.0).abs()),
            ..ConstraintReport::default()
        },
        outer_iters: 1,
        inner_iters: 0,
        converged: true,
        epsilon: None,
        anchor_index: None,
        identifiable: Some(sol.identifiable),
        slack: None,
    })
}
/// Distance between the directions of two stacked estimates:
/// `min over ± of ‖a/‖a‖ ∓ b/‖b‖‖`. Zero vectors are at distance 1.
pub fn subspace_error(a: &AirSet, b: &AirSet) -> Result<f64> {
    if a.n_channels() != b.n_channels() || a.channel_len() != b.channel_len() {
        return Err(invalid("impulse response sets differ in shape"));
    }
    let (x, y) = (a.stacked(), b.stacked());
    let (nx, ny) = (norm2(&x), norm2(&y));
    if nx == 0.0 || ny == 0.0 {
        return Ok(1.0);
    }
    let sign = if dot(&x, &y) < 0.0 { -1.0 } else { 1.0 };
    let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a / nx - sign * b / ny).collect();
    Ok(norm2(&diff))
}

