use super::anchor::nonneg_anchor_l1_normal;
use super::qp::{minimize, QpOptions, SlackSet};
use super::tong::{tong_from_normal, TongSolution};
use super::{l1_mass, normal_for, ConstraintReport, Il1cInit, SolverConfig, SolverResult};
use crate::cross_relation::NormalMatrix;
use crate::error::{invalid, Error, Result};
use crate::room::{AirSet, ObservationSet};

/// Starting point of the alternating scheme: a non-negative stacked estimate
/// whose channels become the first slack vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Il1cStart {
    pub h: Vec<f64>,
    pub identifiable: Option<bool>,
}

impl Il1cStart {
    /// Closed-form solution with negative taps clipped.
    pub fn rectified_tong(tong: &TongSolution) -> Self {
        Il1cStart {
            h: tong.h.iter().map(|v| v.max(0.0)).collect(),
            identifiable: Some(tong.identifiable),
        }
    }
}

/// Alternating slack-variable solver.
pub fn il1c(obs: &ObservationSet, cfg: &SolverConfig) -> Result<SolverResult> {
    let nm = normal_for(obs, cfg)?;
    let tong = tong_from_normal(&nm)?;
    il1c_normal(&nm, &tong, cfg, obs.sample_rate)
}

pub fn il1c_normal(
    nm: &NormalMatrix,
    tong: &TongSolution,
    cfg: &SolverConfig,
    sample_rate: u32,
) -> Result<SolverResult> {
    let start = match cfg.il1c_init {
        Il1cInit::RectifiedTong => Il1cStart::rectified_tong(tong),
        Il1cInit::NonnegAnchor => {
            let warm = nonneg_anchor_l1_normal(nm, tong, cfg, sample_rate)?;
            Il1cStart {
                h: warm.airs.stacked(),
                identifiable: Some(tong.identifiable),
            }
        }
    };
    il1c_from_start(nm, tong.lambda_max, &start, cfg, sample_rate)
}

/// Run the alternation from an explicit start. The budget is resolved
/// against the L1 mass of `start.h`; `lambda_max` must bound the spectrum
/// of `nm`.
///
/// Each slack vector is set to `h_n / ‖h_n‖²` of the current estimate, so
/// the current estimate satisfies the next step's equalities exactly and
/// the objective cannot increase between alternations.
pub fn il1c_from_start(
    nm: &NormalMatrix,
    lambda_max: f64,
    start: &Il1cStart,
    cfg: &SolverConfig,
    sample_rate: u32,
) -> Result<SolverResult> {
    cfg.validate()?;
    let l = nm.channel_len;
    if l != cfg.channel_len || start.h.len() != nm.dim() {
        return Err(invalid("start, normal matrix and config disagree on shape"));
    }
    let mut h: Vec<f64> = start.h.iter().map(|v| v.max(0.0)).collect();
    let epsilon = cfg.epsilon.resolve(l1_mass(&h));
    let opts = QpOptions {
        max_iters: cfg.max_inner_iters,
        tol: cfg.tol_inner,
        ..QpOptions::default()
    };

    let mut trace = Vec::new();
    let mut inner_iters = 0;
    let mut converged = false;
    let mut outer = 0;
    let mut slack = slack_from(&h, l, 0)?;
    while outer < cfg.max_outer_iters {
        if outer > 0 {
            slack = slack_from(&h, l, outer)?;
        }
        outer += 1;
        let set = SlackSet::new(slack.clone(), l, epsilon)?;
        let out = minimize(&nm.matrix, lambda_max, &set, &h, &opts)?;
        inner_iters += out.iters;
        trace.push(out.objective);
        let scale = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        let change = h
            .iter()
            .zip(&out.x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / scale.max(f64::MIN_POSITIVE);
        h = out.x;
        if change < cfg.tol_outer {
            converged = true;
            break;
        }
    }

    let report = ConstraintReport {
        slack_equality: Some(
            h.chunks(l)
                .zip(slack.chunks(l))
                .map(|(hn, pn)| (hn.iter().zip(pn).map(|(a, b)| a * b).sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max),
        ),
        nonnegativity: Some(h.iter().fold(0.0f64, |m, v| m.max(-v)) + 0.0),
        l1_budget: Some((h.iter().sum::<f64>() - epsilon).max(0.0)),
        ..ConstraintReport::default()
    };
    Ok(SolverResult {
        airs: AirSet::from_stacked(&h, nm.n_mics, sample_rate)?,
        objective_trace: trace,
        constraint_report: report,
        outer_iters: outer,
        inner_iters,
        converged,
        epsilon: Some(epsilon),
        anchor_index: None,
        identifiable: start.identifiable,
        slack: Some(slack),
    })
}

fn slack_from(h: &[f64], l: usize, step: usize) -> Result<Vec<f64>> {
    let mut p = Vec::with_capacity(h.len());
    for (n, hn) in h.chunks(l).enumerate() {
        let energy: f64 = hn.iter().map(|v| v * v).sum();
        if !(energy > 0.0) {
            return Err(Error::DegenerateInitialization {
                step,
                reason: format!("channel {n} estimate is identically zero"),
            });
        }
        p.extend(hn.iter().map(|v| v / energy));
    }
    Ok(p)
}
