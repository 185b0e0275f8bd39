//! Multi-microphone strategies built from IL1C sub-problems: incremental
//! growth of the microphone set and averaging over microphone pairs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cross_relation::{assemble_normal_matrix, cross_residual, pair_list, NormalMatrix};
use crate::error::{invalid, Error, Result};
use crate::peaks::{estimate_direct_paths, DEFAULT_MAX_PEAKS};
use crate::room::{AirSet, ObservationSet};
use crate::seeding::rng_from;
use crate::solvers::{
    check_inputs, il1c, il1c_from_start, il1c_normal, tong_from_normal, ConstraintReport,
    Il1cStart, SolverConfig, SolverResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pairing {
    AllPairs,
    /// One random perfect matching; needs an even microphone count.
    RandomMatching,
}

/// Scale applied to each pairwise candidate before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateNorm {
    MaxTap,
    UnitL1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub base: SolverConfig,
    /// Seed of the incremental microphone order and of random pairings.
    pub mic_order_seed: u64,
    pub pairing: Pairing,
    pub candidate_norm: CandidateNorm,
}

impl StrategyConfig {
    pub fn new(base: SolverConfig) -> Self {
        StrategyConfig {
            mic_order_seed: base.seed,
            base,
            pairing: Pairing::AllPairs,
            candidate_norm: CandidateNorm::MaxTap,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StrategyDiagnostics {
    /// Microphone order (incremental) or solved pairs in pair order (ensemble).
    pub mic_order: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
    /// Final objective of each pair solve; `None` for failed pairs.
    pub pair_residuals: Vec<Option<f64>>,
    pub failed_pairs: Vec<((usize, usize), String)>,
    pub candidate_counts: Vec<usize>,
    /// Objective of each incremental step over its microphone subset.
    pub step_objectives: Vec<f64>,
    pub solver_passes: usize,
}

impl StrategyDiagnostics {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub result: SolverResult,
    pub diagnostics: StrategyDiagnostics,
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed));
    order
}

/// Grow the solved microphone set one microphone at a time.
///
/// The first two microphones of a seeded random order are solved by plain
/// IL1C. Each later step re-solves all microphones added so far, starting
/// the solved ones from their previous estimates and the newcomer from its
/// channel of the rectified closed-form solution on the enlarged set,
/// scaled by the ratio of the previous estimates' L1 mass to that of their
/// closed-form counterparts.
pub fn incremental_il1c(obs: &ObservationSet, cfg: &StrategyConfig) -> Result<StrategyOutcome> {
    let base = &cfg.base;
    check_inputs(obs, base)?;
    let n = obs.n_mics();
    let l = base.channel_len;
    let order = shuffled(n, cfg.mic_order_seed);
    let mut diag = StrategyDiagnostics {
        mic_order: order.clone(),
        ..StrategyDiagnostics::default()
    };

    let first = obs.select(&order[..2]);
    let mut res = il1c(&first, base)?;
    diag.step_objectives.push(res.final_objective());
    let mut passes = 1;
    let mut inner = res.inner_iters;
    let mut outer = res.outer_iters;

    for k in 3..=n {
        let sub = obs.select(&order[..k]);
        let nm = assemble_normal_matrix(&sub, l)?;
        let tong = tong_from_normal(&nm)?;
        let prev = res.airs.stacked();
        let rect: Vec<f64> = tong.h.iter().map(|v| v.max(0.0)).collect();
        let old = &rect[..prev.len()];
        let old_mass: f64 = old.iter().sum();
        let scale = if old_mass > 0.0 {
            prev.iter().sum::<f64>() / old_mass
        } else {
            0.0
        };
        let newcomer: Vec<f64> = rect[prev.len()..].iter().map(|v| v * scale).collect();
        if !newcomer.iter().any(|v| *v > 0.0) {
            return Err(Error::DegenerateInitialization {
                step: k,
                reason: format!("initial estimate of microphone {} is zero", order[k - 1]),
            });
        }
        let mut h = prev;
        h.extend(newcomer);
        let start = Il1cStart {
            h,
            identifiable: Some(tong.identifiable),
        };
        res = il1c_from_start(&nm, tong.lambda_max, &start, base, obs.sample_rate).map_err(
            |e| match e {
                Error::DegenerateInitialization { reason, .. } => {
                    Error::DegenerateInitialization { step: k, reason }
                }
                other => other,
            },
        )?;
        diag.step_objectives.push(res.final_objective());
        passes += 1;
        inner += res.inner_iters;
        outer += res.outer_iters;
    }
    diag.solver_passes = passes;

    // Back to the caller's microphone order.
    let mut inverse = vec![0; n];
    for (i, &m) in order.iter().enumerate() {
        inverse[m] = i;
    }
    let airs = res.airs.select(&inverse);
    let slack = res.slack.as_ref().map(|p| {
        let sets = AirSet::from_stacked(p, n, obs.sample_rate).map(|s| s.select(&inverse));
        sets.map(|s| s.stacked()).unwrap_or_default()
    });
    debug_assert_eq!(airs.channel_len(), l);
    Ok(StrategyOutcome {
        result: SolverResult {
            airs,
            slack,
            inner_iters: inner,
            outer_iters: outer,
            ..res
        },
        diagnostics: diag,
    })
}

/// Eigenvalues below this fraction of the mean eigenvalue are treated as
/// equal when estimating a pair's channel order.
const ORDER_FLOOR: f64 = 1e-14;
/// Ratio between consecutive eigenvalues that separates the null space.
const ORDER_GAP: f64 = 2.0;

/// `c` delayed by `d` samples (advanced for negative `d`), zero filled.
fn shifted(c: &[f64], d: isize) -> Vec<f64> {
    let l = c.len() as isize;
    (0..l)
        .map(|i| {
            let src = i - d;
            if (0..l).contains(&src) {
                c[src as usize]
            } else {
                0.0
            }
        })
        .collect()
}

/// Channel order of a two-microphone system, from the null space of its
/// normal matrix at length `L`.
///
/// Two channels of support length `L_p ≤ L` leave `L − L_p + 1` shifted
/// copies of themselves in the null space, so the nullity is read off the
/// first large ratio between consecutive eigenvalues. Without a clear gap
/// the order stays `L`: a too long order only adds shifted solutions, a too
/// short one cuts arrivals off.
pub fn pair_order(nm: &NormalMatrix) -> Result<usize> {
    let l = nm.channel_len;
    let eig = SymmetricEigen::try_new(nm.matrix.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("eigendecomposition did not converge".into()))?;
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    let floor = ORDER_FLOOR * nm.trace().max(f64::MIN_POSITIVE) / ev.len() as f64;
    let nullity = (1..=l.min(ev.len() - 1))
        .find(|&k| ev[k].max(floor) >= ORDER_GAP * ev[k - 1].max(floor))
        .unwrap_or(1);
    Ok(l + 1 - nullity)
}

/// Direct-path delays agreeing best, in the least-squares sense, with the
/// pairwise differences `(m, k, d_m − d_k)`. Each connected group of
/// microphones is shifted so that its earliest delay is 0; microphones in no
/// pair get 0.
fn consistent_delays(n: usize, tdoas: &[(usize, usize, f64)]) -> Result<Vec<f64>> {
    let mut group: Vec<usize> = (0..n).collect();
    fn root(g: &mut [usize], mut i: usize) -> usize {
        while g[i] != i {
            g[i] = g[g[i]];
            i = g[i];
        }
        i
    }
    for &(m, k, _) in tdoas {
        let (a, b) = (root(&mut group, m), root(&mut group, k));
        group[a.max(b)] = a.min(b);
    }
    let roots: Vec<usize> = (0..n).map(|i| root(&mut group, i)).collect();
    let mut out = vec![0.0; n];
    for r in 0..n {
        let members: Vec<usize> = (0..n).filter(|&i| roots[i] == r).collect();
        if members.len() < 2 {
            continue;
        }
        // Graph Laplacian system with the first member pinned to 0.
        let idx = |i: usize| members.iter().position(|&j| j == i);
        let dim = members.len() - 1;
        let mut lap = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for &(m, k, t) in tdoas {
            let (Some(a), Some(b)) = (idx(m), idx(k)) else { continue };
            for (u, v, w) in [(a, b, t), (b, a, -t)] {
                if u > 0 {
                    lap[(u - 1, u - 1)] += 1.0;
                    rhs[u - 1] += w;
                    if v > 0 {
                        lap[(u - 1, v - 1)] -= 1.0;
                    }
                }
            }
        }
        let sol = lap
            .cholesky()
            .ok_or_else(|| Error::NumericalFailure("singular pair graph".into()))?
            .solve(&rhs);
        let mut d = vec![0.0];
        d.extend(sol.iter());
        let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
        for (&i, v) in members.iter().zip(d) {
            out[i] = v - lo;
        }
    }
    Ok(out)
}

/// Solve IL1C on microphone pairs and average every microphone's
/// normalized candidates.
///
/// A pair sees only its own two channels and cannot observe their common
/// delay, so each pair is solved at its own estimated channel order (see
/// [`pair_order`]) and placed afterwards: the pairs' internal direct-path
/// differences are reconciled into one delay per microphone, and every
/// pair is shifted so that its direct paths best match those delays before
/// averaging. The earliest direct path lands at tap 0, the convention of
/// trimmed impulse responses.
pub fn ensemble_il1c(obs: &ObservationSet, cfg: &StrategyConfig) -> Result<StrategyOutcome> {
    let base = &cfg.base;
    check_inputs(obs, base)?;
    let n = obs.n_mics();
    let pairs = match cfg.pairing {
        Pairing::AllPairs => {
            if n < 3 {
                return Err(invalid("all-pairs ensembles need at least three microphones"));
            }
            pair_list(n)
        }
        Pairing::RandomMatching => {
            if !n.is_multiple_of(2) {
                return Err(invalid("random matching needs an even microphone count"));
            }
            shuffled(n, cfg.mic_order_seed)
                .chunks(2)
                .map(|c| (c[0].min(c[1]), c[0].max(c[1])))
                .collect()
        }
    };

    let solved: Vec<Result<SolverResult>> = pairs
        .par_iter()
        .map(|&(m, k)| {
            let sub = obs.select(&[m, k]);
            let full = assemble_normal_matrix(&sub, base.channel_len)?;
            let order = pair_order(&full)?;
            let nm = if order == base.channel_len {
                full
            } else {
                assemble_normal_matrix(&sub, order)?
            };
            let tong = tong_from_normal(&nm)?;
            let cfg = SolverConfig {
                channel_len: order,
                ..base.clone()
            };
            let mut r = il1c_normal(&nm, &tong, &cfg, obs.sample_rate)?;
            for c in &mut r.airs.channels {
                c.resize(base.channel_len, 0.0);
            }
            Ok(r)
        })
        .collect();

    let l = base.channel_len;
    let mut diag = StrategyDiagnostics {
        pairs: pairs.clone(),
        solver_passes: pairs.len(),
        ..StrategyDiagnostics::default()
    };
    let mut inner = 0;
    let mut all_converged = true;
    // (m, k, candidates of m and k, pair-local direct paths of m and k)
    let mut usable = Vec::with_capacity(pairs.len());
    for (&(m, k), res) in pairs.iter().zip(solved) {
        let r = match res {
            Ok(r) => r,
            Err(e) => {
                log::warn!("pair ({m}, {k}) dropped: {e}");
                diag.pair_residuals.push(None);
                diag.failed_pairs.push(((m, k), e.to_string()));
                continue;
            }
        };
        let cands: Vec<Vec<f64>> = r
            .airs
            .channels
            .iter()
            .map(|c| {
                let norm = match cfg.candidate_norm {
                    CandidateNorm::MaxTap => c.iter().copied().fold(0.0, f64::max),
                    CandidateNorm::UnitL1 => c.iter().map(|v| v.abs()).sum(),
                };
                c.iter().map(|v| if norm > 0.0 { v / norm } else { 0.0 }).collect()
            })
            .collect();
        let direct = estimate_direct_paths(&r.airs, DEFAULT_MAX_PEAKS)?;
        let (Some(dm), Some(dk)) = (direct[0], direct[1]) else {
            log::warn!("pair ({m}, {k}) dropped: no direct path");
            diag.pair_residuals.push(None);
            diag.failed_pairs.push(((m, k), "no direct path in a candidate".into()));
            continue;
        };
        diag.pair_residuals.push(Some(r.final_objective()));
        inner += r.inner_iters;
        all_converged &= r.converged;
        usable.push((m, k, cands, dm as f64, dk as f64));
    }

    let tdoas: Vec<(usize, usize, f64)> = usable.iter().map(|u| (u.0, u.1, u.3 - u.4)).collect();
    let offsets = consistent_delays(n, &tdoas)?;
    let mut sums = vec![vec![0.0; l]; n];
    let mut counts = vec![0usize; n];
    for (m, k, cands, dm, dk) in usable {
        let d = (((offsets[m] - dm) + (offsets[k] - dk)) / 2.0).round() as isize;
        for (mic, c) in [(m, &cands[0]), (k, &cands[1])] {
            sums[mic].iter_mut().zip(shifted(c, d)).for_each(|(s, v)| *s += v);
            counts[mic] += 1;
        }
    }
    if let Some(mic) = counts.iter().position(|c| *c == 0) {
        return Err(Error::EnsembleFailure(format!(
            "microphone {mic} has no usable candidate"
        )));
    }
    let channels: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    diag.candidate_counts = counts;
    let airs = AirSet::new(channels, obs.sample_rate)?;
    let objective = cross_residual(obs, &airs)?;
    let report = ConstraintReport {
        nonnegativity: Some(airs.channels.iter().flatten().fold(0.0f64, |m, v| m.max(-v)) + 0.0),
        ..ConstraintReport::default()
    };
    Ok(StrategyOutcome {
        result: SolverResult {
            airs,
            objective_trace: vec![objective],
            constraint_report: report,
            outer_iters: pairs.len(),
            inner_iters: inner,
            converged: all_converged,
            epsilon: None,
            anchor_index: None,
            identifiable: None,
            slack: None,
        },
        diagnostics: diag,
    })
}
