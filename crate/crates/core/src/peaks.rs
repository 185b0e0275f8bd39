//! Peak extraction, peak matching and the two accuracy metrics.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::room::{AirSet, TdoaMatrix};

pub const DEFAULT_MAX_PEAKS: usize = 7;
pub const DEFAULT_REL_FLOOR: f64 = 0.05;
/// Largest offset, in samples, at which an estimated peak still matches.
pub const DEFAULT_MATCH_THRESHOLD: usize = 20;
/// Peaks this close to the strongest one are direct-path candidates.
pub const DIRECT_PATH_WINDOW_DB: f64 = 6.0;

/// Peak positions in increasing order with their positive amplitudes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PeakList {
    positions: Vec<usize>,
    amplitudes: Vec<f64>,
}

impl PeakList {
    pub fn new(positions: Vec<usize>, amplitudes: Vec<f64>) -> Result<Self> {
        if positions.len() != amplitudes.len() {
            return Err(invalid("positions and amplitudes differ in length"));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("peak positions must be strictly increasing"));
        }
        if amplitudes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(invalid("peak amplitudes must be positive"));
        }
        Ok(PeakList {
            positions,
            amplitudes,
        })
    }

    /// Every positive tap of a ground-truth response.
    pub fn from_taps(channel: &[f64]) -> Self {
        let (positions, amplitudes) = channel
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        PeakList {
            positions,
            amplitudes,
        }
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Local maxima of `channel` no weaker than `rel_floor` times the global
/// maximum, keeping the `max_peaks` strongest.
///
/// A maximum must exceed both neighbours; samples past either end count as
/// lower. A flat top is reported at its leftmost index.
pub fn find_peaks(channel: &[f64], max_peaks: usize, rel_floor: f64) -> Result<PeakList> {
    if max_peaks == 0 {
        return Err(invalid("max_peaks must be at least 1"));
    }
    if !(0.0..1.0).contains(&rel_floor) {
        return Err(invalid("rel_floor must lie in [0, 1)"));
    }
    let global = channel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(global > 0.0) {
        return Ok(PeakList::default());
    }
    let floor = rel_floor * global;
    let mut found: Vec<(usize, f64)> = Vec::new();
    let mut i = 0;
    while i < channel.len() {
        let v = channel[i];
        let mut j = i;
        while j + 1 < channel.len() && channel[j + 1] == v {
            j += 1;
        }
        let left_lower = i == 0 || channel[i - 1] < v;
        let right_lower = j + 1 == channel.len() || channel[j + 1] < v;
        if left_lower && right_lower && v > 0.0 && v >= floor {
            found.push((i, v));
        }
        i = j + 1;
    }
    found.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    found.truncate(max_peaks);
    found.sort_by_key(|p| p.0);
    let (positions, amplitudes) = found.into_iter().unzip();
    Ok(PeakList {
        positions,
        amplitudes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedPair {
    /// Index into the truth list.
    pub truth_index: usize,
    /// Index into the estimate list.
    pub estimate_index: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchReport {
    pub matched_pairs: Vec<MatchedPair>,
    pub unmatched_truth_count: usize,
    pub threshold: usize,
}

impl MatchReport {
    pub fn matched(&self) -> usize {
        self.matched_pairs.len()
    }

    pub fn offset_sum(&self) -> usize {
        self.matched_pairs.iter().map(|p| p.offset).sum()
    }
}

/// One-to-one matching of truth and estimated peaks with offsets of at most
/// `threshold` samples.
///
/// Among all such matchings the result has the most pairs and, among those,
/// the smallest total offset. On a line some optimal matching never has two
/// crossing pairs, so a dynamic program over the two sorted lists finds it.
pub fn match_peaks(truth: &PeakList, estimate: &PeakList, threshold: usize) -> MatchReport {
    let t = truth.positions();
    let e = estimate.positions();
    let (nt, ne) = (t.len(), e.len());
    // best[i][j]: (pairs, total offset) for truth[i..] against estimate[j..].
    let idx = |i: usize, j: usize| i * (ne + 1) + j;
    let mut best = vec![(0usize, 0usize); (nt + 1) * (ne + 1)];
    let better = |a: (usize, usize), b: (usize, usize)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
    for i in (0..nt).rev() {
        for j in (0..ne).rev() {
            let mut cand = best[idx(i + 1, j)];
            let skip_est = best[idx(i, j + 1)];
            if better(skip_est, cand) {
                cand = skip_est;
            }
            let d = t[i].abs_diff(e[j]);
            if d <= threshold {
                let rest = best[idx(i + 1, j + 1)];
                let take = (rest.0 + 1, rest.1 + d);
                if !better(cand, take) {
                    cand = take;
                }
            }
            best[idx(i, j)] = cand;
        }
    }
    // Walk the table preferring to take a pair whenever that is optimal.
    let mut pairs = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < nt && j < ne {
        let here = best[idx(i, j)];
        let d = t[i].abs_diff(e[j]);
        if d <= threshold {
            let rest = best[idx(i + 1, j + 1)];
            if (rest.0 + 1, rest.1 + d) == here {
                pairs.push(MatchedPair {
                    truth_index: i,
                    estimate_index: j,
                    offset: d,
                });
                i += 1;
                j += 1;
                continue;
            }
        }
        if best[idx(i + 1, j)] == here {
            i += 1;
        } else {
            j += 1;
        }
    }
    MatchReport {
        unmatched_truth_count: nt - pairs.len(),
        matched_pairs: pairs,
        threshold,
    }
}

/// Peak position mismatch `a_ppm` (samples) and unmatched fraction `a_pup`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub a_ppm: f64,
    pub a_pup: f64,
}

/// Match reports of every channel of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMatch {
    pub reports: Vec<MatchReport>,
    /// Number of ground-truth peaks over all channels of the trial.
    pub truth_peak_count: usize,
}

impl TrialMatch {
    pub fn matched(&self) -> usize {
        self.reports.iter().map(MatchReport::matched).sum()
    }

    pub fn offset_sum(&self) -> usize {
        self.reports.iter().map(MatchReport::offset_sum).sum()
    }

    /// Contribution of this trial: mean matched offset (0 without matches)
    /// and unmatched fraction.
    pub fn metrics(&self) -> Result<MetricPair> {
        trial_metrics(self.truth_peak_count, self.matched(), self.offset_sum())
    }
}

/// Contribution of one trial from its pooled counts.
pub fn trial_metrics(truth_peaks: usize, matched: usize, offset_sum: usize) -> Result<MetricPair> {
    let k = truth_peaks;
    if k == 0 {
        return Err(invalid("truth peak count must be at least 1"));
    }
    let p = matched;
    if p > k {
        return Err(invalid(format!("{p} matches exceed {k} truth peaks")));
    }
    let a_ppm = if p == 0 { 0.0 } else { offset_sum as f64 / p as f64 };
    Ok(MetricPair {
        a_ppm,
        a_pup: (k - p) as f64 / k as f64,
    })
}

/// Mean of per-trial contributions.
pub fn mean_metrics(per_trial: &[MetricPair]) -> Result<MetricPair> {
    if per_trial.is_empty() {
        return Err(invalid("at least one trial is required"));
    }
    let z = per_trial.len() as f64;
    Ok(MetricPair {
        a_ppm: per_trial.iter().map(|m| m.a_ppm).sum::<f64>() / z,
        a_pup: per_trial.iter().map(|m| m.a_pup).sum::<f64>() / z,
    })
}

/// Average the per-trial metrics over all trials.
pub fn compute_trial_metrics(trials: &[TrialMatch]) -> Result<MetricPair> {
    let per_trial: Vec<MetricPair> = trials.iter().map(TrialMatch::metrics).collect::<Result<_>>()?;
    mean_metrics(&per_trial)
}

/// Metrics over trials that all share the truth peak count `truth_peak_count`;
/// `reports[i]` holds the per-channel reports of trial `i`.
pub fn compute_metrics(reports: &[Vec<MatchReport>], truth_peak_count: usize) -> Result<MetricPair> {
    if truth_peak_count == 0 {
        return Err(invalid("truth peak count must be at least 1"));
    }
    let trials: Vec<TrialMatch> = reports
        .iter()
        .map(|r| TrialMatch {
            reports: r.clone(),
            truth_peak_count,
        })
        .collect();
    compute_trial_metrics(&trials)
}

/// Match every channel of an estimate against the truth.
pub fn match_air_sets(
    truth: &AirSet,
    estimate: &AirSet,
    max_peaks: usize,
    rel_floor: f64,
    threshold: usize,
) -> Result<TrialMatch> {
    if truth.n_channels() != estimate.n_channels() {
        return Err(invalid("truth and estimate differ in channel count"));
    }
    let mut reports = Vec::with_capacity(truth.n_channels());
    let mut count = 0;
    for (t, e) in truth.channels.iter().zip(&estimate.channels) {
        let tp = PeakList::from_taps(t);
        let ep = find_peaks(e, max_peaks, rel_floor)?;
        count += tp.len();
        reports.push(match_peaks(&tp, &ep, threshold));
    }
    Ok(TrialMatch {
        reports,
        truth_peak_count: count,
    })
}

/// Direct-path index of each channel: the earliest peak within
/// [`DIRECT_PATH_WINDOW_DB`] of the channel's strongest peak.
pub fn estimate_direct_paths(airs: &AirSet, max_peaks: usize) -> Result<Vec<Option<usize>>> {
    let ratio = 10f64.powf(-DIRECT_PATH_WINDOW_DB / 20.0);
    airs.channels
        .iter()
        .map(|c| {
            let peaks = find_peaks(c, max_peaks, DEFAULT_REL_FLOOR)?;
            let top = peaks.amplitudes().iter().copied().fold(0.0, f64::max);
            Ok(peaks
                .positions()
                .iter()
                .zip(peaks.amplitudes())
                .find(|(_, a)| **a >= ratio * top)
                .map(|(p, _)| *p))
        })
        .collect()
}

/// Pairwise TDOAs from estimated responses. Pairs involving a channel
/// without peaks are left undetermined; [`require_tdoa`] turns them into
/// an error.
pub fn estimate_tdoas(airs: &AirSet, max_peaks: usize) -> Result<TdoaMatrix> {
    Ok(TdoaMatrix::from_delays(&estimate_direct_paths(airs, max_peaks)?))
}

pub fn require_tdoa(tdoas: &TdoaMatrix, m: usize, n: usize) -> Result<i64> {
    tdoas.get(m, n).ok_or_else(|| {
        Error::EstimationFailure(format!("no peaks to estimate the TDOA between {m} and {n}"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(p: &[usize]) -> PeakList {
        PeakList::new(p.to_vec(), vec![1.0; p.len()]).unwrap()
    }

    #[test]
    fn peak_rules() {
        let p = find_peaks(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.5, 0.0], 7, 0.05).unwrap();
        assert_eq!(p.positions(), &[2, 5]);
        assert_eq!(find_peaks(&[0.0, 1.0, 1.0, 0.0], 7, 0.05).unwrap().positions(), &[1]);
        assert_eq!(find_peaks(&[0.0, 0.3, 0.0, 0.9, 0.0], 1, 0.05).unwrap().positions(), &[3]);
        assert!(find_peaks(&[0.0; 5], 7, 0.05).unwrap().is_empty());
        assert_eq!(find_peaks(&[1.0, 0.0, 0.5], 7, 0.05).unwrap().positions(), &[0, 2]);
        assert!(find_peaks(&[1.0], 0, 0.05).is_err());
    }

    #[test]
    fn matching_examples() {
        let r = match_peaks(&list(&[10, 50, 90]), &list(&[12, 49, 200]), 20);
        let got: Vec<(usize, usize, usize)> = r
            .matched_pairs
            .iter()
            .map(|p| (p.truth_index, p.estimate_index, p.offset))
            .collect();
        assert_eq!(got, vec![(0, 0, 2), (1, 1, 1)]);
        assert_eq!(r.unmatched_truth_count, 1);
        let same = match_peaks(&list(&[1, 5, 9]), &list(&[1, 5, 9]), 20);
        assert_eq!(same.offset_sum(), 0);
        assert_eq!(same.unmatched_truth_count, 0);
        assert_eq!(match_peaks(&list(&[1, 2]), &list(&[]), 20).unmatched_truth_count, 2);
        // Closest-pair-first would match 15-10 and strand 0.
        assert_eq!(match_peaks(&list(&[0, 15]), &list(&[10, 29]), 20).matched(), 2);
    }

    #[test]
    fn metric_examples() {
        let r = MatchReport {
            matched_pairs: vec![
                MatchedPair { truth_index: 0, estimate_index: 0, offset: 2 },
                MatchedPair { truth_index: 1, estimate_index: 1, offset: 1 },
            ],
            unmatched_truth_count: 1,
            threshold: 20,
        };
        let m = compute_metrics(&[vec![r]], 3).unwrap();
        assert_eq!(m.a_ppm, 1.5);
        assert!((m.a_pup - 1.0 / 3.0).abs() < 1e-15);
        let empty = MatchReport {
            matched_pairs: vec![],
            unmatched_truth_count: 3,
            threshold: 20,
        };
        let m = compute_metrics(&[vec![empty]], 3).unwrap();
        assert_eq!((m.a_ppm, m.a_pup), (0.0, 1.0));
        assert!(compute_metrics(&[vec![]], 0).is_err());
    }
}
