//! Monte-Carlo benchmark: simulated rooms, noisy recordings, blind
//! estimation and peak-matching accuracy over a grid of sources, noise
//! ratios and microphone counts.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kv;
use crate::peaks::{
    estimate_direct_paths, mean_metrics, trial_metrics, match_air_sets, MetricPair, TrialMatch,
    DEFAULT_MATCH_THRESHOLD, DEFAULT_MAX_PEAKS, DEFAULT_REL_FLOOR,
};
use crate::room::{
    direct_path_index, image_method_air, random_geometry, synthesize_observations,
    trim_common_support, AirSet, ObservationSet, RoomConfig,
};
use crate::seeding::{child_seed, rng_from, SeedHasher};
use crate::signal::{gen_pink_noise, gen_white_noise, inject_noise, load_audio_file, NoiseSpec, SourceSignal};
use crate::solvers::{
    anchor_l1, cross_validate_with, default_epsilon_grid, il1c, nonneg_anchor_l1, tong_l2,
    Epsilon, Method, SolverConfig, SolverResult,
};
use crate::strategies::{ensemble_il1c, incremental_il1c, CandidateNorm, Pairing, StrategyConfig};

pub const REPORT_JSON: &str = "report.json";
pub const CELLS_CSV: &str = "cells.csv";
pub const RAW_TRIALS_CSV: &str = "raw_trials.csv";
pub const TABLES_MD: &str = "tables.md";

/// Cells with a larger share of failed trials are reported invalid.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

const BARS: [char; 8] = ['▁', '▂', '▃', '▄', '▅', '▆', '▇', '█'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalSpec {
    White,
    Pink,
    /// A mono audio file; every trial uses a random excerpt.
    File(PathBuf),
}

impl SignalSpec {
    pub fn id(&self) -> String {
        match self {
            SignalSpec::White => "white".into(),
            SignalSpec::Pink => "pink".into(),
            SignalSpec::File(p) => format!("file:{}", p.display()),
        }
    }
}

impl std::fmt::Display for SignalSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.id())
    }
}

impl std::str::FromStr for SignalSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(SignalSpec::White),
            "pink" => Ok(SignalSpec::Pink),
            _ => s
                .strip_prefix("file:")
                .map(|p| SignalSpec::File(PathBuf::from(p)))
                .ok_or_else(|| invalid(format!("unknown signal '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    APpm,
    APup,
}

impl Metric {
    pub const BOTH: [Metric; 2] = [Metric::APpm, Metric::APup];

    pub fn id(&self) -> &'static str {
        match self {
            Metric::APpm => "a_ppm",
            Metric::APup => "a_pup",
        }
    }

    pub fn of(&self, m: &MetricPair) -> f64 {
        match self {
            Metric::APpm => m.a_ppm,
            Metric::APup => m.a_pup,
        }
    }
}

/// Budget used by every budgeted solver in a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EpsilonMode {
    /// Cross-validated per trial over the grid.
    Auto(Vec<Epsilon>),
    Fixed(Epsilon),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub signals: Vec<SignalSpec>,
    pub s_values: Vec<f64>,
    pub n_mics_values: Vec<usize>,
    pub z_trials: usize,
    pub methods: Vec<Method>,
    pub room: RoomConfig,
    /// Solver settings; `channel_len` is replaced in every trial (see
    /// `trim_support`).
    pub solver_cfg: SolverConfig,
    pub master_seed: u64,
    /// Source length K in samples.
    pub signal_len: usize,
    /// Solve for the trimmed support of the simulated responses (delay
    /// common to all microphones and common trailing zeros removed) rather
    /// than the room's worst-case length.
    pub trim_support: bool,
    pub epsilon: EpsilonMode,
    /// Noise ratio at which improvement statistics are computed.
    pub reference_s: f64,
    pub max_peaks: usize,
    pub rel_floor: f64,
    pub match_threshold: usize,
    pub pairing: Pairing,
    pub candidate_norm: CandidateNorm,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            signals: vec![SignalSpec::White, SignalSpec::Pink],
            s_values: vec![0.01, 0.1, 0.2, 0.5, 1.0],
            n_mics_values: vec![2, 3, 4, 5, 10],
            z_trials: 50,
            methods: vec![Method::Il1c],
            room: RoomConfig::desk(),
            solver_cfg: SolverConfig::default(),
            master_seed: 0,
            signal_len: 2048,
            trim_support: true,
            epsilon: EpsilonMode::Auto(default_epsilon_grid()),
            reference_s: 1.0,
            max_peaks: DEFAULT_MAX_PEAKS,
            rel_floor: DEFAULT_REL_FLOOR,
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            pairing: Pairing::AllPairs,
            candidate_norm: CandidateNorm::MaxTap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Ten trials, two to four microphones, two noise ratios, both synthetic
    /// sources: a few minutes on one core.
    Desk,
    /// The full grid of the original study (five noise ratios, up to ten
    /// microphones, fifty trials) with the synthetic sources.
    PaperShape,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper-shape" => Ok(Preset::PaperShape),
            _ => Err(invalid(format!("unknown preset '{s}'"))),
        }
    }
}

impl ExperimentConfig {
    pub fn preset(p: Preset, master_seed: u64) -> Self {
        match p {
            Preset::Desk => ExperimentConfig {
                s_values: vec![0.01, 1.0],
                n_mics_values: vec![2, 3, 4],
                z_trials: 10,
                master_seed,
                ..ExperimentConfig::default()
            },
            Preset::PaperShape => ExperimentConfig {
                master_seed,
                ..ExperimentConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.signals.is_empty() || self.s_values.is_empty() || self.n_mics_values.is_empty() {
            return Err(invalid("signals, s_values and n_mics_values must be non-empty"));
        }
        if self.methods.is_empty() {
            return Err(invalid("at least one method is required"));
        }
        if self.z_trials == 0 {
            return Err(invalid("z_trials must be at least 1"));
        }
        if self.s_values.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid("noise ratios must be finite and non-negative"));
        }
        if self.n_mics_values.iter().any(|n| *n < 2) {
            return Err(invalid("microphone counts must be at least 2"));
        }
        if self.signal_len == 0 {
            return Err(invalid("signal_len must be at least 1"));
        }
        if self.max_peaks == 0 || !(0.0..1.0).contains(&self.rel_floor) {
            return Err(invalid("max_peaks must be positive and rel_floor in [0, 1)"));
        }
        if let EpsilonMode::Auto(grid) = &self.epsilon {
            if grid.is_empty() {
                return Err(invalid("epsilon grid is empty"));
            }
        }
        self.room.validate()?;
        // The per-trial channel length is substituted before validation.
        SolverConfig {
            channel_len: self.room.max_channel_len(),
            ..self.solver_cfg.clone()
        }
        .validate()
    }

    /// Parse the plain-text experiment format: the solver keys of
    /// [`SolverConfig::from_text`] plus the keys written by [`Self::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for e in kv::parse(text)? {
            if cfg.solver_cfg.apply(&e)? {
                continue;
            }
            match e.key.as_str() {
                "signals" => cfg.signals = e.parse_list()?,
                "s_values" => cfg.s_values = e.parse_list()?,
                "n_mics_values" => cfg.n_mics_values = e.parse_list()?,
                "z_trials" => cfg.z_trials = e.parse()?,
                "methods" | "solver" => cfg.methods = e.parse_list()?,
                "master_seed" => cfg.master_seed = e.parse()?,
                "signal_len" => cfg.signal_len = e.parse()?,
                "trim_support" => cfg.trim_support = e.parse()?,
                "epsilon_mode" => {
                    cfg.epsilon = match e.value.as_str() {
                        "auto" => EpsilonMode::Auto(default_epsilon_grid()),
                        v => EpsilonMode::Fixed(v.parse().map_err(|_| e.error("bad epsilon"))?),
                    }
                }
                "epsilon_grid" => cfg.epsilon = EpsilonMode::Auto(e.parse_list()?),
                "reference_s" => cfg.reference_s = e.parse()?,
                "max_peaks" => cfg.max_peaks = e.parse()?,
                "rel_floor" => cfg.rel_floor = e.parse()?,
                "match_threshold" => cfg.match_threshold = e.parse()?,
                "pairing" => {
                    cfg.pairing = match e.value.as_str() {
                        "all-pairs" => Pairing::AllPairs,
                        "random-matching" => Pairing::RandomMatching,
                        _ => return Err(e.error("expected all-pairs or random-matching")),
                    }
                }
                "candidate_norm" => {
                    cfg.candidate_norm = match e.value.as_str() {
                        "max-tap" => CandidateNorm::MaxTap,
                        "unit-l1" => CandidateNorm::UnitL1,
                        _ => return Err(e.error("expected max-tap or unit-l1")),
                    }
                }
                "room_dimensions" => {
                    let d: Vec<f64> = e.parse_list()?;
                    cfg.room.dimensions = d
                        .try_into()
                        .map_err(|_| e.error("expected three dimensions"))?;
                }
                "reflection_coeff" => cfg.room.reflection_coeff = e.parse()?,
                "speed_of_sound" => cfg.room.speed_of_sound = e.parse()?,
                "sample_rate" => cfg.room.sample_rate = e.parse()?,
                _ => return Err(e.error("unknown key")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let pairing = match self.pairing {
            Pairing::AllPairs => "all-pairs",
            Pairing::RandomMatching => "random-matching",
        };
        let norm = match self.candidate_norm {
            CandidateNorm::MaxTap => "max-tap",
            CandidateNorm::UnitL1 => "unit-l1",
        };
        let _ = writeln!(out, "signals = {}", kv::join(&self.signals));
        let _ = writeln!(out, "s_values = {}", kv::join(&self.s_values));
        let _ = writeln!(out, "n_mics_values = {}", kv::join(&self.n_mics_values));
        let _ = writeln!(out, "z_trials = {}", self.z_trials);
        let _ = writeln!(out, "methods = {}", kv::join(&self.methods));
        let _ = writeln!(out, "master_seed = {}", self.master_seed);
        let _ = writeln!(out, "signal_len = {}", self.signal_len);
        let _ = writeln!(out, "trim_support = {}", self.trim_support);
        match &self.epsilon {
            EpsilonMode::Auto(g) => {
                let _ = writeln!(out, "epsilon_grid = {}", kv::join(g));
            }
            EpsilonMode::Fixed(e) => {
                let _ = writeln!(out, "epsilon_mode = {e}");
            }
        }
        let _ = writeln!(out, "reference_s = {}", self.reference_s);
        let _ = writeln!(out, "max_peaks = {}", self.max_peaks);
        let _ = writeln!(out, "rel_floor = {}", self.rel_floor);
        let _ = writeln!(out, "match_threshold = {}", self.match_threshold);
        let _ = writeln!(out, "pairing = {pairing}");
        let _ = writeln!(out, "candidate_norm = {norm}");
        let _ = writeln!(out, "room_dimensions = {}", kv::join(&self.room.dimensions));
        let _ = writeln!(out, "reflection_coeff = {}", self.room.reflection_coeff);
        let _ = writeln!(out, "speed_of_sound = {}", self.room.speed_of_sound);
        let _ = writeln!(out, "sample_rate = {}", self.room.sample_rate);
        for line in self.solver_cfg.to_text().lines() {
            if !line.starts_with("channel_len") && !line.starts_with("epsilon") {
                let _ = writeln!(out, "{line}");
            }
        }
        out
    }
}

/// Seed of one trial, derived from the cell coordinates only, so every
/// method sees the same room, source and noise.
pub fn trial_seed(master_seed: u64, signal: &str, s: f64, n_mics: usize, trial: usize) -> u64 {
    SeedHasher::new(master_seed)
        .write_str(signal)
        .write_f64(s)
        .write_u64(n_mics as u64)
        .write_u64(trial as u64)
        .finish()
}

/// One method on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub signal: String,
    pub s: f64,
    pub n_mics: usize,
    pub method: Method,
    pub trial: usize,
    pub seed: u64,
    /// `None` on success, the error code otherwise.
    pub error: Option<String>,
    pub truth_peaks: usize,
    pub matched: usize,
    pub offset_sum: usize,
    pub metrics: Option<MetricPair>,
    pub epsilon: Option<f64>,
    /// Largest absolute TDOA error over microphone pairs, in samples.
    pub tdoa_max_error: Option<u64>,
}

impl TrialRecord {
    fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub signal: String,
    pub s: f64,
    pub n_mics: usize,
    pub method: Method,
    pub trials: usize,
    pub failed: usize,
    pub valid: bool,
    /// Averages over the successful trials; `None` for invalid cells.
    pub metrics: Option<MetricPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub signal: String,
    pub method: Method,
    pub metric: Metric,
    pub reference_s: f64,
    pub delta_avg: Option<f64>,
    /// Percent improvement of the best microphone count over two.
    pub delta_oracle: Option<f64>,
    pub oracle_n: Option<usize>,
    /// Why a statistic is missing.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellReport>,
    pub trials: Vec<TrialRecord>,
    pub improvements: Vec<Improvement>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn cell(&self, signal: &str, s: f64, n_mics: usize, method: Method) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.signal == signal && c.s == s && c.n_mics == n_mics && c.method == method)
    }

    /// Cells of one signal and method.
    pub fn series(&self, signal: &str, method: Method) -> Vec<CellReport> {
        self.cells
            .iter()
            .filter(|c| c.signal == signal && c.method == method)
            .cloned()
            .collect()
    }
}

/// Baseline and per-count metric values at `reference_s`.
fn baseline_and_rest(cells: &[CellReport], metric: Metric, reference_s: f64) -> Result<(f64, Vec<(usize, f64)>)> {
    let at = |n: usize| {
        cells
            .iter()
            .find(|c| c.s == reference_s && c.n_mics == n)
            .and_then(|c| c.metrics.as_ref().filter(|_| c.valid))
            .map(|m| metric.of(m))
    };
    let base = at(2).ok_or_else(|| invalid(format!("no valid two-microphone cell at s = {reference_s}")))?;
    let mut ns: Vec<usize> = cells
        .iter()
        .filter(|c| c.s == reference_s && c.n_mics > 2)
        .map(|c| c.n_mics)
        .collect();
    ns.sort_unstable();
    ns.dedup();
    let rest: Vec<(usize, f64)> = ns.into_iter().filter_map(|n| at(n).map(|v| (n, v))).collect();
    if rest.is_empty() {
        return Err(invalid(format!("no valid cell with more than two microphones at s = {reference_s}")));
    }
    Ok((base, rest))
}

/// Mean over microphone counts above two of `metric(2) − metric(N)`.
pub fn delta_avg(cells: &[CellReport], metric: Metric, reference_s: f64) -> Result<f64> {
    let (base, rest) = baseline_and_rest(cells, metric, reference_s)?;
    Ok(rest.iter().map(|(_, v)| base - v).sum::<f64>() / rest.len() as f64)
}

/// Percent improvement of the best count above two over the baseline, and
/// that count (smallest on ties).
pub fn delta_oracle(cells: &[CellReport], metric: Metric, reference_s: f64) -> Result<(f64, usize)> {
    let (base, rest) = baseline_and_rest(cells, metric, reference_s)?;
    let (n, best) = rest
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("non-empty");
    if base == 0.0 {
        return Err(Error::UndefinedRelativeImprovement);
    }
    Ok((100.0 * (base - best) / base, n))
}

struct Sources {
    files: HashMap<PathBuf, Arc<SourceSignal>>,
}

impl Sources {
    fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let mut files = HashMap::new();
        for s in &cfg.signals {
            if let SignalSpec::File(p) = s {
                let sig = load_audio_file(p)?;
                if sig.len() < cfg.signal_len {
                    return Err(invalid(format!(
                        "{} has {} samples, fewer than signal_len {}",
                        p.display(),
                        sig.len(),
                        cfg.signal_len
                    )));
                }
                files.insert(p.clone(), Arc::new(sig));
            }
        }
        Ok(Sources { files })
    }

    fn draw(&self, spec: &SignalSpec, len: usize, sample_rate: u32, seed: u64) -> Result<SourceSignal> {
        let raw = match spec {
            SignalSpec::White => gen_white_noise(len, seed)?,
            SignalSpec::Pink => gen_pink_noise(len, seed)?,
            SignalSpec::File(p) => {
                let sig = &self.files[p];
                let start = rng_from(seed).random_range(0..=sig.len() - len);
                return sig.excerpt(start, len);
            }
        };
        SourceSignal::new(raw.samples().to_vec(), sample_rate, raw.label())
    }
}

/// One simulated trial: the truth and the noisy recordings.
#[derive(Debug, Clone)]
pub struct TrialInstance {
    pub truth: AirSet,
    pub observations: ObservationSet,
    pub seed: u64,
}

pub fn simulate_trial(
    cfg: &ExperimentConfig,
    signal: &SignalSpec,
    s: f64,
    n_mics: usize,
    trial: usize,
) -> Result<TrialInstance> {
    let sources = Sources::load(cfg)?;
    simulate_with(cfg, &sources, signal, s, n_mics, trial)
}

fn simulate_with(
    cfg: &ExperimentConfig,
    sources: &Sources,
    signal: &SignalSpec,
    s: f64,
    n_mics: usize,
    trial: usize,
) -> Result<TrialInstance> {
    let seed = trial_seed(cfg.master_seed, &signal.id(), s, n_mics, trial);
    let geom = random_geometry(&cfg.room, n_mics, child_seed(seed, 1))?;
    let full = image_method_air(&cfg.room, &geom, cfg.room.max_channel_len())?;
    let truth = if cfg.trim_support {
        trim_common_support(&full)?.0
    } else {
        full
    };
    let src = sources.draw(signal, cfg.signal_len, cfg.room.sample_rate, child_seed(seed, 2))?;
    let clean = synthesize_observations(&truth, &src)?;
    let observations = inject_noise(
        &clean,
        &NoiseSpec {
            ratio_s: s,
            seed: child_seed(seed, 3),
        },
    )?;
    Ok(TrialInstance {
        truth,
        observations,
        seed,
    })
}

/// Solve one trial with `method`, cross-validating the budget when
/// configured. Strategies reuse the budget validated on the joint problem.
pub fn solve_trial(
    cfg: &ExperimentConfig,
    inst: &TrialInstance,
    method: Method,
    cv_cache: &mut BTreeMap<&'static str, Epsilon>,
) -> Result<SolverResult> {
    let obs = &inst.observations;
    let mut scfg = SolverConfig {
        channel_len: inst.truth.channel_len(),
        seed: inst.seed,
        ..cfg.solver_cfg.clone()
    };
    if method.uses_epsilon() {
        scfg.epsilon = match &cfg.epsilon {
            EpsilonMode::Fixed(e) => *e,
            EpsilonMode::Auto(grid) => {
                let cv_method = match method {
                    Method::AnchorL1 | Method::NonnegAnchorL1 => method,
                    _ => Method::Il1c,
                };
                match cv_cache.get(cv_method.id()) {
                    Some(e) => *e,
                    None => {
                        let e = cross_validate_with(obs, &scfg, grid, cv_method)?.chosen;
                        cv_cache.insert(cv_method.id(), e);
                        e
                    }
                }
            }
        };
    }
    let strategy = StrategyConfig {
        mic_order_seed: child_seed(inst.seed, 4),
        pairing: cfg.pairing,
        candidate_norm: cfg.candidate_norm,
        base: scfg.clone(),
    };
    match method {
        Method::Tong => tong_l2(obs, &scfg),
        Method::AnchorL1 => anchor_l1(obs, &scfg),
        Method::NonnegAnchorL1 => nonneg_anchor_l1(obs, &scfg),
        Method::Il1c => il1c(obs, &scfg),
        Method::Il1cIncremental => incremental_il1c(obs, &strategy).map(|o| o.result),
        Method::Il1cEnsemble => ensemble_il1c(obs, &strategy).map(|o| o.result),
    }
}

fn tdoa_max_error(truth: &AirSet, estimate: &AirSet, max_peaks: usize) -> Result<Option<u64>> {
    let t: Vec<Option<usize>> = truth.channels.iter().map(|c| direct_path_index(c)).collect();
    let e = estimate_direct_paths(estimate, max_peaks)?;
    let mut worst = 0u64;
    for m in 0..t.len() {
        for n in m + 1..t.len() {
            match (t[m], t[n], e[m], e[n]) {
                (Some(a), Some(b), Some(c), Some(d)) => {
                    let err = ((a as i64 - b as i64) - (c as i64 - d as i64)).unsigned_abs();
                    worst = worst.max(err);
                }
                _ => return Ok(None),
            }
        }
    }
    Ok(Some(worst))
}

fn run_trial(cfg: &ExperimentConfig, sources: &Sources, signal: &SignalSpec, s: f64, n: usize, trial: usize) -> Vec<TrialRecord> {
    let sid = signal.id();
    let seed = trial_seed(cfg.master_seed, &sid, s, n, trial);
    let record = |method: Method, outcome: Result<(TrialMatch, Option<f64>, Option<u64>)>| match outcome {
        Ok((tm, epsilon, tdoa)) => TrialRecord {
            signal: sid.clone(),
            s,
            n_mics: n,
            method,
            trial,
            seed,
            error: None,
            truth_peaks: tm.truth_peak_count,
            matched: tm.matched(),
            offset_sum: tm.offset_sum(),
            metrics: tm.metrics().ok(),
            epsilon,
            tdoa_max_error: tdoa,
        },
        Err(e) => {
            log::info!("{sid} s={s} N={n} trial {trial} {method}: {e}");
            TrialRecord {
                signal: sid.clone(),
                s,
                n_mics: n,
                method,
                trial,
                seed,
                error: Some(e.code().to_string()),
                truth_peaks: 0,
                matched: 0,
                offset_sum: 0,
                metrics: None,
                epsilon: None,
                tdoa_max_error: None,
            }
        }
    };
    let inst = match simulate_with(cfg, sources, signal, s, n, trial) {
        Ok(i) => i,
        Err(e) => {
            let code = e.code();
            return cfg
                .methods
                .iter()
                .map(|&m| TrialRecord {
                    error: Some(code.to_string()),
                    ..record(m, Err(invalid(e.to_string())))
                })
                .collect();
        }
    };
    let mut cache = BTreeMap::new();
    cfg.methods
        .iter()
        .map(|&m| {
            let outcome = solve_trial(cfg, &inst, m, &mut cache).and_then(|res| {
                let tm = match_air_sets(&inst.truth, &res.airs, cfg.max_peaks, cfg.rel_floor, cfg.match_threshold)?;
                let tdoa = tdoa_max_error(&inst.truth, &res.airs, cfg.max_peaks)?;
                Ok((tm, res.epsilon, tdoa))
            });
            record(m, outcome)
        })
        .collect()
}

/// Aggregate raw trial rows into cells, in grid order.
pub fn aggregate(cfg: &ExperimentConfig, trials: &[TrialRecord]) -> Result<Vec<CellReport>> {
    let mut cells = Vec::new();
    for signal in &cfg.signals {
        let sid = signal.id();
        for &s in &cfg.s_values {
            for &n in &cfg.n_mics_values {
                for &method in &cfg.methods {
                    let rows: Vec<&TrialRecord> = trials
                        .iter()
                        .filter(|t| t.signal == sid && t.s == s && t.n_mics == n && t.method == method)
                        .collect();
                    let ok: Vec<MetricPair> = rows
                        .iter()
                        .filter(|t| t.succeeded())
                        .map(|t| trial_metrics(t.truth_peaks, t.matched, t.offset_sum))
                        .collect::<Result<_>>()?;
                    let failed = rows.len() - ok.len();
                    let valid = !ok.is_empty() && (failed as f64) <= MAX_FAILED_FRACTION * rows.len() as f64;
                    let metrics = if valid { Some(mean_metrics(&ok)?) } else { None };
                    cells.push(CellReport {
                        signal: sid.clone(),
                        s,
                        n_mics: n,
                        method,
                        trials: rows.len(),
                        failed,
                        valid,
                        metrics,
                    });
                }
            }
        }
    }
    Ok(cells)
}

fn improvements(cfg: &ExperimentConfig, cells: &[CellReport]) -> Vec<Improvement> {
    let mut out = Vec::new();
    if !cfg.n_mics_values.contains(&2) || !cfg.n_mics_values.iter().any(|n| *n > 2) {
        return out;
    }
    for signal in &cfg.signals {
        let sid = signal.id();
        for &method in &cfg.methods {
            let series: Vec<CellReport> = cells
                .iter()
                .filter(|c| c.signal == sid && c.method == method)
                .cloned()
                .collect();
            for metric in Metric::BOTH {
                let mut imp = Improvement {
                    signal: sid.clone(),
                    method,
                    metric,
                    reference_s: cfg.reference_s,
                    delta_avg: None,
                    delta_oracle: None,
                    oracle_n: None,
                    note: None,
                };
                match delta_avg(&series, metric, cfg.reference_s) {
                    Ok(v) => imp.delta_avg = Some(v),
                    Err(e) => imp.note = Some(e.to_string()),
                }
                match delta_oracle(&series, metric, cfg.reference_s) {
                    Ok((v, n)) => {
                        imp.delta_oracle = Some(v);
                        imp.oracle_n = Some(n);
                    }
                    Err(e) => imp.note = Some(e.to_string()),
                }
                out.push(imp);
            }
        }
    }
    out
}

/// Run the whole grid on all available cores.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    run_experiment_with(cfg, jobs)
}

/// Run the whole grid on `jobs` worker threads. Results do not depend on
/// `jobs`.
pub fn run_experiment_with(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    if jobs == 0 {
        return Err(invalid("jobs must be at least 1"));
    }
    let sources = Sources::load(cfg)?;
    let mut items = Vec::new();
    for signal in &cfg.signals {
        for &s in &cfg.s_values {
            for &n in &cfg.n_mics_values {
                for t in 0..cfg.z_trials {
                    items.push((signal, s, n, t));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let trials: Vec<TrialRecord> = pool.install(|| {
        items
            .par_iter()
            .map(|&(sig, s, n, t)| run_trial(cfg, &sources, sig, s, n, t))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    });
    let cells = aggregate(cfg, &trials)?;
    let improvements = improvements(cfg, &cells);
    Ok(ExperimentReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        cells,
        trials,
        improvements,
    })
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn cells_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("signal,s,n_mics,method,metric,value,trials,failed,valid\n");
    for c in &report.cells {
        for metric in Metric::BOTH {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.signal,
                c.s,
                c.n_mics,
                c.method,
                metric.id(),
                opt(c.metrics.as_ref().map(|m| metric.of(m))),
                c.trials,
                c.failed,
                c.valid
            );
        }
    }
    out
}

pub fn raw_trials_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(
        "signal,s,n_mics,method,trial,seed,status,truth_peaks,matched,offset_sum,a_ppm,a_pup,epsilon,tdoa_max_error\n",
    );
    for t in &report.trials {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            t.signal,
            t.s,
            t.n_mics,
            t.method,
            t.trial,
            t.seed,
            t.error.as_deref().unwrap_or("ok"),
            t.truth_peaks,
            t.matched,
            t.offset_sum,
            opt(t.metrics.map(|m| m.a_ppm)),
            opt(t.metrics.map(|m| m.a_pup)),
            opt(t.epsilon),
            opt(t.tdoa_max_error)
        );
    }
    out
}

fn bar(v: f64, max: f64) -> char {
    if !(max > 0.0) {
        return BARS[0];
    }
    let k = ((v / max) * (BARS.len() - 1) as f64).round() as usize;
    BARS[k.min(BARS.len() - 1)]
}

/// Markdown grids: for every method and metric one table with a row per
/// (signal, N) and a column per noise ratio in ascending order, plus the
/// improvement summary.
pub fn tables_markdown(report: &ExperimentReport) -> String {
    let cfg = &report.config;
    let mut s_values = cfg.s_values.clone();
    s_values.sort_by(f64::total_cmp);
    s_values.dedup();
    let mut out = String::new();
    for &method in &cfg.methods {
        for metric in Metric::BOTH {
            let _ = writeln!(out, "## {}, {}\n", metric.id(), method);
            let head: Vec<String> = s_values.iter().map(|s| format!("s={s}")).collect();
            let _ = writeln!(out, "| signal | N | {} |", head.join(" | "));
            let _ = writeln!(out, "|---|---|{}", "---|".repeat(s_values.len()));
            for signal in &cfg.signals {
                let sid = signal.id();
                let max = report
                    .cells
                    .iter()
                    .filter(|c| c.signal == sid && c.method == method)
                    .filter_map(|c| c.metrics.as_ref().map(|m| metric.of(m)))
                    .fold(0.0, f64::max);
                for &n in &cfg.n_mics_values {
                    let row: Vec<String> = s_values
                        .iter()
                        .map(|&s| match report.cell(&sid, s, n, method) {
                            Some(CellReport { metrics: Some(m), .. }) => {
                                let v = metric.of(m);
                                format!("{v:.4} {}", bar(v, max))
                            }
                            Some(_) => "invalid".to_string(),
                            None => String::new(),
                        })
                        .collect();
                    let _ = writeln!(out, "| {sid} | {n} | {} |", row.join(" | "));
                }
            }
            out.push('\n');
        }
    }
    out.push_str(&improvements_markdown(report));
    out
}

/// The δ_avg / Δ^O summary table; empty when there are no statistics.
pub fn improvements_markdown(report: &ExperimentReport) -> String {
    let mut out = String::new();
    if report.improvements.is_empty() {
        return out;
    }
    let _ = writeln!(out, "## improvements over N=2 at s={}\n", report.config.reference_s);
    out.push_str("| signal | method | metric | δ_avg | Δ^O (%) | N* |\n|---|---|---|---|---|---|\n");
    for imp in &report.improvements {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            imp.signal,
            imp.method,
            imp.metric.id(),
            imp.delta_avg.map_or_else(|| "n/a".into(), |v| format!("{v:+.4}")),
            imp.delta_oracle.map_or_else(|| "n/a".into(), |v| format!("{v:+.1}")),
            opt(imp.oracle_n)
        );
    }
    out
}

/// Write `report.json`, `cells.csv`, `raw_trials.csv` and `tables.md`.
pub fn emit_report(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join(REPORT_JSON), report.to_json()?)?;
    fs::write(dir.join(CELLS_CSV), cells_csv(report))?;
    fs::write(dir.join(RAW_TRIALS_CSV), raw_trials_csv(report))?;
    fs::write(dir.join(TABLES_MD), tables_markdown(report))?;
    Ok(())
}

pub fn load_report(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let file = if path.is_dir() { path.join(REPORT_JSON) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(file.clone()),
        _ => Error::Io(e),
    })?;
    ExperimentReport::from_json(&text)
}
