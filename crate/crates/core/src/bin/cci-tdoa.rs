use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cci_tdoa::bench::{
    cells_csv, emit_report, improvements_markdown, load_report, run_experiment_with,
    simulate_trial, tables_markdown, EpsilonMode, ExperimentConfig, Preset, SignalSpec,
    CELLS_CSV, TABLES_MD,
};
use cci_tdoa::io::{self, resolve_input};
use cci_tdoa::peaks::{
    estimate_tdoas, match_air_sets, DEFAULT_MATCH_THRESHOLD, DEFAULT_MAX_PEAKS,
    DEFAULT_REL_FLOOR,
};
use cci_tdoa::room::{ground_truth_tdoas, AirSet};
use cci_tdoa::solvers::{
    anchor_l1, cross_validate_with, default_epsilon_grid, il1c, nonneg_anchor_l1,
    subspace_error, tong_l2, Epsilon, Method, SolverConfig, SolverResult,
};
use cci_tdoa::strategies::{
    ensemble_il1c, incremental_il1c, CandidateNorm, Pairing, StrategyConfig,
    StrategyDiagnostics,
};
use cci_tdoa::Error;

const OUT_ENV: &str = "CCI_TDOA_OUT_DIR";

#[derive(Parser)]
#[command(name = "cci-tdoa", version, about = "Blind impulse response and TDOA estimation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one room instance: impulse responses, recordings, TDOAs.
    Simulate(SimulateArgs),
    /// Estimate impulse responses and TDOAs from recordings.
    Solve(SolveArgs),
    /// Run a Monte-Carlo benchmark grid.
    Benchmark(BenchmarkArgs),
    /// Score estimated impulse responses against the truth.
    Metrics(MetricsArgs),
    /// Render the tables of a saved benchmark report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// white, pink or file:<path to wav>
    #[arg(long, default_value = "white")]
    signal: SignalSpec,
    #[arg(long, default_value_t = 2)]
    n_mics: usize,
    /// Noise-to-signal RMS ratio.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    s: f64,
    /// Defaults to a random seed, which is printed.
    #[arg(long)]
    seed: Option<u64>,
    /// Source length in samples.
    #[arg(long, default_value_t = 2048)]
    signal_len: usize,
    /// Keep the common leading delay and trailing zeros of the responses.
    #[arg(long)]
    no_trim: bool,
    /// Write binary files instead of CSV.
    #[arg(long)]
    binary: bool,
    #[arg(long, env = OUT_ENV)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// tong, anchor-l1, nn-anchor-l1, il1c, il1c-incremental or il1c-ensemble
    #[arg(long, default_value = "il1c")]
    solver: Method,
    /// Observations file or a directory holding one.
    #[arg(long = "in")]
    input: PathBuf,
    /// `auto` cross-validates; `<v>` is an absolute budget, `<v>x` a
    /// multiple of the starting point's L1 mass.
    #[arg(long, default_value = "auto")]
    epsilon: String,
    /// Channel length; defaults to the config file, then to the length of
    /// the ground truth next to the observations, then to 192.
    #[arg(long)]
    channel_len: Option<usize>,
    /// Solver config file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground-truth impulse responses; defaults to the input directory's.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Seed of the incremental microphone order and of random pairings.
    #[arg(long)]
    seed: Option<u64>,
    /// Ensemble pairs: all-pairs or random-matching.
    #[arg(long, default_value = "all-pairs")]
    pairing: String,
    /// Ensemble candidate scaling: max-tap or unit-l1.
    #[arg(long, default_value = "max-tap")]
    candidate_norm: String,
    #[arg(long, default_value_t = DEFAULT_MAX_PEAKS)]
    max_peaks: usize,
    /// Defaults to the input directory.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long, default_value = "desk", conflicts_with = "config")]
    preset: Preset,
    /// Experiment config file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed of every trial; mandatory.
    #[arg(long)]
    seed: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Override the trial count.
    #[arg(long)]
    z_trials: Option<usize>,
    /// Override the methods, comma separated.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long, env = OUT_ENV)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_PEAKS)]
    max_peaks: usize,
    #[arg(long, default_value_t = DEFAULT_REL_FLOOR)]
    rel_floor: f64,
    #[arg(long, default_value_t = DEFAULT_MATCH_THRESHOLD)]
    threshold: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// `report.json` or the directory holding it.
    #[arg(long = "in")]
    input: PathBuf,
    /// Rewrite `tables.md` and `cells.csv` into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let head: Vec<&str> = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .collect();
            eprintln!("error[usage]: {}", one_line(head.join(" ").trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    let outcome = match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Solve(a) => solve(a),
        Cmd::Benchmark(a) => benchmark(a),
        Cmd::Metrics(a) => metrics(a),
        Cmd::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error[usage]: {}", one_line(&msg));
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error[{}]: {}", e.code(), one_line(&e.to_string()));
            ExitCode::from(1)
        }
    }
}

fn seed_or_random(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random();
        eprintln!("seed: {s}");
        s
    })
}

fn simulate(a: SimulateArgs) -> std::result::Result<(), Failure> {
    let cfg = ExperimentConfig {
        master_seed: seed_or_random(a.seed),
        signal_len: a.signal_len,
        trim_support: !a.no_trim,
        ..ExperimentConfig::default()
    };
    let inst = simulate_trial(&cfg, &a.signal, a.s, a.n_mics, 0)?;
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    let (airs, obs) = if a.binary {
        (io::AIRS_BIN, io::OBS_BIN)
    } else {
        (io::AIRS_CSV, io::OBS_CSV)
    };
    io::write_air_set(a.out.join(airs), &inst.truth)?;
    io::write_observations(a.out.join(obs), &inst.observations)?;
    let tdoa = ground_truth_tdoas(&inst.truth)?;
    fs::write(a.out.join(io::TDOA_CSV), tdoa.to_csv()).map_err(Error::from)?;
    println!(
        "{} microphones, {} taps, {} samples per recording",
        inst.truth.n_channels(),
        inst.truth.channel_len(),
        inst.observations.len()
    );
    println!("ground-truth TDOAs (samples):");
    print!("{}", tdoa.to_csv());
    Ok(())
}

#[derive(Serialize)]
struct SolveDiagnostics<'a> {
    solver: Method,
    epsilon: String,
    cv_scores: Option<Vec<(String, f64)>>,
    result: &'a SolverResult,
    strategy: Option<StrategyDiagnostics>,
    subspace_error: Option<f64>,
}

fn truth_next_to(input: &Path) -> Option<PathBuf> {
    let dir = if input.is_dir() { input } else { input.parent()? };
    resolve_input(dir, io::AIRS_BIN, io::AIRS_CSV).ok()
}

fn solve(a: SolveArgs) -> std::result::Result<(), Failure> {
    let obs_path = resolve_input(&a.input, io::OBS_BIN, io::OBS_CSV)?;
    let obs = io::read_observations(&obs_path)?;
    let truth_path = match &a.truth {
        Some(p) => Some(resolve_input(p, io::AIRS_BIN, io::AIRS_CSV)?),
        None => truth_next_to(&a.input),
    };
    let truth = truth_path.map(io::read_air_set).transpose()?;

    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::NotFound(p.clone()),
                _ => Error::Io(e),
            })?;
            SolverConfig::from_text(&text).map_err(|e| usage(e.to_string()))?
        }
        None => SolverConfig {
            channel_len: truth.as_ref().map_or(SolverConfig::default().channel_len, AirSet::channel_len),
            ..SolverConfig::default()
        },
    };
    if let Some(l) = a.channel_len {
        cfg.channel_len = l;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let pairing = match a.pairing.as_str() {
        "all-pairs" => Pairing::AllPairs,
        "random-matching" => Pairing::RandomMatching,
        p => return Err(usage(format!("unknown pairing '{p}'"))),
    };
    let candidate_norm = match a.candidate_norm.as_str() {
        "max-tap" => CandidateNorm::MaxTap,
        "unit-l1" => CandidateNorm::UnitL1,
        c => return Err(usage(format!("unknown candidate norm '{c}'"))),
    };

    let mut cv_scores = None;
    if a.solver.uses_epsilon() {
        cfg.epsilon = if a.epsilon == "auto" {
            let cv_method = match a.solver {
                Method::AnchorL1 | Method::NonnegAnchorL1 => a.solver,
                _ => Method::Il1c,
            };
            let cv = cross_validate_with(&obs, &cfg, &default_epsilon_grid(), cv_method)?;
            cv_scores = Some(cv.scores.iter().map(|(e, s)| (e.to_string(), *s)).collect());
            cv.chosen
        } else {
            a.epsilon
                .parse::<Epsilon>()
                .map_err(|_| usage(format!("bad --epsilon '{}'", a.epsilon)))?
        };
    }

    let strategy = StrategyConfig {
        pairing,
        candidate_norm,
        ..StrategyConfig::new(cfg.clone())
    };
    let (result, diag) = match a.solver {
        Method::Tong => (tong_l2(&obs, &cfg)?, None),
        Method::AnchorL1 => (anchor_l1(&obs, &cfg)?, None),
        Method::NonnegAnchorL1 => (nonneg_anchor_l1(&obs, &cfg)?, None),
        Method::Il1c => (il1c(&obs, &cfg)?, None),
        Method::Il1cIncremental => {
            let o = incremental_il1c(&obs, &strategy)?;
            (o.result, Some(o.diagnostics))
        }
        Method::Il1cEnsemble => {
            let o = ensemble_il1c(&obs, &strategy)?;
            (o.result, Some(o.diagnostics))
        }
    };

    let sub_err = match &truth {
        Some(t) if t.n_channels() == result.airs.n_channels() && t.channel_len() == result.airs.channel_len() => {
            Some(subspace_error(&result.airs, t)?)
        }
        _ => None,
    };

    let out = match &a.out {
        Some(o) => o.clone(),
        None if a.input.is_dir() => a.input.clone(),
        None => obs_path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&out).map_err(Error::from)?;
    let est_name = if obs_path.extension().is_some_and(|e| e == "bin") {
        io::ESTIMATE_BIN
    } else {
        io::ESTIMATE_CSV
    };
    io::write_air_set(out.join(est_name), &result.airs)?;
    let diagnostics = SolveDiagnostics {
        solver: a.solver,
        epsilon: cfg.epsilon.to_string(),
        cv_scores,
        result: &result,
        strategy: diag,
        subspace_error: sub_err,
    };
    let json = serde_json::to_string_pretty(&diagnostics).map_err(Error::from)?;
    fs::write(out.join(io::DIAGNOSTICS_JSON), json).map_err(Error::from)?;

    println!("solver: {}", a.solver);
    if a.solver.uses_epsilon() {
        println!("epsilon: {} (resolved {})", cfg.epsilon, opt(result.epsilon));
    }
    println!("objective: {:e}", result.final_objective());
    println!("converged: {}", result.converged);
    if let Some(id) = result.identifiable {
        println!("identifiable: {id}");
    }
    println!("constraints:");
    for (name, v) in result.constraint_report.entries() {
        println!("  {name}: {v:e}");
    }
    if let Some(e) = sub_err {
        println!("subspace error: {e:e}");
    }
    match estimate_tdoas(&result.airs, a.max_peaks) {
        Ok(tdoa) => {
            fs::write(out.join(io::ESTIMATE_TDOA_CSV), tdoa.to_csv()).map_err(Error::from)?;
            println!("estimated TDOAs (samples):");
            print!("{}", tdoa.to_csv());
        }
        Err(e) => println!("estimated TDOAs unavailable: {e}"),
    }
    Ok(())
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "n/a".into(), |v| v.to_string())
}

fn benchmark(a: BenchmarkArgs) -> std::result::Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::NotFound(p.clone()),
                _ => Error::Io(e),
            })?;
            ExperimentConfig::from_text(&text).map_err(|e| usage(e.to_string()))?
        }
        None => ExperimentConfig::preset(a.preset, a.seed),
    };
    cfg.master_seed = a.seed;
    if let Some(z) = a.z_trials {
        cfg.z_trials = z;
    }
    if let Some(m) = a.methods {
        cfg.methods = m;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if a.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let report = run_experiment_with(&cfg, a.jobs)?;
    emit_report(&report, &a.out)?;
    let failed: usize = report.cells.iter().map(|c| c.failed).sum();
    let invalid = report.cells.iter().filter(|c| !c.valid).count();
    println!(
        "{} trials in {} cells ({failed} failed trials, {invalid} invalid cells); report in {}",
        report.trials.len() / cfg.methods.len(),
        report.cells.len(),
        a.out.display()
    );
    let eps = match &cfg.epsilon {
        EpsilonMode::Auto(_) => "cross-validated".to_string(),
        EpsilonMode::Fixed(e) => e.to_string(),
    };
    println!("epsilon: {eps}\n");
    print!("{}", improvements_markdown(&report));
    Ok(())
}

fn metrics(a: MetricsArgs) -> std::result::Result<(), Failure> {
    let truth = io::read_air_set(resolve_input(&a.truth, io::AIRS_BIN, io::AIRS_CSV)?)?;
    let est = io::read_air_set(resolve_input(&a.estimate, io::ESTIMATE_BIN, io::ESTIMATE_CSV)?)?;
    let tm = match_air_sets(&truth, &est, a.max_peaks, a.rel_floor, a.threshold)?;
    let m = tm.metrics()?;
    println!("matched peaks: {} of {}", tm.matched(), tm.truth_peak_count);
    println!("offset sum: {}", tm.offset_sum());
    println!("A_PPM: {}", m.a_ppm);
    println!("A_PUP: {}", m.a_pup);
    Ok(())
}

fn report(a: ReportArgs) -> std::result::Result<(), Failure> {
    let report = load_report(&a.input)?;
    let tables = tables_markdown(&report);
    if let Some(out) = &a.out {
        fs::create_dir_all(out).map_err(Error::from)?;
        fs::write(out.join(TABLES_MD), &tables).map_err(Error::from)?;
        fs::write(out.join(CELLS_CSV), cells_csv(&report)).map_err(Error::from)?;
    }
    print!("{tables}");
    Ok(())
}
