//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so progress and verdicts print in order.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use cci_tdoa::bench::{run_experiment_with, ExperimentConfig, Preset, SignalSpec};
use cci_tdoa::cross_relation::{assemble_normal_matrix, cross_residual};
use cci_tdoa::peaks::{compute_metrics, match_peaks, MatchReport, MatchedPair, PeakList};
use cci_tdoa::signal::db_to_ratio;
use cci_tdoa::solvers::qp::{minimize, AnchorSet, QpOptions, SlackSet};
use cci_tdoa::solvers::{
    anchor_l1, il1c, nonneg_anchor_l1, tong_l2, Epsilon, Method, SolverConfig, SolverResult,
};
use cci_tdoa::strategies::{ensemble_il1c, incremental_il1c, StrategyConfig};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

type Verdict = Result<String, String>;

fn check(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, t0: Instant, v: Verdict) -> Verdict {
    let el = t0.elapsed();
    match v {
        Ok(d) if el > limit => Err(format!("{d}; took {el:.1?}, limit {limit:?}")),
        Ok(d) => Ok(format!("{d}; {el:.1?}")),
        Err(d) => Err(format!("{d}; {el:.1?}")),
    }
}

fn criterion_1() -> Verdict {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let mut r = rng(1000 + i);
        let n = 2 + (i as usize % 4);
        let l = r.random_range(2..=64);
        let k = 10 * l + r.random_range(0..50);
        let chans = sparse_channels(&mut r, n, l, 6);
        let src = white(&mut r, k);
        let obs = observe(&chans, &src);
        let res = cross_residual(&obs, &airs(&chans)).map_err(|e| e.to_string())?;
        let mut scale = 0.0;
        for m in 0..n {
            for q in m + 1..n {
                scale += naive_conv(&obs.recordings[q], &chans[m]).iter().map(|v| v * v).sum::<f64>();
                scale += naive_conv(&obs.recordings[m], &chans[q]).iter().map(|v| v * v).sum::<f64>();
            }
        }
        worst = worst.max(res / scale);
    }
    within(
        Duration::from_secs(30),
        t0,
        check(worst <= 1e-9, format!("worst relative residual {worst:.2e} over 100 instances")),
    )
}

fn criterion_2() -> Verdict {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut redrawn = 0;
    let mut r = rng(2000);
    for i in 0..50u64 {
        let n = 2 + (i as usize % 4);
        let l = r.random_range(4..=40);
        let chans = loop {
            let c = sparse_channels(&mut r, n, l, 6);
            if coprime_margin(&c, l) >= 1e-3 {
                break c;
            }
            redrawn += 1;
        };
        let src = white(&mut r, 10 * l + 64);
        let obs = observe(&chans, &src);
        let cfg = SolverConfig { channel_len: l, ..SolverConfig::default() };
        let res = tong_l2(&obs, &cfg).map_err(|e| e.to_string())?;
        if res.identifiable != Some(true) {
            return Err(format!("co-prime instance {i} flagged non-identifiable"));
        }
        let truth: Vec<f64> = chans.concat();
        worst = worst.max(unit_error(&res.airs.stacked(), &truth));
    }
    // A shared factor (1 - z⁻¹) makes the channels non-co-prime.
    let mut r = rng(2999);
    let base = sparse_channels(&mut r, 2, 15, 5);
    let chans: Vec<Vec<f64>> = base.iter().map(|h| naive_conv(h, &[1.0, -1.0])).collect();
    let src = white(&mut r, 400);
    let obs = observe(&chans, &src);
    let cfg = SolverConfig { channel_len: 16, ..SolverConfig::default() };
    let flagged = tong_l2(&obs, &cfg).map_err(|e| e.to_string())?.identifiable;
    within(
        Duration::from_secs(120),
        t0,
        check(
            worst <= 1e-6 && flagged == Some(false),
            format!(
                "worst subspace error {worst:.2e} ({redrawn} draws without co-prime margin redrawn); \
                 common-factor instance identifiable={flagged:?}"
            ),
        ),
    )
}

fn anchor_checks(res: &SolverResult, nonneg: bool, tol: f64) -> Result<(), String> {
    let h = res.airs.stacked();
    let a = res.anchor_index.ok_or("no anchor reported")?;
    let eps = res.epsilon.ok_or("no budget reported")?;
    let mass: f64 = h.iter().map(|v| v.abs()).sum();
    if (h[a] - 1.0).abs() > tol {
        return Err(format!("anchor tap {}", h[a]));
    }
    if mass > eps + tol {
        return Err(format!("L1 mass {mass} over budget {eps}"));
    }
    if nonneg && h.iter().any(|&v| v < -tol) {
        return Err("negative tap".into());
    }
    Ok(())
}

fn slack_checks(res: &SolverResult, l: usize, tol: f64, tol_outer: f64) -> Result<(), String> {
    let h = res.airs.stacked();
    let p = res.slack.as_ref().ok_or("no slack reported")?;
    let eps = res.epsilon.ok_or("no budget reported")?;
    for (hn, pn) in h.chunks(l).zip(p.chunks(l)) {
        let d: f64 = hn.iter().zip(pn).map(|(a, b)| a * b).sum();
        if (d - 1.0).abs() > tol {
            return Err(format!("slack equality {d}"));
        }
    }
    if h.iter().any(|&v| v < -tol) {
        return Err("negative tap".into());
    }
    let mass: f64 = h.iter().sum();
    if mass > eps + tol {
        return Err(format!("mass {mass} over budget {eps}"));
    }
    for w in res.objective_trace.windows(2) {
        if w[1] > w[0] * (1.0 + tol_outer) {
            return Err(format!("objective rose {} -> {}", w[0], w[1]));
        }
    }
    Ok(())
}

fn criterion_3() -> Verdict {
    let t0 = Instant::now();
    let mut solves = 0;
    for i in 0..50u64 {
        let n = 2 + (i as usize % 3);
        let l = 8 + (i as usize * 7) % 25;
        let (_, obs) = noisy_instance(3000 + i, n, l, 0.1);
        let cfg = SolverConfig {
            channel_len: l,
            epsilon: Epsilon::InitMass(1.5),
            seed: i,
            ..SolverConfig::default()
        };
        let tol = 10.0 * cfg.tol_inner;
        let ctx = |name: &str, e: String| format!("instance {i} {name}: {e}");

        let t = tong_l2(&obs, &cfg).map_err(|e| ctx("tong", e.to_string()))?;
        let norm: f64 = t.airs.stacked().iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > tol {
            return Err(ctx("tong", format!("norm {norm}")));
        }
        let a = anchor_l1(&obs, &cfg).map_err(|e| ctx("anchor", e.to_string()))?;
        anchor_checks(&a, false, tol).map_err(|e| ctx("anchor", e))?;
        let a = nonneg_anchor_l1(&obs, &cfg).map_err(|e| ctx("nonneg anchor", e.to_string()))?;
        anchor_checks(&a, true, tol).map_err(|e| ctx("nonneg anchor", e))?;
        let r = il1c(&obs, &cfg).map_err(|e| ctx("il1c", e.to_string()))?;
        slack_checks(&r, l, tol, cfg.tol_outer).map_err(|e| ctx("il1c", e))?;
        let scfg = StrategyConfig::new(cfg.clone());
        let r = incremental_il1c(&obs, &scfg).map_err(|e| ctx("incremental", e.to_string()))?;
        slack_checks(&r.result, l, tol, f64::INFINITY).map_err(|e| ctx("incremental", e))?;
        solves += 5;
        if n >= 3 {
            let r = ensemble_il1c(&obs, &scfg).map_err(|e| ctx("ensemble", e.to_string()))?;
            if r.result.airs.stacked().iter().any(|&v| v < -tol) {
                return Err(ctx("ensemble", "negative tap".into()));
            }
            solves += 1;
        }
    }
    within(
        Duration::from_secs(600),
        t0,
        Ok(format!("{solves} solves on 50 instances within 10*tol_inner")),
    )
}

fn criterion_4() -> Verdict {
    let t0 = Instant::now();
    let opts = QpOptions::default();
    let mut worst = 0.0f64;
    let rel = |f: f64, g: f64| (f - g).abs() / g.abs().max(1e-300);
    for i in 0..20u64 {
        let small = i % 2 == 0;
        let (n, l) = if small { (2, 5) } else { (2 + (i as usize / 2) % 2, if i % 4 == 1 { 15 } else { 10 }) };
        let (chans, obs) = noisy_instance(4000 + i, n, l, 0.2);
        let nm = assemble_normal_matrix(&obs, l).map_err(|e| e.to_string())?;
        let q: DMatrix<f64> = nm.matrix.clone() / nm.trace();
        let dim = n * l;
        let lmax = q.clone().symmetric_eigenvalues().max();
        let mut r = rng(4500 + i);

        // Slack-variable set.
        let truth: Vec<f64> = chans.concat();
        let p: Vec<f64> = truth.iter().map(|v| v * r.random_range(0.5..1.5)).collect();
        let min_mass: f64 = p.chunks(l).map(|pn| 1.0 / pn.iter().cloned().fold(0.0, f64::max)).sum();
        let eps = min_mass * r.random_range(1.05..2.5);
        let set = SlackSet::new(p.clone(), l, eps).map_err(|e| e.to_string())?;
        let got = minimize(&q, lmax, &set, &vec![0.0; dim], &opts).map_err(|e| e.to_string())?;
        let mut eq = Vec::new();
        let mut ineq = Vec::new();
        let mut x0 = DVector::zeros(dim);
        for (c, pn) in p.chunks(l).enumerate() {
            let mut a = DVector::zeros(dim);
            a.rows_mut(c * l, l).copy_from_slice(pn);
            eq.push((a, 1.0));
            let (j, &v) = pn.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
            x0[c * l + j] = 1.0 / v;
        }
        for k in 0..dim {
            let mut a = DVector::zeros(dim);
            a[k] = 1.0;
            ineq.push((a, 0.0));
        }
        ineq.push((DVector::from_element(dim, -1.0), -eps));
        let x = active_set_qp(&q, &eq, &ineq, x0);
        worst = worst.max(rel(got.objective, x.dot(&(&q * &x))));

        // Non-negative anchor set.
        let anchor = r.random_range(0..l);
        let radius = r.random_range(0.5..4.0);
        let set = AnchorSet { anchor, radius, nonneg: true };
        let got = minimize(&q, lmax, &set, &vec![0.0; dim], &opts).map_err(|e| e.to_string())?;
        let mut e = DVector::zeros(dim);
        e[anchor] = 1.0;
        let eq = vec![(e.clone(), 1.0)];
        let mut ineq: Vec<(DVector<f64>, f64)> = (0..dim)
            .filter(|&k| k != anchor)
            .map(|k| {
                let mut a = DVector::zeros(dim);
                a[k] = 1.0;
                (a, 0.0)
            })
            .collect();
        let mut budget = DVector::from_element(dim, -1.0);
        budget[anchor] = 0.0;
        ineq.push((budget, -radius));
        let x = active_set_qp(&q, &eq, &ineq, e);
        worst = worst.max(rel(got.objective, x.dot(&(&q * &x))));

        // Signed L1 anchor set by enumeration on the small instances.
        if small {
            let set = AnchorSet { anchor, radius, nonneg: false };
            let got = minimize(&q, lmax, &set, &vec![0.0; dim], &opts).map_err(|e| e.to_string())?;
            worst = worst.max(rel(got.objective, l1_anchor_enumerate(&q, anchor, radius)));
        }
    }
    within(
        Duration::from_secs(60),
        t0,
        check(worst <= 1e-6, format!("worst relative objective gap {worst:.2e} over 50 QPs")),
    )
}

fn max_matching(t: &[usize], e: &[usize], thr: usize, used: &mut Vec<bool>, i: usize) -> usize {
    if i == t.len() {
        return 0;
    }
    let mut best = max_matching(t, e, thr, used, i + 1);
    for j in 0..e.len() {
        if !used[j] && t[i].abs_diff(e[j]) <= thr {
            used[j] = true;
            best = best.max(1 + max_matching(t, e, thr, used, i + 1));
            used[j] = false;
        }
    }
    best
}

fn criterion_5() -> Verdict {
    let t0 = Instant::now();
    let mut r = rng(5000);
    let mut worst = 0.0f64;
    let mut reports_done = 0;
    while reports_done < 200 {
        let z = r.random_range(1..=5);
        let chans = r.random_range(1..=4);
        let k_per = r.random_range(1..=7);
        let k = k_per * chans;
        let mut trials = Vec::new();
        for _ in 0..z {
            let mut reps = Vec::new();
            for _ in 0..chans {
                let m = r.random_range(0..=k_per);
                let pairs = (0..m)
                    .map(|j| MatchedPair { truth_index: j, estimate_index: j, offset: r.random_range(0..=20) })
                    .collect();
                reps.push(MatchReport { matched_pairs: pairs, unmatched_truth_count: k_per - m, threshold: 20 });
                reports_done += 1;
            }
            trials.push(reps);
        }
        let got = compute_metrics(&trials, k).map_err(|e| e.to_string())?;
        // Direct transcription: per-trial mean offset over matched peaks
        // (zero without matches) and unmatched fraction, averaged over trials.
        let (mut ppm, mut pup) = (0.0, 0.0);
        for reps in &trials {
            let p: usize = reps.iter().map(|x| x.matched_pairs.len()).sum();
            let off: usize = reps.iter().flat_map(|x| &x.matched_pairs).map(|m| m.offset).sum();
            if p > 0 {
                ppm += off as f64 / p as f64;
            }
            pup += (k - p) as f64 / k as f64;
        }
        ppm /= z as f64;
        pup /= z as f64;
        worst = worst.max((got.a_ppm - ppm).abs()).max((got.a_pup - pup).abs());
    }
    let mut mismatches = 0;
    let cases = 3000;
    for _ in 0..cases {
        let gen = |r: &mut rand_chacha::ChaCha8Rng| {
            let n = r.random_range(0..=6);
            let mut v: Vec<usize> = (0..n).map(|_| r.random_range(0..120)).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let t = gen(&mut r);
        let e = gen(&mut r);
        let thr = r.random_range(0..=25);
        let tl = PeakList::new(t.clone(), vec![1.0; t.len()]).map_err(|e| e.to_string())?;
        let el = PeakList::new(e.clone(), vec![1.0; e.len()]).map_err(|e| e.to_string())?;
        let rep = match_peaks(&tl, &el, thr);
        let exact = max_matching(&t, &e, thr, &mut vec![false; e.len()], 0);
        let valid = rep.matched_pairs.iter().all(|m| t[m.truth_index].abs_diff(e[m.estimate_index]) == m.offset && m.offset <= thr);
        if rep.matched_pairs.len() != exact || !valid || rep.unmatched_truth_count != t.len() - exact {
            mismatches += 1;
        }
    }
    within(
        Duration::from_secs(10),
        t0,
        check(
            worst <= 1e-12 && mismatches == 0,
            format!("metric gap {worst:.1e} over {reports_done} reports; {mismatches}/{cases} matching mismatches"),
        ),
    )
}

fn criterion_6() -> Verdict {
    let t0 = Instant::now();
    let mut cfg = ExperimentConfig::preset(Preset::Desk, 6);
    cfg.signals = vec![SignalSpec::White];
    cfg.s_values = vec![0.01, 0.1, 1.0];
    cfg.n_mics_values = vec![2];
    cfg.z_trials = 10;
    cfg.methods = vec![Method::Il1c];
    let rep = run_experiment_with(&cfg, 1).map_err(|e| e.to_string())?;
    let series: Vec<f64> = rep
        .series("white", Method::Il1c)
        .iter()
        .map(|c| c.metrics.map(|m| m.a_pup).unwrap_or(f64::NAN))
        .collect();
    let inversions = series.windows(2).filter(|w| !(w[1] >= w[0])).count();
    within(
        Duration::from_secs(600),
        t0,
        check(inversions <= 1, format!("A_PUP by s {series:.3?}, {inversions} inversions")),
    )
}

/// Joint, ensemble and incremental IL1C on the N=6 desk setup.
fn strategy_run() -> Result<cci_tdoa::bench::ExperimentReport, String> {
    let mut cfg = ExperimentConfig::preset(Preset::Desk, 7);
    cfg.signals = vec![SignalSpec::White];
    cfg.s_values = vec![0.01];
    cfg.n_mics_values = vec![6];
    cfg.z_trials = 20;
    cfg.methods = vec![Method::Il1c, Method::Il1cEnsemble, Method::Il1cIncremental];
    run_experiment_with(&cfg, 1).map_err(|e| e.to_string())
}

fn criterion_7(rep: &cci_tdoa::bench::ExperimentReport) -> Verdict {
    let z = rep.config.z_trials;
    let metric = |m: Method, t: usize| {
        rep.trials.iter().find(|r| r.method == m && r.trial == t).and_then(|r| r.metrics)
    };
    let mut wins = 0;
    for t in 0..z {
        if let (Some(j), Some(e)) = (metric(Method::Il1c, t), metric(Method::Il1cEnsemble, t)) {
            if e.a_ppm <= j.a_ppm && e.a_pup <= j.a_pup {
                wins += 1;
            }
        }
    }
    let cell = |m| rep.cell("white", 0.01, 6, m).and_then(|c| c.metrics);
    check(
        wins as f64 >= 0.7 * z as f64,
        format!(
            "ensemble <= joint on both metrics in {wins}/{z} trials; means joint {:?} ensemble {:?}",
            cell(Method::Il1c),
            cell(Method::Il1cEnsemble)
        ),
    )
}

fn criterion_8(rep: &cci_tdoa::bench::ExperimentReport) -> Verdict {
    let pup = |m| rep.cell("white", 0.01, 6, m).and_then(|c| c.metrics).map(|m| m.a_pup);
    match (pup(Method::Il1c), pup(Method::Il1cIncremental)) {
        (Some(j), Some(i)) => check(i >= j, format!("mean A_PUP incremental {i:.4} vs joint {j:.4}")),
        other => Err(format!("missing cell metrics {other:?}")),
    }
}

fn criterion_9() -> Verdict {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for jobs in ["1", "3"] {
        let out = dir.path().join(format!("jobs{jobs}"));
        let status = Command::new(env!("CARGO_BIN_EXE_cci-tdoa"))
            .args(["benchmark", "--preset", "desk", "--seed", "9", "--jobs", jobs, "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("benchmark --jobs {jobs} failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        outputs.push(std::fs::read(out.join("cells.csv")).map_err(|e| e.to_string())?);
    }
    within(
        Duration::MAX,
        t0,
        check(
            outputs[0] == outputs[1] && !outputs[0].is_empty(),
            format!("cells.csv with --jobs 1 and --jobs 3: {} bytes, identical={}", outputs[0].len(), outputs[0] == outputs[1]),
        ),
    )
}

fn criterion_10() -> Verdict {
    let table = [(0.0, 1.0), (6.0, 0.5012), (14.0, 0.1995), (20.0, 0.1), (40.0, 0.01)];
    let worst = table.iter().map(|&(db, s)| (db_to_ratio(db) - s).abs()).fold(0.0, f64::max);
    check(worst <= 1e-3, format!("largest deviation {worst:.2e}"))
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Verdict) -> Option<bool> {
    if !selected(n) {
        return None;
    }
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let pass = v.is_ok();
    let (tag, detail) = match v {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {n:>2} {tag} {name}: {detail}");
    Some(pass)
}

/// Criterion numbers given after `--` restrict the run; none runs all.
fn selected(n: usize) -> bool {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    picked.is_empty() || picked.contains(&n)
}

fn main() {
    let mut pass = vec![
        run(1, "cross-relation identity", criterion_1),
        run(2, "closed-form noiseless recovery", criterion_2),
        run(3, "constraint satisfaction", criterion_3),
        run(4, "inner QP oracle", criterion_4),
        run(5, "metrics and matching oracle", criterion_5),
        run(6, "noise monotonicity", criterion_6),
    ];
    if selected(7) || selected(8) {
        let t0 = Instant::now();
        let rep = strategy_run();
        let limit = Duration::from_secs(1200);
        let timed = |v: Verdict| {
            if t0.elapsed() > limit {
                Err(format!("{}; over {limit:?}", v.unwrap_or_else(|e| e)))
            } else {
                v
            }
        };
        println!("strategy run for criteria 7 and 8: {:.1?}", t0.elapsed());
        pass.push(run(7, "ensemble direction", || timed(rep.as_ref().map_err(Clone::clone).and_then(criterion_7))));
        pass.push(run(8, "incremental direction", || timed(rep.as_ref().map_err(Clone::clone).and_then(criterion_8))));
    }
    pass.push(run(9, "determinism", criterion_9));
    pass.push(run(10, "dB table", criterion_10));
    let ran: Vec<bool> = pass.into_iter().flatten().collect();
    let n_pass = ran.iter().filter(|&&p| p).count();
    println!("{n_pass}/{} criteria passed", ran.len());
    if n_pass != ran.len() {
        std::process::exit(1);
    }
}
