mod common;

use cci_tdoa::error::Error;
use cci_tdoa::peaks::{estimate_direct_paths, DEFAULT_MAX_PEAKS};
use cci_tdoa::room::{direct_path_index, image_method_air, random_geometry, synthesize_observations, trim_common_support, RoomConfig};
use cci_tdoa::signal::gen_white_noise;
use cci_tdoa::solvers::{il1c, SolverConfig};
use cci_tdoa::strategies::{ensemble_il1c, incremental_il1c, Pairing, StrategyConfig};
use common::noisy_instance;

fn cfg(l: usize) -> StrategyConfig {
    StrategyConfig::new(SolverConfig { channel_len: l, seed: 5, ..SolverConfig::default() })
}

#[test]
fn incremental_step_count_and_constraints() {
    let (_, obs) = noisy_instance(71, 3, 16, 0.05);
    let out = incremental_il1c(&obs, &cfg(16)).unwrap();
    assert_eq!(out.diagnostics.solver_passes, 2);
    let r = &out.result;
    assert!(r.constraint_report.max_violation() <= 10.0 * 1e-6);
    let mut order = out.diagnostics.mic_order.clone();
    order.sort_unstable();
    assert_eq!(order, vec![0, 1, 2]);
}

#[test]
fn incremental_on_two_mics_is_plain_il1c() {
    let (_, obs) = noisy_instance(72, 2, 16, 0.05);
    let c = cfg(16);
    let inc = incremental_il1c(&obs, &c).unwrap().result;
    let plain = il1c(&obs, &c.base).unwrap();
    assert_eq!(inc.airs, plain.airs);
    assert_eq!(inc.objective_trace, plain.objective_trace);
}

#[test]
fn ensemble_pair_bookkeeping() {
    let (_, obs) = noisy_instance(73, 5, 12, 0.05);
    let out = ensemble_il1c(&obs, &cfg(12)).unwrap();
    assert_eq!(out.diagnostics.pairs.len(), 10);
    assert_eq!(out.diagnostics.candidate_counts, vec![4; 5]);
    assert!(out.result.airs.stacked().iter().all(|&v| v >= 0.0));
}

#[test]
fn ensemble_preconditions() {
    let (_, two) = noisy_instance(74, 2, 12, 0.05);
    assert!(matches!(ensemble_il1c(&two, &cfg(12)), Err(Error::InvalidArgument(_))));
    let (_, three) = noisy_instance(75, 3, 12, 0.05);
    let mut c = cfg(12);
    c.pairing = Pairing::RandomMatching;
    assert!(ensemble_il1c(&three, &c).is_err());
    let (_, four) = noisy_instance(76, 4, 12, 0.05);
    let out = ensemble_il1c(&four, &c).unwrap();
    assert_eq!(out.diagnostics.pairs.len(), 2);
    assert_eq!(out.diagnostics.candidate_counts, vec![1; 4]);
}

#[test]
fn noiseless_ensemble_keeps_direct_paths() {
    let room = RoomConfig::desk();
    let g = random_geometry(&room, 3, 8).unwrap();
    let (truth, _) = trim_common_support(&image_method_air(&room, &g, room.max_channel_len()).unwrap()).unwrap();
    let src = gen_white_noise(12 * truth.channel_len(), 8).unwrap();
    let obs = synthesize_observations(&truth, &src).unwrap();
    let out = ensemble_il1c(&obs, &cfg(truth.channel_len())).unwrap();
    let est = estimate_direct_paths(&out.result.airs, DEFAULT_MAX_PEAKS).unwrap();
    for (e, c) in est.iter().zip(&truth.channels) {
        let want = direct_path_index(c).unwrap();
        assert!(e.unwrap().abs_diff(want) <= 1, "{e:?} vs {want}");
    }
}
