//! Joint estimation over all microphones against the average of pairwise
//! solutions, scored on the same instances.

use cci_tdoa::bench::{simulate_trial, ExperimentConfig, SignalSpec};
use cci_tdoa::peaks::{match_air_sets, DEFAULT_MATCH_THRESHOLD, DEFAULT_MAX_PEAKS, DEFAULT_REL_FLOOR};
use cci_tdoa::room::AirSet;
use cci_tdoa::solvers::{il1c, Epsilon, SolverConfig};
use cci_tdoa::strategies::{ensemble_il1c, StrategyConfig};
use cci_tdoa::Result;

fn score(truth: &AirSet, est: &AirSet) -> Result<String> {
    let tm = match_air_sets(truth, est, DEFAULT_MAX_PEAKS, DEFAULT_REL_FLOOR, DEFAULT_MATCH_THRESHOLD)?;
    let m = tm.metrics()?;
    Ok(format!("A_PPM {:.3} A_PUP {:.3}", m.a_ppm, m.a_pup))
}

fn main() -> Result<()> {
    let exp = ExperimentConfig {
        master_seed: 4,
        ..ExperimentConfig::default()
    };
    for trial in 0..3 {
        let inst = simulate_trial(&exp, &SignalSpec::White, 0.01, 4, trial)?;
        let cfg = SolverConfig {
            channel_len: inst.truth.channel_len(),
            epsilon: Epsilon::InitMass(2.0),
            ..SolverConfig::default()
        };
        let joint = il1c(&inst.observations, &cfg)?;
        let ens = ensemble_il1c(&inst.observations, &StrategyConfig::new(cfg))?;
        println!("trial {trial}");
        println!("  joint    {}", score(&inst.truth, &joint.airs)?);
        println!(
            "  ensemble {}  ({} pairs)",
            score(&inst.truth, &ens.result.airs)?,
            ens.diagnostics.pairs.len()
        );
    }
    Ok(())
}
