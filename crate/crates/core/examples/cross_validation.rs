//! Choose the L1 budget by held-out cross-relation error over contiguous
//! row windows of the recordings.

use cci_tdoa::bench::{simulate_trial, ExperimentConfig, SignalSpec};
use cci_tdoa::solvers::{cross_validate_epsilon, default_epsilon_grid, SolverConfig};
use cci_tdoa::Result;

fn main() -> Result<()> {
    let exp = ExperimentConfig {
        master_seed: 21,
        ..ExperimentConfig::default()
    };
    let inst = simulate_trial(&exp, &SignalSpec::Pink, 0.1, 2, 0)?;
    let cfg = SolverConfig {
        channel_len: inst.truth.channel_len(),
        ..SolverConfig::default()
    };
    let cv = cross_validate_epsilon(&inst.observations, &cfg, &default_epsilon_grid())?;
    for (eps, score) in &cv.scores {
        println!("epsilon {eps:>5}: {score:.6e}");
    }
    println!("chosen: {}", cv.chosen);
    Ok(())
}
