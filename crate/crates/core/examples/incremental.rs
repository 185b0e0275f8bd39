//! Grow the microphone set one at a time, warm starting every step from the
//! previous estimates.

use cci_tdoa::bench::{simulate_trial, ExperimentConfig, SignalSpec};
use cci_tdoa::solvers::{Epsilon, SolverConfig};
use cci_tdoa::strategies::{incremental_il1c, StrategyConfig};
use cci_tdoa::Result;

fn main() -> Result<()> {
    let exp = ExperimentConfig {
        master_seed: 8,
        ..ExperimentConfig::default()
    };
    let inst = simulate_trial(&exp, &SignalSpec::White, 0.01, 4, 0)?;
    let cfg = SolverConfig {
        channel_len: inst.truth.channel_len(),
        epsilon: Epsilon::InitMass(2.0),
        ..SolverConfig::default()
    };
    for seed in [1, 2] {
        let strat = StrategyConfig {
            mic_order_seed: seed,
            ..StrategyConfig::new(cfg.clone())
        };
        let out = incremental_il1c(&inst.observations, &strat)?;
        println!("order {:?}", out.diagnostics.mic_order);
        for (k, obj) in out.diagnostics.step_objectives.iter().enumerate() {
            println!("  {} mics: objective {obj:.4e}", k + 2);
        }
    }
    Ok(())
}
