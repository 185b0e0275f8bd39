//! Sparse non-negative estimation from noisy recordings, then peak-based
//! TDOAs.

use cci_tdoa::bench::{simulate_trial, ExperimentConfig, SignalSpec};
use cci_tdoa::peaks::{estimate_tdoas, DEFAULT_MAX_PEAKS};
use cci_tdoa::room::ground_truth_tdoas;
use cci_tdoa::solvers::{il1c, Epsilon, SolverConfig};
use cci_tdoa::Result;

fn main() -> Result<()> {
    let exp = ExperimentConfig {
        master_seed: 3,
        ..ExperimentConfig::default()
    };
    let inst = simulate_trial(&exp, &SignalSpec::White, 0.1, 3, 0)?;
    let cfg = SolverConfig {
        channel_len: inst.truth.channel_len(),
        epsilon: Epsilon::InitMass(2.0),
        ..SolverConfig::default()
    };
    let res = il1c(&inst.observations, &cfg)?;
    println!("budget {:.3}, {} outer steps", res.epsilon.unwrap_or(0.0), res.outer_iters);
    for (k, obj) in res.objective_trace.iter().enumerate() {
        println!("  step {k}: {obj:.6e}");
    }
    for (name, v) in res.constraint_report.entries() {
        println!("{name}: {v:.1e}");
    }
    print!("truth TDOAs\n{}", ground_truth_tdoas(&inst.truth)?.to_csv());
    print!("estimated TDOAs\n{}", estimate_tdoas(&res.airs, DEFAULT_MAX_PEAKS)?.to_csv());
    Ok(())
}
