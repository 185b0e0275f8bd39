//! Closed-form recovery from noiseless recordings: the smallest eigenvector
//! of the cross-relation normal matrix equals the true responses up to
//! scale.

use cci_tdoa::bench::{simulate_trial, ExperimentConfig, SignalSpec};
use cci_tdoa::solvers::{subspace_error, tong_l2, SolverConfig};
use cci_tdoa::Result;

fn main() -> Result<()> {
    let exp = ExperimentConfig {
        master_seed: 9,
        ..ExperimentConfig::default()
    };
    for n in [2, 3, 4] {
        let inst = simulate_trial(&exp, &SignalSpec::White, 0.0, n, 0)?;
        let cfg = SolverConfig {
            channel_len: inst.truth.channel_len(),
            ..SolverConfig::default()
        };
        let res = tong_l2(&inst.observations, &cfg)?;
        println!(
            "N={n} L={} identifiable={} subspace error {:.2e}",
            cfg.channel_len,
            res.identifiable.unwrap_or(false),
            subspace_error(&res.airs, &inst.truth)?
        );
    }
    Ok(())
}
