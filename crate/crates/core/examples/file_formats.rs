//! Write and reload impulse responses and recordings as CSV and binary.

use cci_tdoa::bench::{simulate_trial, ExperimentConfig, SignalSpec};
use cci_tdoa::io::{read_air_set, read_observations, write_air_set, write_observations};
use cci_tdoa::Result;

fn main() -> Result<()> {
    let inst = simulate_trial(&ExperimentConfig::default(), &SignalSpec::White, 0.1, 2, 0)?;
    let dir = tempfile::tempdir()?;
    for ext in ["csv", "bin"] {
        let a = dir.path().join(format!("airs.{ext}"));
        let o = dir.path().join(format!("observations.{ext}"));
        write_air_set(&a, &inst.truth)?;
        write_observations(&o, &inst.observations)?;
        let same = read_air_set(&a)? == inst.truth && read_observations(&o)? == inst.observations;
        println!(
            "{ext}: {} + {} bytes, exact reload: {same}",
            std::fs::metadata(&a)?.len(),
            std::fs::metadata(&o)?.len()
        );
    }
    Ok(())
}
