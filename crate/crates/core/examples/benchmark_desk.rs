//! A reduced benchmark grid: paired trials, per-cell averages, markdown
//! tables and the improvement statistics over two microphones.

use cci_tdoa::bench::{emit_report, run_experiment, tables_markdown, ExperimentConfig, Preset, SignalSpec};
use cci_tdoa::Result;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::preset(Preset::Desk, 2024);
    cfg.signals = vec![SignalSpec::White];
    cfg.n_mics_values = vec![2, 3];
    cfg.z_trials = 3;
    let report = run_experiment(&cfg)?;
    print!("{}", tables_markdown(&report));

    let dir = tempfile::tempdir()?;
    emit_report(&report, dir.path())?;
    for entry in std::fs::read_dir(dir.path())? {
        println!("wrote {}", entry?.file_name().to_string_lossy());
    }
    Ok(())
}
