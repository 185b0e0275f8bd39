//! Peak picking, one-to-one matching within a threshold, and the two error
//! metrics.

use cci_tdoa::peaks::{compute_metrics, find_peaks, match_peaks, PeakList};
use cci_tdoa::Result;

fn main() -> Result<()> {
    let mut est = vec![0.0; 64];
    for (k, v) in [(3, 1.0), (11, 0.4), (12, 0.3), (30, 0.2), (52, 0.01)] {
        est[k] = v;
    }
    let found = find_peaks(&est, 7, 0.05)?;
    println!("estimated peaks {:?}", found.positions());

    let truth = PeakList::new(vec![3, 13, 28, 45], vec![1.0, 0.5, 0.3, 0.2])?;
    let report = match_peaks(&truth, &found, 20);
    for p in &report.matched_pairs {
        println!(
            "truth {} <-> estimate {} (offset {})",
            truth.positions()[p.truth_index],
            found.positions()[p.estimate_index],
            p.offset
        );
    }
    println!("unmatched truth peaks: {}", report.unmatched_truth_count);
    let m = compute_metrics(&[vec![report]], truth.len())?;
    println!("A_PPM {:.3}  A_PUP {:.3}", m.a_ppm, m.a_pup);
    Ok(())
}
