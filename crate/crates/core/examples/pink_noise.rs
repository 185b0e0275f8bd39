//! Generate pink noise and estimate its spectral slope, which should sit
//! near -1 (power falls as 1/f).

use rustfft::{num_complex::Complex, FftPlanner};

use cci_tdoa::signal::{gen_pink_noise, gen_white_noise};
use cci_tdoa::Result;

fn slope(x: &[f64]) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    // Least-squares line through (log k, log |X_k|²).
    let pts: Vec<(f64, f64)> = (1..n / 2)
        .map(|k| ((k as f64).ln(), buf[k].norm_sqr().ln()))
        .collect();
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn main() -> Result<()> {
    let pink = gen_pink_noise(1 << 15, 1)?;
    let white = gen_white_noise(1 << 15, 1)?;
    println!("pink slope  {:+.3}", slope(pink.samples()));
    println!("white slope {:+.3}", slope(white.samples()));
    Ok(())
}
