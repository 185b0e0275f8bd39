//! Instance generators and reference computations shared by the test targets.
#![allow(dead_code)]

use cci_tdoa::room::{AirSet, ObservationSet};
use cci_tdoa::signal::{inject_noise, NoiseSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FS: u32 = 16_000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn naive_conv(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn white(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Sparse non-negative channels whose union support spans all `l` taps:
/// channel 0 starts at tap 0 and the last channel ends at tap `l - 1`.
pub fn sparse_channels(rng: &mut ChaCha8Rng, n: usize, l: usize, taps: usize) -> Vec<Vec<f64>> {
    let mut chans = Vec::with_capacity(n);
    for c in 0..n {
        let mut h = vec![0.0; l];
        for _ in 0..taps {
            let k = rng.random_range(0..l);
            h[k] += rng.random_range(0.1..1.0);
        }
        if c == 0 {
            h[0] = rng.random_range(0.5..1.0);
        }
        if c == n - 1 {
            h[l - 1] = rng.random_range(0.1..0.5);
        }
        chans.push(h);
    }
    chans
}

pub fn observe(chans: &[Vec<f64>], src: &[f64]) -> ObservationSet {
    let recs = chans.iter().map(|h| naive_conv(h, src)).collect();
    ObservationSet::new(recs, FS, 0.0).unwrap()
}

pub fn noisy(obs: &ObservationSet, s: f64, seed: u64) -> ObservationSet {
    inject_noise(obs, &NoiseSpec { ratio_s: s, seed }).unwrap()
}

pub fn airs(chans: &[Vec<f64>]) -> AirSet {
    AirSet::new(chans.to_vec(), FS).unwrap()
}

/// Random small instance: `(truth, noisy observations)`.
pub fn noisy_instance(seed: u64, n: usize, l: usize, s: f64) -> (Vec<Vec<f64>>, ObservationSet) {
    let mut r = rng(seed);
    let chans = sparse_channels(&mut r, n, l, 4);
    let src = white(&mut r, 12 * l);
    let clean = observe(&chans, &src);
    (chans.clone(), noisy(&clean, s, seed ^ 0x5eed))
}

/// Error between unit-normalized vectors after fixing the sign.
pub fn unit_error(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let sign = if d < 0.0 { -1.0 } else { 1.0 };
    a.iter()
        .zip(b)
        .map(|(x, y)| (x / na - sign * y / nb).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Dense `min xᵀQx` subject to `eq` rows (`aᵀx = b`) and `ineq` rows
/// (`aᵀx ≥ b`), by a primal active-set method from the feasible `x0`.
/// `Q` must be positive definite.
pub fn active_set_qp(
    q: &DMatrix<f64>,
    eq: &[(DVector<f64>, f64)],
    ineq: &[(DVector<f64>, f64)],
    x0: DVector<f64>,
) -> DVector<f64> {
    let n = q.nrows();
    let scale = q.diagonal().amax().max(1e-300);
    let mut x = x0;
    let mut work: Vec<usize> = Vec::new();
    for (i, (a, b)) in ineq.iter().enumerate() {
        if (a.dot(&x) - b).abs() <= 1e-12 * (1.0 + b.abs()) {
            let mut rows: Vec<DVector<f64>> = eq.iter().map(|e| e.0.clone()).collect();
            rows.extend(work.iter().map(|&j| ineq[j].0.clone()));
            rows.push(a.clone());
            if rank(&rows) == rows.len() {
                work.push(i);
            }
        }
    }
    for _ in 0..20_000 {
        let m = eq.len() + work.len();
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&(q * 2.0));
        let rows: Vec<&DVector<f64>> = eq.iter().map(|e| &e.0).chain(work.iter().map(|&j| &ineq[j].0)).collect();
        for (r, a) in rows.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = a[c];
                kkt[(c, n + r)] = -a[c];
            }
        }
        let g = q * &x * 2.0;
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&g));
        let sol = kkt.lu().solve(&rhs).expect("singular KKT system");
        let p = sol.rows(0, n).into_owned();
        if p.norm() <= 1e-12 * (1.0 + x.norm()) {
            let lam = sol.rows(n, m);
            let worst = (0..work.len())
                .map(|k| (k, lam[eq.len() + k]))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                Some((k, v)) if v < -1e-11 * scale * (1.0 + x.norm()) => {
                    work.remove(k);
                }
                _ => return x,
            }
        } else {
            let mut alpha = 1.0;
            let mut block = None;
            for (i, (a, b)) in ineq.iter().enumerate() {
                if work.contains(&i) {
                    continue;
                }
                let ap = a.dot(&p);
                if ap < -1e-15 * a.norm() * p.norm() {
                    let t = ((b - a.dot(&x)) / ap).max(0.0);
                    if t < alpha {
                        alpha = t;
                        block = Some(i);
                    }
                }
            }
            x += &p * alpha;
            if let Some(i) = block {
                work.push(i);
            }
        }
    }
    panic!("active-set oracle did not terminate");
}

fn rank(rows: &[DVector<f64>]) -> usize {
    let n = rows[0].len();
    let m = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
    m.svd(false, false).rank(1e-10)
}

/// Global minimum of `min hᵀQh` s.t. `h[a] = 1`, `Σ_{k≠a}|h_k| ≤ r` by
/// enumerating sign patterns and whether the budget binds.
pub fn l1_anchor_enumerate(q: &DMatrix<f64>, anchor: usize, r: f64) -> f64 {
    let n = q.nrows();
    let others: Vec<usize> = (0..n).filter(|&k| k != anchor).collect();
    let total = 3usize.pow(others.len() as u32);
    let mut best = f64::INFINITY;
    let mut signs = vec![0i8; others.len()];
    for code in 0..total {
        let mut c = code;
        for s in signs.iter_mut() {
            *s = (c % 3) as i8 - 1;
            c /= 3;
        }
        for budget in [false, true] {
            let free: Vec<usize> = others.iter().zip(&signs).filter(|(_, &s)| s != 0).map(|(&k, _)| k).collect();
            if budget && free.is_empty() {
                continue;
            }
            let f = free.len();
            let m = usize::from(budget);
            // Variables: the free taps; the anchor is fixed to 1.
            let mut kkt = DMatrix::zeros(f + m, f + m);
            let mut rhs = DVector::zeros(f + m);
            for (i, &ki) in free.iter().enumerate() {
                for (j, &kj) in free.iter().enumerate() {
                    kkt[(i, j)] = 2.0 * q[(ki, kj)];
                }
                rhs[i] = -2.0 * q[(ki, anchor)];
            }
            if budget {
                for (i, &ki) in free.iter().enumerate() {
                    let s = f64::from(signs[others.iter().position(|&o| o == ki).unwrap()]);
                    kkt[(f, i)] = s;
                    kkt[(i, f)] = s;
                }
                rhs[f] = r;
            }
            let sol = if f + m == 0 {
                DVector::zeros(0)
            } else {
                match kkt.lu().solve(&rhs) {
                    Some(s) => s,
                    None => continue,
                }
            };
            let mut h = DVector::zeros(n);
            h[anchor] = 1.0;
            let mut mass = 0.0;
            let mut ok = true;
            for (i, &ki) in free.iter().enumerate() {
                let s = f64::from(signs[others.iter().position(|&o| o == ki).unwrap()]);
                if s * sol[i] < -1e-12 {
                    ok = false;
                }
                h[ki] = sol[i];
                mass += sol[i].abs();
            }
            if ok && mass <= r * (1.0 + 1e-12) {
                best = best.min(h.dot(&(q * &h)));
            }
        }
    }
    best
}

/// Second-smallest over largest singular value of the channel-built map
/// `(h'_0, …, h'_{N-1}) ↦ (h_n * h'_m − h_m * h'_n)_{m<n}` with `l`-tap
/// unknowns. The channels are co-prime exactly when its null space is the
/// line through the channels themselves; a small ratio means a near-common
/// zero.
pub fn coprime_margin(chans: &[Vec<f64>], l: usize) -> f64 {
    let n = chans.len();
    let rows_per = chans[0].len() + l - 1;
    let pairs = n * (n - 1) / 2;
    let mut s = DMatrix::<f64>::zeros(rows_per * pairs, n * l);
    let mut p = 0;
    for m in 0..n {
        for q in m + 1..n {
            for k in 0..l {
                for (i, v) in chans[q].iter().enumerate() {
                    s[(p * rows_per + i + k, m * l + k)] += v;
                }
                for (i, v) in chans[m].iter().enumerate() {
                    s[(p * rows_per + i + k, q * l + k)] -= v;
                }
            }
            p += 1;
        }
    }
    let mut sv: Vec<f64> = s.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv[sv.len() - 2] / sv[0]
}
