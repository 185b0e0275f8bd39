//! Monotone accelerated projected gradient for `min hᵀQh` over a closed
//! convex set with a cheap exact projection.
//!
//! The iteration is FISTA with function-value restart: a candidate that does
//! not lower the objective is rejected and the momentum reset, so iterates
//! never increase the objective relative to the (projected) starting point.
//! Convergence is measured by the relative length of a projected gradient
//! step, `‖h − P(h − ∇f(h)/Lip)‖ / ‖h‖`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed convex set with an exact Euclidean projection.
pub trait ConvexSet {
    fn project(&self, v: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Iterations between convergence checks.
    pub check_every: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            max_iters: 5000,
            tol: 1e-6,
            check_every: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iters: usize,
    pub converged: bool,
    pub kkt: f64,
}

/// Minimize `xᵀ Q x` over `set`, starting from the projection of `x0`.
///
/// `lambda_max` must bound the largest eigenvalue of `Q` from above.
pub fn minimize<S: ConvexSet>(
    q: &DMatrix<f64>,
    lambda_max: f64,
    set: &S,
    x0: &[f64],
    opts: &QpOptions,
) -> Result<QpOutcome> {
    let n = q.nrows();
    assert_eq!(x0.len(), n);
    if !(lambda_max.is_finite() && lambda_max >= 0.0) {
        return Err(Error::NumericalFailure(format!(
            "invalid spectral bound {lambda_max}"
        )));
    }
    let mut x = DVector::from_column_slice(x0);
    set.project(x.as_mut_slice());
    let mut qx = q * &x;
    let mut fx = x.dot(&qx);
    if lambda_max == 0.0 {
        return Ok(QpOutcome {
            x: x.as_slice().to_vec(),
            objective: fx,
            iters: 0,
            converged: true,
            kkt: 0.0,
        });
    }
    // Gradient is 2Qh, so the step is 1 / (2 λmax).
    let step = 1.0 / (2.0 * lambda_max);

    let mut y = x.clone();
    let mut qy = qx.clone();
    let mut t = 1.0f64;
    let mut z = DVector::<f64>::zeros(n);
    let mut qz = DVector::<f64>::zeros(n);
    let mut kkt = kkt_residual(&x, &qx, step, set);
    let mut iters = 0;
    let mut stalled = false;
    if kkt <= opts.tol {
        return Ok(finish(x, fx, iters, true, kkt));
    }

    while iters < opts.max_iters {
        iters += 1;
        z.copy_from(&y);
        z.axpy(-2.0 * step, &qy, 1.0);
        set.project(z.as_mut_slice());
        qz.gemv(1.0, q, &z, 0.0);
        let fz = z.dot(&qz);
        if !fz.is_finite() {
            return Err(Error::NumericalFailure("objective diverged".into()));
        }

        if fz <= fx {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            // y = z + beta (z - x), and the same recombination for Q y.
            y.copy_from(&z);
            y.axpy(-beta, &x, 1.0 + beta);
            qy.copy_from(&qz);
            qy.axpy(-beta, &qx, 1.0 + beta);
            std::mem::swap(&mut x, &mut z);
            std::mem::swap(&mut qx, &mut qz);
            fx = fz;
            t = t_next;
            stalled = false;
        } else {
            // A rejected plain gradient step means x is stationary to
            // working precision.
            if stalled {
                break;
            }
            stalled = true;
            t = 1.0;
            y.copy_from(&x);
            qy.copy_from(&qx);
        }

        if iters % opts.check_every == 0 {
            kkt = kkt_residual(&x, &qx, step, set);
            if kkt <= opts.tol {
                return Ok(finish(x, fx, iters, true, kkt));
            }
        }
    }
    kkt = kkt_residual(&x, &qx, step, set);
    let converged = kkt <= opts.tol;
    Ok(finish(x, fx, iters, converged, kkt))
}

fn finish(x: DVector<f64>, fx: f64, iters: usize, converged: bool, kkt: f64) -> QpOutcome {
    QpOutcome {
        x: x.as_slice().to_vec(),
        objective: fx,
        iters,
        converged,
        kkt,
    }
}

fn kkt_residual<S: ConvexSet>(x: &DVector<f64>, qx: &DVector<f64>, step: f64, set: &S) -> f64 {
    let mut probe = x.clone();
    probe.axpy(-2.0 * step, qx, 1.0);
    set.project(probe.as_mut_slice());
    let scale = x.norm();
    if scale == 0.0 {
        return (probe - x).norm();
    }
    (probe - x).norm() / scale
}

/// Projection of `v` onto `{z : ‖z‖₁ ≤ radius}` (sort-based).
pub fn project_l1_ball(v: &mut [f64], radius: f64) {
    let mass: f64 = v.iter().map(|x| x.abs()).sum();
    if mass <= radius {
        return;
    }
    if radius <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let theta = simplex_threshold(v.iter().map(|x| x.abs()), radius);
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - theta).max(0.0);
    }
}

/// Projection of `v` onto `{z ≥ 0 : Σz ≤ radius}`.
pub fn project_capped_simplex(v: &mut [f64], radius: f64) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let mass: f64 = v.iter().sum();
    if mass <= radius {
        return;
    }
    if radius <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let theta = simplex_threshold(v.iter().copied(), radius);
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

/// Threshold `θ ≥ 0` with `Σ max(u_i − θ, 0) = radius` for non-negative `u`
/// whose sum exceeds `radius`.
fn simplex_threshold(u: impl Iterator<Item = f64>, radius: f64) -> f64 {
    let mut sorted: Vec<f64> = u.collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &val) in sorted.iter().enumerate() {
        cum += val;
        let candidate = (cum - radius) / (k + 1) as f64;
        if val > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    theta.max(0.0)
}

/// `{h : h[anchor] = 1, Σ_{k≠anchor} |h_k| ≤ radius}`, optionally with `h ≥ 0`.
#[derive(Debug, Clone)]
pub struct AnchorSet {
    pub anchor: usize,
    pub radius: f64,
    pub nonneg: bool,
}

impl ConvexSet for AnchorSet {
    fn project(&self, v: &mut [f64]) {
        v[self.anchor] = 0.0;
        if self.nonneg {
            project_capped_simplex(v, self.radius);
        } else {
            project_l1_ball(v, self.radius);
        }
        v[self.anchor] = 1.0;
    }
}

/// `{h ≥ 0 : p_nᵀ h_n = 1 for every channel n, Σ h ≤ epsilon}`.
///
/// The projection solves the dual in two nested one-dimensional problems:
/// the budget multiplier `μ ≥ 0` by safeguarded regula falsi and, for each
/// `μ`, one equality multiplier per channel by an exact breakpoint scan.
#[derive(Debug, Clone)]
pub struct SlackSet {
    slack: Vec<f64>,
    channel_len: usize,
    epsilon: f64,
    min_mass: f64,
}

impl SlackSet {
    /// `slack` is stacked like `h` and must be non-negative with at least one
    /// positive entry per channel.
    pub fn new(slack: Vec<f64>, channel_len: usize, epsilon: f64) -> Result<Self> {
        assert_eq!(slack.len() % channel_len, 0);
        let mut min_mass = 0.0;
        for (n, p) in slack.chunks(channel_len).enumerate() {
            let peak = p.iter().copied().fold(0.0, f64::max);
            if peak <= 0.0 || p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::DegenerateInitialization {
                    step: 0,
                    reason: format!("slack vector of channel {n} has no positive entry"),
                });
            }
            min_mass += 1.0 / peak;
        }
        if epsilon < min_mass * (1.0 - 1e-12) {
            return Err(Error::InfeasibleConstraints(format!(
                "L1 budget {epsilon:.6e} below the minimum {min_mass:.6e} needed by the slack equalities"
            )));
        }
        Ok(SlackSet {
            slack,
            channel_len,
            epsilon,
            min_mass,
        })
    }

    pub fn slack(&self) -> &[f64] {
        &self.slack
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn min_mass(&self) -> f64 {
        self.min_mass
    }

    /// Projection with a fixed budget multiplier, written into `out`.
    /// Returns the total mass.
    fn project_shifted(&self, v: &[f64], mu: f64, out: &mut [f64], scratch: &mut Vec<(f64, usize)>) -> f64 {
        let l = self.channel_len;
        let mut total = 0.0;
        for ((vn, pn), on) in v
            .chunks(l)
            .zip(self.slack.chunks(l))
            .zip(out.chunks_mut(l))
        {
            let lambda = channel_multiplier(vn, pn, mu, scratch);
            for k in 0..l {
                let val = (vn[k] - mu + lambda * pn[k]).max(0.0);
                on[k] = val;
                total += val;
            }
        }
        total
    }
}

/// Solve `Σ_k p_k max(0, v_k − μ + λ p_k) = 1` for `λ`.
fn channel_multiplier(v: &[f64], p: &[f64], mu: f64, scratch: &mut Vec<(f64, usize)>) -> f64 {
    scratch.clear();
    for (k, (&vk, &pk)) in v.iter().zip(p).enumerate() {
        if pk > 0.0 {
            scratch.push(((mu - vk) / pk, k));
        }
    }
    scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
    // On [b_j, b_{j+1}] the active set is the first j + 1 breakpoints and
    // the left side is affine in λ.
    let mut a = 0.0;
    let mut b = 0.0;
    for j in 0..scratch.len() {
        let k = scratch[j].1;
        a += p[k] * (v[k] - mu);
        b += p[k] * p[k];
        let lambda = (1.0 - a) / b;
        let next = scratch.get(j + 1).map_or(f64::INFINITY, |s| s.0);
        if lambda <= next {
            return lambda.max(scratch[j].0);
        }
    }
    unreachable!("slack vector has a positive entry")
}

impl ConvexSet for SlackSet {
    fn project(&self, v: &mut [f64]) {
        let n = v.len();
        let input = v.to_vec();
        let mut scratch = Vec::with_capacity(self.channel_len);
        let s0 = self.project_shifted(&input, 0.0, v, &mut scratch);
        if s0 <= self.epsilon {
            return;
        }
        let mut buf = vec![0.0; n];
        let phi = |mu: f64, buf: &mut [f64], scratch: &mut Vec<(f64, usize)>| {
            self.project_shifted(&input, mu, buf, scratch) - self.epsilon
        };
        // Bracket the root of the non-increasing mass function.
        let (mut lo, mut f_lo) = (0.0, s0 - self.epsilon);
        let mut hi = input.iter().fold(0.0f64, |m, x| m.max(x.abs())) + 1.0;
        let mut f_hi = phi(hi, &mut buf, &mut scratch);
        while f_hi > 0.0 {
            lo = hi;
            f_lo = f_hi;
            hi *= 2.0;
            f_hi = phi(hi, &mut buf, &mut scratch);
            if !hi.is_finite() {
                break;
            }
        }
        // Illinois regula falsi holding the feasible end of the bracket.
        let mut side = 0i8;
        for _ in 0..200 {
            if f_hi == 0.0 || (hi - lo) <= 1e-15 * hi.max(1e-300) {
                break;
            }
            let mut mu = hi - f_hi * (hi - lo) / (f_hi - f_lo);
            if !(mu > lo && mu < hi) {
                mu = 0.5 * (lo + hi);
            }
            let f_mu = phi(mu, &mut buf, &mut scratch);
            if f_mu > 0.0 {
                lo = mu;
                f_lo = f_mu;
                if side == -1 {
                    f_hi *= 0.5;
                }
                side = -1;
            } else {
                hi = mu;
                f_hi = f_mu;
                if side == 1 {
                    f_lo *= 0.5;
                }
                side = 1;
                if f_mu >= -1e-13 * self.epsilon {
                    break;
                }
            }
        }
        self.project_shifted(&input, hi, v, &mut scratch);
    }
}
