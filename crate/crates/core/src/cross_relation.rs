//! Convolution matrices and the stacked cross-relation system.
//!
//! For microphones `m < n` the identity `y_n * h_m = y_m * h_n` holds for
//! noiseless recordings. Stacking one block row per unordered pair gives a
//! linear operator `A` on the concatenated impulse responses whose null space
//! contains the true AIRs; every blind solver minimizes `‖A h‖²`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::dsp::convolve;
use crate::error::{invalid, Result};
use crate::room::{AirSet, ObservationSet};

/// Default cap on `N * L` below which the normal matrix is materialized for
/// iterative solvers.
pub const DEFAULT_DENSE_LIMIT: usize = 4096;

/// Full-convolution Toeplitz matrix of shape `(K + L - 1) x L`:
/// `entry(i, j) = y[i - j]` when `0 <= i - j < K`, else zero.
#[derive(Debug, Clone, Copy)]
pub struct ConvMatrix<'a> {
    generator: &'a [f64],
    cols: usize,
}

impl<'a> ConvMatrix<'a> {
    pub fn generator(&self) -> &'a [f64] {
        self.generator
    }

    pub fn rows(&self) -> usize {
        self.generator.len() + self.cols - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i >= j && i - j < self.generator.len() {
            self.generator[i - j]
        } else {
            0.0
        }
    }

    pub fn mul(&self, h: &[f64]) -> Vec<f64> {
        assert_eq!(h.len(), self.cols, "vector length must equal L");
        convolve(self.generator, h)
    }

    /// `Yᵀ r` for a residual of length `K + L - 1`.
    pub fn transpose_mul(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.rows(), "residual length must equal K + L - 1");
        (0..self.cols)
            .map(|j| {
                self.generator
                    .iter()
                    .zip(&r[j..])
                    .map(|(y, v)| y * v)
                    .sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), self.cols, |i, j| self.entry(i, j))
    }
}

pub fn build_conv_matrix(y: &[f64], channel_len: usize) -> Result<ConvMatrix<'_>> {
    if channel_len == 0 {
        return Err(invalid("channel length must be at least 1"));
    }
    if channel_len > y.len() {
        return Err(invalid(format!(
            "channel length {channel_len} exceeds recording length {}",
            y.len()
        )));
    }
    Ok(ConvMatrix {
        generator: y,
        cols: channel_len,
    })
}

/// All unordered microphone pairs `(m, n)` with `m < n`, in lexicographic order.
pub fn pair_list(n_mics: usize) -> Vec<(usize, usize)> {
    (0..n_mics)
        .flat_map(|m| (m + 1..n_mics).map(move |n| (m, n)))
        .collect()
}

/// Matrix-free cross-relation operator.
///
/// Block row `(m, n)` holds `Y_n` in slot `m` and `-Y_m` in slot `n`.
#[derive(Debug, Clone)]
pub struct CrossRelationSystem<'a> {
    mats: Vec<ConvMatrix<'a>>,
    channel_len: usize,
    pairs: Vec<(usize, usize)>,
}

impl<'a> CrossRelationSystem<'a> {
    pub fn new(obs: &'a ObservationSet, channel_len: usize) -> Result<Self> {
        obs.check_shape()?;
        if obs.n_mics() < 2 {
            return Err(invalid("cross-relations need at least two microphones"));
        }
        let mats = obs
            .recordings
            .iter()
            .map(|y| build_conv_matrix(y, channel_len))
            .collect::<Result<Vec<_>>>()?;
        Ok(CrossRelationSystem {
            mats,
            channel_len,
            pairs: pair_list(obs.n_mics()),
        })
    }

    pub fn n_mics(&self) -> usize {
        self.mats.len()
    }

    pub fn channel_len(&self) -> usize {
        self.channel_len
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    fn block_rows(&self) -> usize {
        self.mats[0].rows()
    }

    pub fn output_len(&self) -> usize {
        self.pairs.len() * self.block_rows()
    }

    /// `A h` for stacked `h` of length `N * L`.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        let l = self.channel_len;
        assert_eq!(h.len(), self.n_mics() * l);
        let mut out = Vec::with_capacity(self.output_len());
        for &(m, n) in &self.pairs {
            let a = self.mats[n].mul(&h[m * l..(m + 1) * l]);
            let b = self.mats[m].mul(&h[n * l..(n + 1) * l]);
            out.extend(a.iter().zip(&b).map(|(x, y)| x - y));
        }
        out
    }

    /// `Aᵀ r` for a residual of length [`Self::output_len`].
    pub fn apply_adjoint(&self, r: &[f64]) -> Vec<f64> {
        let l = self.channel_len;
        let rows = self.block_rows();
        assert_eq!(r.len(), self.output_len());
        let mut out = vec![0.0; self.n_mics() * l];
        for (k, &(m, n)) in self.pairs.iter().enumerate() {
            let block = &r[k * rows..(k + 1) * rows];
            let gm = self.mats[n].transpose_mul(block);
            let gn = self.mats[m].transpose_mul(block);
            for j in 0..l {
                out[m * l + j] += gm[j];
                out[n * l + j] -= gn[j];
            }
        }
        out
    }

    pub fn residual_norm_sq(&self, h: &[f64]) -> f64 {
        self.apply(h).iter().map(|v| v * v).sum()
    }
}

/// `Σ_{m<n} ‖y_n * h_m − y_m * h_n‖²` over every unordered pair.
pub fn cross_residual(obs: &ObservationSet, airs: &AirSet) -> Result<f64> {
    if obs.n_mics() != airs.n_channels() {
        return Err(invalid(format!(
            "{} recordings but {} channels",
            obs.n_mics(),
            airs.n_channels()
        )));
    }
    let sys = CrossRelationSystem::new(obs, airs.channel_len())?;
    Ok(sys.residual_norm_sq(&airs.stacked()))
}

/// Dense `AᵀA` together with the block layout it was built for.
#[derive(Debug, Clone)]
pub struct NormalMatrix {
    pub matrix: DMatrix<f64>,
    pub n_mics: usize,
    pub channel_len: usize,
}

impl NormalMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn quad_form(&self, h: &[f64]) -> f64 {
        let v = DVector::from_column_slice(h);
        v.dot(&(&self.matrix * &v))
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Sum of two normal matrices over disjoint row windows.
    pub fn add(&self, other: &NormalMatrix) -> NormalMatrix {
        assert_eq!(self.dim(), other.dim());
        NormalMatrix {
            matrix: &self.matrix + &other.matrix,
            n_mics: self.n_mics,
            channel_len: self.channel_len,
        }
    }
}

/// `AᵀA` of the full cross-relation system.
pub fn assemble_normal_matrix(obs: &ObservationSet, channel_len: usize) -> Result<NormalMatrix> {
    let rows = obs.len() + channel_len.saturating_sub(1);
    assemble_normal_matrix_rows(obs, channel_len, 0..rows)
}

/// `AᵀA` restricted to the equation rows `rows` of every pair block.
///
/// Row windows partition the time axis of the cross-relation equations, so
/// normal matrices of disjoint windows add up to the full one.
pub fn assemble_normal_matrix_rows(
    obs: &ObservationSet,
    channel_len: usize,
    rows: Range<usize>,
) -> Result<NormalMatrix> {
    obs.check_shape()?;
    let n = obs.n_mics();
    if n < 2 {
        return Err(invalid("cross-relations need at least two microphones"));
    }
    for y in &obs.recordings {
        build_conv_matrix(y, channel_len)?;
    }
    let total_rows = obs.len() + channel_len - 1;
    if rows.end > total_rows || rows.start >= rows.end {
        return Err(invalid(format!(
            "row window {rows:?} outside 0..{total_rows}"
        )));
    }
    let l = channel_len;
    let mut q = DMatrix::<f64>::zeros(n * l, n * l);

    // Autocorrelation blocks feed the diagonal, cross blocks the off-diagonal.
    let autos: Vec<DMatrix<f64>> = obs
        .recordings
        .iter()
        .map(|y| gram_block(y, y, l, &rows))
        .collect();
    for m in 0..n {
        let mut diag = DMatrix::<f64>::zeros(l, l);
        for (k, g) in autos.iter().enumerate() {
            if k != m {
                diag += g;
            }
        }
        q.view_mut((m * l, m * l), (l, l)).copy_from(&diag);
    }
    for m in 0..n {
        for k in m + 1..n {
            // Q[m][k] = -Y_kᵀ Y_m, Q[k][m] its transpose.
            let g = gram_block(&obs.recordings[k], &obs.recordings[m], l, &rows);
            q.view_mut((m * l, k * l), (l, l)).copy_from(&(-&g));
            q.view_mut((k * l, m * l), (l, l)).copy_from(&(-g.transpose()));
        }
    }
    Ok(NormalMatrix {
        matrix: q,
        n_mics: n,
        channel_len,
    })
}

/// `G(i, j) = Σ_{r ∈ rows} a[r − i] · b[r − j]`, zero outside each signal.
fn gram_block(a: &[f64], b: &[f64], l: usize, rows: &Range<usize>) -> DMatrix<f64> {
    let at = |s: &[f64], idx: isize| -> f64 {
        if idx >= 0 && (idx as usize) < s.len() {
            s[idx as usize]
        } else {
            0.0
        }
    };
    let direct = |i: usize, j: usize| -> f64 {
        let lo = rows.start.max(i).max(j);
        let hi = rows.end.min(a.len() + i).min(b.len() + j);
        (lo..hi).map(|r| a[r - i] * b[r - j]).sum()
    };
    let mut g = DMatrix::<f64>::zeros(l, l);
    for j in 0..l {
        g[(0, j)] = direct(0, j);
    }
    for i in 1..l {
        g[(i, 0)] = direct(i, 0);
    }
    let r0 = rows.start as isize;
    let r1 = rows.end as isize;
    for i in 0..l - 1 {
        for j in 0..l - 1 {
            let (ii, jj) = (i as isize, j as isize);
            let enter = at(a, r0 - 1 - ii) * at(b, r0 - 1 - jj);
            let leave = at(a, r1 - 1 - ii) * at(b, r1 - 1 - jj);
            g[(i + 1, j + 1)] = g[(i, j)] + enter - leave;
        }
    }
    g
}
