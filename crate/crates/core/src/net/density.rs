//! Gaussian heads: Cholesky assembly, the precision-form NLL and its
//! per-sample gradient.

use nalgebra::{DMatrix, DVector};

use super::config::CovarianceMode;

/// One forward pass' output for one input, in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPrediction {
    pub mu: DVector<f64>,
    /// Lower triangular with positive diagonal; the precision is `L L^T`.
    pub chol_l: DMatrix<f64>,
    pub sigma_a: DMatrix<f64>,
}

impl DensityPrediction {
    pub fn from_heads(mu: &[f64], raw: &[f64], mode: CovarianceMode) -> Self {
        let c = mu.len();
        let chol_l = assemble_cholesky(raw, c, mode);
        let sigma_a = cholesky_to_covariance(&chol_l);
        Self {
            mu: DVector::from_column_slice(mu),
            chol_l,
            sigma_a,
        }
    }
}

/// Raw log-diagonal values are clamped to `[-B, B]`. This keeps `exp`
/// finite and bounds how ill-conditioned `L` can get; the loss is flat in
/// a raw value beyond the bound.
pub const LOG_DIAG_BOUND: f64 = 7.0;

#[inline]
fn log_diag(raw: f64) -> f64 {
    raw.clamp(-LOG_DIAG_BOUND, LOG_DIAG_BOUND)
}

/// Builds `L` from the raw Cholesky-head outputs.
///
/// The first `c` raw values are the log-diagonal; in full mode the rest
/// fill the strict lower triangle row by row.
pub fn assemble_cholesky(raw: &[f64], c: usize, mode: CovarianceMode) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(c, c);
    for i in 0..c {
        l[(i, i)] = log_diag(raw[i]).exp();
    }
    if mode == CovarianceMode::Full {
        let mut k = c;
        for i in 1..c {
            for j in 0..i {
                l[(i, j)] = raw[k];
                k += 1;
            }
        }
    }
    l
}

/// `(L L^T)^{-1}` through the inverse of the triangular factor.
pub fn cholesky_to_covariance(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    // Forward substitution for L^{-1}, column by column.
    let mut inv = DMatrix::zeros(n, n);
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= l[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = s / l[(i, i)];
        }
    }
    let sigma = inv.transpose() * &inv;
    symmetrize(&sigma)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `-2 sum_i log l_ii + (y - mu)^T L L^T (y - mu)`.
pub fn mvn_nll(pred: &DensityPrediction, y: &[f64]) -> f64 {
    let l = &pred.chol_l;
    let c = l.nrows();
    let log_det: f64 = (0..c).map(|i| l[(i, i)].ln()).sum();
    let r = DVector::from_iterator(c, (0..c).map(|i| y[i] - pred.mu[i]));
    let v = l.transpose() * r;
    -2.0 * log_det + v.norm_squared()
}

/// Per-sample loss and gradients with respect to the mean head and the raw
/// Cholesky head, working directly on the head outputs.
///
/// `scratch` must hold at least `2 * c` values.
pub(crate) fn nll_with_grad(
    mu: &[f64],
    raw: &[f64],
    y: &[f64],
    mode: CovarianceMode,
    d_mu: &mut [f64],
    d_raw: &mut [f64],
    scratch: &mut [f64],
) -> f64 {
    let c = mu.len();
    let (r, v) = scratch[..2 * c].split_at_mut(c);
    for i in 0..c {
        r[i] = y[i] - mu[i];
    }
    let diag = |i: usize| log_diag(raw[i]).exp();
    // Strict-lower entry (i, j) sits at raw[c + i(i-1)/2 + j].
    let off = |i: usize, j: usize| raw[c + i * (i - 1) / 2 + j];
    let full = mode == CovarianceMode::Full;

    // v = L^T r, v_j = sum_{i >= j} L_ij r_i
    for j in 0..c {
        let mut s = diag(j) * r[j];
        if full {
            for i in j + 1..c {
                s += off(i, j) * r[i];
            }
        }
        v[j] = s;
    }
    let mut loss = 0.0;
    for j in 0..c {
        loss += v[j] * v[j] - 2.0 * log_diag(raw[j]);
    }
    // d/dr = 2 L v, d/dmu = -2 L v
    for i in 0..c {
        let mut s = diag(i) * v[i];
        if full {
            for j in 0..i {
                s += off(i, j) * v[j];
            }
        }
        d_mu[i] = -2.0 * s;
    }
    // d/dL_ij = 2 r_i v_j; the diagonal goes through exp.
    for i in 0..c {
        d_raw[i] = if raw[i].abs() < LOG_DIAG_BOUND {
            -2.0 + 2.0 * r[i] * v[i] * diag(i)
        } else {
            0.0
        };
    }
    if full {
        let mut k = c;
        for i in 1..c {
            for j in 0..i {
                d_raw[k] = 2.0 * r[i] * v[j];
                k += 1;
            }
        }
    }
    loss
}
