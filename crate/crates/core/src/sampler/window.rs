use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::align::CurveSeries;
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_LEN: usize = 100;

/// Divisor used for the window scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdConvention {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n - 1.
    Sample,
}

/// Per-contract shifts and the single global scale of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub shifts: Vec<f64>,
    pub scale: f64,
}

impl NormStats {
    #[inline]
    pub fn normalize(&self, contract: usize, price: f64) -> f64 {
        (price - self.shifts[contract]) / self.scale
    }

    #[inline]
    pub fn denormalize(&self, contract: usize, value: f64) -> f64 {
        self.scale * value + self.shifts[contract]
    }
}

/// An un-normalized window and the curve observation that follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    /// `window_len x contracts`, row-major.
    pub window: Vec<f64>,
    pub target: Vec<f64>,
    pub anchor_time: i64,
    pub target_time: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Normalized `window_len x contracts`, row-major.
    pub window: Vec<f64>,
    pub target: Vec<f64>,
    pub norm: NormStats,
    pub anchor_time: i64,
    pub target_time: i64,
    pub raw_target: Vec<f64>,
    /// Last raw row of the window; trading deltas are measured from here.
    pub last_raw: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// Every value in the window is identical, so the scale is zero.
    DegenerateScale,
}

/// Start rows of every window, in curve order. A day with `n` rows yields
/// `n - window_len` windows; none straddles a day boundary.
pub fn window_starts(curve: &CurveSeries, window_len: usize) -> Vec<usize> {
    curve
        .day_ranges()
        .into_iter()
        .flat_map(|r| {
            let n = r.len();
            let count = n.saturating_sub(window_len);
            (0..count).map(move |k| r.start + k)
        })
        .collect()
}

pub fn build_windows(curve: &CurveSeries, window_len: usize) -> Vec<RawWindow> {
    let c = curve.contracts;
    window_starts(curve, window_len)
        .into_iter()
        .map(|start| {
            let end = start + window_len;
            RawWindow {
                window: curve.prices[start * c..end * c].to_vec(),
                target: curve.row(end).to_vec(),
                anchor_time: curve.times[end - 1],
                target_time: curve.times[end],
            }
        })
        .collect()
}

/// Shift and scale statistics of a `rows x contracts` row-major window.
pub fn norm_stats(window: &[f64], contracts: usize, convention: StdConvention) -> Option<NormStats> {
    let rows = window.len() / contracts;
    let mut shifts = vec![0.0; contracts];
    for row in window.chunks_exact(contracts) {
        for (s, v) in shifts.iter_mut().zip(row) {
            *s += v;
        }
    }
    for s in shifts.iter_mut() {
        *s /= rows as f64;
    }
    let mut ss = 0.0;
    for row in window.chunks_exact(contracts) {
        for (s, v) in shifts.iter().zip(row) {
            let d = v - s;
            ss += d * d;
        }
    }
    let n = window.len() as f64;
    let denom = match convention {
        StdConvention::Population => n,
        StdConvention::Sample => n - 1.0,
    };
    let scale = (ss / denom).sqrt();
    if scale > 0.0 && scale.is_finite() {
        Some(NormStats { shifts, scale })
    } else {
        None
    }
}

/// Normalizes a window and its target with statistics from the window only.
pub fn normalize_window(
    raw: &RawWindow,
    contracts: usize,
    convention: StdConvention,
) -> std::result::Result<WindowSample, SkipReason> {
    let norm = norm_stats(&raw.window, contracts, convention).ok_or(SkipReason::DegenerateScale)?;
    let window = raw
        .window
        .iter()
        .enumerate()
        .map(|(i, &v)| norm.normalize(i % contracts, v))
        .collect();
    let target = raw
        .target
        .iter()
        .enumerate()
        .map(|(c, &v)| norm.normalize(c, v))
        .collect();
    let last_raw = raw.window[raw.window.len() - contracts..].to_vec();
    Ok(WindowSample {
        window,
        target,
        norm,
        anchor_time: raw.anchor_time,
        target_time: raw.target_time,
        raw_target: raw.target.clone(),
        last_raw,
    })
}

/// Maps a normalized prediction back to bps: `mu = s * mu_n + m`,
/// `sigma = s^2 * sigma_n`.
pub fn denormalize_prediction(
    mu_norm: &DVector<f64>,
    sigma_norm: &DMatrix<f64>,
    norm: &NormStats,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let c = norm.shifts.len();
    if mu_norm.len() != c {
        return Err(Error::shape("prediction mean", c, mu_norm.len()));
    }
    if sigma_norm.nrows() != c || sigma_norm.ncols() != c {
        return Err(Error::shape("prediction covariance", c, sigma_norm.nrows()));
    }
    let mu = DVector::from_iterator(c, (0..c).map(|i| norm.denormalize(i, mu_norm[i])));
    let sigma = sigma_norm * (norm.scale * norm.scale);
    Ok((mu, sigma))
}

/// Per-contract population standard deviation of a raw window, in bps.
pub fn realized_vol(window: &[f64], contracts: usize) -> Vec<f64> {
    let rows = window.len() / contracts;
    (0..contracts)
        .map(|c| {
            let mean = window.iter().skip(c).step_by(contracts).sum::<f64>() / rows as f64;
            let var = window
                .iter()
                .skip(c)
                .step_by(contracts)
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / rows as f64;
            var.sqrt()
        })
        .collect()
}
