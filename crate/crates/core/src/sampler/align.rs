use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::MicropriceSeries;

pub const NANOS_PER_DAY: i64 = 86_400_000_000_000;

/// UTC day number (days since the epoch) of a timestamp.
pub fn day_number(timestamp: i64) -> i64 {
    timestamp.div_euclid(NANOS_PER_DAY)
}

/// Aligned, down-sampled curve observations.
///
/// `prices` is row-major: row `i` holds the `contracts` microprices
/// recorded at `times[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub contracts: usize,
    pub times: Vec<i64>,
    pub prices: Vec<f64>,
    /// Row index at which each trading day starts.
    pub day_boundaries: Vec<usize>,
}

impl CurveSeries {
    pub fn empty(contracts: usize) -> Self {
        Self {
            contracts,
            times: Vec::new(),
            prices: Vec::new(),
            day_boundaries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.prices[i * self.contracts..(i + 1) * self.contracts]
    }

    /// Half-open row ranges, one per day.
    pub fn day_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.day_boundaries.len());
        for (k, &start) in self.day_boundaries.iter().enumerate() {
            let end = self.day_boundaries.get(k + 1).copied().unwrap_or(self.len());
            out.push(start..end);
        }
        out
    }

    fn push_row(&mut self, t: i64, row: &[f64]) {
        self.times.push(t);
        self.prices.extend_from_slice(row);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayWarning {
    pub day: i64,
    pub reason: String,
}

/// Aligns per-contract microprice series onto common event times.
///
/// Each day starts with an observation at the first instant every contract
/// has quoted. After an observation at `t*`, the next one is taken at the
/// earliest `t > t*` where some contract's latest microprice has moved by at
/// least `cutoff` from its value at `t*`. Every contract is recorded at its
/// most recent microprice at or before `t`.
pub fn align_and_downsample(
    series: &[MicropriceSeries],
    cutoff: f64,
) -> Result<(CurveSeries, Vec<DayWarning>)> {
    if !(cutoff > 0.0) {
        return Err(Error::Config(format!("cutoff must be positive, got {cutoff}")));
    }
    let contracts = series.len();
    if contracts == 0 {
        return Err(Error::Data("no contracts supplied".into()));
    }
    let mut days: Vec<i64> = series
        .iter()
        .flat_map(|s| s.entries.iter().map(|e| day_number(e.0)))
        .collect();
    days.sort_unstable();
    days.dedup();

    let mut curve = CurveSeries::empty(contracts);
    let mut warnings = Vec::new();
    let mut cursors = vec![0usize; contracts];
    let mut merged: Vec<(i64, usize, f64)> = Vec::new();

    for day in days {
        merged.clear();
        let mut missing = Vec::new();
        for (c, s) in series.iter().enumerate() {
            let start = cursors[c];
            let mut end = start;
            while end < s.entries.len() && day_number(s.entries[end].0) == day {
                end += 1;
            }
            cursors[c] = end;
            if end == start {
                missing.push(c);
            }
            merged.extend(s.entries[start..end].iter().map(|&(t, p)| (t, c, p)));
        }
        if !missing.is_empty() {
            warnings.push(DayWarning {
                day,
                reason: format!("no quotes for contracts {missing:?}; day skipped"),
            });
            continue;
        }
        merged.sort_by_key(|e| (e.0, e.1));
        downsample_day(&merged, contracts, cutoff, &mut curve);
    }
    Ok((curve, warnings))
}

fn downsample_day(events: &[(i64, usize, f64)], contracts: usize, cutoff: f64, curve: &mut CurveSeries) {
    let mut latest: Vec<Option<f64>> = vec![None; contracts];
    let mut last_obs: Option<Vec<f64>> = None;
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        while i < events.len() && events[i].0 == t {
            latest[events[i].1] = Some(events[i].2);
            i += 1;
        }
        let trigger = match &last_obs {
            None => latest.iter().all(Option::is_some),
            Some(prev) => latest
                .iter()
                .zip(prev)
                .any(|(p, q)| (p.unwrap() - q).abs() >= cutoff),
        };
        if trigger {
            let row: Vec<f64> = latest.iter().map(|p| p.unwrap()).collect();
            if last_obs.is_none() {
                curve.day_boundaries.push(curve.len());
            }
            curve.push_row(t, &row);
            last_obs = Some(row);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T0: i64 = 17_532 * NANOS_PER_DAY + 8 * 3_600_000_000_000;

    fn series(c: usize, pts: &[(i64, f64)]) -> MicropriceSeries {
        MicropriceSeries {
            contract_id: c,
            entries: pts.to_vec(),
        }
    }

    #[test]
    fn no_move_gives_single_entry() {
        let a = series(0, &[(T0, 9750.0), (T0 + 10, 9750.05), (T0 + 20, 9749.96)]);
        let b = series(1, &[(T0 + 5, 9740.0), (T0 + 15, 9740.09)]);
        let (curve, warnings) = align_and_downsample(&[a, b], 0.1).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(curve.len(), 1);
        assert_eq!(curve.times, vec![T0 + 5]);
        assert_eq!(curve.row(0), &[9750.0, 9740.0]);
        assert_eq!(curve.day_boundaries, vec![0]);
    }

    #[test]
    fn hand_stepped_trigger() {
        // Contract 0: 9750.00 -> 9750.04 -> 9750.12; contract 1 flat.
        let a = series(0, &[(T0, 9750.00), (T0 + 10, 9750.04), (T0 + 20, 9750.12)]);
        let b = series(1, &[(T0, 9740.0), (T0 + 15, 9740.0)]);
        let (curve, _) = align_and_downsample(&[a, b], 0.1).unwrap();
        assert_eq!(curve.times, vec![T0, T0 + 20]);
        assert_eq!(curve.row(1), &[9750.12, 9740.0]);
    }

    #[test]
    fn trigger_compares_against_last_observation() {
        // Two 0.06 steps cross the cutoff cumulatively.
        let a = series(0, &[(T0, 0.0), (T0 + 1, 0.06), (T0 + 2, 0.12), (T0 + 3, 0.18), (T0 + 4, 0.25)]);
        let (curve, _) = align_and_downsample(&[a], 0.1).unwrap();
        assert_eq!(curve.times, vec![T0, T0 + 2, T0 + 4]);
    }

    #[test]
    fn zero_cutoff_rejected() {
        let a = series(0, &[(T0, 1.0)]);
        assert!(matches!(align_and_downsample(&[a], 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn day_with_silent_contract_is_skipped() {
        let next = T0 + NANOS_PER_DAY;
        let a = series(0, &[(T0, 1.0), (next, 2.0)]);
        let b = series(1, &[(next + 1, 3.0)]);
        let (curve, warnings) = align_and_downsample(&[a, b], 0.1).unwrap();
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].day, day_number(T0));
        assert_eq!(curve.times, vec![next + 1]);
        assert_eq!(curve.day_boundaries, vec![0]);
    }

    #[test]
    fn rule_one_restarts_each_day() {
        let next = T0 + NANOS_PER_DAY;
        let a = series(0, &[(T0, 1.0), (T0 + 1, 1.5), (next, 1.5), (next + 1, 1.55)]);
        let (curve, _) = align_and_downsample(&[a], 0.1).unwrap();
        assert_eq!(curve.times, vec![T0, T0 + 1, next]);
        assert_eq!(curve.day_boundaries, vec![0, 2]);
        assert_eq!(curve.day_ranges(), vec![0..2, 2..3]);
    }
}
