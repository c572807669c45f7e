//! Predicted reward-risk against realized Sharpe, per month and side.

use std::collections::BTreeMap;

use serde::Serialize;

use super::ledger::TradeLedger;
use super::metrics::sharpe;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Side {
    Long,
    Short,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::Long => "long",
            Side::Short => "short",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRow {
    pub month: u32,
    pub side: Side,
    /// Median of `|predicted| / sigma` over the side's entries.
    pub median_reward_risk: f64,
    /// Sharpe of the side's daily net returns; negated for the short side.
    pub sharpe: Option<f64>,
    pub entries: usize,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Rows for every month and side with at least one open position.
pub fn calibration_report(ledger: &TradeLedger) -> Vec<CalibrationRow> {
    let mut rows = Vec::new();
    let months: Vec<u32> = {
        let mut m: Vec<u32> = ledger.days.iter().map(|d| d.1).collect();
        m.dedup();
        m
    };
    for month in months {
        let days: Vec<i64> = ledger.days.iter().filter(|d| d.1 == month).map(|d| d.0).collect();
        for side in [Side::Long, Side::Short] {
            let sign = if side == Side::Long { 1.0 } else { -1.0 };
            let mut ratios: Vec<f64> = ledger
                .records
                .iter()
                .filter(|r| r.month == month && !r.flatten && r.alpha * sign > 0.0 && r.sigma > 0.0)
                .map(|r| r.predicted.abs() / r.sigma)
                .collect();
            let entries = ratios.len();
            let Some(med) = median(&mut ratios) else {
                continue;
            };
            let mut daily: BTreeMap<i64, f64> = days.iter().map(|&d| (d, 0.0)).collect();
            for r in ledger.records.iter().filter(|r| r.month == month && r.side() == sign) {
                *daily.get_mut(&r.day).expect("ledger day") += r.net();
            }
            let nets: Vec<f64> = daily.into_values().collect();
            rows.push(CalibrationRow {
                month,
                side,
                median_reward_risk: med,
                sharpe: sharpe(&nets).map(|s| s * sign),
                entries,
            });
        }
    }
    rows
}
