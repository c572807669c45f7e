//! Realized performance statistics over daily net returns.

use std::collections::BTreeMap;

use super::ledger::TradeLedger;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyPnl {
    pub day: i64,
    pub month: u32,
    pub gross: f64,
    pub cost: f64,
    pub volume: f64,
}

impl DailyPnl {
    pub fn net(&self) -> f64 {
        self.gross - self.cost
    }
}

/// One row per ledger day, including days without trades.
pub fn daily_pnl(ledger: &TradeLedger) -> Vec<DailyPnl> {
    let mut out: Vec<DailyPnl> = ledger
        .days
        .iter()
        .map(|&(day, month)| DailyPnl {
            day,
            month,
            gross: 0.0,
            cost: 0.0,
            volume: 0.0,
        })
        .collect();
    let index: BTreeMap<i64, usize> = ledger.days.iter().enumerate().map(|(i, d)| (d.0, i)).collect();
    for r in &ledger.records {
        let d = &mut out[index[&r.day]];
        d.gross += r.gross;
        d.cost += r.cost;
        d.volume += r.traded;
    }
    out
}

/// Mean over sample standard deviation; `None` with fewer than two values
/// or no dispersion.
pub fn sharpe(returns: &[f64]) -> Option<f64> {
    let n = returns.len();
    if n < 2 {
        return None;
    }
    let mean = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 || !sd.is_finite() {
        None
    } else {
        Some(mean / sd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub days: usize,
    pub sharpe: Option<f64>,
    pub gross: f64,
    pub cost: f64,
    pub net: f64,
    pub volume: f64,
    /// Net profit per unit volume, the breakeven cost per unit.
    pub profit_over_volume: Option<f64>,
    pub avg_daily_volume: f64,
}

pub fn summarize(days: &[DailyPnl]) -> Summary {
    let nets: Vec<f64> = days.iter().map(|d| d.net()).collect();
    let gross = days.iter().map(|d| d.gross).sum();
    let cost = days.iter().map(|d| d.cost).sum();
    let net = nets.iter().sum();
    let volume: f64 = days.iter().map(|d| d.volume).sum();
    Summary {
        days: days.len(),
        sharpe: sharpe(&nets),
        gross,
        cost,
        net,
        volume,
        profit_over_volume: (volume > 0.0).then(|| net / volume),
        avg_daily_volume: if days.is_empty() { 0.0 } else { volume / days.len() as f64 },
    }
}

/// Per-month summaries keyed by `YYYYMM`.
pub fn monthly(days: &[DailyPnl]) -> BTreeMap<u32, Summary> {
    let mut groups: BTreeMap<u32, Vec<DailyPnl>> = BTreeMap::new();
    for d in days {
        groups.entry(d.month).or_default().push(*d);
    }
    groups.into_iter().map(|(m, v)| (m, summarize(&v))).collect()
}
