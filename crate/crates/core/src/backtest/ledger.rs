//! Delta-adjusted trading simulation.

use serde::{Deserialize, Serialize};

use super::sizing::{size_position, StrategyKind, StrategySpec};
use crate::error::{Error, Result};

/// Everything the strategies need at one anchor time, in bps.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEvent {
    pub anchor_time: i64,
    pub day: i64,
    /// `YYYYMM`
    pub month: u32,
    /// Predicted change from the last window price to the next observation.
    pub predicted: Vec<f64>,
    /// Realized change over the same interval, when known.
    pub realized: Option<Vec<f64>>,
    pub sigma_rlsd: Vec<f64>,
    pub sigma_alea: Vec<f64>,
    pub sigma_alep: Vec<f64>,
}

impl ForecastEvent {
    pub fn contracts(&self) -> usize {
        self.predicted.len()
    }

    /// The uncertainty a strategy sizes with; Base reads the total.
    pub fn sigma(&self, kind: StrategyKind) -> &[f64] {
        match kind {
            StrategyKind::RlsdVol => &self.sigma_rlsd,
            StrategyKind::Alea => &self.sigma_alea,
            StrategyKind::Base | StrategyKind::AlEp => &self.sigma_alep,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// bps per unit of traded volume.
    pub element: f64,
    pub multiple: u32,
    /// Charge costs on the end-of-day flatten.
    pub charge_flatten: bool,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            element: 0.005,
            multiple: 1,
            charge_flatten: true,
        }
    }
}

impl CostModel {
    pub fn rate(&self) -> f64 {
        self.element * self.multiple as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeRecord {
    pub timestamp: i64,
    pub day: i64,
    pub month: u32,
    pub contract: usize,
    pub predicted: f64,
    pub sigma: f64,
    /// Position held after this record.
    pub alpha: f64,
    /// Position held before it.
    pub prev: f64,
    pub traded: f64,
    pub realized: f64,
    pub gross: f64,
    pub cost: f64,
    pub flatten: bool,
}

impl TradeRecord {
    pub fn net(&self) -> f64 {
        self.gross - self.cost
    }

    /// Sign of the exposure this record belongs to: the new position, or
    /// the one being closed.
    pub fn side(&self) -> f64 {
        if self.alpha != 0.0 {
            self.alpha.signum()
        } else if self.prev != 0.0 {
            self.prev.signum()
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeLedger {
    pub spec: StrategySpec,
    pub costs: CostModel,
    pub records: Vec<TradeRecord>,
    /// Every traded day with its month, in order.
    pub days: Vec<(i64, u32)>,
    /// Events dropped for lack of a realized price.
    pub skipped: usize,
    /// Positions left flat because the strategy's sigma was not positive.
    pub no_sigma: usize,
}

impl TradeLedger {
    pub fn total_volume(&self) -> f64 {
        self.records.iter().map(|r| r.traded).sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.records.iter().map(|r| r.cost).sum()
    }

    pub fn total_gross(&self) -> f64 {
        self.records.iter().map(|r| r.gross).sum()
    }
}

/// Runs one strategy over time-ordered events. Each contract is traded
/// independently; only the change in target position is transacted and
/// every position is closed at the end of its day.
pub fn run_backtest(events: &[ForecastEvent], spec: &StrategySpec, costs: &CostModel) -> Result<TradeLedger> {
    spec.validate()?;
    let c = events.first().map_or(0, |e| e.contracts());
    let rate = costs.rate();
    let mut ledger = TradeLedger {
        spec: *spec,
        costs: *costs,
        records: Vec::with_capacity(events.len() * c),
        days: Vec::new(),
        skipped: 0,
        no_sigma: 0,
    };
    let mut pos = vec![0.0; c];
    let mut last: Option<(i64, i64, u32)> = None;

    let flatten = |ledger: &mut TradeLedger, pos: &mut [f64], (t, day, month): (i64, i64, u32)| {
        for (k, p) in pos.iter_mut().enumerate() {
            if *p == 0.0 {
                continue;
            }
            let traded = p.abs();
            ledger.records.push(TradeRecord {
                timestamp: t,
                day,
                month,
                contract: k,
                predicted: 0.0,
                sigma: 0.0,
                alpha: 0.0,
                prev: *p,
                traded,
                realized: 0.0,
                gross: 0.0,
                cost: if costs.charge_flatten { rate * traded } else { 0.0 },
                flatten: true,
            });
            *p = 0.0;
        }
    };

    for ev in events {
        if ev.contracts() != c || ev.sigma(spec.kind).len() != c {
            return Err(Error::shape("forecast contracts", c, ev.contracts()));
        }
        if let Some((t, day, month)) = last {
            if ev.anchor_time < t {
                return Err(Error::Data(format!("forecast events out of order at {}", ev.anchor_time)));
            }
            if ev.day != day {
                flatten(&mut ledger, &mut pos, (t, day, month));
            }
        }
        if ledger.days.last().map(|d| d.0) != Some(ev.day) {
            ledger.days.push((ev.day, ev.month));
        }
        let Some(realized) = &ev.realized else {
            ledger.skipped += 1;
            continue;
        };
        let sigma = ev.sigma(spec.kind);
        for k in 0..c {
            let alpha = match size_position(ev.predicted[k], sigma[k], spec) {
                Ok(a) => a,
                Err(Error::Sizing(_)) => {
                    ledger.no_sigma += 1;
                    0.0
                }
                Err(e) => return Err(e),
            };
            let traded = (alpha - pos[k]).abs();
            ledger.records.push(TradeRecord {
                timestamp: ev.anchor_time,
                day: ev.day,
                month: ev.month,
                contract: k,
                predicted: ev.predicted[k],
                sigma: sigma[k],
                alpha,
                prev: pos[k],
                traded,
                realized: realized[k],
                gross: alpha * realized[k],
                cost: rate * traded,
                flatten: false,
            });
            pos[k] = alpha;
        }
        last = Some((ev.anchor_time, ev.day, ev.month));
    }
    if let Some(l) = last {
        flatten(&mut ledger, &mut pos, l);
    }
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn event(t: i64, day: i64, pred: f64, sigma: f64, realized: f64) -> ForecastEvent {
        ForecastEvent {
            anchor_time: t,
            day,
            month: 201801,
            predicted: vec![pred],
            realized: Some(vec![realized]),
            sigma_rlsd: vec![sigma],
            sigma_alea: vec![sigma],
            sigma_alep: vec![sigma],
        }
    }

    #[test]
    fn hand_simulated_three_events() {
        // alpha path 1, 0.25, -1 (k = 1/30), flatten 1 at the end.
        let events = [
            event(1, 0, 0.3, 0.1, 0.5),
            event(2, 0, 0.3, 0.2, -0.4),
            event(3, 0, -0.3, 0.1, -0.2),
        ];
        let costs = CostModel {
            multiple: 2,
            ..CostModel::default()
        };
        let l = run_backtest(&events, &StrategySpec::new(StrategyKind::Alea), &costs).unwrap();
        let alpha: Vec<f64> = l.records.iter().map(|r| r.alpha).collect();
        let traded: Vec<f64> = l.records.iter().map(|r| r.traded).collect();
        let gross: Vec<f64> = l.records.iter().map(|r| r.gross).collect();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&alpha, &[1.0, 0.25, -1.0, 0.0]));
        assert!(close(&traded, &[1.0, 0.75, 1.25, 1.0]));
        assert!(close(&gross, &[0.5, -0.1, 0.2, 0.0]));
        let cost: Vec<f64> = l.records.iter().map(|r| r.cost).collect();
        assert!(close(&cost, &[0.01, 0.0075, 0.0125, 0.01]));
        assert!(l.records[3].flatten);
    }

    #[test]
    fn silent_day_has_no_trades() {
        let events = [event(1, 0, 0.05, 0.1, 1.0), event(2, 0, -0.02, 0.1, 2.0)];
        for kind in StrategyKind::ALL {
            let l = run_backtest(&events, &StrategySpec::new(kind), &CostModel::default()).unwrap();
            assert_eq!(l.total_volume(), 0.0);
            assert_eq!(l.total_gross(), 0.0);
            assert_eq!(l.total_cost(), 0.0);
            assert_eq!(l.days, vec![(0, 201801)]);
        }
    }

    #[test]
    fn flat_at_each_day_boundary() {
        let events = [
            event(1, 0, 0.5, 0.1, 1.0),
            event(2, 1, -0.5, 0.1, 1.0),
            event(3, 1, 0.5, 0.1, 1.0),
        ];
        let l = run_backtest(&events, &StrategySpec::new(StrategyKind::Base), &CostModel::default()).unwrap();
        let mut pos = 0.0;
        let mut day = 0;
        for r in &l.records {
            if r.day != day {
                assert_eq!(pos, 0.0);
                day = r.day;
            }
            assert_eq!(r.prev, pos);
            pos = r.alpha;
        }
        assert_eq!(pos, 0.0);
    }

    #[test]
    fn missing_realized_is_skipped() {
        let mut e = event(1, 0, 0.5, 0.1, 1.0);
        e.realized = None;
        let l = run_backtest(&[e, event(2, 0, 0.5, 0.1, 1.0)], &StrategySpec::new(StrategyKind::Base), &CostModel::default()).unwrap();
        assert_eq!(l.skipped, 1);
        assert_eq!(l.records.len(), 2);
    }

    #[test]
    fn zero_sigma_stays_flat() {
        let l = run_backtest(&[event(1, 0, 0.5, 0.0, 1.0)], &StrategySpec::new(StrategyKind::RlsdVol), &CostModel::default()).unwrap();
        assert_eq!(l.no_sigma, 1);
        assert_eq!(l.total_volume(), 0.0);
    }

    #[test]
    fn out_of_order_rejected() {
        let events = [event(2, 0, 0.5, 0.1, 1.0), event(1, 0, 0.5, 0.1, 1.0)];
        assert!(run_backtest(&events, &StrategySpec::default(), &CostModel::default()).is_err());
    }
}
