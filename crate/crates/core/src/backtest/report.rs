//! Report tables and their long-form inputs as delimited text.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::calibration::{CalibrationRow, Side};
use super::metrics::{monthly, summarize, DailyPnl, Summary};
use super::sizing::StrategyKind;
use super::walk_forward::{Scenario, ScenarioResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceReport {
    pub model: String,
    /// Every fold's test month, populated or not.
    pub test_months: Vec<u32>,
    pub results: Vec<ScenarioResult>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

fn io_err(e: std::io::Error) -> Error {
    Error::Format(format!("report write: {e}"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("report csv: {e}"))
}

impl PerformanceReport {
    pub fn find(&self, scenario: Scenario, kind: StrategyKind) -> Option<&ScenarioResult> {
        self.results
            .iter()
            .find(|r| r.scenario == scenario && r.strategy == kind)
    }

    pub fn strategies(&self) -> Vec<StrategyKind> {
        let mut v: Vec<StrategyKind> = self
            .results
            .iter()
            .filter(|r| r.scenario == Scenario::Main)
            .map(|r| r.strategy)
            .collect();
        v.dedup();
        v
    }

    pub fn summary(&self, scenario: Scenario, kind: StrategyKind) -> Option<Summary> {
        self.find(scenario, kind).map(|r| summarize(&r.daily))
    }

    pub fn cumulative_sharpe(&self, kind: StrategyKind) -> Option<f64> {
        self.summary(Scenario::Main, kind).and_then(|s| s.sharpe)
    }

    pub fn monthly_sharpe(&self, kind: StrategyKind, month: u32) -> Option<f64> {
        let r = self.find(Scenario::Main, kind)?;
        monthly(&r.daily).get(&month).and_then(|s| s.sharpe)
    }

    fn scenario_points(&self, axis: &str) -> Vec<Scenario> {
        let mut v: Vec<Scenario> = Vec::new();
        for r in &self.results {
            if r.scenario.axis() == axis && !v.contains(&r.scenario) {
                v.push(r.scenario);
            }
        }
        v
    }

    /// Rows are test months plus `Cuml`; columns are `<model>:<strategy>`.
    pub fn write_sharpe_table<W: Write>(&self, mut w: W) -> Result<()> {
        let kinds = self.strategies();
        let header: Vec<String> = kinds.iter().map(|k| format!("{}:{}", self.model, k.label())).collect();
        writeln!(w, "month,{}", header.join(",")).map_err(io_err)?;
        for &m in &self.test_months {
            let cells: Vec<String> = kinds.iter().map(|&k| cell(self.monthly_sharpe(k, m))).collect();
            writeln!(w, "{}-{:02},{}", m / 100, m % 100, cells.join(",")).map_err(io_err)?;
        }
        let cells: Vec<String> = kinds.iter().map(|&k| cell(self.cumulative_sharpe(k))).collect();
        writeln!(w, "Cuml,{}", cells.join(",")).map_err(io_err)?;
        Ok(())
    }

    /// One row per sweep point and strategy with cumulative statistics.
    pub fn write_sweep<W: Write>(&self, axis: &str, mut w: W) -> Result<()> {
        writeln!(w, "{axis},strategy,sharpe,net_bps,gross_bps,cost_bps,volume,avg_daily_volume,profit_over_volume").map_err(io_err)?;
        for sc in self.scenario_points(axis) {
            for k in self.strategies() {
                let Some(s) = self.summary(sc, k) else { continue };
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    sc.value(),
                    k.label(),
                    cell(s.sharpe),
                    s.net,
                    s.gross,
                    s.cost,
                    s.volume,
                    s.avg_daily_volume,
                    cell(s.profit_over_volume)
                )
                .map_err(io_err)?;
            }
        }
        Ok(())
    }

    pub fn write_calibration<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "strategy,month,side,median_reward_risk,sharpe,entries").map_err(io_err)?;
        for r in self.results.iter().filter(|r| r.scenario == Scenario::Main) {
            for c in &r.calibration {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    r.strategy.label(),
                    c.month,
                    c.side.label(),
                    c.median_reward_risk,
                    cell(c.sharpe),
                    c.entries
                )
                .map_err(io_err)?;
            }
        }
        Ok(())
    }

    /// Daily and cumulative net bps per strategy for the main scenario.
    pub fn write_cumulative<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "strategy,day,month,net_bps,cumulative_bps").map_err(io_err)?;
        for r in self.results.iter().filter(|r| r.scenario == Scenario::Main) {
            let mut cum = 0.0;
            for d in &r.daily {
                cum += d.net();
                writeln!(w, "{},{},{},{},{}", r.strategy.label(), d.day, d.month, d.net(), cum).map_err(io_err)?;
            }
        }
        Ok(())
    }

    /// Every scenario's daily rows; with [`write_calibration`] this is all
    /// the report needs.
    pub fn write_daily<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["axis", "value", "strategy", "day", "month", "gross", "cost", "volume"])
            .map_err(csv_err)?;
        for r in &self.results {
            for d in &r.daily {
                out.write_record([
                    r.scenario.axis().to_string(),
                    r.scenario.value(),
                    r.strategy.label().to_string(),
                    d.day.to_string(),
                    d.month.to_string(),
                    d.gross.to_string(),
                    d.cost.to_string(),
                    d.volume.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush().map_err(io_err)
    }

    /// Inverse of [`write_daily`] plus [`write_calibration`].
    pub fn read(model: &str, test_months: Vec<u32>, daily: impl Read, calibration: impl Read) -> Result<Self> {
        let mut results: Vec<ScenarioResult> = Vec::new();
        let mut index: BTreeMap<(String, String, String), usize> = BTreeMap::new();
        let mut rdr = csv::Reader::from_reader(daily);
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Format(format!("bad number '{s}'"))) };
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != 8 {
                return Err(Error::Format(format!("daily row has {} fields", rec.len())));
            }
            let key = (rec[0].to_string(), rec[1].to_string(), rec[2].to_string());
            let slot = match index.get(&key) {
                Some(&i) => i,
                None => {
                    let strategy = StrategyKind::parse(&rec[2]).ok_or_else(|| Error::Format(format!("unknown strategy '{}'", &rec[2])))?;
                    results.push(ScenarioResult {
                        scenario: Scenario::parse(&rec[0], &rec[1])?,
                        strategy,
                        daily: Vec::new(),
                        calibration: Vec::new(),
                    });
                    index.insert(key, results.len() - 1);
                    results.len() - 1
                }
            };
            results[slot].daily.push(DailyPnl {
                day: rec[3].parse().map_err(|_| Error::Format("bad day".into()))?,
                month: rec[4].parse().map_err(|_| Error::Format("bad month".into()))?,
                gross: num(&rec[5])?,
                cost: num(&rec[6])?,
                volume: num(&rec[7])?,
            });
        }
        let mut rdr = csv::Reader::from_reader(calibration);
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != 6 {
                return Err(Error::Format(format!("calibration row has {} fields", rec.len())));
            }
            let strategy = StrategyKind::parse(&rec[0]).ok_or_else(|| Error::Format("unknown strategy".into()))?;
            let side = match &rec[2] {
                "long" => Side::Long,
                "short" => Side::Short,
                s => return Err(Error::Format(format!("unknown side '{s}'"))),
            };
            let row = CalibrationRow {
                month: rec[1].parse().map_err(|_| Error::Format("bad month".into()))?,
                side,
                median_reward_risk: num(&rec[3])?,
                sharpe: if &rec[4] == "-" { None } else { Some(num(&rec[4])?) },
                entries: rec[5].parse().map_err(|_| Error::Format("bad count".into()))?,
            };
            let target = results
                .iter_mut()
                .find(|r| r.scenario == Scenario::Main && r.strategy == strategy)
                .ok_or_else(|| Error::Format("calibration row without a main result".into()))?;
            target.calibration.push(row);
        }
        Ok(Self {
            model: model.to_string(),
            test_months,
            results,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> PerformanceReport {
        let day = |day, month, gross: f64| DailyPnl { day, month, gross, cost: 0.1, volume: 2.0 };
        PerformanceReport {
            model: "mlp-diag".into(),
            test_months: vec![201808, 201809],
            results: vec![
                ScenarioResult {
                    scenario: Scenario::Main,
                    strategy: StrategyKind::Base,
                    daily: vec![day(0, 201808, 1.0), day(1, 201808, 2.0), day(2, 201808, 0.3)],
                    calibration: vec![],
                },
                ScenarioResult {
                    scenario: Scenario::Main,
                    strategy: StrategyKind::AlEp,
                    daily: vec![day(0, 201808, 0.1), day(1, 201808, 0.2), day(2, 201808, 0.7)],
                    calibration: vec![CalibrationRow {
                        month: 201808,
                        side: Side::Short,
                        median_reward_risk: 1.25,
                        sharpe: None,
                        entries: 4,
                    }],
                },
                ScenarioResult {
                    scenario: Scenario::Threshold(0.5),
                    strategy: StrategyKind::AlEp,
                    daily: vec![day(0, 201808, 0.1)],
                    calibration: vec![],
                },
            ],
        }
    }

    #[test]
    fn table_marks_absent_months() {
        let mut buf = Vec::new();
        report().write_sharpe_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "month,mlp-diag:Base,mlp-diag:AlEp");
        assert!(lines[2].starts_with("2018-09,-,-"));
        assert!(lines[3].starts_with("Cuml,"));
    }

    #[test]
    fn daily_and_calibration_round_trip() {
        let r = report();
        let mut daily = Vec::new();
        let mut cal = Vec::new();
        r.write_daily(&mut daily).unwrap();
        r.write_calibration(&mut cal).unwrap();
        let back = PerformanceReport::read("mlp-diag", r.test_months.clone(), &daily[..], &cal[..]).unwrap();
        assert_eq!(back, r);
    }
}
