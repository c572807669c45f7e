//! Month-based walk-forward protocol and strategy/sweep evaluation.

use serde::{Deserialize, Serialize};

use super::calibration::{calibration_report, CalibrationRow};
use super::ledger::{run_backtest, CostModel, ForecastEvent};
use super::metrics::{daily_pnl, DailyPnl};
use super::report::PerformanceReport;
use super::sizing::{StrategyKind, StrategySpec};
use crate::error::{Error, Result};
use crate::model::{fit_model, forecast, ModelConfig, TrainedModel};
use crate::sampler::{month_offset, Dataset};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub strategies: Vec<StrategyKind>,
    pub threshold: f64,
    pub rescale_ref: (f64, f64),
    pub clip: Option<f64>,
    pub costs: CostModel,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            strategies: StrategyKind::ALL.to_vec(),
            threshold: 0.1,
            rescale_ref: (0.3, 0.1),
            clip: None,
            costs: CostModel::default(),
        }
    }
}

impl BacktestConfig {
    pub fn spec(&self, kind: StrategyKind, threshold: f64) -> StrategySpec {
        StrategySpec {
            kind,
            threshold,
            rescale_ref: self.rescale_ref,
            clip: self.clip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub cost_multiples: Vec<u32>,
    pub thresholds: Vec<f64>,
    /// Retrains every fold once per rate; empty disables the sweep.
    pub dropout_rates: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            cost_multiples: (0..=12).collect(),
            thresholds: vec![0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0],
            dropout_rates: Vec::new(),
        }
    }
}

/// Train on months `1..m-1`, validate on `m`, test on `m+1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub m: usize,
    pub train_months: Vec<u32>,
    pub val_month: u32,
    pub test_month: u32,
}

/// `YYYYMM` plus `k` months.
pub fn add_months(key: u32, k: i64) -> u32 {
    let total = (key / 100) as i64 * 12 + (key % 100) as i64 - 1 + k;
    ((total / 12) * 100 + total % 12 + 1) as u32
}

/// Folds for each `m`, with months counted from the first data month.
pub fn make_folds(months: &[u32], ms: &[usize]) -> Result<Vec<Fold>> {
    let Some(&first) = months.iter().min() else {
        return Err(Error::Data("dataset has no samples".into()));
    };
    let last = *months.iter().max().expect("non-empty");
    let span = month_offset(first, last) + 1;
    if span < 8 {
        return Err(Error::Data(format!("walk-forward needs at least 8 months of data, got {span}")));
    }
    ms.iter()
        .map(|&m| {
            if m < 2 {
                return Err(Error::Config(format!("fold month {m} leaves no training months")));
            }
            Ok(Fold {
                m,
                train_months: (0..m as i64 - 1).map(|k| add_months(first, k)).collect(),
                val_month: add_months(first, m as i64 - 1),
                test_month: add_months(first, m as i64),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scenario {
    Main,
    Cost(u32),
    Threshold(f64),
    Dropout(f64),
}

impl Scenario {
    pub fn axis(&self) -> &'static str {
        match self {
            Scenario::Main => "main",
            Scenario::Cost(_) => "cost",
            Scenario::Threshold(_) => "threshold",
            Scenario::Dropout(_) => "dropout",
        }
    }

    pub fn value(&self) -> String {
        match self {
            Scenario::Main => String::new(),
            Scenario::Cost(m) => m.to_string(),
            Scenario::Threshold(x) | Scenario::Dropout(x) => x.to_string(),
        }
    }

    pub fn parse(axis: &str, value: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad scenario '{axis}={value}'"));
        Ok(match axis {
            "main" => Scenario::Main,
            "cost" => Scenario::Cost(value.parse().map_err(|_| bad())?),
            "threshold" => Scenario::Threshold(value.parse().map_err(|_| bad())?),
            "dropout" => Scenario::Dropout(value.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub strategy: StrategyKind,
    pub daily: Vec<DailyPnl>,
    /// Filled for the main scenario only.
    pub calibration: Vec<CalibrationRow>,
}

/// Main scenario plus cost and threshold sweeps over the test events.
pub fn evaluate(events: &[ForecastEvent], cfg: &BacktestConfig, sweeps: &SweepConfig) -> Result<Vec<ScenarioResult>> {
    let mut out = Vec::new();
    for &kind in &cfg.strategies {
        let ledger = run_backtest(events, &cfg.spec(kind, cfg.threshold), &cfg.costs)?;
        out.push(ScenarioResult {
            scenario: Scenario::Main,
            strategy: kind,
            daily: daily_pnl(&ledger),
            calibration: if kind == StrategyKind::Base { Vec::new() } else { calibration_report(&ledger) },
        });
    }
    for &mult in &sweeps.cost_multiples {
        let costs = CostModel {
            multiple: mult,
            ..cfg.costs
        };
        for &kind in &cfg.strategies {
            let ledger = run_backtest(events, &cfg.spec(kind, cfg.threshold), &costs)?;
            out.push(ScenarioResult {
                scenario: Scenario::Cost(mult),
                strategy: kind,
                daily: daily_pnl(&ledger),
                calibration: Vec::new(),
            });
        }
    }
    for &th in &sweeps.thresholds {
        for &kind in &cfg.strategies {
            let ledger = run_backtest(events, &cfg.spec(kind, th), &cfg.costs)?;
            out.push(ScenarioResult {
                scenario: Scenario::Threshold(th),
                strategy: kind,
                daily: daily_pnl(&ledger),
                calibration: Vec::new(),
            });
        }
    }
    Ok(out)
}

/// Main-setting results for forecasts produced at another dropout rate.
pub fn evaluate_dropout(rate: f64, events: &[ForecastEvent], cfg: &BacktestConfig) -> Result<Vec<ScenarioResult>> {
    cfg.strategies
        .iter()
        .map(|&kind| {
            let ledger = run_backtest(events, &cfg.spec(kind, cfg.threshold), &cfg.costs)?;
            Ok(ScenarioResult {
                scenario: Scenario::Dropout(rate),
                strategy: kind,
                daily: daily_pnl(&ledger),
                calibration: Vec::new(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkForwardConfig {
    pub folds: Vec<usize>,
    pub model: ModelConfig,
    pub backtest: BacktestConfig,
    pub sweeps: SweepConfig,
}

impl Default for WalkForwardConfig {
    fn default() -> Self {
        Self {
            folds: (7..=11).collect(),
            model: ModelConfig::default(),
            backtest: BacktestConfig::default(),
            sweeps: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FoldRun {
    pub fold: Fold,
    pub model: TrainedModel,
    pub forecasts: Vec<ForecastEvent>,
    pub dropout_forecasts: Vec<(f64, Vec<ForecastEvent>)>,
}

pub fn fold_seed(seed: u64, m: usize) -> u64 {
    derive_seed(seed, &["fold", &m.to_string()])
}

pub fn dropout_seed(seed: u64, m: usize, rate: f64) -> u64 {
    derive_seed(seed, &["fold", &m.to_string(), "dropout", &rate.to_string()])
}

pub fn predict_seed(seed: u64, m: usize) -> u64 {
    derive_seed(seed, &["predict", &m.to_string()])
}

/// Trains and forecasts one fold. `None` when the test month has no samples.
pub fn run_fold(dataset: &Dataset, fold: &Fold, cfg: &WalkForwardConfig, seed: u64) -> Result<Option<FoldRun>> {
    let test_idx = dataset.indices_in_months(&[fold.test_month]);
    if test_idx.is_empty() {
        log::warn!("fold {}: test month {} has no samples", fold.m, fold.test_month);
        return Ok(None);
    }
    let train_idx = dataset.indices_in_months(&fold.train_months);
    let val_idx = dataset.indices_in_months(&[fold.val_month]);
    let model = fit_model(dataset, &train_idx, &val_idx, &cfg.model, fold_seed(seed, fold.m))?;
    let psd = predict_seed(seed, fold.m);
    let forecasts = forecast(dataset, &test_idx, &model, cfg.model.mc_samples, psd)?;
    let mut dropout_forecasts = Vec::new();
    if cfg.model.kind != crate::model::ModelKind::Bayes {
        for &rate in &cfg.sweeps.dropout_rates {
            let mut mc = cfg.model.clone();
            mc.network.dropout_rate = rate;
            let m = fit_model(dataset, &train_idx, &val_idx, &mc, dropout_seed(seed, fold.m, rate))?;
            dropout_forecasts.push((rate, forecast(dataset, &test_idx, &m, cfg.model.mc_samples, psd)?));
        }
    }
    Ok(Some(FoldRun {
        fold: fold.clone(),
        model,
        forecasts,
        dropout_forecasts,
    }))
}

/// Joins per-fold forecasts into one time-ordered test stream.
pub fn concat_forecasts<'a>(parts: impl IntoIterator<Item = &'a [ForecastEvent]>) -> Vec<ForecastEvent> {
    let mut all: Vec<ForecastEvent> = parts.into_iter().flat_map(|p| p.iter().cloned()).collect();
    all.sort_by_key(|e| e.anchor_time);
    all
}

/// Builds the report from finished folds.
pub fn report_from_folds(label: &str, folds: &[Fold], runs: &[FoldRun], cfg: &WalkForwardConfig) -> Result<PerformanceReport> {
    let events = concat_forecasts(runs.iter().map(|r| r.forecasts.as_slice()));
    let mut dropout = Vec::new();
    for &rate in &cfg.sweeps.dropout_rates {
        let parts: Vec<&[ForecastEvent]> = runs
            .iter()
            .filter_map(|r| r.dropout_forecasts.iter().find(|(x, _)| *x == rate).map(|(_, e)| e.as_slice()))
            .collect();
        if !parts.is_empty() {
            dropout.push((rate, concat_forecasts(parts)));
        }
    }
    let months = folds.iter().map(|f| f.test_month).collect();
    report_from_forecasts(label, months, &events, &dropout, cfg)
}

/// Builds the report from the joined test streams of the main model and of
/// each dropout-sweep retrain.
pub fn report_from_forecasts(
    label: &str,
    test_months: Vec<u32>,
    events: &[ForecastEvent],
    dropout: &[(f64, Vec<ForecastEvent>)],
    cfg: &WalkForwardConfig,
) -> Result<PerformanceReport> {
    let mut results = evaluate(events, &cfg.backtest, &cfg.sweeps)?;
    for (rate, ev) in dropout {
        results.extend(evaluate_dropout(*rate, ev, &cfg.backtest)?);
    }
    Ok(PerformanceReport {
        model: label.to_string(),
        test_months,
        results,
    })
}

/// Fused protocol: every fold, then the report.
pub fn walk_forward(dataset: &Dataset, cfg: &WalkForwardConfig, seed: u64) -> Result<(Vec<FoldRun>, PerformanceReport)> {
    let folds = make_folds(&dataset.months(), &cfg.folds)?;
    let mut runs = Vec::new();
    for fold in &folds {
        if let Some(run) = run_fold(dataset, fold, cfg, seed)? {
            runs.push(run);
        }
    }
    let report = report_from_folds(cfg.model.kind.label(), &folds, &runs, cfg)?;
    Ok((runs, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn month_arithmetic() {
        assert_eq!(add_months(201801, 0), 201801);
        assert_eq!(add_months(201801, 11), 201812);
        assert_eq!(add_months(201811, 3), 201902);
    }

    #[test]
    fn twelve_months_give_five_folds() {
        let months: Vec<u32> = (0..12).map(|k| add_months(201801, k)).collect();
        let folds = make_folds(&months, &[7, 8, 9, 10, 11]).unwrap();
        let tests: Vec<u32> = folds.iter().map(|f| f.test_month).collect();
        assert_eq!(tests, vec![201808, 201809, 201810, 201811, 201812]);
        assert_eq!(folds[0].train_months.len(), 6);
        assert_eq!(folds[0].val_month, 201807);
        assert!(make_folds(&months[..7], &[7]).is_err());
    }

    #[test]
    fn scenario_labels_round_trip() {
        for s in [Scenario::Main, Scenario::Cost(3), Scenario::Threshold(0.25), Scenario::Dropout(0.1)] {
            assert_eq!(Scenario::parse(s.axis(), &s.value()).unwrap(), s);
        }
    }
}
