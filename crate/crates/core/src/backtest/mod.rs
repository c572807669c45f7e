//! Sizing, trading simulation, walk-forward evaluation and reports.

pub mod calibration;
pub mod io;
pub mod ledger;
pub mod metrics;
pub mod report;
pub mod sizing;
pub mod walk_forward;

pub use calibration::{calibration_report, median, CalibrationRow, Side};
pub use io::{read_forecasts, read_forecasts_from, write_forecasts, write_forecasts_to};
pub use ledger::{run_backtest, CostModel, ForecastEvent, TradeLedger, TradeRecord};
pub use metrics::{daily_pnl, monthly, sharpe, summarize, DailyPnl, Summary};
pub use report::PerformanceReport;
pub use sizing::{alpha_optimality_check, portfolio_sharpe, size_position, StrategyKind, StrategySpec};
pub use walk_forward::{
    add_months, concat_forecasts, dropout_seed, evaluate, evaluate_dropout, fold_seed, make_folds, predict_seed,
    report_from_folds, report_from_forecasts, run_fold, walk_forward,
    BacktestConfig, Fold, FoldRun, Scenario, ScenarioResult, SweepConfig, WalkForwardConfig,
};
