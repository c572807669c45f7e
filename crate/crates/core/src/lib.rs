//! Probabilistic forecasting of futures curves and uncertainty-aware
//! position sizing.

pub mod backtest;
pub mod bayes;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod market;
pub mod model;
pub mod net;
pub mod pipeline;
pub mod sampler;
pub mod seed;
pub mod uncertainty;

pub use error::{Error, Result};
