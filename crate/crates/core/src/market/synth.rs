//! Seeded synthetic Level-1 quote generator.
//!
//! Recipe, per trading day and contract `c`:
//!
//! * a latent fair value `F_c` follows a Gaussian random walk on a common
//!   intraday grid, with one-factor cross-contract correlation;
//! * the innovation scale is heteroskedastic: a per-contract level rising
//!   with maturity, a lognormal daily regime and an AR(1) intraday log-vol
//!   that is partly shared and partly contract specific;
//! * the planted signal is a drift `-kappa * (F_c - A_c)` pulling the fair
//!   value back towards `A_c`, an exponential moving average of its own
//!   trailing path (a fixed linear functional of the trailing window);
//! * quotes sit on a grid of `spread` bps with the sub-spread position of
//!   the fair value carried by the bid/ask size imbalance, so the
//!   microprice tracks `F_c` up to volume rounding.
//!
//! Each contract quotes on a random subset of the grid, so every contract
//! has its own irregular timestamps. Days are generated from independent
//! seeds and can be produced in any order.

use chrono::{NaiveDate, NaiveTime};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::quote::QuoteEvent;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Expected range of a standard Brownian motion over unit time, 2*sqrt(2/pi).
const BM_RANGE: f64 = 1.595_769_121_605_731;
const EMA_SPAN: f64 = 20.0;
const MAX_REVERSION: f64 = 0.1;
const BASE_VOLUME: f64 = 100.0;
const SESSION_OPEN_HOUR: u32 = 8;
const SESSION_HOURS: i64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticMarketConfig {
    pub contracts: usize,
    pub seed: u64,
    pub quotes_per_day: usize,
    /// Per-contract daily quote counts vary uniformly within +/- this bound.
    pub count_jitter: usize,
    pub daily_hi_lo_target: f64,
    pub spread: f64,
    pub signal_strength: f64,
    pub correlation: f64,
    pub days: usize,
    /// Trading days placed in each calendar month; at most 28.
    pub days_per_month: usize,
    pub start_year: i32,
    /// Multiplier on the innovation scale; 0 freezes prices.
    pub noise_scale: f64,
    /// Relative jitter of total top-of-book size.
    pub volume_jitter: f64,
    /// Dispersion of the intraday log-vol process.
    pub vol_of_vol: f64,
    /// AR(1) coefficient of the intraday log-vol, per grid step.
    pub vol_persistence: f64,
    pub base_price: f64,
}

impl Default for SyntheticMarketConfig {
    fn default() -> Self {
        Self {
            contracts: 9,
            seed: 7,
            quotes_per_day: 600,
            count_jitter: 20,
            daily_hi_lo_target: 4.0,
            spread: 0.5,
            signal_strength: 0.5,
            correlation: 0.6,
            days: 48,
            days_per_month: 4,
            start_year: 2018,
            noise_scale: 1.0,
            volume_jitter: 0.2,
            vol_of_vol: 0.6,
            vol_persistence: 0.99,
            base_price: 9750.0,
        }
    }
}

impl SyntheticMarketConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic market: {m}")));
        if self.contracts == 0 || self.quotes_per_day == 0 || self.days == 0 {
            return bad("contracts, quotes_per_day and days must be positive");
        }
        if self.days_per_month == 0 || self.days_per_month > 28 {
            return bad("days_per_month must be in 1..=28");
        }
        if self.count_jitter >= self.quotes_per_day {
            return bad("count_jitter must be below quotes_per_day");
        }
        if !(self.spread > 0.0) {
            return bad("spread must be positive");
        }
        if !(self.daily_hi_lo_target > 0.0) {
            return bad("daily_hi_lo_target must be positive");
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return bad("signal_strength must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return bad("correlation must lie in [0, 1)");
        }
        if !(self.noise_scale >= 0.0) || !(self.volume_jitter >= 0.0) || self.volume_jitter >= 1.0 {
            return bad("noise_scale must be >= 0 and volume_jitter in [0, 1)");
        }
        if !(self.vol_of_vol >= 0.0) {
            return bad("vol_of_vol must be >= 0");
        }
        if !(0.0..1.0).contains(&self.vol_persistence) {
            return bad("vol_persistence must lie in [0, 1)");
        }
        Ok(())
    }

    /// Calendar date of synthetic trading day `day`.
    pub fn day_date(&self, day: usize) -> NaiveDate {
        let month_offset = (day / self.days_per_month) as i32;
        let year = self.start_year + month_offset / 12;
        let month = (month_offset % 12) as u32 + 1;
        let dom = (day % self.days_per_month) as u32 + 1;
        NaiveDate::from_ymd_opt(year, month, dom).expect("day of month <= 28")
    }

    fn grid_len(&self) -> usize {
        self.quotes_per_day + self.count_jitter
    }

    fn reversion(&self) -> f64 {
        MAX_REVERSION * self.signal_strength
    }
}

fn day_open_ns(date: NaiveDate) -> i64 {
    date.and_time(NaiveTime::from_hms_opt(SESSION_OPEN_HOUR, 0, 0).unwrap())
        .and_utc()
        .timestamp_nanos_opt()
        .expect("timestamp in range")
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Latent fair-value paths for one day, `[contract][grid step]`.
fn simulate_day_paths(cfg: &SyntheticMarketConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let c_count = cfg.contracts;
    let grid = cfg.grid_len();
    let kappa = cfg.reversion();
    // Mean reversion towards the EMA shrinks the long-horizon range by
    // about 1 + kappa * span; scale the innovations back up.
    let range_comp = 1.0 + kappa * EMA_SPAN;
    let base_step = cfg.noise_scale * cfg.daily_hi_lo_target * range_comp
        / (BM_RANGE * (grid as f64).sqrt());

    let maturity: Vec<f64> = (0..c_count)
        .map(|c| {
            if c_count == 1 {
                1.0
            } else {
                0.75 + 0.5 * c as f64 / (c_count - 1) as f64
            }
        })
        .collect();
    let regime_sd = 0.25;
    let regime = (regime_sd * normal(rng) - 0.5 * regime_sd * regime_sd).exp();
    let vv = cfg.vol_of_vol;
    let innov = (1.0 - cfg.vol_persistence * cfg.vol_persistence).sqrt();
    let rho = cfg.correlation;

    let mut fair: Vec<f64> = (0..c_count)
        .map(|c| cfg.base_price - 4.0 * c as f64 + 5.0 * normal(rng))
        .collect();
    let mut ema = fair.clone();
    let mut common_h = vv * normal(rng);
    let mut idio_h: Vec<f64> = (0..c_count).map(|_| vv * normal(rng)).collect();
    let mut paths = vec![Vec::with_capacity(grid); c_count];
    let mut shocks = vec![0.0; c_count];
    let alpha = 1.0 / EMA_SPAN;

    for _ in 0..grid {
        for c in 0..c_count {
            paths[c].push(fair[c]);
        }
        common_h = cfg.vol_persistence * common_h + innov * vv * normal(rng);
        let z0 = normal(rng);
        for (c, shock) in shocks.iter_mut().enumerate() {
            idio_h[c] = cfg.vol_persistence * idio_h[c] + innov * vv * normal(rng);
            let z = rho.sqrt() * z0 + (1.0 - rho).sqrt() * normal(rng);
            // Log-vol is split evenly between the shared and the contract part;
            // the -vv^2/4 term keeps the mean multiplier at one.
            let h = std::f64::consts::FRAC_1_SQRT_2 * (common_h + idio_h[c]);
            let vol = base_step * maturity[c] * regime * (h - 0.25 * vv * vv).exp();
            *shock = vol * z;
        }
        for c in 0..c_count {
            let drift = -kappa * (fair[c] - ema[c]);
            ema[c] += alpha * (fair[c] - ema[c]);
            fair[c] += drift + shocks[c];
        }
    }
    paths
}

fn quote_at(cfg: &SyntheticMarketConfig, fair: f64, rng: &mut ChaCha8Rng) -> (f64, f64, u64, u64) {
    let bid = (fair / cfg.spread).floor() * cfg.spread;
    let ask = bid + cfg.spread;
    let frac = ((fair - bid) / cfg.spread).clamp(0.0, 1.0);
    let jitter = if cfg.volume_jitter > 0.0 {
        rng.random_range(-cfg.volume_jitter..=cfg.volume_jitter)
    } else {
        0.0
    };
    let total = (BASE_VOLUME * (1.0 + jitter)).round().max(2.0) as u64;
    // microprice = bid + spread * bid_volume / total
    let bid_volume = (frac * total as f64).round() as u64;
    (bid, ask, bid_volume, total - bid_volume)
}

/// Quotes for one trading day, one stream per contract.
pub fn generate_day(cfg: &SyntheticMarketConfig, day: usize) -> Vec<Vec<QuoteEvent>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &["synth-day", &day.to_string()]));
    let paths = simulate_day_paths(cfg, &mut rng);
    let grid = cfg.grid_len();
    let open = day_open_ns(cfg.day_date(day));
    let step_ns = SESSION_HOURS * 3_600_000_000_000 / grid as i64;
    let j = cfg.count_jitter as i64;

    (0..cfg.contracts)
        .map(|c| {
            let count = (cfg.quotes_per_day as i64 + rng.random_range(-j..=j)) as usize;
            let mut steps = sample(&mut rng, grid, count).into_vec();
            steps.sort_unstable();
            steps
                .into_iter()
                .map(|g| {
                    let (bid, ask, bv, av) = quote_at(cfg, paths[c][g], &mut rng);
                    QuoteEvent {
                        contract_id: c,
                        timestamp: open + g as i64 * step_ns + c as i64,
                        bid_price: bid,
                        ask_price: ask,
                        bid_volume: bv,
                        ask_volume: av,
                    }
                })
                .collect()
        })
        .collect()
}

/// Generates all configured days; one time-ordered stream per contract.
pub fn generate_synthetic_market(cfg: &SyntheticMarketConfig) -> Result<Vec<Vec<QuoteEvent>>> {
    cfg.validate()?;
    let mut streams: Vec<Vec<QuoteEvent>> = vec![Vec::new(); cfg.contracts];
    for day in 0..cfg.days {
        for (c, day_quotes) in generate_day(cfg, day).into_iter().enumerate() {
            streams[c].extend(day_quotes);
        }
    }
    Ok(streams)
}

/// Merges per-contract streams into one (timestamp, contract)-ordered list.
pub fn merge_streams(streams: &[Vec<QuoteEvent>]) -> Vec<QuoteEvent> {
    let mut all: Vec<QuoteEvent> = streams.iter().flatten().copied().collect();
    all.sort_by_key(|q| (q.timestamp, q.contract_id));
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::quote::microprice;
    use std::collections::BTreeMap;

    fn small() -> SyntheticMarketConfig {
        SyntheticMarketConfig {
            days: 3,
            ..SyntheticMarketConfig::default()
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let cfg = small();
        let a = generate_synthetic_market(&cfg).unwrap();
        let b = generate_synthetic_market(&cfg).unwrap();
        assert_eq!(a, b);
        let other = generate_synthetic_market(&SyntheticMarketConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn zero_innovation_freezes_prices() {
        let cfg = SyntheticMarketConfig {
            noise_scale: 0.0,
            volume_jitter: 0.0,
            days: 1,
            ..SyntheticMarketConfig::default()
        };
        for stream in generate_synthetic_market(&cfg).unwrap() {
            let prices: Vec<f64> = stream.iter().map(|q| microprice(q).unwrap()).collect();
            let hi = prices.iter().cloned().fold(f64::MIN, f64::max);
            let lo = prices.iter().cloned().fold(f64::MAX, f64::min);
            assert_eq!(hi - lo, 0.0);
        }
    }

    #[test]
    fn quote_counts_respect_jitter_bound() {
        let cfg = SyntheticMarketConfig {
            days: 1,
            ..SyntheticMarketConfig::default()
        };
        let streams = generate_synthetic_market(&cfg).unwrap();
        assert_eq!(streams.len(), 9);
        for s in &streams {
            let n = s.len() as i64;
            assert!((n - cfg.quotes_per_day as i64).abs() <= cfg.count_jitter as i64);
            assert!(s.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        }
    }

    #[test]
    fn quotes_are_well_formed() {
        let streams = generate_synthetic_market(&small()).unwrap();
        for q in streams.iter().flatten() {
            assert!((q.ask_price - q.bid_price - 0.5).abs() < 1e-9);
            assert!(q.bid_volume + q.ask_volume > 0);
        }
    }

    #[test]
    fn daily_range_near_target() {
        let cfg = SyntheticMarketConfig {
            days: 20,
            ..SyntheticMarketConfig::default()
        };
        let streams = generate_synthetic_market(&cfg).unwrap();
        let mut ranges = Vec::new();
        for s in &streams {
            let mut by_day: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
            for q in s {
                let p = microprice(q).unwrap();
                let e = by_day
                    .entry(q.timestamp / 86_400_000_000_000)
                    .or_insert((f64::MAX, f64::MIN));
                e.0 = e.0.min(p);
                e.1 = e.1.max(p);
            }
            ranges.extend(by_day.values().map(|(lo, hi)| hi - lo));
        }
        let mean = ranges.iter().sum::<f64>() / ranges.len() as f64;
        let target = cfg.daily_hi_lo_target;
        assert!(
            mean > 0.5 * target && mean < 1.5 * target,
            "mean daily hi-lo {mean} vs target {target}"
        );
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = SyntheticMarketConfig::default();
        for cfg in [
            SyntheticMarketConfig { contracts: 0, ..base.clone() },
            SyntheticMarketConfig { spread: 0.0, ..base.clone() },
            SyntheticMarketConfig { daily_hi_lo_target: 0.0, ..base.clone() },
            SyntheticMarketConfig { correlation: 1.0, ..base.clone() },
            SyntheticMarketConfig { days_per_month: 29, ..base.clone() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }
}
