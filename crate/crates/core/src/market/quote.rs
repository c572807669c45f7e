use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One top-of-book observation for one contract.
///
/// Prices are in basis points of rate; volumes in lots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuoteEvent {
    pub contract_id: usize,
    /// Nanoseconds since the Unix epoch.
    pub timestamp: i64,
    pub bid_price: f64,
    pub ask_price: f64,
    pub bid_volume: u64,
    pub ask_volume: u64,
}

impl QuoteEvent {
    pub fn is_crossed(&self) -> bool {
        self.ask_price < self.bid_price
    }
}

/// Volume-weighted touch price, each side weighted by the opposite side's size.
pub fn microprice(q: &QuoteEvent) -> Result<f64> {
    let total = q.bid_volume + q.ask_volume;
    if total == 0 {
        return Err(Error::DegenerateQuote);
    }
    let bid_vol = q.bid_volume as f64;
    let ask_vol = q.ask_volume as f64;
    let p = (ask_vol * q.bid_price + q.ask_price * bid_vol) / total as f64;
    // Rounding can push the weighted mean a hair outside the touch.
    Ok(p.clamp(q.bid_price, q.ask_price))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicropriceSeries {
    pub contract_id: usize,
    /// (timestamp ns, microprice bps), strictly increasing in time.
    pub entries: Vec<(i64, f64)>,
}

impl MicropriceSeries {
    pub fn new(contract_id: usize) -> Self {
        Self {
            contract_id,
            entries: Vec::new(),
        }
    }

    /// Appends an observation. A timestamp equal to the last one overwrites
    /// it, since a Level-1 feed replaces the book state in place.
    pub fn push(&mut self, timestamp: i64, price: f64) -> Result<()> {
        match self.entries.last_mut() {
            Some(last) if last.0 == timestamp => {
                last.1 = price;
                Ok(())
            }
            Some(last) if last.0 > timestamp => Err(Error::Data(format!(
                "contract {}: timestamp {} precedes {}",
                self.contract_id, timestamp, last.0
            ))),
            _ => {
                self.entries.push((timestamp, price));
                Ok(())
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A quote that could not be admitted to a microprice series.
#[derive(Debug, Clone, PartialEq)]
pub struct QuoteIssue {
    pub contract_id: usize,
    pub timestamp: i64,
    pub reason: String,
}

/// Builds one series per contract from time-sorted events.
///
/// Quotes with no volume on either side are reported and left out.
pub fn build_microprice_series(
    events: &[QuoteEvent],
    contracts: usize,
) -> Result<(Vec<MicropriceSeries>, Vec<QuoteIssue>)> {
    let mut series: Vec<MicropriceSeries> = (0..contracts).map(MicropriceSeries::new).collect();
    let mut issues = Vec::new();
    for q in events {
        if q.contract_id >= contracts {
            return Err(Error::Data(format!(
                "contract id {} out of range for {} contracts",
                q.contract_id, contracts
            )));
        }
        match microprice(q) {
            Ok(p) => series[q.contract_id].push(q.timestamp, p)?,
            Err(e) => issues.push(QuoteIssue {
                contract_id: q.contract_id,
                timestamp: q.timestamp,
                reason: e.to_string(),
            }),
        }
    }
    Ok((series, issues))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quote(bid: f64, ask: f64, bid_volume: u64, ask_volume: u64) -> QuoteEvent {
        QuoteEvent {
            contract_id: 0,
            timestamp: 0,
            bid_price: bid,
            ask_price: ask,
            bid_volume,
            ask_volume,
        }
    }

    #[test]
    fn equal_volumes_give_midprice() {
        let p = microprice(&quote(9750.0, 9750.5, 100, 100)).unwrap();
        assert_eq!(p, 9750.25);
    }

    #[test]
    fn empty_bid_side_collapses_to_bid() {
        let p = microprice(&quote(9750.0, 9750.5, 0, 300)).unwrap();
        assert_eq!(p, 9750.0);
    }

    #[test]
    fn imbalanced_book() {
        // (300 * 9750.0 + 9750.5 * 100) / 400
        let expected = (300.0 * 9750.0 + 9750.5 * 100.0) / 400.0;
        assert_eq!(expected, 9750.125);
        let p = microprice(&quote(9750.0, 9750.5, 100, 300)).unwrap();
        assert!((p - 9750.125).abs() < 1e-9);
    }

    #[test]
    fn zero_volume_is_degenerate() {
        assert!(matches!(
            microprice(&quote(9750.0, 9750.5, 0, 0)),
            Err(Error::DegenerateQuote)
        ));
    }

    #[test]
    fn tied_timestamps_keep_last() {
        let mut s = MicropriceSeries::new(0);
        s.push(10, 1.0).unwrap();
        s.push(20, 2.0).unwrap();
        s.push(20, 3.0).unwrap();
        assert_eq!(s.entries, vec![(10, 1.0), (20, 3.0)]);
        assert!(s.push(5, 0.0).is_err());
    }

    #[test]
    fn degenerate_quotes_are_reported() {
        let mut a = quote(1.0, 2.0, 1, 1);
        let mut b = quote(1.0, 2.0, 0, 0);
        a.timestamp = 1;
        b.timestamp = 2;
        let (series, issues) = build_microprice_series(&[a, b], 1).unwrap();
        assert_eq!(series[0].len(), 1);
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].timestamp, 2);
    }

    proptest::proptest! {
        #[test]
        fn microprice_within_touch(
            bid in 9000.0f64..10000.0,
            spread in 0.0f64..5.0,
            bv in 0u64..10_000,
            av in 0u64..10_000,
        ) {
            proptest::prop_assume!(bv + av > 0);
            let q = quote(bid, bid + spread, bv, av);
            let p = microprice(&q).unwrap();
            proptest::prop_assert!(p >= q.bid_price && p <= q.ask_price);
        }
    }
}
