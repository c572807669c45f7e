//! Delimited-text quote input and the microprice audit dump.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use super::quote::{MicropriceSeries, QuoteEvent};
use crate::error::{Error, Result};

/// Maps the required fields onto column names of the source file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuoteSchema {
    pub delimiter: char,
    pub timestamp: String,
    pub contract: String,
    pub bid_price: String,
    pub ask_price: String,
    pub bid_volume: String,
    pub ask_volume: String,
}

impl Default for QuoteSchema {
    fn default() -> Self {
        Self {
            delimiter: ',',
            timestamp: "timestamp".into(),
            contract: "contract".into(),
            bid_price: "bid_price".into(),
            ask_price: "ask_price".into(),
            bid_volume: "bid_volume".into(),
            ask_volume: "ask_volume".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based line number in the source, header included.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedQuotes {
    /// Sorted by (timestamp, contract_id); file order among exact ties.
    pub events: Vec<QuoteEvent>,
    pub errors: Vec<RowError>,
}

struct ColumnIndex {
    timestamp: usize,
    contract: usize,
    bid_price: usize,
    ask_price: usize,
    bid_volume: usize,
    ask_volume: usize,
}

impl ColumnIndex {
    fn resolve(header: &csv::StringRecord, schema: &QuoteSchema) -> Result<Self> {
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
        };
        Ok(Self {
            timestamp: find(&schema.timestamp)?,
            contract: find(&schema.contract)?,
            bid_price: find(&schema.bid_price)?,
            ask_price: find(&schema.ask_price)?,
            bid_volume: find(&schema.bid_volume)?,
            ask_volume: find(&schema.ask_volume)?,
        })
    }
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str) -> std::result::Result<&'a str, String> {
    rec.get(idx)
        .map(str::trim)
        .ok_or_else(|| format!("missing field '{name}'"))
}

fn parse_row(rec: &csv::StringRecord, cols: &ColumnIndex) -> std::result::Result<QuoteEvent, String> {
    fn num<T: std::str::FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
        s.parse::<T>()
            .map_err(|_| format!("cannot parse '{s}' as {name}"))
    }
    let q = QuoteEvent {
        timestamp: num(field(rec, cols.timestamp, "timestamp")?, "timestamp")?,
        contract_id: num(field(rec, cols.contract, "contract")?, "contract")?,
        bid_price: num(field(rec, cols.bid_price, "bid_price")?, "bid_price")?,
        ask_price: num(field(rec, cols.ask_price, "ask_price")?, "ask_price")?,
        bid_volume: num(field(rec, cols.bid_volume, "bid_volume")?, "bid_volume")?,
        ask_volume: num(field(rec, cols.ask_volume, "ask_volume")?, "ask_volume")?,
    };
    if !q.bid_price.is_finite() || !q.ask_price.is_finite() {
        return Err("non-finite price".into());
    }
    if q.is_crossed() {
        return Err(format!(
            "crossed book: ask {} < bid {}",
            q.ask_price, q.bid_price
        ));
    }
    Ok(q)
}

/// Parses a quote stream. Bad rows are collected, never fatal; only an
/// unusable header aborts.
pub fn parse_quote_stream<R: Read>(reader: R, schema: &QuoteSchema) -> Result<ParsedQuotes> {
    let delimiter = u8::try_from(schema.delimiter)
        .map_err(|_| Error::Schema(format!("delimiter {:?} is not a single byte", schema.delimiter)))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .has_headers(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();
    let cols = ColumnIndex::resolve(&header, schema)?;

    let mut out = ParsedQuotes::default();
    let mut rec = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {
                let line = rec.position().map(|p| p.line()).unwrap_or(0);
                match parse_row(&rec, &cols) {
                    Ok(q) => out.events.push(q),
                    Err(reason) => out.errors.push(RowError { line, reason }),
                }
            }
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    return Err(Error::Data(format!("read failure at line {line}: {e}")));
                }
                out.errors.push(RowError {
                    line,
                    reason: e.to_string(),
                });
            }
        }
    }
    out.events
        .sort_by_key(|q| (q.timestamp, q.contract_id));
    Ok(out)
}

/// Opens a file, transparently decompressing gzip content.
pub fn open_source(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = BufReader::new(file);
    let magic = buf.fill_buf().map_err(|e| Error::io(path, e))?;
    if magic.len() >= 2 && magic[0] == 0x1f && magic[1] == 0x8b {
        Ok(Box::new(MultiGzDecoder::new(buf)))
    } else {
        Ok(Box::new(buf))
    }
}

pub fn parse_quote_file(path: &Path, schema: &QuoteSchema) -> Result<ParsedQuotes> {
    parse_quote_stream(open_source(path)?, schema)
}

/// Writes events in the given schema's column order. Floats use the
/// shortest round-trip representation, so parsing the output back is exact.
pub fn write_quotes<W: Write>(events: &[QuoteEvent], schema: &QuoteSchema, out: W) -> Result<()> {
    let delimiter = u8::try_from(schema.delimiter)
        .map_err(|_| Error::Schema(format!("delimiter {:?} is not a single byte", schema.delimiter)))?;
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    let fmt_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record([
        &schema.timestamp,
        &schema.contract,
        &schema.bid_price,
        &schema.ask_price,
        &schema.bid_volume,
        &schema.ask_volume,
    ])
    .map_err(fmt_err)?;
    for q in events {
        w.write_record([
            q.timestamp.to_string(),
            q.contract_id.to_string(),
            q.bid_price.to_string(),
            q.ask_price.to_string(),
            q.bid_volume.to_string(),
            q.ask_volume.to_string(),
        ])
        .map_err(fmt_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Audit dump: `timestamp\tcontract\tmicroprice`, ordered by time then contract.
pub fn write_microprice_dump<W: Write>(series: &[MicropriceSeries], mut out: W) -> Result<()> {
    let mut rows: Vec<(i64, usize, f64)> = series
        .iter()
        .flat_map(|s| s.entries.iter().map(move |&(t, p)| (t, s.contract_id, p)))
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    let err = |e: std::io::Error| Error::Format(e.to_string());
    writeln!(out, "timestamp\tcontract\tmicroprice").map_err(err)?;
    for (t, c, p) in rows {
        writeln!(out, "{t}\t{c}\t{p}").map_err(err)?;
    }
    Ok(())
}

pub fn read_microprice_dump<R: Read>(reader: R) -> Result<Vec<MicropriceSeries>> {
    let mut lines = BufReader::new(reader).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "timestamp\tcontract\tmicroprice" => {}
        _ => return Err(Error::Schema("microprice dump header missing".into())),
    }
    let mut series: Vec<MicropriceSeries> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Data(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Data(format!("microprice dump line {}: malformed", i + 2));
        let mut parts = line.split('\t');
        let t: i64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let c: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let p: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        while series.len() <= c {
            series.push(MicropriceSeries::new(series.len()));
        }
        series[c].push(t, p)?;
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::quote::build_microprice_series;
    use proptest::prelude::*;

    const HEADER: &str = "timestamp,contract,bid_price,ask_price,bid_volume,ask_volume\n";

    #[test]
    fn well_formed_rows_come_back_sorted() {
        let src = format!(
            "{HEADER}300,0,9750,9750.5,10,10\n100,1,9760,9760.5,5,7\n200,0,9750,9750.5,3,3\n"
        );
        let parsed = parse_quote_stream(src.as_bytes(), &QuoteSchema::default()).unwrap();
        assert!(parsed.errors.is_empty());
        let ts: Vec<i64> = parsed.events.iter().map(|q| q.timestamp).collect();
        assert_eq!(ts, vec![100, 200, 300]);
    }

    #[test]
    fn crossed_book_is_a_row_error() {
        let src = format!(
            "{HEADER}100,0,9750,9750.5,10,10\n200,0,9751,9750.5,10,10\n300,0,9750,9750.5,10,10\n"
        );
        let parsed = parse_quote_stream(src.as_bytes(), &QuoteSchema::default()).unwrap();
        assert_eq!(parsed.events.len(), 2);
        assert_eq!(parsed.errors.len(), 1);
        assert_eq!(parsed.errors[0].line, 3);
        assert!(parsed.errors[0].reason.contains("crossed"));
    }

    #[test]
    fn garbage_rows_are_counted_not_fatal() {
        let src = format!("{HEADER}100,0,abc,9750.5,10,10\n200,0,9750\n300,0,9750,9750.5,10,10\n");
        let parsed = parse_quote_stream(src.as_bytes(), &QuoteSchema::default()).unwrap();
        assert_eq!(parsed.events.len(), 1);
        assert_eq!(parsed.errors.len(), 2);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let src = "time,contract,bid_price,ask_price,bid_volume,ask_volume\n1,0,1,2,1,1\n";
        let err = parse_quote_stream(src.as_bytes(), &QuoteSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn custom_schema_and_delimiter() {
        let schema = QuoteSchema {
            delimiter: ';',
            timestamp: "ts".into(),
            contract: "ric".into(),
            ..QuoteSchema::default()
        };
        let src = "ric;ts;bid_price;ask_price;bid_volume;ask_volume\n2;50;1.0;1.5;4;4\n";
        let parsed = parse_quote_stream(src.as_bytes(), &schema).unwrap();
        assert_eq!(parsed.events[0].contract_id, 2);
        assert_eq!(parsed.events[0].timestamp, 50);
    }

    #[test]
    fn tied_timestamps_resolve_to_last_row() {
        let src = format!(
            "{HEADER}100,0,9750,9750.5,10,10\n100,0,9751,9751.5,10,10\n200,0,9752,9752.5,10,10\n"
        );
        let parsed = parse_quote_stream(src.as_bytes(), &QuoteSchema::default()).unwrap();
        let (series, _) = build_microprice_series(&parsed.events, 1).unwrap();
        assert_eq!(series[0].entries, vec![(100, 9751.25), (200, 9752.25)]);
    }

    #[test]
    fn gzip_sources_are_detected() {
        use flate2::{write::GzEncoder, Compression};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv.gz");
        let mut enc = GzEncoder::new(File::create(&path).unwrap(), Compression::fast());
        enc.write_all(format!("{HEADER}100,0,9750,9750.5,10,10\n").as_bytes())
            .unwrap();
        enc.finish().unwrap();
        let parsed = parse_quote_file(&path, &QuoteSchema::default()).unwrap();
        assert_eq!(parsed.events.len(), 1);
    }

    #[test]
    fn dump_round_trip() {
        let mut a = MicropriceSeries::new(0);
        a.push(1, 9750.125).unwrap();
        a.push(5, 0.1 + 0.2).unwrap();
        let mut b = MicropriceSeries::new(1);
        b.push(3, 9760.0).unwrap();
        let mut buf = Vec::new();
        write_microprice_dump(&[a.clone(), b.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp\tcontract\tmicroprice\n1\t0\t9750.125\n3\t1\t9760\n"));
        let back = read_microprice_dump(buf.as_slice()).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    fn arb_event() -> impl Strategy<Value = QuoteEvent> {
        (0usize..9, 0i64..1_000_000_000, 9000.0f64..10000.0, 0.0f64..2.0, 0u64..1000, 0u64..1000)
            .prop_map(|(c, t, bid, spread, bv, av)| QuoteEvent {
                contract_id: c,
                timestamp: t,
                bid_price: bid,
                ask_price: bid + spread,
                bid_volume: bv,
                ask_volume: av,
            })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(mut events in proptest::collection::vec(arb_event(), 0..50)) {
            events.sort_by_key(|q| (q.timestamp, q.contract_id));
            let mut buf = Vec::new();
            write_quotes(&events, &QuoteSchema::default(), &mut buf).unwrap();
            let parsed = parse_quote_stream(buf.as_slice(), &QuoteSchema::default()).unwrap();
            prop_assert!(parsed.errors.is_empty());
            prop_assert_eq!(parsed.events, events);
        }
    }
}
