//! Forecast files: gzip-compressed CSV, one row per anchor time.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;

use super::ledger::ForecastEvent;
use crate::error::{Error, Result};
use crate::market::open_source;

const GROUPS: [&str; 5] = ["pred", "real", "rlsd", "alea", "alep"];

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("forecast csv: {e}"))
}

pub fn write_forecasts_to<W: Write>(events: &[ForecastEvent], contracts: usize, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["anchor_time".to_string(), "day".into(), "month".into()];
    for g in GROUPS {
        header.extend((0..contracts).map(|k| format!("{g}{k}")));
    }
    out.write_record(&header).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for e in events {
        if e.contracts() != contracts {
            return Err(Error::shape("forecast contracts", contracts, e.contracts()));
        }
        row.clear();
        row.push(e.anchor_time.to_string());
        row.push(e.day.to_string());
        row.push(e.month.to_string());
        row.extend(e.predicted.iter().map(f64::to_string));
        match &e.realized {
            Some(r) => row.extend(r.iter().map(f64::to_string)),
            None => row.extend((0..contracts).map(|_| String::new())),
        }
        for v in [&e.sigma_rlsd, &e.sigma_alea, &e.sigma_alep] {
            row.extend(v.iter().map(f64::to_string));
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn read_forecasts_from<R: Read>(r: R) -> Result<(usize, Vec<ForecastEvent>)> {
    let mut rdr = csv::Reader::from_reader(r);
    let width = rdr.headers().map_err(csv_err)?.len();
    if width < 3 || (width - 3) % GROUPS.len() != 0 {
        return Err(Error::Format(format!("forecast header has {width} columns")));
    }
    let c = (width - 3) / GROUPS.len();
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Format(format!("bad number '{s}'"))) };
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let group = |g: usize| -> Result<Vec<f64>> { (0..c).map(|k| num(&rec[3 + g * c + k])).collect() };
        let realized = if rec[3 + c].is_empty() { None } else { Some(group(1)?) };
        events.push(ForecastEvent {
            anchor_time: rec[0].parse().map_err(|_| Error::Format("bad anchor time".into()))?,
            day: rec[1].parse().map_err(|_| Error::Format("bad day".into()))?,
            month: rec[2].parse().map_err(|_| Error::Format("bad month".into()))?,
            predicted: group(0)?,
            realized,
            sigma_rlsd: group(2)?,
            sigma_alea: group(3)?,
            sigma_alep: group(4)?,
        });
    }
    Ok((c, events))
}

pub fn write_forecasts(path: &Path, events: &[ForecastEvent], contracts: usize) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut gz = GzEncoder::new(BufWriter::new(f), Compression::default());
    write_forecasts_to(events, contracts, &mut gz)?;
    gz.finish()
        .and_then(|mut w| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_forecasts(path: &Path) -> Result<(usize, Vec<ForecastEvent>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    read_forecasts_from(BufReader::new(open_source(path)?))
}
