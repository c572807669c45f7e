//! Windowed dataset and its on-disk container.
//!
//! Windows overlap heavily, so the dataset keeps each day's raw curve rows
//! once and refers to windows by start row. Normalized windows are
//! rebuilt on demand from the stored rows and statistics with the same
//! arithmetic as [`normalize_window`](super::normalize_window), so a
//! loaded dataset reproduces every sample bit for bit.
//!
//! # Container format
//!
//! One file per calendar month, `<dir>/YYYY-MM.ccds`, all little endian:
//!
//! ```text
//! magic        4 bytes  "CCDS"
//! version      u32      1
//! contracts    u32
//! window_len   u32
//! convention   u8       0 population, 1 sample
//! month        u32      YYYYMM
//! n_days       u32
//!   day        i64      days since 1970-01-01
//!   n_rows     u32
//!   times      i64 x n_rows
//!   prices     f64 x n_rows*contracts     row-major
//! n_samples    u32
//!   day_index  u32      index into this file's days
//!   start      u32      first window row within the day
//!   shifts     f64 x contracts
//!   scale      f64
//! ```
//!
//! `<dir>/index.json` lists the month files with their sample counts.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Datelike};
use serde::{Deserialize, Serialize};

use super::align::{day_number, CurveSeries};
use super::window::{norm_stats, realized_vol, NormStats, RawWindow, StdConvention, WindowSample};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CCDS";
const VERSION: u32 = 1;

/// `YYYYMM` of a UTC day number.
pub fn month_key(day: i64) -> u32 {
    let dt = DateTime::from_timestamp(day * 86_400, 0).expect("day in range");
    dt.year() as u32 * 100 + dt.month()
}

/// Months elapsed from `first` to `key`, both `YYYYMM`.
pub fn month_offset(first: u32, key: u32) -> i64 {
    let to_months = |k: u32| (k / 100) as i64 * 12 + (k % 100) as i64 - 1;
    to_months(key) - to_months(first)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayBlock {
    pub day: i64,
    pub times: Vec<i64>,
    pub prices: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRef {
    pub day: usize,
    pub start: usize,
    pub norm: NormStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub contracts: usize,
    pub window_len: usize,
    pub convention: StdConvention,
    pub days: Vec<DayBlock>,
    pub samples: Vec<SampleRef>,
    /// Windows rejected for a zero scale.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthChunk {
    pub month: u32,
    pub file: String,
    pub days: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub contracts: usize,
    pub window_len: usize,
    pub convention: StdConvention,
    pub skipped: usize,
    pub months: Vec<MonthChunk>,
}

impl Dataset {
    pub fn build(curve: &CurveSeries, window_len: usize, convention: StdConvention) -> Self {
        let c = curve.contracts;
        let mut days = Vec::new();
        let mut samples = Vec::new();
        let mut skipped = 0;
        for range in curve.day_ranges() {
            let day_idx = days.len();
            let block = DayBlock {
                day: day_number(curve.times[range.start]),
                times: curve.times[range.clone()].to_vec(),
                prices: curve.prices[range.start * c..range.end * c].to_vec(),
            };
            let n = block.times.len();
            for start in 0..n.saturating_sub(window_len) {
                let w = &block.prices[start * c..(start + window_len) * c];
                match norm_stats(w, c, convention) {
                    Some(norm) => samples.push(SampleRef {
                        day: day_idx,
                        start,
                        norm,
                    }),
                    None => skipped += 1,
                }
            }
            days.push(block);
        }
        Self {
            contracts: c,
            window_len,
            convention,
            days,
            samples,
            skipped,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.window_len * self.contracts
    }

    fn raw_window(&self, i: usize) -> &[f64] {
        let s = &self.samples[i];
        let c = self.contracts;
        &self.days[s.day].prices[s.start * c..(s.start + self.window_len) * c]
    }

    fn target_row(&self, i: usize) -> usize {
        self.samples[i].start + self.window_len
    }

    /// Writes the normalized, flattened window of sample `i` into `out`.
    pub fn write_input(&self, i: usize, out: &mut [f64]) {
        let norm = &self.samples[i].norm;
        let c = self.contracts;
        for (k, (o, &v)) in out.iter_mut().zip(self.raw_window(i)).enumerate() {
            *o = norm.normalize(k % c, v);
        }
    }

    pub fn input(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.input_dim()];
        self.write_input(i, &mut v);
        v
    }

    pub fn target(&self, i: usize) -> Vec<f64> {
        let norm = &self.samples[i].norm;
        self.raw_target(i)
            .iter()
            .enumerate()
            .map(|(c, &v)| norm.normalize(c, v))
            .collect()
    }

    pub fn raw_target(&self, i: usize) -> &[f64] {
        let s = &self.samples[i];
        let c = self.contracts;
        let r = self.target_row(i);
        &self.days[s.day].prices[r * c..(r + 1) * c]
    }

    pub fn last_raw(&self, i: usize) -> &[f64] {
        let s = &self.samples[i];
        let c = self.contracts;
        let r = self.target_row(i) - 1;
        &self.days[s.day].prices[r * c..(r + 1) * c]
    }

    pub fn norm(&self, i: usize) -> &NormStats {
        &self.samples[i].norm
    }

    pub fn anchor_time(&self, i: usize) -> i64 {
        let s = &self.samples[i];
        self.days[s.day].times[self.target_row(i) - 1]
    }

    pub fn target_time(&self, i: usize) -> i64 {
        let s = &self.samples[i];
        self.days[s.day].times[self.target_row(i)]
    }

    pub fn day_of(&self, i: usize) -> i64 {
        self.days[self.samples[i].day].day
    }

    pub fn month_of(&self, i: usize) -> u32 {
        month_key(self.day_of(i))
    }

    pub fn realized_vol(&self, i: usize) -> Vec<f64> {
        realized_vol(self.raw_window(i), self.contracts)
    }

    pub fn raw(&self, i: usize) -> RawWindow {
        RawWindow {
            window: self.raw_window(i).to_vec(),
            target: self.raw_target(i).to_vec(),
            anchor_time: self.anchor_time(i),
            target_time: self.target_time(i),
        }
    }

    pub fn sample(&self, i: usize) -> WindowSample {
        WindowSample {
            window: self.input(i),
            target: self.target(i),
            norm: self.norm(i).clone(),
            anchor_time: self.anchor_time(i),
            target_time: self.target_time(i),
            raw_target: self.raw_target(i).to_vec(),
            last_raw: self.last_raw(i).to_vec(),
        }
    }

    /// Sorted distinct `YYYYMM` keys of the days present.
    pub fn months(&self) -> Vec<u32> {
        let mut m: Vec<u32> = self.days.iter().map(|d| month_key(d.day)).collect();
        m.dedup();
        m
    }

    /// Sample indices falling in the given months, in time order.
    pub fn indices_in_months(&self, months: &[u32]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| months.contains(&self.month_of(i)))
            .collect()
    }

    /// Keeps only the days (and their samples) satisfying `keep`.
    pub fn filter_days(&self, keep: impl Fn(&DayBlock) -> bool) -> Dataset {
        let mut remap = vec![None; self.days.len()];
        let mut days = Vec::new();
        for (k, d) in self.days.iter().enumerate() {
            if keep(d) {
                remap[k] = Some(days.len());
                days.push(d.clone());
            }
        }
        let samples = self
            .samples
            .iter()
            .filter_map(|s| {
                remap[s.day].map(|day| SampleRef {
                    day,
                    start: s.start,
                    norm: s.norm.clone(),
                })
            })
            .collect();
        Dataset {
            contracts: self.contracts,
            window_len: self.window_len,
            convention: self.convention,
            days,
            samples,
            skipped: 0,
        }
    }

    /// Writes one chunk per month plus `index.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<DatasetIndex> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut months = Vec::new();
        for month in self.months() {
            let part = self.filter_days(|d| month_key(d.day) == month);
            let file = format!("{}-{:02}.ccds", month / 100, month % 100);
            let path = dir.join(&file);
            let mut buf = Vec::new();
            part.encode_chunk(month, &mut buf)?;
            fs::write(&path, &buf).map_err(|e| Error::io(&path, e))?;
            months.push(MonthChunk {
                month,
                file,
                days: part.days.len(),
                samples: part.len(),
            });
        }
        let index = DatasetIndex {
            contracts: self.contracts,
            window_len: self.window_len,
            convention: self.convention,
            skipped: self.skipped,
            months,
        };
        let path = dir.join("index.json");
        let json = serde_json::to_string_pretty(&index).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(index)
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join("index.json");
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: DatasetIndex =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut ds = Dataset {
            contracts: index.contracts,
            window_len: index.window_len,
            convention: index.convention,
            days: Vec::new(),
            samples: Vec::new(),
            skipped: index.skipped,
        };
        for chunk in &index.months {
            let p = dir.join(&chunk.file);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let part = Dataset::decode_chunk(&mut bytes.as_slice())?;
            if part.contracts != ds.contracts || part.window_len != ds.window_len {
                return Err(Error::Format(format!("{}: header disagrees with index", p.display())));
            }
            let offset = ds.days.len();
            ds.days.extend(part.days);
            ds.samples.extend(part.samples.into_iter().map(|mut s| {
                s.day += offset;
                s
            }));
        }
        Ok(ds)
    }

    fn encode_chunk<W: Write>(&self, month: u32, w: &mut W) -> Result<()> {
        let io = |e: std::io::Error| Error::Format(e.to_string());
        w.write_all(MAGIC).map_err(io)?;
        put_u32(w, VERSION)?;
        put_u32(w, self.contracts as u32)?;
        put_u32(w, self.window_len as u32)?;
        w.write_all(&[match self.convention {
            StdConvention::Population => 0,
            StdConvention::Sample => 1,
        }])
        .map_err(io)?;
        put_u32(w, month)?;
        put_u32(w, self.days.len() as u32)?;
        for d in &self.days {
            w.write_all(&d.day.to_le_bytes()).map_err(io)?;
            put_u32(w, d.times.len() as u32)?;
            for t in &d.times {
                w.write_all(&t.to_le_bytes()).map_err(io)?;
            }
            for p in &d.prices {
                w.write_all(&p.to_le_bytes()).map_err(io)?;
            }
        }
        put_u32(w, self.samples.len() as u32)?;
        for s in &self.samples {
            put_u32(w, s.day as u32)?;
            put_u32(w, s.start as u32)?;
            for v in &s.norm.shifts {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
            w.write_all(&s.norm.scale.to_le_bytes()).map_err(io)?;
        }
        Ok(())
    }

    fn decode_chunk<R: Read>(r: &mut R) -> Result<Dataset> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a dataset chunk".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let contracts = get_u32(r)? as usize;
        let window_len = get_u32(r)? as usize;
        let mut conv = [0u8; 1];
        read_exact(r, &mut conv)?;
        let convention = match conv[0] {
            0 => StdConvention::Population,
            1 => StdConvention::Sample,
            x => return Err(Error::Format(format!("bad convention tag {x}"))),
        };
        let _month = get_u32(r)?;
        let n_days = get_u32(r)? as usize;
        let mut days = Vec::with_capacity(n_days);
        for _ in 0..n_days {
            let day = get_i64(r)?;
            let n = get_u32(r)? as usize;
            let times = (0..n).map(|_| get_i64(r)).collect::<Result<Vec<_>>>()?;
            let prices = (0..n * contracts).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?;
            days.push(DayBlock { day, times, prices });
        }
        let n_samples = get_u32(r)? as usize;
        let mut samples = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let day = get_u32(r)? as usize;
            let start = get_u32(r)? as usize;
            let shifts = (0..contracts).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?;
            let scale = get_f64(r)?;
            if day >= days.len() || start + window_len >= days[day].times.len() {
                return Err(Error::Format("sample refers outside its day".into()));
            }
            samples.push(SampleRef {
                day,
                start,
                norm: NormStats { shifts, scale },
            });
        }
        Ok(Dataset {
            contracts,
            window_len,
            convention,
            days,
            samples,
            skipped: 0,
        })
    }
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(|e| Error::Format(e.to_string()))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("truncated dataset chunk".into()))
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_i64<R: Read>(r: &mut R) -> Result<i64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(i64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::align::NANOS_PER_DAY;
    use crate::sampler::window::{build_windows, normalize_window};

    fn curve_two_months() -> CurveSeries {
        // 2018-01-31 and 2018-02-01, 104 rows each, 2 contracts.
        let d1 = 17_562i64;
        let d2 = 17_563i64;
        let mut times = Vec::new();
        let mut prices = Vec::new();
        for (k, d) in [d1, d2].iter().enumerate() {
            for i in 0..104i64 {
                times.push(d * NANOS_PER_DAY + i * 1000);
                let x = (i as f64 * 0.37 + k as f64).sin();
                prices.push(9750.0 + x);
                prices.push(9740.0 - 0.5 * x + 0.01 * i as f64);
            }
        }
        CurveSeries {
            contracts: 2,
            times,
            prices,
            day_boundaries: vec![0, 104],
        }
    }

    #[test]
    fn month_keys() {
        assert_eq!(month_key(17_562), 201801);
        assert_eq!(month_key(17_563), 201802);
        assert_eq!(month_offset(201801, 201812), 11);
        assert_eq!(month_offset(201811, 201902), 3);
    }

    #[test]
    fn matches_direct_normalization() {
        let curve = curve_two_months();
        let ds = Dataset::build(&curve, 100, StdConvention::Population);
        let raws = build_windows(&curve, 100);
        assert_eq!(ds.len(), raws.len());
        assert_eq!(ds.len(), 8);
        for (i, raw) in raws.iter().enumerate() {
            let direct = normalize_window(raw, 2, StdConvention::Population).unwrap();
            assert_eq!(ds.sample(i), direct);
            assert_eq!(ds.raw(i), *raw);
        }
        assert_eq!(ds.months(), vec![201801, 201802]);
        assert_eq!(ds.indices_in_months(&[201802]), vec![4, 5, 6, 7]);
    }

    #[test]
    fn save_and_load_is_exact() {
        let ds = Dataset::build(&curve_two_months(), 100, StdConvention::Population);
        let dir = tempfile::tempdir().unwrap();
        let index = ds.save(dir.path()).unwrap();
        assert_eq!(index.months.len(), 2);
        assert_eq!(index.months[0].file, "2018-01.ccds");
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        for i in 0..ds.len() {
            assert_eq!(back.input(i), ds.input(i));
        }
    }

    #[test]
    fn missing_index_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn empty_curve_gives_empty_dataset() {
        let ds = Dataset::build(&CurveSeries::empty(3), 100, StdConvention::Population);
        assert!(ds.is_empty());
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert!(Dataset::load(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn degenerate_windows_are_counted() {
        let mut curve = curve_two_months();
        for p in curve.prices[..208].iter_mut() {
            *p = 9750.0;
        }
        let ds = Dataset::build(&curve, 100, StdConvention::Population);
        assert_eq!(ds.skipped, 4);
        assert_eq!(ds.len(), 4);
    }
}
