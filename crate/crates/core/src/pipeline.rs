//! Stage runner with file handoff between stages and a run manifest.
//!
//! Layout under the output directory:
//!
//! ```text
//! config.toml                 resolved configuration
//! manifest.json               seeds, per-stage status and artifact hashes
//! quotes/synthetic.csv.gz     synth
//! ingest/microprice.tsv       ingest
//! ingest/rejects.csv
//! dataset/                    sample (index.json plus one chunk per month)
//! models/fold-M.json          train
//! forecasts/fold-M.csv.gz     predict
//! backtest/daily.csv          backtest
//! backtest/calibration.csv
//! backtest/meta.json
//! report/*.csv                report
//! ```
//!
//! `run` executes the same stage functions in order, so a fused run and a
//! sequence of single-stage invocations write identical files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backtest::{
    concat_forecasts, dropout_seed, fold_seed, make_folds, predict_seed, read_forecasts, report_from_forecasts,
    write_forecasts, ForecastEvent, Fold, PerformanceReport,
};
use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, SourceKind};
use crate::error::{Error, Result};
use crate::market::{
    build_microprice_series, generate_synthetic_market, merge_streams, parse_quote_file, read_microprice_dump,
    write_microprice_dump, write_quotes, MicropriceSeries, QuoteEvent, QuoteSchema,
};
use crate::model::{fit_model, forecast, ModelKind, TrainedModel};
use crate::sampler::{align_and_downsample, Dataset, DatasetIndex};
use crate::seed::derive_seed;

pub const MANIFEST: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "curvecast-manifest";

const SYNTH_QUOTES: &str = "quotes/synthetic.csv.gz";
const MICROPRICE: &str = "ingest/microprice.tsv";
const REJECTS: &str = "ingest/rejects.csv";
const DATASET: &str = "dataset";
const MODELS: &str = "models";
const FORECASTS: &str = "forecasts";
const BACKTEST: &str = "backtest";
const REPORT: &str = "report";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Ingest,
    Sample,
    Train,
    Predict,
    Backtest,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Sample,
        Stage::Train,
        Stage::Predict,
        Stage::Backtest,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Sample => "sample",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Backtest => "backtest",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// `ok` or `failed`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Output-relative path to hex SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: serde_json::Value,
    pub master_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageRecord>,
    pub failed_stage: Option<String>,
}

impl Manifest {
    fn new(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            config: serde_json::to_value(cfg).map_err(|e| Error::Format(e.to_string()))?,
            master_seed: cfg.seed,
            seeds: BTreeMap::new(),
            stages: Vec::new(),
            failed_stage: None,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Every artifact hash across stages.
    pub fn artifact_hashes(&self) -> BTreeMap<String, String> {
        self.stages.iter().flat_map(|s| s.artifacts.clone()).collect()
    }

    fn record(&mut self, rec: StageRecord) {
        self.stages.retain(|s| s.stage != rec.stage);
        self.stages.push(rec);
        self.stages.sort_by_key(|s| Stage::parse(&s.stage));
        self.failed_stage = self.stages.iter().find(|s| s.status != "ok").map(|s| s.stage.clone());
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Every configured fold, and those whose test month has samples.
struct FoldPlan {
    all: Vec<Fold>,
    active: Vec<Fold>,
}

fn fold_plan(index: &DatasetIndex, cfg: &RunConfig) -> Result<FoldPlan> {
    let months: Vec<u32> = index.months.iter().filter(|m| m.samples > 0).map(|m| m.month).collect();
    let all = make_folds(&months, &cfg.walk_forward.folds)?;
    let active = all
        .iter()
        .filter(|f| {
            let ok = months.contains(&f.test_month);
            if !ok {
                log::warn!("fold {}: test month {} has no samples", f.m, f.test_month);
            }
            ok
        })
        .cloned()
        .collect();
    Ok(FoldPlan { all, active })
}

fn model_file(m: usize, dropout: Option<f64>) -> String {
    match dropout {
        None => format!("{MODELS}/fold-{m}.json"),
        Some(r) => format!("{MODELS}/fold-{m}-dropout-{r}.json"),
    }
}

fn forecast_file(m: usize, dropout: Option<f64>) -> String {
    match dropout {
        None => format!("{FORECASTS}/fold-{m}.csv.gz"),
        Some(r) => format!("{FORECASTS}/fold-{m}-dropout-{r}.csv.gz"),
    }
}

/// One run's output directory and configuration.
pub struct Pipeline {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

type StageOutput = (Vec<String>, BTreeMap<String, u64>);

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Self {
        let out = cfg.output_dir.clone();
        Self { cfg, out }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Empties a stage's own directory so no stale files survive a rerun.
    fn fresh_dir(&self, rel: &str) -> Result<PathBuf> {
        let dir = self.path(rel);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn create(&self, rel: &str) -> Result<BufWriter<File>> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))
    }

    fn require(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact(p))
        }
    }

    pub fn manifest(&self) -> Result<Manifest> {
        Manifest::load(&self.path(MANIFEST))
    }

    fn write_manifest(&self, m: &Manifest) -> Result<()> {
        let p = self.path(MANIFEST);
        let text = serde_json::to_string_pretty(m).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }

    fn load_or_new_manifest(&self) -> Result<Manifest> {
        let fresh = Manifest::new(&self.cfg)?;
        match Manifest::load(&self.path(MANIFEST)) {
            // A config change invalidates everything recorded so far.
            Ok(m) if m.config == fresh.config && m.format == MANIFEST_FORMAT => Ok(m),
            _ => Ok(fresh),
        }
    }

    /// Runs one stage and records its outcome in the manifest.
    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let cfg_path = self.path("config.toml");
        fs::write(&cfg_path, self.cfg.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
        let mut manifest = self.load_or_new_manifest()?;
        log::info!("stage {}", stage.name());
        let outcome = match stage {
            Stage::Synth => self.synth(),
            Stage::Ingest => self.ingest(),
            Stage::Sample => self.sample(),
            Stage::Train => self.train(),
            Stage::Predict => self.predict(),
            Stage::Backtest => self.backtest(),
            Stage::Report => self.report(),
        };
        let result = match outcome {
            Ok((files, seeds)) => {
                let mut artifacts = BTreeMap::new();
                for f in files {
                    let h = sha256_file(&self.path(&f))?;
                    artifacts.insert(f, h);
                }
                manifest.seeds.extend(seeds);
                manifest.record(StageRecord {
                    stage: stage.name().into(),
                    status: "ok".into(),
                    error: None,
                    artifacts,
                });
                Ok(())
            }
            Err(e) => {
                manifest.record(StageRecord {
                    stage: stage.name().into(),
                    status: "failed".into(),
                    error: Some(e.to_string()),
                    artifacts: BTreeMap::new(),
                });
                Err(e)
            }
        };
        self.write_manifest(&manifest)?;
        result
    }

    /// Every stage in order; synth only for the synthetic source.
    pub fn run_all(&self) -> Result<()> {
        for stage in Stage::ALL {
            if stage == Stage::Synth && self.cfg.data.source != SourceKind::Synthetic {
                continue;
            }
            self.run_stage(stage)?;
        }
        Ok(())
    }

    fn synth(&self) -> Result<StageOutput> {
        if self.cfg.data.source != SourceKind::Synthetic {
            return Err(Error::Config("synth needs data.source = \"synthetic\"".into()));
        }
        let syn = self.cfg.synthetic();
        let events = merge_streams(&generate_synthetic_market(&syn)?);
        self.fresh_dir("quotes")?;
        let mut gz = GzEncoder::new(self.create(SYNTH_QUOTES)?, Compression::default());
        write_quotes(&events, &QuoteSchema::default(), &mut gz)?;
        let p = self.path(SYNTH_QUOTES);
        gz.finish().and_then(|mut w| w.flush()).map_err(|e| Error::io(&p, e))?;
        log::info!("synth: {} quotes over {} days", events.len(), syn.days);
        Ok((vec![SYNTH_QUOTES.into()], BTreeMap::from([("synth".into(), syn.seed)])))
    }

    fn sources(&self) -> Result<(Vec<PathBuf>, QuoteSchema, usize)> {
        match self.cfg.data.source {
            SourceKind::Synthetic => Ok((
                vec![self.require(SYNTH_QUOTES)?],
                QuoteSchema::default(),
                self.cfg.data.synthetic.contracts,
            )),
            SourceKind::Files => {
                let f = &self.cfg.data.files;
                let mut paths: Vec<PathBuf> = glob::glob(&f.pattern)
                    .map_err(|e| Error::Config(format!("data.files.pattern: {e}")))?
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Data(e.to_string()))?;
                paths.sort();
                if paths.is_empty() {
                    return Err(Error::Data(format!("no files match '{}'", f.pattern)));
                }
                Ok((paths, f.schema.clone(), f.contracts))
            }
        }
    }

    fn ingest(&self) -> Result<StageOutput> {
        let (paths, schema, contracts) = self.sources()?;
        let mut events: Vec<QuoteEvent> = Vec::new();
        let mut rejects = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        rejects.write_record(["source", "location", "reason"]).map_err(csv_err)?;
        for p in &paths {
            let parsed = parse_quote_file(p, &schema)?;
            for r in &parsed.errors {
                rejects
                    .write_record([p.display().to_string(), format!("line {}", r.line), r.reason.clone()])
                    .map_err(csv_err)?;
            }
            if !parsed.errors.is_empty() {
                log::warn!("{}: {} malformed rows", p.display(), parsed.errors.len());
            }
            events.extend(parsed.events);
        }
        // Stable, so file order decides among exact ties.
        events.sort_by_key(|q| (q.timestamp, q.contract_id));
        let (series, issues) = build_microprice_series(&events, contracts)?;
        for i in &issues {
            rejects
                .write_record([
                    format!("contract {}", i.contract_id),
                    format!("timestamp {}", i.timestamp),
                    i.reason.clone(),
                ])
                .map_err(csv_err)?;
        }
        if !issues.is_empty() {
            log::warn!("{} quotes without a microprice", issues.len());
        }
        self.fresh_dir("ingest")?;
        let mut w = self.create(MICROPRICE)?;
        write_microprice_dump(&series, &mut w)?;
        w.flush().map_err(|e| Error::io(self.path(MICROPRICE), e))?;
        let bytes = rejects.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        fs::write(self.path(REJECTS), bytes).map_err(|e| Error::io(self.path(REJECTS), e))?;
        Ok((vec![MICROPRICE.into(), REJECTS.into()], BTreeMap::new()))
    }

    fn contracts(&self) -> usize {
        self.cfg.data.contracts()
    }

    fn sample(&self) -> Result<StageOutput> {
        let p = self.require(MICROPRICE)?;
        let mut series = read_microprice_dump(BufReader::new(File::open(&p).map_err(|e| Error::io(&p, e))?))?;
        let c = self.contracts();
        if series.len() > c {
            return Err(Error::shape("contracts in the microprice dump", c, series.len()));
        }
        while series.len() < c {
            series.push(MicropriceSeries::new(series.len()));
        }
        let (curve, warnings) = align_and_downsample(&series, self.cfg.sampling.cutoff)?;
        for w in &warnings {
            log::warn!("day {}: {}", w.day, w.reason);
        }
        let ds = Dataset::build(&curve, self.cfg.sampling.window_len, self.cfg.sampling.convention);
        if ds.is_empty() {
            log::warn!("sample: the curve yields no window samples");
        }
        let dir = self.fresh_dir(DATASET)?;
        let index = ds.save(&dir)?;
        log::info!("sample: {} curve rows, {} samples", curve.len(), ds.len());
        let mut files = vec![format!("{DATASET}/index.json")];
        files.extend(index.months.iter().map(|m| format!("{DATASET}/{}", m.file)));
        Ok((files, BTreeMap::new()))
    }

    fn dataset(&self) -> Result<Dataset> {
        self.require(&format!("{DATASET}/index.json"))?;
        Dataset::load(&self.path(DATASET))
    }

    fn index(&self) -> Result<DatasetIndex> {
        let p = self.require(&format!("{DATASET}/index.json"))?;
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
    }

    fn train(&self) -> Result<StageOutput> {
        let ds = self.dataset()?;
        let plan = fold_plan(&self.index()?, &self.cfg)?;
        let wf = &self.cfg.walk_forward;
        self.fresh_dir(MODELS)?;
        let mut files = Vec::new();
        let mut seeds = BTreeMap::new();
        for fold in &plan.active {
            let train_idx = ds.indices_in_months(&fold.train_months);
            let val_idx = ds.indices_in_months(&[fold.val_month]);
            let mut variants = vec![(None, wf.model.clone(), fold_seed(self.cfg.seed, fold.m))];
            if wf.model.kind != ModelKind::Bayes {
                for &rate in &wf.sweeps.dropout_rates {
                    let mut mc = wf.model.clone();
                    mc.network.dropout_rate = rate;
                    variants.push((Some(rate), mc, dropout_seed(self.cfg.seed, fold.m, rate)));
                }
            }
            for (rate, mc, seed) in variants {
                let tag = match rate {
                    None => format!("fold-{}", fold.m),
                    Some(r) => format!("fold-{}-dropout-{r}", fold.m),
                };
                log::info!("train {tag}: {} training, {} validation samples", train_idx.len(), val_idx.len());
                let named = [
                    ("fold", seed),
                    ("init", derive_seed(seed, &["init"])),
                    ("train", derive_seed(seed, &["train"])),
                ];
                let model = fit_model(&ds, &train_idx, &val_idx, &mc, seed)?;
                if let TrainedModel::Network { history, .. } = &model {
                    log::info!("train {tag}: best epoch {} of {}", history.best_epoch, history.epochs.len());
                }
                let rel = model_file(fold.m, rate);
                model.to_checkpoint(&named)?.save(&self.path(&rel))?;
                for (k, v) in named {
                    seeds.insert(format!("{tag}.{k}"), v);
                }
                files.push(rel);
            }
        }
        Ok((files, seeds))
    }

    fn predict(&self) -> Result<StageOutput> {
        let ds = self.dataset()?;
        let plan = fold_plan(&self.index()?, &self.cfg)?;
        let wf = &self.cfg.walk_forward;
        let mut rates = vec![None];
        if wf.model.kind != ModelKind::Bayes {
            rates.extend(wf.sweeps.dropout_rates.iter().map(|&r| Some(r)));
        }
        // Load everything first so a missing checkpoint fails before any write.
        let mut jobs = Vec::new();
        for fold in &plan.active {
            for &rate in &rates {
                let ck = Checkpoint::load(&self.path(&model_file(fold.m, rate)))?;
                jobs.push((fold, rate, TrainedModel::from_checkpoint(&ck)?));
            }
        }
        self.fresh_dir(FORECASTS)?;
        let mut files = Vec::new();
        let mut seeds = BTreeMap::new();
        for (fold, rate, model) in jobs {
            let test_idx = ds.indices_in_months(&[fold.test_month]);
            let seed = predict_seed(self.cfg.seed, fold.m);
            seeds.insert(format!("fold-{}.predict", fold.m), seed);
            let events = forecast(&ds, &test_idx, &model, wf.model.mc_samples, seed)?;
            let rel = forecast_file(fold.m, rate);
            write_forecasts(&self.path(&rel), &events, ds.contracts)?;
            files.push(rel);
        }
        Ok((files, seeds))
    }

    fn read_fold_forecasts(&self, folds: &[Fold], rate: Option<f64>) -> Result<Vec<ForecastEvent>> {
        let mut parts = Vec::new();
        for fold in folds {
            let (c, ev) = read_forecasts(&self.path(&forecast_file(fold.m, rate)))?;
            if c != self.contracts() {
                return Err(Error::shape("forecast contracts vs configured contracts", self.contracts(), c));
            }
            parts.push(ev);
        }
        Ok(concat_forecasts(parts.iter().map(|p| p.as_slice())))
    }

    fn backtest(&self) -> Result<StageOutput> {
        let plan = fold_plan(&self.index()?, &self.cfg)?;
        let wf = &self.cfg.walk_forward;
        let events = self.read_fold_forecasts(&plan.active, None)?;
        let mut dropout = Vec::new();
        if wf.model.kind != ModelKind::Bayes && !plan.active.is_empty() {
            for &rate in &wf.sweeps.dropout_rates {
                dropout.push((rate, self.read_fold_forecasts(&plan.active, Some(rate))?));
            }
        }
        let months = plan.all.iter().map(|f| f.test_month).collect();
        let report = report_from_forecasts(wf.model.kind.label(), months, &events, &dropout, wf)?;
        self.fresh_dir(BACKTEST)?;
        let daily = format!("{BACKTEST}/daily.csv");
        let cal = format!("{BACKTEST}/calibration.csv");
        let meta = format!("{BACKTEST}/meta.json");
        report.write_daily(self.create(&daily)?)?;
        report.write_calibration(self.create(&cal)?)?;
        let m = BacktestMeta {
            model: report.model.clone(),
            test_months: report.test_months.clone(),
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(self.path(&meta), text).map_err(|e| Error::io(self.path(&meta), e))?;
        Ok((vec![daily, cal, meta], BTreeMap::new()))
    }

    /// Reads the backtest stage's output back into a report.
    pub fn load_report(&self) -> Result<PerformanceReport> {
        let meta_path = self.require(&format!("{BACKTEST}/meta.json"))?;
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: BacktestMeta = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        let open = |rel: String| -> Result<BufReader<File>> {
            let p = self.require(&rel)?;
            Ok(BufReader::new(File::open(&p).map_err(|e| Error::io(&p, e))?))
        };
        PerformanceReport::read(
            &meta.model,
            meta.test_months,
            open(format!("{BACKTEST}/daily.csv"))?,
            open(format!("{BACKTEST}/calibration.csv"))?,
        )
    }

    fn report(&self) -> Result<StageOutput> {
        let report = self.load_report()?;
        self.fresh_dir(REPORT)?;
        let mut files = Vec::new();
        let mut emit = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> Result<()>| -> Result<()> {
            let rel = format!("{REPORT}/{name}");
            let mut w = self.create(&rel)?;
            f(&mut w)?;
            w.flush().map_err(|e| Error::io(self.path(&rel), e))?;
            files.push(rel);
            Ok(())
        };
        emit("monthly_sharpe.csv", &|w| report.write_sharpe_table(w))?;
        emit("cost_sweep.csv", &|w| report.write_sweep("cost", w))?;
        emit("threshold_sweep.csv", &|w| report.write_sweep("threshold", w))?;
        if !self.cfg.walk_forward.sweeps.dropout_rates.is_empty() {
            emit("dropout_sweep.csv", &|w| report.write_sweep("dropout", w))?;
        }
        emit("calibration.csv", &|w| report.write_calibration(w))?;
        emit("cumulative.csv", &|w| report.write_cumulative(w))?;
        Ok((files, BTreeMap::new()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BacktestMeta {
    model: String,
    test_months: Vec<u32>,
}
