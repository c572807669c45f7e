//! Declarative run configuration, read from TOML with `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backtest::WalkForwardConfig;
use crate::error::{Error, Result};
use crate::market::{QuoteSchema, SyntheticMarketConfig};
use crate::sampler::{StdConvention, DEFAULT_CUTOFF_BPS, DEFAULT_WINDOW_LEN};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Synthetic,
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileSource {
    /// Glob of quote files, relative to the working directory. Matches are
    /// read in sorted path order.
    pub pattern: String,
    pub contracts: usize,
    pub schema: QuoteSchema,
}

impl Default for FileSource {
    fn default() -> Self {
        Self {
            pattern: String::new(),
            contracts: 9,
            schema: QuoteSchema::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceKind,
    /// `seed` is ignored: the generator seed comes from the master seed.
    pub synthetic: SyntheticMarketConfig,
    pub files: FileSource,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: SourceKind::Synthetic,
            synthetic: SyntheticMarketConfig::default(),
            files: FileSource::default(),
        }
    }
}

impl DataConfig {
    pub fn contracts(&self) -> usize {
        match self.source {
            SourceKind::Synthetic => self.synthetic.contracts,
            SourceKind::Files => self.files.contracts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Down-sampling cutoff `M` in bps.
    pub cutoff: f64,
    pub window_len: usize,
    pub convention: StdConvention,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            cutoff: DEFAULT_CUTOFF_BPS,
            window_len: DEFAULT_WINDOW_LEN,
            convention: StdConvention::Population,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Not written to the manifest; artifacts are addressed relative to it.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub sampling: SamplingConfig,
    pub walk_forward: WalkForwardConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            sampling: SamplingConfig::default(),
            walk_forward: WalkForwardConfig::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    // Anything that is not a TOML literal is taken as a bare string.
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `a.b.c = value` in `root`, creating tables on the way.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key '{key}'")));
    }
    let mut table = root;
    for part in &path[..path.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{key}': '{part}' is not a table")))?;
    }
    table.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: RunConfig = root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    /// Resolved config as TOML, without the output directory.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match self.data.source {
            SourceKind::Synthetic => self.data.synthetic.validate()?,
            SourceKind::Files => {
                if self.data.files.pattern.is_empty() {
                    return Err(Error::Config("data.files.pattern is empty".into()));
                }
                if self.data.files.contracts == 0 {
                    return Err(Error::Config("data.files.contracts must be positive".into()));
                }
            }
        }
        if !(self.sampling.cutoff > 0.0) {
            return Err(Error::Config(format!("sampling.cutoff must be positive, got {}", self.sampling.cutoff)));
        }
        if self.sampling.window_len < 2 {
            return Err(Error::Config("sampling.window_len must be at least 2".into()));
        }
        let wf = &self.walk_forward;
        if wf.folds.is_empty() {
            return Err(Error::Config("walk_forward.folds is empty".into()));
        }
        wf.model.validate()?;
        if wf.backtest.strategies.is_empty() {
            return Err(Error::Config("walk_forward.backtest.strategies is empty".into()));
        }
        for k in &wf.backtest.strategies {
            wf.backtest.spec(*k, wf.backtest.threshold).validate()?;
        }
        for &t in &wf.sweeps.thresholds {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("sweep threshold {t} must be >= 0")));
            }
        }
        for &r in &wf.sweeps.dropout_rates {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("sweep dropout rate {r} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn synth_seed(&self) -> u64 {
        derive_seed(self.seed, &["synth"])
    }

    /// The synthetic generator config with its seed taken from the master seed.
    pub fn synthetic(&self) -> SyntheticMarketConfig {
        SyntheticMarketConfig {
            seed: self.synth_seed(),
            ..self.data.synthetic.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.walk_forward.model.training.batch_size, 1024);
        assert_eq!(cfg.walk_forward.model.training.patience, 15);
        assert_eq!(cfg.walk_forward.model.network.dropout_rate, 0.1);
        assert_eq!(cfg.walk_forward.model.network.l2_lambda, 1e-8);
        assert_eq!(cfg.walk_forward.model.mc_samples, 30);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = RunConfig::from_toml(
            "seed = 3\n[walk_forward.model]\nkind = \"mlp-full\"\n",
            &[
                "walk_forward.model.kind=bayes".into(),
                "walk_forward.model.network.common_layers=[8, 4]".into(),
                "sampling.cutoff = 0.5".into(),
                "walk_forward.backtest.strategies=[\"Base\", \"AlEp\"]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.walk_forward.model.kind, ModelKind::Bayes);
        assert_eq!(cfg.walk_forward.model.network.common_layers, vec![8, 4]);
        assert_eq!(cfg.sampling.cutoff, 0.5);
        assert_eq!(cfg.walk_forward.backtest.strategies.len(), 2);
    }

    #[test]
    fn bare_strings_are_accepted() {
        let cfg = RunConfig::from_toml("", &["walk_forward.model.kind=mlp-full".into()]).unwrap();
        assert_eq!(cfg.walk_forward.model.kind, ModelKind::MlpFull);
    }

    #[test]
    fn typos_are_config_errors() {
        for o in ["walk_forward.model.trainig.patience=3", "seed", "seed=abc", "sampling.cutoff=0"] {
            let err = RunConfig::from_toml("", &[o.into()]).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{o}: {err}");
        }
    }

    #[test]
    fn resolved_toml_round_trips() {
        let cfg = RunConfig::from_toml("", &["walk_forward.sweeps.dropout_rates=[0.2]".into()]).unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap(), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn synthetic_seed_follows_master() {
        let a = RunConfig::from_toml("seed = 1", &[]).unwrap();
        let b = RunConfig::from_toml("seed = 2", &[]).unwrap();
        assert_ne!(a.synthetic().seed, b.synthetic().seed);
    }
}
