#![allow(dead_code)]

use std::path::Path;

use curvecast::config::RunConfig;

/// One fold over eight two-day months with a tiny network.
pub const SMOKE: &str = r#"
seed = 5

[data.synthetic]
quotes_per_day = 60
days_per_month = 2
days = 16

[sampling]
window_len = 20

[walk_forward]
folds = [7]

[walk_forward.model]
mc_samples = 4

[walk_forward.model.network]
common_layers = [16, 8]
branch_layers = [8]

[walk_forward.model.training]
batch_size = 128
max_epochs = 3
patience = 2
"#;

pub fn smoke(out: &Path, overrides: &[&str]) -> RunConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let mut cfg = RunConfig::from_toml(SMOKE, &o).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

/// Relative path to file bytes, for every file under `dir`.
pub fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
