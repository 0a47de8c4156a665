//! Experiment runner: reads a config, runs one verification experiment and
//! writes its CSV tables and a JSON report.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod config;
pub mod experiments;
pub mod presets;
pub mod report;

use std::path::{Path, PathBuf};

use config::{ConfigError, ExperimentConfig};
use report::RunReport;

/// Prefix selecting a shipped preset instead of a file.
pub const PRESET_PREFIX: &str = "preset:";

/// Loads `preset:NAME` or a config file; returns the config and a run name.
pub fn load_config(source: &str) -> Result<(ExperimentConfig, String), ConfigError> {
    if let Some(name) = source.strip_prefix(PRESET_PREFIX) {
        return Ok((presets::load(name)?, name.to_string()));
    }
    let path = Path::new(source);
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(source.to_string(), e))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
    Ok((ExperimentConfig::parse(&text, source)?, name))
}

/// Output directory: explicit flag, then the config, then `root/name`.
pub fn output_dir(flag: Option<&Path>, cfg: &ExperimentConfig, root: Option<&Path>, name: &str) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| root.unwrap_or(Path::new("out")).join(name))
}

/// Runs `cfg` and writes every artifact and `report.json` into `dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<RunReport> {
    let (report, artifacts) = experiments::run(cfg)?;
    artifacts.write_all(dir)?;
    report::write_report(dir, &report)?;
    Ok(report)
}
