use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slide_core::certify::CertifyConfig;
use slide_core::harness::{ScenarioConfig, SweepSpec};
use slide_core::oracle::OracleConfig;
use slide_core::profiles::{load_catalog, load_devices, Catalog, DeviceProfile};
use slide_core::scheduler::SchedulerConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub user_counts: Vec<usize>,
    pub model_counts: Vec<usize>,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            user_counts: (1..=6).collect(),
            model_counts: vec![3, 6],
            repeats: 5,
        }
    }
}

/// Everything a subcommand may need. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub catalog: PathBuf,
    pub devices: PathBuf,
    pub scenario: ScenarioConfig,
    pub scheduler: SchedulerConfig,
    pub oracle: OracleConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    pub certify: CertifyConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            catalog: "fixtures/catalog.json".into(),
            devices: "fixtures/devices.json".into(),
            scenario: ScenarioConfig::default(),
            scheduler: SchedulerConfig::default(),
            oracle: OracleConfig::default(),
            sweep: None,
            certify: CertifyConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        cfg.catalog = dir.join(&cfg.catalog);
        cfg.devices = dir.join(&cfg.devices);
        Ok(cfg)
    }

    pub fn load_profiles(&self) -> Result<(Catalog, BTreeMap<String, DeviceProfile>), CliError> {
        Ok((load_catalog(&self.catalog)?, load_devices(&self.devices)?))
    }
}
