use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use emosup::encoders::WorldConfig;
use emosup::pepl::PeplConfig;
use emosup::supervision::DemoConfig;
use emosup::Real;
use serde::{Deserialize, Serialize};

/// Which negative pools pre-training draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    /// The stored pools used for the reported experiments.
    Paper,
    /// Every other emotion.
    All,
    /// A pools file written by `derive-pools`.
    File(String),
}

impl PoolSource {
    pub fn parse(s: &str) -> PoolSource {
        match s {
            "paper" => PoolSource::Paper,
            "all" => PoolSource::All,
            path => PoolSource::File(path.to_owned()),
        }
    }
}

/// Resolved run configuration; the JSON form mirrors this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub per_emotion: usize,
    pub pepl: PeplConfig,
    pub pools: PoolSource,
    pub demo: DemoConfig,
    pub baseline: String,
    /// Overrides the baseline's default weight.
    pub lambda: Option<Real>,
    pub grid: Vec<Real>,
    pub k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            world: WorldConfig::default(),
            per_emotion: 3,
            pepl: PeplConfig::default(),
            pools: PoolSource::Paper,
            demo: DemoConfig::default(),
            baseline: "toy".into(),
            lambda: None,
            grid: vec![0.1, 0.2, 0.4, 0.8],
            k: 1,
        }
    }
}

impl RunConfig {
    /// Reads a config file, or the `config` member of a `run.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("{} is not valid JSON", path.display()))?;
        let value = match value.get("config") {
            Some(inner) if value.get("command").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    /// Propagates the master seed to every component.
    pub fn finalize(mut self) -> Result<Self> {
        self.pepl.seed = self.seed;
        self.demo.seed = self.seed;
        if self.per_emotion == 0 {
            bail!("per_emotion must be at least 1");
        }
        self.world.validate()?;
        self.pepl.validate()?;
        Ok(self)
    }
}
