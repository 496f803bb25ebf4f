//! Simulation configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::MutationRates;
use crate::physics::PhysicsParams;
use crate::streams::StreamsConfig;
use crate::world::WorldConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub ticks: u64,
    /// Snapshot period; 0 disables periodic snapshots.
    pub snapshot_every: u64,
    /// State-hash period; 0 disables checkpoints.
    pub hash_every: u64,
    /// Profile window for the metrics.
    pub metrics_window: usize,
    pub write_ledger: bool,
    pub gzip: bool,
    /// Ticks simulated by the baseline oracle.
    pub baseline_ticks: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ticks: 2000,
            snapshot_every: 1000,
            hash_every: 1,
            metrics_window: 500,
            write_ledger: true,
            gzip: true,
            baseline_ticks: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub world: WorldConfig,
    pub physics: PhysicsParams,
    pub rates: MutationRates,
    pub streams: StreamsConfig,
    pub run: RunConfig,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Domain checks on every section. The guard inequality is separate.
    pub fn check(&self) -> Result<(), ConfigError> {
        self.world.check().map_err(ConfigError::Invalid)?;
        self.physics.check_domains().map_err(ConfigError::Invalid)?;
        self.rates.check().map_err(ConfigError::Invalid)?;
        self.streams.check().map_err(ConfigError::Invalid)?;
        if self.run.metrics_window == 0 {
            return Err(ConfigError::Invalid("run.metrics_window must be at least 1".into()));
        }
        if self.run.baseline_ticks < crate::physics::ORACLE_MIN_TICKS {
            return Err(ConfigError::Invalid(format!(
                "run.baseline_ticks must be at least {}",
                crate::physics::ORACLE_MIN_TICKS
            )));
        }
        Ok(())
    }

    /// Sensory width: stream channels followed by one channel per emission slot.
    pub fn sensory_width(&self) -> usize {
        self.streams.total_width() + self.world.emission_slots as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = SimConfig::default();
        let back = SimConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.sensory_width(), 36);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = SimConfig::from_toml("[physics]\nalpah = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("alpah"), "{err}");
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = SimConfig::from_toml("[world]\nwidth = 8\nheight = 8\nfounder_count = 4\n").unwrap();
        assert_eq!(cfg.world.width, 8);
        assert_eq!(cfg.physics, PhysicsParams::default());
    }
}
