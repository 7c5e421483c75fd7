//! File-based agent configuration (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calendar::DailyHours;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimerConfig {
    pub reminder1_hours: u32,
    pub reminder2_hours: u32,
    pub warning_hours: u32,
    pub cancel_hours: u32,
}

impl Default for TimerConfig {
    fn default() -> Self {
        Self { reminder1_hours: 24, reminder2_hours: 48, warning_hours: 72, cancel_hours: 96 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BallotConfig {
    pub options_k: usize,
}

impl Default for BallotConfig {
    fn default() -> Self {
        Self { options_k: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkHoursConfig {
    pub grid_minutes: u32,
}

impl Default for WorkHoursConfig {
    fn default() -> Self {
        Self { grid_minutes: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub assistant_name: String,
    pub assistant_address: String,
    pub ballot: BallotConfig,
    pub timers: TimerConfig,
    /// Overrides every subscriber's own business hours when set.
    pub business_hours: Option<DailyHours>,
    pub workhours: WorkHoursConfig,
    pub lease_minutes: i64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            assistant_name: "Cal".into(),
            assistant_address: "cal@assistant.example".into(),
            ballot: BallotConfig::default(),
            timers: TimerConfig::default(),
            business_hours: None,
            workhours: WorkHoursConfig::default(),
            lease_minutes: crate::taskboard::DEFAULT_LEASE_MINUTES,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad config: {0}")]
    Parse(String),
}

impl AgentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: AgentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.timers;
        if self.ballot.options_k == 0 {
            return Err(ConfigError::Parse("ballot.options_k must be at least 1".into()));
        }
        if !(0 < t.reminder1_hours
            && t.reminder1_hours < t.reminder2_hours
            && t.reminder2_hours < t.warning_hours
            && t.warning_hours < t.cancel_hours)
        {
            return Err(ConfigError::Parse("timers must be strictly increasing and positive".into()));
        }
        if self.workhours.grid_minutes == 0 || 1440 % self.workhours.grid_minutes != 0 {
            return Err(ConfigError::Parse("workhours.grid_minutes must divide a day".into()));
        }
        if let Some(b) = self.business_hours {
            if b.start >= b.end {
                return Err(ConfigError::Parse("business_hours.start must precede end".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_parse() {
        let cfg = AgentConfig::from_toml(
            "[ballot]\noptions_k = 4\n[timers]\nreminder1_hours = 12\n[business_hours]\nstart = \"08:00\"\nend = \"18:00\"\n[workhours]\ngrid_minutes = 15\n",
        )
        .unwrap();
        assert_eq!(cfg.ballot.options_k, 4);
        assert_eq!(cfg.timers.reminder1_hours, 12);
        assert_eq!(cfg.timers.cancel_hours, 96);
        assert_eq!(cfg.workhours.grid_minutes, 15);
        assert_eq!(cfg.business_hours.unwrap().start.to_string(), "08:00:00");
    }

    #[test]
    fn rejects_bad_values() {
        assert!(AgentConfig::from_toml("[timers]\nreminder1_hours = 50\n").is_err());
        assert!(AgentConfig::from_toml("[ballot]\noptions_k = 0\n").is_err());
        assert!(AgentConfig::from_toml("bogus = 1\n").is_err());
    }
}
