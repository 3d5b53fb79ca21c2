use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SceneConfig;
use crate::modulation::ModulationConfig;
use crate::transformer::StackConfig;
use crate::upsampler::UpsamplerConfig;

fn d_suite() -> usize {
    1
}

fn d_output() -> PathBuf {
    PathBuf::from("out")
}

/// Everything a command needs. Every field has a default; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the first scene.
    #[serde(default)]
    pub seed: u64,
    /// Consecutive scene seeds processed by `run` and `detect`.
    #[serde(default = "d_suite")]
    pub suite_size: usize,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub stack: StackConfig,
    #[serde(default)]
    pub modulation: ModulationConfig,
    #[serde(default)]
    pub upsampler: UpsamplerConfig,
    #[serde(default = "d_output")]
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            suite_size: d_suite(),
            scene: SceneConfig::default(),
            stack: StackConfig::default(),
            modulation: ModulationConfig::default(),
            upsampler: UpsamplerConfig::default(),
            output: d_output(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Reads and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = Self::from_json(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.stack.validate()?;
        self.modulation.validate(self.stack.depth_coarse)?;
        self.upsampler.validate()?;
        if self.suite_size == 0 {
            return Err(Error::Config("suite_size must be positive".into()));
        }
        let (s, k) = (&self.scene, &self.stack);
        if (s.height, s.width, s.patch) != (k.low_height, k.low_width, k.patch) {
            return Err(Error::Config(format!(
                "scene {}×{} patch {} disagrees with stack low resolution {}×{} patch {}",
                s.height, s.width, s.patch, k.low_height, k.low_width, k.patch
            )));
        }
        Ok(())
    }

    pub fn scene_seeds(&self) -> Vec<u64> {
        (0..self.suite_size as u64).map(|i| self.seed + i).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig {
            seed: 7,
            suite_size: 3,
            ..Default::default()
        };
        assert_eq!(RunConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
        assert_eq!(cfg.scene_seeds(), vec![7, 8, 9]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            RunConfig::from_json(r#"{"sede": 1}"#),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::from_json(r#"{"scene": {"view": 4}}"#).is_err());
        let mut cfg = RunConfig::default();
        cfg.scene.height = 64;
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_json(r#"{"modulation": {"window_radius": 0}}"#).unwrap();
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("window_radius"));
    }
}
