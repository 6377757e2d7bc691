//! Experiment configuration, read from a single TOML or JSON document.
//!
//! ```toml
//! n_demos = 1000
//! trials = [0, 1, 2]
//! output_dir = "out"
//!
//! [environment]
//! kind = "frozen_lake"
//! map = "8x8"
//!
//! [expert]
//! source = "noisy_q"
//! sigma = 0.05
//!
//! [removal]
//! rule = "fraction_h"
//! fraction = 0.5
//!
//! [learner]
//! episodes = 20000
//! ```

use std::path::{Path, PathBuf};

use estop_core::envs::{build_frozenlake, FrozenLakeSpec, GridMap, PendulumSpec};
use estop_core::learners::{Algorithm, CemConfig};
use estop_core::{LearnerConfig, TabularMdp};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, io_err, LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentConfig,
    pub expert: ExpertSource,
    pub n_demos: usize,
    pub demo_seed: u64,
    pub removal: RemovalRule,
    pub learner: LearnerConfig,
    /// Learner seeds, one trial each.
    pub trials: Vec<u64>,
    pub ablation: AblationGrid,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            environment: EnvironmentConfig::default(),
            expert: ExpertSource::ViOptimal,
            n_demos: 1000,
            demo_seed: 0,
            removal: RemovalRule::FractionH { fraction: 0.5 },
            learner: LearnerConfig::default(),
            trials: (0..20).collect(),
            ablation: AblationGrid::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentConfig {
    FrozenLake(FrozenLakeConfig),
    Pendulum(PendulumConfig),
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig::FrozenLake(FrozenLakeConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrozenLakeConfig {
    /// `"8x8"`, `"4x4"` or the path of a map file.
    pub map: String,
    pub hole_escape_prob: f64,
    pub goal_terminal: bool,
    pub horizon: usize,
}

impl Default for FrozenLakeConfig {
    fn default() -> Self {
        let spec = FrozenLakeSpec::default();
        Self {
            map: "8x8".into(),
            hole_escape_prob: spec.hole_escape_prob,
            goal_terminal: spec.goal_terminal,
            horizon: spec.horizon,
        }
    }
}

impl FrozenLakeConfig {
    pub fn grid(&self) -> Result<GridMap> {
        match self.map.as_str() {
            "8x8" => Ok(GridMap::classic_8x8()),
            "4x4" => Ok(GridMap::classic_4x4()),
            path => {
                let path = Path::new(path);
                let text = std::fs::read_to_string(path).map_err(io_err(path))?;
                text.parse()
                    .map_err(|e| LabError::Config(format!("map {}: {e}", path.display())))
            }
        }
    }

    pub fn spec(&self, gamma: f64) -> Result<FrozenLakeSpec> {
        Ok(FrozenLakeSpec {
            map: self.grid()?,
            hole_escape_prob: self.hole_escape_prob,
            goal_terminal: self.goal_terminal,
            discount: gamma,
            horizon: self.horizon,
        })
    }

    pub fn build(&self, gamma: f64) -> Result<TabularMdp> {
        Ok(build_frozenlake(&self.spec(gamma)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumConfig {
    pub spec: PendulumSpec,
    /// Gains of the demonstrating controller.
    pub demo_gains: [f64; 2],
    /// Each side of the demo box is widened by this fraction of its width.
    pub box_margin: f64,
    pub cem: CemConfig,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            spec: PendulumSpec::default(),
            demo_gains: [-20.0, -5.0],
            box_margin: 0.1,
            cem: CemConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExpertSource {
    /// Finite-horizon optimum from value iteration.
    #[default]
    ViOptimal,
    /// Greedy on the optimal time-indexed Q plus independent N(0, σ²) noise.
    NoisyQ { sigma: f64, seed: u64 },
    /// Pre-recorded demonstrations, one JSON document per line.
    DemoFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum RemovalRule {
    /// Remove lowest-`ĥ` states while the removed `ĥ` mass stays within `xi`.
    Budget { xi: f64 },
    /// Remove the given fraction of states with the lowest `ρ̂`.
    FractionRho { fraction: f64 },
    /// Remove the given fraction of states with the lowest `ĥ`.
    FractionH { fraction: f64 },
    /// Grid of `ρ`-rank fractions for the value-iteration sweep.
    Sweep { fractions: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub sigmas: Vec<f64>,
    pub demo_counts: Vec<usize>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 0.01, 0.02, 0.05, 0.1, 0.2],
            demo_counts: vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000],
        }
    }
}

/// Default grid for the value-iteration sweep: 0, 0.05, …, 0.95.
pub fn default_sweep_fractions() -> Vec<f64> {
    (0..20).map(|i| i as f64 / 20.0).collect()
}

impl ExperimentConfig {
    /// Parses TOML or JSON, chosen by extension and otherwise by trying both.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let cfg = match ext {
            "json" => Self::from_json(&text)?,
            "toml" => Self::from_toml(&text)?,
            _ => Self::from_json(&text).or_else(|_| Self::from_toml(&text))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LabError::Config(format!("json: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Config(format!("toml: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials.is_empty() {
            return config_err("trials must not be empty");
        }
        let check_fraction = |f: f64| {
            if (0.0..=1.0).contains(&f) {
                Ok(())
            } else {
                config_err(format!("fraction {f} outside [0, 1]"))
            }
        };
        match &self.removal {
            RemovalRule::Budget { xi } if !(*xi >= 0.0) => return config_err("xi must be nonnegative"),
            RemovalRule::FractionRho { fraction } | RemovalRule::FractionH { fraction } => check_fraction(*fraction)?,
            RemovalRule::Sweep { fractions } => {
                if fractions.is_empty() {
                    return config_err("sweep needs at least one fraction");
                }
                fractions.iter().try_for_each(|&f| check_fraction(f))?;
            }
            _ => {}
        }
        match &self.expert {
            ExpertSource::NoisyQ { sigma, .. } if !(*sigma >= 0.0) => return config_err("sigma must be nonnegative"),
            ExpertSource::DemoFile { .. } => {}
            _ if self.n_demos == 0 => return config_err("n_demos must be positive"),
            _ => {}
        }
        if self.ablation.sigmas.iter().any(|s| !(*s >= 0.0)) {
            return config_err("ablation sigmas must be nonnegative");
        }
        self.learner.validate().map_err(|e| LabError::Config(e.to_string()))?;
        match &self.environment {
            EnvironmentConfig::FrozenLake(fl) => {
                if fl.horizon < 2 {
                    return config_err("horizon must be at least 2");
                }
                if !(0.0..=1.0).contains(&fl.hole_escape_prob) {
                    return config_err("hole_escape_prob outside [0, 1]");
                }
                if self.learner.algorithm == Algorithm::CrossEntropy {
                    return config_err("cross_entropy needs the pendulum environment");
                }
                fl.grid()?;
            }
            EnvironmentConfig::Pendulum(p) => {
                p.spec.validate().map_err(|e| LabError::Config(e.to_string()))?;
                p.cem.validate().map_err(|e| LabError::Config(e.to_string()))?;
                if !(p.box_margin >= 0.0) {
                    return config_err("box_margin must be nonnegative");
                }
            }
        }
        Ok(())
    }

    /// Short SHA-256 of the configuration, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let text = serde_json::to_string(&canonical).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
    }

    pub fn frozen_lake(&self) -> Result<&FrozenLakeConfig> {
        match &self.environment {
            EnvironmentConfig::FrozenLake(fl) => Ok(fl),
            EnvironmentConfig::Pendulum(_) => config_err("this command needs a tabular environment"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let toml_text = r#"
            n_demos = 50
            trials = [3, 4]
            [environment]
            kind = "frozen_lake"
            map = "4x4"
            horizon = 30
            [expert]
            source = "noisy_q"
            sigma = 0.1
            seed = 2
            [removal]
            rule = "budget"
            xi = 0.05
            [learner]
            episodes = 100
        "#;
        let a = ExperimentConfig::from_toml(toml_text).unwrap();
        a.validate().unwrap();
        let b = ExperimentConfig::from_json(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.expert, ExpertSource::NoisyQ { sigma: 0.1, seed: 2 });
        assert_eq!(a.learner.episodes, 100);
        assert_eq!(a.learner.alpha, LearnerConfig::default().alpha);
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.demo_seed = 9;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn invalid_documents_are_config_errors() {
        assert!(ExperimentConfig::from_json(r#"{"n_demoz": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"environment": {"kind": "frozen_lake", "mapp": "4x4"}}"#).is_err());
        let empty = ExperimentConfig {
            trials: vec![],
            ..ExperimentConfig::default()
        };
        assert!(matches!(empty.validate(), Err(LabError::Config(_))));
        let bad = ExperimentConfig {
            removal: RemovalRule::FractionH { fraction: 1.5 },
            ..ExperimentConfig::default()
        };
        assert!(matches!(bad.validate(), Err(LabError::Config(_))));
        let pendulum = ExperimentConfig::from_json(r#"{"environment": {"kind": "pendulum", "box_margin": 0.2}}"#).unwrap();
        pendulum.validate().unwrap();
        assert!(pendulum.frozen_lake().is_err());
    }
}
