use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnloss::{DEFAULT_LAMBDA, DEFAULT_WINDOW};
use crate::pose::DEFAULT_SIGMA;
use crate::regions::RegionConfig;
use crate::tensor::DEFAULT_CONFIDENCE_THRESHOLD;

/// Merge strategy by name; `Linear` needs caller-supplied weight maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeKind {
    #[default]
    Max,
    Average,
    Linear,
}

impl FromStr for MergeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "max" => Ok(MergeKind::Max),
            "average" | "avg" | "mean" => Ok(MergeKind::Average),
            "linear" => Ok(MergeKind::Linear),
            other => Err(Error::Domain(format!("unknown merge strategy {other:?}"))),
        }
    }
}

/// Pipeline settings shared by the CLI subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub sigma: f32,
    pub n: usize,
    pub lambda: f64,
    pub merge: MergeKind,
    pub symmetry: bool,
    pub head_joints: Vec<usize>,
    pub torso_anchor_joints: Vec<usize>,
    pub confidence_threshold: f32,
}

impl Default for Config {
    fn default() -> Self {
        let regions = RegionConfig::default();
        Self {
            sigma: DEFAULT_SIGMA,
            n: DEFAULT_WINDOW,
            lambda: DEFAULT_LAMBDA,
            merge: MergeKind::Max,
            symmetry: true,
            head_joints: regions.head_joints,
            torso_anchor_joints: regions.torso_anchor_joints,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Domain(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Domain(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.n == 0 || self.n.is_multiple_of(2) {
            return Err(Error::Domain(format!("n must be odd, got {}", self.n)));
        }
        self.region_config().validate()
    }

    pub fn region_config(&self) -> RegionConfig {
        RegionConfig {
            head_joints: self.head_joints.clone(),
            torso_anchor_joints: self.torso_anchor_joints.clone(),
        }
    }
}
