use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{IbmError, Result};
use crate::harness::data::GaussianSpec;
use crate::harness::idx::IdxSpec;
use crate::metrics::FwtRange;
use crate::network::LossScale;

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "IBM_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSpec {
    SplitGaussians(GaussianSpec),
    Idx(IdxSpec),
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::SplitGaussians(GaussianSpec::default())
    }
}

/// Every knob of a run. All keys are optional in the config file; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Energy threshold for the rank criterion.
    pub delta: f64,
    /// Epochs between γ recomputations.
    pub fd_interval: usize,
    pub kl_scale: f64,
    pub loss_scale: LossScale,
    pub alpha_threshold: f64,
    pub hidden_widths: Vec<usize>,
    pub probe_rows: usize,
    /// Re-initialize unselected variational parameters before each new task.
    pub reinit: bool,
    pub fwt_range: FwtRange,
    /// Also train the multi-task baseline so the report can carry FWT.
    pub multitask_baseline: bool,
    pub output_dir: PathBuf,
    pub data: DataSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs_per_task: 50,
            batch_size: 64,
            learning_rate: 1.5e-3,
            delta: crate::decompose::DEFAULT_DELTA,
            fd_interval: crate::decompose::DEFAULT_INTERVAL,
            kl_scale: 0.3,
            loss_scale: LossScale::Layers,
            alpha_threshold: crate::mask::ALPHA_THRESHOLD,
            hidden_widths: vec![64, 64, 64],
            probe_rows: crate::decompose::DEFAULT_PROBE_ROWS,
            reinit: true,
            fwt_range: FwtRange::Leading,
            multitask_baseline: true,
            output_dir: PathBuf::from("runs"),
            data: DataSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| IbmError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IbmError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Output directory, with the environment override applied.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(IbmError::Config(msg));
        if self.epochs_per_task == 0 {
            return fail("epochs_per_task must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.fd_interval == 0 {
            return fail("fd_interval must be >= 1".into());
        }
        if !(self.kl_scale >= 0.0 && self.kl_scale.is_finite()) {
            return fail(format!("kl_scale must be >= 0, got {}", self.kl_scale));
        }
        if !(self.alpha_threshold >= 0.0 && self.alpha_threshold.is_finite()) {
            return fail(format!("alpha_threshold must be >= 0, got {}", self.alpha_threshold));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return fail(format!("hidden_widths must be non-empty and positive, got {:?}", self.hidden_widths));
        }
        if self.probe_rows == 0 {
            return fail("probe_rows must be >= 1".into());
        }
        match &self.data {
            DataSpec::SplitGaussians(g) => g.validate(),
            DataSpec::Idx(i) => i.validate(),
        }
    }
}
