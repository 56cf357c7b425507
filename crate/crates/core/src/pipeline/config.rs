use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{InversionConfig, ScheduleKind};
use crate::error::{Error, Result};
use crate::flow::BlockMatchParams;
use crate::image::LatentCodec;
use crate::metrics::EntropyConfig;

/// Environment variable that overrides [`PipelineConfig::workers`].
pub const WORKERS_ENV: &str = "FLOWDIST_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_image: PathBuf,
    pub codec: LatentCodec,
    pub schedule: ScheduleConfig,
    #[serde(default = "default_t_inv")]
    pub t_inv: usize,
    #[serde(default)]
    pub forward_mode: ForwardMode,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    pub conditioning: ConditioningConfig,
    pub predictor: PredictorConfig,
    pub estimator: EstimatorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_flow: Option<PathBuf>,
    #[serde(default)]
    pub entropy_grid: EntropyConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

fn default_t_inv() -> usize {
    250
}

fn default_delta() -> f64 {
    30.0
}

fn default_n_samples() -> usize {
    500
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    #[serde(rename = "T")]
    pub steps: usize,
}

/// How the clean latent reaches the sampling timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardMode {
    /// Deterministic DDIM inversion; the unperturbed chain reproduces the input.
    #[default]
    DdimInvert,
    /// One draw from the forward marginal.
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConditioningConfig {
    Fixed {
        vector: Vec<f64>,
    },
    Invert {
        steps: usize,
        lr: f64,
        /// Starting embedding; a single zero when omitted.
        #[serde(default = "default_init")]
        init: Vec<f64>,
        #[serde(default = "default_loss_samples")]
        loss_samples: usize,
    },
}

fn default_init() -> Vec<f64> {
    vec![0.0]
}

fn default_loss_samples() -> usize {
    8
}

impl ConditioningConfig {
    pub(crate) fn inversion(&self) -> Option<InversionConfig> {
        match *self {
            ConditioningConfig::Fixed { .. } => None,
            ConditioningConfig::Invert {
                steps,
                lr,
                loss_samples,
                ..
            } => Some(InversionConfig {
                steps,
                learning_rate: lr,
                loss_samples,
            }),
        }
    }

    /// The fixed vector, or the inversion's starting point.
    pub fn initial_vector(&self) -> &[f64] {
        match self {
            ConditioningConfig::Fixed { vector } => vector,
            ConditioningConfig::Invert { init, .. } => init,
        }
    }
}

/// Scalar or per-coordinate value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVector {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl ScalarOrVector {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            ScalarOrVector::Scalar(x) => vec![*x],
            ScalarOrVector::Vector(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PredictorConfig {
    GaussianOracle {
        mu: ScalarOrVector,
        sigma2: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias_target: Option<Vec<f64>>,
    },
    /// Whole-image generation by an external process.
    Bridge {
        command: Vec<String>,
        #[serde(default)]
        token: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EstimatorConfig {
    BlockMatching {
        #[serde(default)]
        params: BlockMatchParams,
    },
    Bridge {
        command: Vec<String>,
    },
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad pipeline config: {e}")))
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative_to(base);
        }
        Ok(cfg)
    }

    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input_image);
        fix(&mut self.output_dir);
        if let Some(gt) = self.gt_flow.as_mut() {
            fix(gt);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be >= 1"));
        }
        if self.schedule.steps == 0 {
            return Err(Error::invalid("schedule T must be >= 1"));
        }
        if self.t_inv == 0 || self.t_inv > self.schedule.steps {
            return Err(Error::invalid(format!(
                "t_inv must lie in [1, T = {}], got {}",
                self.schedule.steps, self.t_inv
            )));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::invalid(format!("delta must be finite and >= 0, got {}", self.delta)));
        }
        if self.conditioning.initial_vector().is_empty() {
            return Err(Error::invalid("conditioning vector is empty"));
        }
        if let Some(inv) = self.conditioning.inversion() {
            inv.validate()?;
        }
        if let LatentCodec::BlockAverage { factor: 0 } = self.codec {
            return Err(Error::invalid("block-average factor must be >= 1"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("workers must be >= 1"));
        }
        for (cmd, what) in [
            (self.predictor_command(), "predictor"),
            (self.estimator_command(), "estimator"),
        ] {
            if cmd.is_some_and(|c| c.is_empty()) {
                return Err(Error::Config(format!("{what} bridge command is empty")));
            }
        }
        if !self.input_image.is_file() {
            return Err(Error::invalid(format!(
                "input image {} does not exist",
                self.input_image.display()
            )));
        }
        if let Some(gt) = &self.gt_flow {
            if !gt.is_file() {
                return Err(Error::invalid(format!("gt_flow {} does not exist", gt.display())));
            }
        }
        Ok(())
    }

    fn predictor_command(&self) -> Option<&[String]> {
        match &self.predictor {
            PredictorConfig::Bridge { command, .. } => Some(command),
            _ => None,
        }
    }

    fn estimator_command(&self) -> Option<&[String]> {
        match &self.estimator {
            EstimatorConfig::Bridge { command } => Some(command),
            _ => None,
        }
    }

    /// Worker count after applying `FLOWDIST_WORKERS`.
    pub fn effective_workers(&self) -> Result<Option<usize>> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n >= 1 => Ok(Some(n)),
                _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
            },
            Err(_) => Ok(self.workers),
        }
    }

    /// The config as echoed in reports: everything that affects results.
    /// Output location and worker count are left out so that reports of the
    /// same experiment compare byte-for-byte wherever they were written.
    pub(crate) fn echo(&self) -> Self {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.workers = None;
        c
    }
}
