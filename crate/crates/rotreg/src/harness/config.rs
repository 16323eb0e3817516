//! Experiment configuration: typed fields, per-task defaults, flat
//! `key=value` config files, and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Circle,
    Torus,
    Mammoth,
    Scurve,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(TaskKind::Circle),
            "torus" => Ok(TaskKind::Torus),
            "mammoth" => Ok(TaskKind::Mammoth),
            "scurve" => Ok(TaskKind::Scurve),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected circle|torus|mammoth|scurve)"
            ))),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskKind::Circle => "circle",
            TaskKind::Torus => "torus",
            TaskKind::Mammoth => "mammoth",
            TaskKind::Scurve => "scurve",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Mt,
    Rot,
    MtRot,
    Classification,
}

impl Method {
    pub fn uses_ot(&self) -> bool {
        matches!(self, Method::Rot | Method::MtRot)
    }

    pub fn uses_mt(&self) -> bool {
        matches!(self, Method::Mt | Method::MtRot)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Method::Baseline),
            "mt" => Ok(Method::Mt),
            "rot" => Ok(Method::Rot),
            "mt+rot" | "mtrot" => Ok(Method::MtRot),
            "classification" => Ok(Method::Classification),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected baseline|mt|rot|mt+rot|classification)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Baseline => "baseline",
            Method::Mt => "mt",
            Method::Rot => "rot",
            Method::MtRot => "mt+rot",
            Method::Classification => "classification",
        };
        write!(f, "{s}")
    }
}

/// Per-task default trade-off weight of the transport loss.
pub fn default_lambda(task: TaskKind) -> f64 {
    match task {
        TaskKind::Circle => 100.0,
        TaskKind::Torus => 100.0,
        TaskKind::Mammoth => 100.0,
        TaskKind::Scurve => 100.0,
    }
}

/// Per-task default entropic trade-off.
pub fn default_gamma(task: TaskKind) -> f64 {
    match task {
        TaskKind::Circle => 0.1,
        TaskKind::Torus => 0.1,
        TaskKind::Mammoth => 0.1,
        TaskKind::Scurve => 0.1,
    }
}

/// Full experiment configuration. `noise_sigma`, `lambda` and `gamma` may be
/// left unset to take per-task defaults (sigma: 0.05 x the target max-abs
/// scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub method: Method,
    pub n_points: usize,
    /// Ambient input dimension: the clean 3-d coordinates are embedded in
    /// this many dimensions (orthonormal frame) before the isotropic noise is
    /// added. 3 means inputs are the noisy coordinates themselves.
    pub ambient_dim: usize,
    pub noise_sigma: Option<f64>,
    /// Hidden layer widths; the full stack is [input, hidden..., d].
    pub encoder_widths: Vec<usize>,
    /// Feature dimension of the encoder output.
    pub d: usize,
    pub activation: Activation,
    /// Number of target copies under the multi-target methods.
    pub m: usize,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Class count for the classification method.
    pub classification_k: usize,
    /// Use only the first target coordinate (scalar regression / analysis runs).
    pub scalar_target: bool,
    /// Fill the extra target copies with uniform noise (ablation).
    pub noise_targets: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskKind::Circle,
            method: Method::Baseline,
            n_points: 2000,
            ambient_dim: 24,
            noise_sigma: None,
            encoder_widths: vec![128, 128],
            d: 16,
            activation: Activation::Tanh,
            m: 8,
            lambda: None,
            gamma: None,
            epochs: 200,
            batch_size: 128,
            learning_rate: 1e-2,
            momentum: 0.0,
            seed: 1,
            classification_k: 10,
            scalar_target: false,
            noise_targets: false,
            output_dir: PathBuf::from("rotreg-runs/run"),
        }
    }
}

impl ExperimentConfig {
    pub fn resolved_lambda(&self) -> f64 {
        if self.method.uses_ot() {
            self.lambda.unwrap_or_else(|| default_lambda(self.task))
        } else {
            0.0
        }
    }

    pub fn resolved_gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| default_gamma(self.task))
    }

    /// Scalar-target mode is implied by classification.
    pub fn effective_scalar_target(&self) -> bool {
        self.scalar_target || self.method == Method::Classification
    }

    /// Effective number of target copies: 1 unless a multi-target method.
    pub fn effective_m(&self) -> usize {
        if self.method.uses_mt() {
            self.m
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points < 10 {
            return Err(Error::Config(format!(
                "n_points must be at least 10, got {}",
                self.n_points
            )));
        }
        if self.ambient_dim < 3 {
            return Err(Error::Config(format!(
                "ambient_dim must be at least 3, got {}",
                self.ambient_dim
            )));
        }
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if let Some(lambda) = self.lambda {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
            }
        }
        let gamma = self.resolved_gamma();
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be > 0, got {gamma}")));
        }
        if let Some(sigma) = self.noise_sigma {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(Error::Config(format!("noise_sigma must be >= 0, got {sigma}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.method.uses_ot() && self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be at least 2 when the transport loss is active".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.method == Method::Classification && self.classification_k < 2 {
            return Err(Error::Config(format!(
                "classification_k must be at least 2, got {}",
                self.classification_k
            )));
        }
        if self.encoder_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("encoder_widths entries must be positive".into()));
        }
        Ok(())
    }

    /// Apply one `key=value` setting; keys match the field names.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let parse_f64 = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|e| Error::Config(format!("bad value '{v}' for {key}: {e}")))
        };
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|e| Error::Config(format!("bad value '{v}' for {key}: {e}")))
        };
        let parse_bool = |v: &str| -> Result<bool> {
            v.parse::<bool>()
                .map_err(|e| Error::Config(format!("bad value '{v}' for {key}: {e}")))
        };
        match key {
            "task" => self.task = value.parse()?,
            "method" => self.method = value.parse()?,
            "n_points" => self.n_points = parse_usize(value)?,
            "ambient_dim" => self.ambient_dim = parse_usize(value)?,
            "noise_sigma" => {
                self.noise_sigma = if value == "auto" {
                    None
                } else {
                    Some(parse_f64(value)?)
                }
            }
            "encoder_widths" => {
                self.encoder_widths = value
                    .split(',')
                    .map(|w| {
                        w.trim().parse::<usize>().map_err(|e| {
                            Error::Config(format!("bad width '{w}' in encoder_widths: {e}"))
                        })
                    })
                    .collect::<Result<_>>()?;
            }
            "d" => self.d = parse_usize(value)?,
            "activation" => self.activation = value.parse()?,
            "m" => self.m = parse_usize(value)?,
            "lambda" => {
                self.lambda = if value == "auto" {
                    None
                } else {
                    Some(parse_f64(value)?)
                }
            }
            "gamma" => {
                self.gamma = if value == "auto" {
                    None
                } else {
                    Some(parse_f64(value)?)
                }
            }
            "epochs" => self.epochs = parse_usize(value)?,
            "batch_size" => self.batch_size = parse_usize(value)?,
            "learning_rate" => self.learning_rate = parse_f64(value)?,
            "momentum" => self.momentum = parse_f64(value)?,
            "seed" => {
                self.seed = value
                    .parse::<u64>()
                    .map_err(|e| Error::Config(format!("bad seed '{value}': {e}")))?
            }
            "classification_k" => self.classification_k = parse_usize(value)?,
            "scalar_target" => self.scalar_target = parse_bool(value)?,
            "noise_targets" => self.noise_targets = parse_bool(value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Load a flat `key=value` file (one per line, `#` comments) on top of the
    /// defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        config.merge_file(path)?;
        Ok(config)
    }

    /// Apply a config file's settings on top of the current values.
    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: format!("expected key=value, got '{line}'"),
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }
}
