//! Run configuration, loaded from TOML.
//!
//! ```toml
//! [model]      # ModelConfig fields
//! depth = 6
//! [align]      # enabled, depth_n, lambda, variant ("mlp" | "query_pooler"), queries
//! lambda = 0.1
//! [optimizer]  # lr, beta1, beta2, eps
//! [dataset]    # num_classes, size, jitter, prototype_alignment, holdout_fraction
//! [teacher]    # source ("synthetic" or a TEMB path), tokens, width
//! [eval]       # count, sampling_steps
//! [run]        # steps, batch_size, seed, log_interval, out
//! ```
//!
//! Every section and field is optional; unknown keys are errors.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::DEFAULT_SAMPLING_STEPS;
use crate::model::ModelConfig;
use crate::optim::AdamConfig;
use crate::supervision::AlignmentConfig;

/// Where teacher embeddings come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TeacherSource {
    /// Seeded unit-norm Gaussian tokens, one set per class.
    Synthetic,
    /// A TEMB file.
    File(PathBuf),
}

impl TryFrom<String> for TeacherSource {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        match s.as_str() {
            "" => Err(Error::Config("teacher.source must not be empty".into())),
            "synthetic" => Ok(Self::Synthetic),
            _ => Ok(Self::File(PathBuf::from(s))),
        }
    }
}

impl From<TeacherSource> for String {
    fn from(t: TeacherSource) -> String {
        t.to_string()
    }
}

impl fmt::Display for TeacherSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Synthetic => f.write_str("synthetic"),
            Self::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl std::str::FromStr for TeacherSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::try_from(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub source: TeacherSource,
    /// Tokens per caption for synthetic teachers. A TEMB file carries its own.
    pub tokens: usize,
    /// Embedding width for synthetic teachers.
    pub width: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            source: TeacherSource::Synthetic,
            tokens: 8,
            width: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub size: usize,
    /// Standard deviation of the per-sample jitter around each prototype.
    pub jitter: f64,
    /// Length of the teacher-direction component added to each prototype.
    pub prototype_alignment: f64,
    pub holdout_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            size: 2048,
            jitter: 0.1,
            prototype_alignment: 8.0,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Held-out items scored per evaluation (capped at the held-out size).
    pub count: usize,
    pub sampling_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            count: 256,
            sampling_steps: DEFAULT_SAMPLING_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// A metrics row is written every `log_interval` steps and at the last step.
    pub log_interval: u64,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            seed: 0,
            log_interval: 10,
            out: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub align: AlignmentConfig,
    pub optimizer: AdamConfig,
    pub dataset: DatasetConfig,
    pub teacher: TeacherConfig,
    pub eval: EvalConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig always serializes")
    }

    /// Checks every section and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut collect = |r: Result<()>| {
            if let Err(e) = r {
                match e {
                    Error::Config(msg) => problems.push(msg),
                    other => problems.push(other.to_string()),
                }
            }
        };
        collect(self.model.validate());
        collect(self.align.validate(self.model.depth));
        collect(self.optimizer.validate());

        let mut own = Vec::new();
        let d = &self.dataset;
        if d.num_classes == 0 {
            own.push("dataset.num_classes must be positive".to_string());
        }
        if d.size < 2 * d.num_classes.max(1) {
            own.push(format!("dataset.size {} is too small for {} classes", d.size, d.num_classes));
        }
        if !(d.jitter >= 0.0 && d.jitter.is_finite()) {
            own.push(format!("dataset.jitter = {} must be finite and non-negative", d.jitter));
        }
        if !d.prototype_alignment.is_finite() {
            own.push("dataset.prototype_alignment must be finite".to_string());
        }
        if !(d.holdout_fraction > 0.0 && d.holdout_fraction < 1.0) {
            own.push(format!("dataset.holdout_fraction = {} must lie in (0, 1)", d.holdout_fraction));
        }
        if self.teacher.tokens == 0 {
            own.push("teacher.tokens must be positive".to_string());
        }
        if self.teacher.width == 0 || self.teacher.width > self.model.latent_numel() {
            own.push(format!(
                "teacher.width = {} must lie in 1..={}",
                self.teacher.width,
                self.model.latent_numel()
            ));
        }
        if self.eval.sampling_steps == 0 {
            own.push("eval.sampling_steps must be positive".to_string());
        }
        if self.eval.count == 1 {
            own.push("eval.count must be 0 or at least 2".to_string());
        }
        if self.run.batch_size == 0 {
            own.push("run.batch_size must be positive".to_string());
        }
        if self.run.log_interval == 0 {
            own.push("run.log_interval must be positive".to_string());
        }
        problems.extend(own);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
