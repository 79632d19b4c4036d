use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotation::DEFAULT_SAMPLE_RATE_HZ;
use crate::judgment::TrainHyper;
use crate::probe::ProbeConfig;
use crate::samples::{NegativeCounts, DEFAULT_MASK_PROB, DEFAULT_SPLIT_FRACTION};
use crate::trajectory::TrajectoryConfig;

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub annotations: PathBuf,
    pub templates: PathBuf,
    /// Falls back to the built-in room list when absent.
    pub registry: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            annotations: "annotations.jsonl".into(),
            templates: "templates.txt".into(),
            registry: None,
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub rate_hz: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { rate_hz: DEFAULT_SAMPLE_RATE_HZ }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplesConfig {
    pub negatives: NegativeCounts,
    pub p_mask: f64,
    /// Distractors per ranking set.
    pub ranking_distractors: usize,
    /// Mixed into every sample stream; bump it to draw a fresh set of
    /// negatives over the same pairs.
    pub epoch: u64,
}

impl Default for SamplesConfig {
    fn default() -> Self {
        Self { negatives: NegativeCounts::default(), p_mask: DEFAULT_MASK_PROB, ranking_distractors: 3, epoch: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { fraction: DEFAULT_SPLIT_FRACTION }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub strict: bool,
    pub paths: Paths,
    pub ingest: IngestConfig,
    pub trajectory: TrajectoryConfig,
    pub samples: SamplesConfig,
    pub split: SplitConfig,
    pub tj: TrainHyper,
    pub probe: ProbeConfig,
}

fn bad(field: &str, message: impl Into<String>) -> PipelineError {
    PipelineError::Config { field: field.to_string(), message: message.into() }
}

impl PipelineConfig {
    /// Parses TOML; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let field = e.message().split('`').nth(1).unwrap_or("config").to_string();
            PipelineError::Config { field, message: e.to_string() }
        })?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad("config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.paths.annotations);
        join(&mut self.paths.templates);
        join(&mut self.paths.out_dir);
        if let Some(r) = self.paths.registry.as_mut() {
            join(r);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.trajectory.validate().map_err(|e| bad(&format!("trajectory.{}", e.field), e.message))?;
        if !(self.ingest.rate_hz > 0.0 && self.ingest.rate_hz.is_finite()) {
            return Err(bad("ingest.rate_hz", format!("must be positive, got {}", self.ingest.rate_hz)));
        }
        if !(self.samples.p_mask > 0.0 && self.samples.p_mask < 1.0) {
            return Err(bad("samples.p_mask", format!("must lie in (0, 1), got {}", self.samples.p_mask)));
        }
        if !(self.split.fraction > 0.0 && self.split.fraction < 1.0) {
            return Err(bad("split.fraction", format!("must lie in (0, 1), got {}", self.split.fraction)));
        }
        if !(self.tj.lr > 0.0 && self.tj.lr.is_finite()) {
            return Err(bad("tj.lr", "must be positive"));
        }
        if let crate::judgment::WeightMode::Fixed(w) = self.tj.w_mode {
            if !(w > 0.0 && w.is_finite()) {
                return Err(bad("tj.w_mode", format!("fixed weight must be positive, got {w}")));
            }
        }
        if !(self.probe.hyper.lr > 0.0 && self.probe.hyper.lr.is_finite()) {
            return Err(bad("probe.hyper.lr", "must be positive"));
        }
        Ok(())
    }

    /// Parameters that shape the outputs, without file locations. Two runs
    /// with equal fingerprints over equal inputs produce equal files.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        serde_json::to_string(&c).expect("config serializes")
    }
}
