//! File-backed pipeline: each stage reads its upstream artifacts from the
//! output directory, writes its own, and records digests in `manifest.json`.

pub mod config;
pub mod stages;
pub mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotation::{parse_annotations, FilterReport, FrameRecord};
use crate::diagnostics::Diagnostic;
use crate::instruction::{parse_templates, PathInstructionPair, TemplateBank, TemplateRejection};
use crate::judgment::JudgmentMetrics;
use crate::probe::{run_probe, LayoutRule, ProbeReport};
use crate::registry::RoomTypeRegistry;
use crate::samples::{BatchSummary, DatasetSplit, JudgmentSample, RankingSample};
use crate::trajectory::Trajectory;

pub use config::PipelineConfig;
use stats::{compute_stats, emit_report, CorpusStats, StatsInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    BuildTrajectories,
    GenInstructions,
    MakeSamples,
    Split,
    Stats,
    TrainTj,
    ProbeLayout,
}

impl Stage {
    /// The dataset stages, in run order.
    pub const DATASET: [Stage; 6] = [
        Stage::Ingest,
        Stage::BuildTrajectories,
        Stage::GenInstructions,
        Stage::MakeSamples,
        Stage::Split,
        Stage::Stats,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::BuildTrajectories => "build-trajectories",
            Stage::GenInstructions => "gen-instructions",
            Stage::MakeSamples => "make-samples",
            Stage::Split => "split",
            Stage::Stats => "stats",
            Stage::TrainTj => "train-tj",
            Stage::ProbeLayout => "probe-layout",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("stage {stage}: bad input: {message}")]
    Input { stage: Stage, message: String },
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::Input { .. } => 3,
            Self::Stage { .. } => 4,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Self::Config { .. } => None,
            Self::Input { stage, .. } | Self::Stage { stage, .. } => Some(*stage),
        }
    }
}

fn input_err(stage: Stage, message: impl fmt::Display) -> PipelineError {
    PipelineError::Input { stage, message: message.to_string() }
}

fn stage_err(stage: Stage, message: impl fmt::Display) -> PipelineError {
    PipelineError::Stage { stage, message: message.to_string() }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_sha256: String,
    /// Input role -> digest.
    pub inputs: BTreeMap<String, String>,
    /// Output file name -> digest.
    pub files: BTreeMap<String, String>,
    pub stages: Vec<Stage>,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Outputs of a completed dataset run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub samples: BatchSummary,
    pub stats: CorpusStats,
}

pub struct Pipeline {
    pub config: PipelineConfig,
}

fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("artifact serializes");
        out.push(b'\n');
    }
    out
}

fn to_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("artifact serializes");
    out.push(b'\n');
    out
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.paths.out_dir
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir().join(name)
    }

    pub fn read_manifest(&self) -> Option<Manifest> {
        let bytes = fs::read(self.path(MANIFEST_FILE)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    fn fresh_manifest(&self) -> Manifest {
        Manifest {
            seed: self.config.seed,
            config_sha256: sha256_hex(self.config.fingerprint().as_bytes()),
            ..Manifest::default()
        }
    }

    /// Continues the manifest of an earlier run with the same settings,
    /// or starts a new one.
    fn manifest(&self) -> Manifest {
        let fresh = self.fresh_manifest();
        match self.read_manifest() {
            Some(m) if m.seed == fresh.seed && m.config_sha256 == fresh.config_sha256 => m,
            _ => fresh,
        }
    }

    fn save_manifest(&self, m: &Manifest) -> Result<(), PipelineError> {
        fs::write(self.path(MANIFEST_FILE), to_pretty(m))
            .map_err(|e| input_err(m.failed_stage.unwrap_or(Stage::Ingest), format!("writing manifest: {e}")))
    }

    fn write(&self, stage: Stage, m: &mut Manifest, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        fs::create_dir_all(self.out_dir())
            .map_err(|e| input_err(stage, format!("{}: {e}", self.out_dir().display())))?;
        fs::write(self.path(name), bytes).map_err(|e| input_err(stage, format!("writing {name}: {e}")))?;
        m.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_diagnostics(&self, stage: Stage, m: &mut Manifest, diags: &[Diagnostic]) -> Result<(), PipelineError> {
        let name = format!("{stage}.diagnostics.jsonl");
        for d in diags {
            log::debug!("{} {}: {}", d.stage, d.key, d.message);
        }
        if !diags.is_empty() {
            log::warn!("{stage}: {} diagnostics in {name}", diags.len());
        }
        self.write(stage, m, &name, &to_jsonl(diags))
    }

    fn read_input(&self, stage: Stage, m: &mut Manifest, role: &str, path: &Path) -> Result<Vec<u8>, PipelineError> {
        let bytes =
            fs::read(path).map_err(|e| input_err(stage, format!("cannot read {role} file {}: {e}", path.display())))?;
        m.inputs.insert(role.to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn registry(&self, stage: Stage, m: &mut Manifest) -> Result<RoomTypeRegistry, PipelineError> {
        match self.config.paths.registry.clone() {
            None => Ok(RoomTypeRegistry::default()),
            Some(path) => {
                let bytes = self.read_input(stage, m, "registry", &path)?;
                let text = String::from_utf8(bytes).map_err(|e| input_err(stage, format!("registry: {e}")))?;
                RoomTypeRegistry::parse(&text).map_err(|e| input_err(stage, format!("registry: {e}")))
            }
        }
    }

    fn load<T: DeserializeOwned>(&self, stage: Stage, name: &str) -> Result<T, PipelineError> {
        let bytes = fs::read(self.path(name))
            .map_err(|e| input_err(stage, format!("missing upstream artifact {name}: {e}")))?;
        serde_json::from_slice(&bytes).map_err(|e| input_err(stage, format!("{name}: {e}")))
    }

    fn load_jsonl<T: DeserializeOwned>(&self, stage: Stage, name: &str) -> Result<Vec<T>, PipelineError> {
        let text = fs::read_to_string(self.path(name))
            .map_err(|e| input_err(stage, format!("missing upstream artifact {name}: {e}")))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| input_err(stage, format!("{name} line {}: {e}", i + 1))))
            .collect()
    }

    /// Runs one stage, recording success or failure in the manifest.
    pub fn run_stage(&self, stage: Stage) -> Result<(), PipelineError> {
        let mut m = self.manifest();
        m.failed_stage = None;
        m.error = None;
        let result = match stage {
            Stage::Ingest => self.ingest(&mut m),
            Stage::BuildTrajectories => self.build_trajectories(&mut m),
            Stage::GenInstructions => self.gen_instructions(&mut m),
            Stage::MakeSamples => self.make_samples(&mut m),
            Stage::Split => self.split(&mut m),
            Stage::Stats => self.stats(&mut m),
            Stage::TrainTj => self.train_tj(&mut m),
            Stage::ProbeLayout => self.probe_layout(&mut m),
        };
        match result {
            Ok(()) => {
                if !m.stages.contains(&stage) {
                    m.stages.push(stage);
                }
                m.complete = Stage::DATASET.iter().all(|s| m.stages.contains(s));
                fs::create_dir_all(self.out_dir()).map_err(|e| input_err(stage, e))?;
                self.save_manifest(&m)?;
                Ok(())
            }
            Err(e) => {
                m.stages.retain(|s| *s != stage);
                m.complete = false;
                m.failed_stage = Some(stage);
                m.error = Some(e.to_string());
                if fs::create_dir_all(self.out_dir()).is_ok() {
                    let _ = fs::write(self.path(MANIFEST_FILE), to_pretty(&m));
                }
                Err(e)
            }
        }
    }

    /// Runs the dataset stages from scratch.
    pub fn run_all(&self) -> Result<RunSummary, PipelineError> {
        if self.path(MANIFEST_FILE).exists() {
            fs::remove_file(self.path(MANIFEST_FILE)).map_err(|e| input_err(Stage::Ingest, e))?;
        }
        for stage in Stage::DATASET {
            log::info!("running {stage}");
            self.run_stage(stage)?;
        }
        let manifest = self.read_manifest().ok_or_else(|| stage_err(Stage::Stats, "manifest missing after run"))?;
        Ok(RunSummary {
            manifest,
            samples: self.load(Stage::Stats, "samples_summary.json")?,
            stats: self.load(Stage::Stats, "stats.json")?,
        })
    }

    fn ingest(&self, m: &mut Manifest) -> Result<(), PipelineError> {
        let stage = Stage::Ingest;
        let registry = self.registry(stage, m)?;
        let bytes = self.read_input(stage, m, "annotations", &self.config.paths.annotations.clone())?;
        let videos = parse_annotations(BufReader::new(bytes.as_slice()), &registry, self.config.strict)
            .map_err(|e| input_err(stage, e))?;
        let out = stages::ingest(&videos, self.config.ingest.rate_hz).map_err(|e| input_err(stage, e))?;
        let frames: Vec<&FrameRecord> = out.clean.values().flatten().collect();
        self.write(stage, m, "frames.jsonl", &to_jsonl(&frames))?;
        self.write(stage, m, "videos.json", &to_pretty(&out.video_ids))?;
        self.write(stage, m, "filter_report.json", &to_pretty(&out.report))?;
        Ok(())
    }

    fn clean_frames(&self, stage: Stage) -> Result<(Vec<String>, BTreeMap<String, Vec<FrameRecord>>), PipelineError> {
        let video_ids: Vec<String> = self.load(stage, "videos.json")?;
        let mut clean: BTreeMap<String, Vec<FrameRecord>> = BTreeMap::new();
        for f in self.load_jsonl::<FrameRecord>(stage, "frames.jsonl")? {
            clean.entry(f.video_id.clone()).or_default().push(f);
        }
        Ok((video_ids, clean))
    }

    fn build_trajectories(&self, m: &mut Manifest) -> Result<(), PipelineError> {
        let stage = Stage::BuildTrajectories;
        let registry = self.registry(stage, m)?;
        let (video_ids, clean) = self.clean_frames(stage)?;
        let (trajectories, diags) =
            stages::build_trajectories(&video_ids, &clean, &self.config.trajectory, &registry, self.config.seed);
        for t in &trajectories {
            t.check_invariants(
                (self.config.trajectory.k_range[0], self.config.trajectory.k_range[1]),
                (self.config.trajectory.r_range[0], self.config.trajectory.r_range[1]),
            )
            .map_err(|e| stage_err(stage, format!("{}: {e}", t.trajectory_id)))?;
        }
        self.write(stage, m, "trajectories.jsonl", &to_jsonl(&trajectories))?;
        self.write_diagnostics(stage, m, &diags)
    }

    fn gen_instructions(&self, m: &mut Manifest) -> Result<(), PipelineError> {
        let stage = Stage::GenInstructions;
        let bytes = self.read_input(stage, m, "templates", &self.config.paths.templates.clone())?;
        let (templates, rejected) =
            parse_templates(BufReader::new(bytes.as_slice())).map_err(|e| input_err(stage, e))?;
        if templates.is_empty() {
            return Err(input_err(stage, "templates file has no usable template"));
        }
        let trajectories: Vec<Trajectory> = self.load_jsonl(stage, "trajectories.jsonl")?;
        let (pairs, diags) = stages::generate_pairs(&trajectories, &TemplateBank::new(templates), self.config.seed);
        self.write(stage, m, "pairs.jsonl", &to_jsonl(&pairs))?;
        self.write(stage, m, "template_rejections.jsonl", &to_jsonl::<TemplateRejection>(&rejected))?;
        self.write_diagnostics(stage, m, &diags)
    }

    fn make_samples(&self, m: &mut Manifest) -> Result<(), PipelineError> {
        let stage = Stage::MakeSamples;
        let trajectories: Vec<Trajectory> = self.load_jsonl(stage, "trajectories.jsonl")?;
        let pairs: Vec<PathInstructionPair> = self.load_jsonl(stage, "pairs.jsonl")?;
        let (set, diags) = stages::make_samples(&pairs, &trajectories, &self.config.samples, self.config.seed);
        log::info!("samples: {} positive, {} negative", set.summary.n_pos, set.summary.n_neg);
        self.write(stage, m, "samples.jsonl", &to_jsonl(&set.judgment))?;
        self.write(stage, m, "mlm.jsonl", &to_jsonl(&set.mlm))?;
        self.write(stage, m, "samples_summary.json", &to_pretty(&set.summary))?;
        self.write_diagnostics(stage, m, &diags)
    }

    fn split(&self, m: &mut Manifest) -> Result<(), PipelineError> {
        let stage = Stage::Split;
        let video_ids: Vec<String> = self.load(stage, "videos.json")?;
        let trajectories: Vec<Trajectory> = self.load_jsonl(stage, "trajectories.jsonl")?;
        let pairs: Vec<PathInstructionPair> = self.load_jsonl(stage, "pairs.jsonl")?;
        let (out, diags) = stages::split_and_rank(
            &video_ids,
            &pairs,
            &trajectories,
            self.config.split.fraction,
            self.config.samples.ranking_distractors,
            self.config.seed,
        )
        .map_err(|e| stage_err(stage, e))?;
        #[derive(Serialize)]
        struct SplitFile<'a> {
            #[serde(flatten)]
            split: &'a DatasetSplit,
            seed: u64,
        }
        self.write(stage, m, "split.json", &to_pretty(&SplitFile { split: &out.split, seed: self.config.seed }))?;
        self.write(stage, m, "ranking.jsonl", &to_jsonl::<RankingSample>(&out.ranking))?;
        self.write_diagnostics(stage, m, &diags)
    }

    fn stats(&self, m: &mut Manifest) -> Result<(), PipelineError> {
        let stage = Stage::Stats;
        let registry = self.registry(stage, m)?;
        let (video_ids, clean) = self.clean_frames(stage)?;
        let report: FilterReport = self.load(stage, "filter_report.json")?;
        let trajectories: Vec<Trajectory> = self.load_jsonl(stage, "trajectories.jsonl")?;
        let pairs: Vec<PathInstructionPair> = self.load_jsonl(stage, "pairs.jsonl")?;
        let samples: Vec<JudgmentSample> = self.load_jsonl(stage, "samples.jsonl")?;
        let frames: Vec<FrameRecord> = clean.into_values().flatten().collect();
        let stats = compute_stats(&StatsInput {
            video_ids: &video_ids,
            report: &report,
            clean: &frames,
            trajectories: &trajectories,
            pairs: &pairs,
            samples: &samples,
            registry: &registry,
        });
        self.write(stage, m, "stats.json", &to_pretty(&stats))?;
        self.write(stage, m, "stats.txt", emit_report(&stats).as_bytes())
    }

    fn train_tj(&self, m: &mut Manifest) -> Result<(), PipelineError> {
        let stage = Stage::TrainTj;
        let registry = self.registry(stage, m)?;
        let trajectories: Vec<Trajectory> = self.load_jsonl(stage, "trajectories.jsonl")?;
        let samples: Vec<JudgmentSample> = self.load_jsonl(stage, "samples.jsonl")?;
        let split: DatasetSplit = self.load(stage, "split.json")?;
        let featurized =
            stages::featurize_samples(&samples, &trajectories, &registry).map_err(|e| input_err(stage, e))?;
        let mut hyper = self.config.tj.clone();
        hyper.seed = self.config.seed;
        let outcome = stages::train_tj(&featurized, &split, &hyper).map_err(|e| stage_err(stage, e))?;
        #[derive(Serialize)]
        struct Metrics<'a> {
            train: &'a JudgmentMetrics,
            test: &'a JudgmentMetrics,
            final_train_loss: Option<f64>,
        }
        let metrics = Metrics {
            train: &outcome.train_metrics,
            test: &outcome.test_metrics,
            final_train_loss: outcome.loss_history.last().copied(),
        };
        self.write(stage, m, "tj_model.json", &to_pretty(&outcome.model))?;
        self.write(stage, m, "tj_metrics.json", &to_pretty(&metrics))?;
        let table = format!("train\n{}\ntest\n{}", outcome.train_metrics.to_table(), outcome.test_metrics.to_table());
        self.write(stage, m, "tj_metrics.txt", table.as_bytes())
    }

    fn probe_layout(&self, m: &mut Manifest) -> Result<(), PipelineError> {
        let stage = Stage::ProbeLayout;
        let rule = LayoutRule::ring();
        let run = run_probe(&self.config.probe, &rule, self.config.seed).map_err(|e| stage_err(stage, e))?;
        let houses: Vec<_> = run.train_houses.iter().chain(&run.test_houses).collect();
        self.write(stage, m, "houses.jsonl", &to_jsonl(&houses))?;
        self.write(stage, m, "probe_report.json", &to_pretty(&run.report))?;
        self.write(stage, m, "probe_report.txt", probe_table(&run.report).as_bytes())
    }
}

pub fn probe_table(r: &ProbeReport) -> String {
    let mut s = format!(
        "{:<20} {:>12}\n{:<20} {:>12}\n{:<20} {:>12.6}\n{:<20} {:>12.6}\n{:<20} {:>12.3e}\n",
        "metric",
        "value",
        "test instances",
        r.n_test,
        "untrained acc",
        r.untrained_acc,
        "trained acc",
        r.trained_acc,
        "p-value",
        r.p_value
    );
    if let Some(a) = r.shuffled_acc {
        s.push_str(&format!("{:<20} {:>12.6}\n", "shuffled-label acc", a));
    }
    s.push_str(&format!("{:<20} {:>12.6}\n", "final train loss", r.final_train_loss));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config { field: "x".into(), message: String::new() }.exit_code(), 2);
        assert_eq!(input_err(Stage::Ingest, "m").exit_code(), 3);
        assert_eq!(stage_err(Stage::Split, "m").exit_code(), 4);
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::DATASET.into_iter().chain([Stage::TrainTj, Stage::ProbeLayout]) {
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.as_str()));
            assert_eq!(serde_json::from_str::<Stage>(&json).unwrap(), s);
        }
    }
}
