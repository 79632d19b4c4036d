//! In-memory stage functions. The file-backed runner in the parent module
//! wraps these with artifact I/O.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::annotation::{filter_frames, sparse_sample, AnnotationError, FilterReport, FrameRecord, VideoAnnotation};
use crate::diagnostics::Diagnostic;
use crate::instruction::{generate_pair, PathInstructionPair, TemplateBank};
use crate::judgment::{
    evaluate, featurize, train, JudgmentError, JudgmentMetrics, TjModelFile, TrainHyper, FEATURE_VERSION,
};
use crate::registry::RoomTypeRegistry;
use crate::rng::stream;
use crate::samples::{
    make_mlm_sample, make_negatives, make_positive, make_ranking_set, split_videos, summarize, BatchSummary,
    DatasetSplit, DonorPool, JudgmentSample, MlmSample, PairRef, RankingSample, SampleError, Strategy,
};
use crate::trajectory::{build_video_trajectories, Trajectory, TrajectoryConfig};

use super::config::SamplesConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestOutput {
    /// Every video id in the input, including those with no kept frames.
    pub video_ids: Vec<String>,
    pub clean: BTreeMap<String, Vec<FrameRecord>>,
    pub report: FilterReport,
}

/// Sparse sampling then frame filtering, per video.
pub fn ingest(videos: &[VideoAnnotation], rate_hz: f64) -> Result<IngestOutput, AnnotationError> {
    let mut out = IngestOutput::default();
    for video in videos {
        let sampled = sparse_sample(video, rate_hz)?;
        let report = filter_frames(&sampled);
        let kept: BTreeSet<u32> = report.kept.iter().map(|id| id.frame_index).collect();
        let clean: Vec<FrameRecord> = sampled.into_iter().filter(|f| kept.contains(&f.frame_index)).collect();
        out.video_ids.push(video.video_id.clone());
        out.clean.insert(video.video_id.clone(), clean);
        out.report.kept.extend(report.kept);
        out.report.rejected.extend(report.rejected);
    }
    Ok(out)
}

pub fn build_trajectories(
    video_ids: &[String],
    clean: &BTreeMap<String, Vec<FrameRecord>>,
    config: &TrajectoryConfig,
    registry: &RoomTypeRegistry,
    seed: u64,
) -> (Vec<Trajectory>, Vec<Diagnostic>) {
    let mut trajectories = Vec::new();
    let mut diags = Vec::new();
    for video_id in video_ids {
        let frames = clean.get(video_id).map(Vec::as_slice).unwrap_or(&[]);
        let (t, d) = build_video_trajectories(video_id, frames, config, registry, seed);
        trajectories.extend(t);
        diags.extend(d);
    }
    (trajectories, diags)
}

/// One instruction per trajectory. Trajectories that cannot be phrased are
/// dropped with a diagnostic.
pub fn generate_pairs(
    trajectories: &[Trajectory],
    bank: &TemplateBank,
    seed: u64,
) -> (Vec<PathInstructionPair>, Vec<Diagnostic>) {
    let mut pairs = Vec::new();
    let mut diags = Vec::new();
    for t in trajectories {
        let mut rng = stream(seed, &["pairs", &t.trajectory_id]);
        match generate_pair(t, bank, &mut rng) {
            Ok(p) => pairs.push(p),
            Err(e) => diags.push(Diagnostic::new("instructions", t.trajectory_id.clone(), e.to_string())),
        }
    }
    (pairs, diags)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub judgment: Vec<JudgmentSample>,
    pub mlm: Vec<MlmSample>,
    pub summary: BatchSummary,
}

fn trajectory_index(trajectories: &[Trajectory]) -> BTreeMap<&str, &Trajectory> {
    trajectories.iter().map(|t| (t.trajectory_id.as_str(), t)).collect()
}

/// Positives, negatives and masked-token samples for every pair.
pub fn make_samples(
    pairs: &[PathInstructionPair],
    trajectories: &[Trajectory],
    config: &SamplesConfig,
    seed: u64,
) -> (SampleSet, Vec<Diagnostic>) {
    let by_id = trajectory_index(trajectories);
    let pool = DonorPool::from_trajectories(trajectories);
    let epoch = config.epoch.to_string();
    let mut set = SampleSet::default();
    let mut diags = Vec::new();
    for pair in pairs {
        let Some(trajectory) = by_id.get(pair.trajectory_id.as_str()) else {
            diags.push(Diagnostic::new("samples", pair.pair_id.clone(), "pair refers to an unknown trajectory"));
            continue;
        };
        let src = PairRef { pair_id: &pair.pair_id, trajectory };
        let mut rng = stream(seed, &["samples", &epoch, &pair.pair_id]);
        set.judgment.push(make_positive(src, format!("{}-{}-0", pair.pair_id, Strategy::Positive)));
        let (negatives, d) = make_negatives(src, &pool, &mut rng, &config.negatives);
        set.judgment.extend(negatives);
        diags.extend(d);

        let tokens: Vec<String> = pair.instruction.split_whitespace().map(str::to_string).collect();
        let mut mlm_rng = stream(seed, &["mlm", &epoch, &pair.pair_id]);
        match make_mlm_sample(format!("{}-mlm", pair.pair_id), &pair.pair_id, &tokens, config.p_mask, &mut mlm_rng) {
            Ok(m) => set.mlm.push(m),
            Err(e) => diags.push(Diagnostic::new("samples", pair.pair_id.clone(), e.to_string())),
        }
    }
    set.summary = summarize(&set.judgment);
    (set, diags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutput {
    pub split: DatasetSplit,
    pub ranking: Vec<RankingSample>,
}

/// Video-level split, then ranking sets whose distractors come from the
/// same side of the split as the gold trajectory.
pub fn split_and_rank(
    video_ids: &[String],
    pairs: &[PathInstructionPair],
    trajectories: &[Trajectory],
    fraction: f64,
    distractors: usize,
    seed: u64,
) -> Result<(SplitOutput, Vec<Diagnostic>), SampleError> {
    let split = split_videos(video_ids, fraction, &mut stream(seed, &["split"]))?;
    let mut diags = Vec::new();
    if let Some(w) = split.warning() {
        diags.push(Diagnostic::new("split", "split", w));
    }
    let video_of: BTreeMap<&str, &str> =
        trajectories.iter().map(|t| (t.trajectory_id.as_str(), t.video_id.as_str())).collect();
    let side = |traj: &str| video_of.get(traj).map(|v| split.is_train(v));
    let mut pools: BTreeMap<bool, Vec<String>> = BTreeMap::new();
    for p in pairs {
        if let Some(s) = side(&p.trajectory_id) {
            pools.entry(s).or_default().push(p.trajectory_id.clone());
        }
    }
    let mut ranking = Vec::new();
    for p in pairs {
        let Some(s) = side(&p.trajectory_id) else { continue };
        let mut rng = stream(seed, &["ranking", &p.pair_id]);
        match make_ranking_set(
            format!("{}-rank", p.pair_id),
            &p.pair_id,
            &p.trajectory_id,
            &pools[&s],
            distractors,
            &mut rng,
        ) {
            Ok(r) => ranking.push(r),
            Err(e) => diags.push(Diagnostic::new("split", p.pair_id.clone(), e.to_string())),
        }
    }
    Ok((SplitOutput { split, ranking }, diags))
}

/// Featurized judgment samples, tagged with strategy and source video.
pub struct FeaturizedSample {
    pub features: Vec<f64>,
    pub label: u8,
    pub strategy: Strategy,
    pub video_id: String,
}

pub fn featurize_samples(
    samples: &[JudgmentSample],
    trajectories: &[Trajectory],
    registry: &RoomTypeRegistry,
) -> Result<Vec<FeaturizedSample>, JudgmentError> {
    let by_id = trajectory_index(trajectories);
    samples
        .iter()
        .map(|s| {
            let t = by_id.get(s.trajectory_id.as_str()).ok_or_else(|| JudgmentError::UnknownTrajectory {
                sample_id: s.sample_id.clone(),
                trajectory_id: s.trajectory_id.clone(),
            })?;
            Ok(FeaturizedSample {
                features: featurize(s, t, registry)?.values,
                label: s.label,
                strategy: s.strategy,
                video_id: t.video_id.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TjOutcome {
    pub model: TjModelFile,
    pub train_metrics: JudgmentMetrics,
    pub test_metrics: JudgmentMetrics,
    pub loss_history: Vec<f64>,
}

/// Trains on samples from training videos and evaluates on the rest.
pub fn train_tj(
    samples: &[FeaturizedSample],
    split: &DatasetSplit,
    hyper: &TrainHyper,
) -> Result<TjOutcome, JudgmentError> {
    let (train_part, test_part): (Vec<&FeaturizedSample>, Vec<&FeaturizedSample>) =
        samples.iter().partition(|s| split.is_train(&s.video_id));
    let xy: Vec<(Vec<f64>, u8)> = train_part.iter().map(|s| (s.features.clone(), s.label)).collect();
    let (model, history) = train(&xy, hyper)?;
    let tagged = |part: &[&FeaturizedSample]| -> Vec<(Vec<f64>, u8, Strategy)> {
        part.iter().map(|s| (s.features.clone(), s.label, s.strategy)).collect()
    };
    let train_metrics = evaluate(&model, &tagged(&train_part));
    let test_metrics = evaluate(&model, &tagged(&test_part));
    Ok(TjOutcome {
        model: TjModelFile {
            feature_version: FEATURE_VERSION.to_string(),
            weights: model.weights,
            bias: model.bias,
            hyper: hyper.clone(),
            final_metrics: test_metrics.clone(),
        },
        train_metrics,
        test_metrics,
        loss_history: history,
    })
}
