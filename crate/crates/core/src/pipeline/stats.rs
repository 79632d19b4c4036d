use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotation::{Action, FilterReport, FrameRecord, RejectReason};
use crate::instruction::PathInstructionPair;
use crate::registry::RoomTypeRegistry;
use crate::samples::JudgmentSample;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub videos: usize,
    pub frames_sampled: usize,
    pub frames_kept: usize,
    pub frames_rejected: usize,
    pub trajectories: usize,
    pub pairs: usize,
    pub judgment_samples: usize,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub counts: Counts,
    /// Kept-frame count per video -> number of videos.
    pub frames_per_video: BTreeMap<usize, usize>,
    pub rejections: BTreeMap<RejectReason, usize>,
    /// Kept frames per argmax room type.
    pub room_types: BTreeMap<String, usize>,
    pub action_counts: BTreeMap<String, usize>,
    pub action_distribution: BTreeMap<String, f64>,
    /// Trajectory length K -> count.
    pub trajectory_lengths: BTreeMap<usize, usize>,
    pub room_nodes: BTreeMap<usize, usize>,
    pub reduced_fraction: f64,
}

/// Rounds to six significant digits.
pub fn sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

pub struct StatsInput<'a> {
    pub video_ids: &'a [String],
    pub report: &'a FilterReport,
    pub clean: &'a [FrameRecord],
    pub trajectories: &'a [Trajectory],
    pub pairs: &'a [PathInstructionPair],
    pub samples: &'a [JudgmentSample],
    pub registry: &'a RoomTypeRegistry,
}

pub fn compute_stats(input: &StatsInput<'_>) -> CorpusStats {
    let mut s = CorpusStats::default();
    let mut kept_per_video: BTreeMap<&str, usize> = input.video_ids.iter().map(|v| (v.as_str(), 0)).collect();
    for id in &input.report.kept {
        *kept_per_video.entry(id.video_id.as_str()).or_default() += 1;
    }
    for n in kept_per_video.values() {
        *s.frames_per_video.entry(*n).or_default() += 1;
    }
    for (_, reason) in &input.report.rejected {
        *s.rejections.entry(*reason).or_default() += 1;
    }
    for f in input.clean {
        let label = input.registry.label(f.room_argmax()).unwrap_or("?").to_string();
        *s.room_types.entry(label).or_default() += 1;
    }
    s.action_counts = Action::ALL.iter().map(|a| (a.as_str().to_string(), 0)).collect();
    let mut n_actions = 0;
    for p in input.pairs {
        for a in &p.actions {
            *s.action_counts.entry(a.0.as_str().to_string()).or_default() += 1;
            n_actions += 1;
        }
    }
    s.action_distribution = s
        .action_counts
        .iter()
        .map(|(k, &v)| (k.clone(), if n_actions == 0 { 0.0 } else { sig6(v as f64 / n_actions as f64) }))
        .collect();
    let mut reduced = 0;
    for t in input.trajectories {
        *s.trajectory_lengths.entry(t.k).or_default() += 1;
        *s.room_nodes.entry(t.room_node_count).or_default() += 1;
        reduced += usize::from(t.was_reduced());
    }
    s.reduced_fraction =
        if input.trajectories.is_empty() { 0.0 } else { sig6(reduced as f64 / input.trajectories.len() as f64) };
    let positives = input.samples.iter().filter(|x| x.label == 1).count();
    s.counts = Counts {
        videos: kept_per_video.len(),
        frames_sampled: input.report.kept.len() + input.report.rejected.len(),
        frames_kept: input.report.kept.len(),
        frames_rejected: input.report.rejected.len(),
        trajectories: input.trajectories.len(),
        pairs: input.pairs.len(),
        judgment_samples: input.samples.len(),
        positives,
        negatives: input.samples.len() - positives,
    };
    s
}

fn section<K: std::fmt::Display, V: std::fmt::Display>(
    out: &mut String,
    title: &str,
    rows: impl Iterator<Item = (K, V)>,
) {
    let _ = writeln!(out, "\n[{title}]");
    for (k, v) in rows {
        let _ = writeln!(out, "{:<24} {:>12}", k.to_string(), v.to_string());
    }
}

fn reason_name(r: RejectReason) -> String {
    serde_json::to_value(r).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Plain-text rendering of [`CorpusStats`].
pub fn emit_report(stats: &CorpusStats) -> String {
    let c = &stats.counts;
    let mut out = String::from("housetour corpus statistics\n");
    section(
        &mut out,
        "counts",
        [
            ("videos", c.videos),
            ("frames_sampled", c.frames_sampled),
            ("frames_kept", c.frames_kept),
            ("frames_rejected", c.frames_rejected),
            ("trajectories", c.trajectories),
            ("pairs", c.pairs),
            ("judgment_samples", c.judgment_samples),
            ("positives", c.positives),
            ("negatives", c.negatives),
        ]
        .into_iter(),
    );
    section(&mut out, "frames_per_video", stats.frames_per_video.iter());
    section(&mut out, "rejections", stats.rejections.iter().map(|(r, n)| (reason_name(*r), n)));
    section(&mut out, "room_types", stats.room_types.iter());
    section(&mut out, "action_counts", stats.action_counts.iter());
    section(&mut out, "action_distribution", stats.action_distribution.iter().map(|(k, v)| (k, sig6(*v))));
    section(&mut out, "trajectory_lengths", stats.trajectory_lengths.iter());
    section(&mut out, "room_nodes", stats.room_nodes.iter());
    section(&mut out, "summary", std::iter::once(("reduced_fraction", sig6(stats.reduced_fraction))));
    out
}
