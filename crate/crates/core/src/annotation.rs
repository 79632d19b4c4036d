//! Per-frame video annotations: ingest, sparse sampling and noise filtering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{RoomTypeRegistry, ROOM_TYPE_COUNT};

/// Tolerance on the sum of a renormalized room distribution.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Default sparse-sampling rate in frames per second.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 0.5;

const KNOWN_FIELDS: [&str; 10] = [
    "video_id",
    "frame_index",
    "timestamp_s",
    "room_probs",
    "person",
    "outdoor",
    "objects",
    "region_count",
    "yaw_deg",
    "action_to_next",
];

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema violation: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: unknown field {field:?}")]
    UnknownField { line: usize, field: String },
    #[error("line {line}: duplicate frame {frame_index} in video {video_id:?}")]
    Duplicate { line: usize, video_id: String, frame_index: u32 },
    #[error("sample rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("reading annotations: {0}")]
    Io(#[from] std::io::Error),
}

impl AnnotationError {
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Parse { line, .. }
            | Self::Schema { line, .. }
            | Self::UnknownField { line, .. }
            | Self::Duplicate { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("room probability {value} at index {index} is negative")]
pub struct NegativeProbability {
    pub index: usize,
    pub value: f64,
}

/// Pseudo-labeled camera motion between a frame and the next one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Forward,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Forward, Action::Left, Action::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::Left => "left",
            Action::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub label: String,
    pub score: f64,
}

/// One annotated video frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub video_id: String,
    pub frame_index: u32,
    pub timestamp_s: f64,
    pub room_probs: [f64; ROOM_TYPE_COUNT],
    pub person: bool,
    pub outdoor: bool,
    pub objects: Vec<DetectedObject>,
    pub region_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_to_next: Option<Action>,
}

impl FrameRecord {
    pub fn id(&self) -> FrameId {
        FrameId { video_id: self.video_id.clone(), frame_index: self.frame_index }
    }

    /// Shannon entropy of the room distribution. Ingested frames always
    /// carry a valid distribution.
    pub fn entropy(&self) -> f64 {
        room_entropy(&self.room_probs).unwrap_or(f64::INFINITY)
    }

    /// Most likely room ordinal; ties go to the lowest ordinal.
    pub fn room_argmax(&self) -> usize {
        argmax_lowest(&self.room_probs)
    }
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameId {
    pub video_id: String,
    pub frame_index: u32,
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.video_id, self.frame_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_fps_hint: Option<f64>,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Person,
    Outdoor,
    NoRegions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: Vec<FrameId>,
    pub rejected: Vec<(FrameId, RejectReason)>,
}

#[derive(Deserialize)]
struct RawFrame {
    video_id: String,
    frame_index: u32,
    timestamp_s: f64,
    room_probs: Vec<f64>,
    person: bool,
    outdoor: bool,
    objects: Vec<DetectedObject>,
    region_count: u32,
    #[serde(default)]
    yaw_deg: Option<f64>,
    #[serde(default)]
    action_to_next: Option<Action>,
}

fn schema(line: usize, message: impl Into<String>) -> AnnotationError {
    AnnotationError::Schema { line, message: message.into() }
}

fn validate(line: usize, raw: RawFrame, expected_types: usize) -> Result<FrameRecord, AnnotationError> {
    if raw.room_probs.len() != expected_types {
        return Err(schema(
            line,
            format!("room_probs has {} entries, expected {expected_types}", raw.room_probs.len()),
        ));
    }
    if raw.room_probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(schema(line, "room_probs must be finite and non-negative"));
    }
    let total: f64 = raw.room_probs.iter().sum();
    if total <= 0.0 {
        return Err(schema(line, "room_probs are all zero"));
    }
    if !raw.timestamp_s.is_finite() || raw.timestamp_s < 0.0 {
        return Err(schema(line, format!("timestamp_s {} must be finite and >= 0", raw.timestamp_s)));
    }
    if let Some(yaw) = raw.yaw_deg {
        if !(-180.0..180.0).contains(&yaw) {
            return Err(schema(line, format!("yaw_deg {yaw} outside [-180, 180)")));
        }
    }
    for obj in &raw.objects {
        if !(0.0..=1.0).contains(&obj.score) {
            return Err(schema(line, format!("object {:?} score {} outside [0, 1]", obj.label, obj.score)));
        }
    }
    let mut room_probs = [0.0; ROOM_TYPE_COUNT];
    for (dst, src) in room_probs.iter_mut().zip(&raw.room_probs) {
        *dst = src / total;
    }
    Ok(FrameRecord {
        video_id: raw.video_id,
        frame_index: raw.frame_index,
        timestamp_s: raw.timestamp_s,
        room_probs,
        person: raw.person,
        outdoor: raw.outdoor,
        objects: raw.objects,
        region_count: raw.region_count,
        yaw_deg: raw.yaw_deg,
        action_to_next: raw.action_to_next,
    })
}

/// Parses one annotation line. Returns the validated, renormalized frame.
pub fn parse_frame_line(
    line_no: usize,
    text: &str,
    registry: &RoomTypeRegistry,
    strict: bool,
) -> Result<FrameRecord, AnnotationError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| AnnotationError::Parse { line: line_no, message: e.to_string() })?;
    let serde_json::Value::Object(mut map) = value else {
        return Err(AnnotationError::Parse { line: line_no, message: "record is not an object".into() });
    };
    let unknown: Vec<String> = map.keys().filter(|k| !KNOWN_FIELDS.contains(&k.as_str())).cloned().collect();
    for field in unknown {
        if strict {
            return Err(AnnotationError::UnknownField { line: line_no, field });
        }
        log::warn!("line {line_no}: ignoring unknown field {field:?}");
        map.remove(&field);
    }
    let raw: RawFrame =
        serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| schema(line_no, e.to_string()))?;
    validate(line_no, raw, registry.len())
}

/// Reads a line-delimited annotations stream into per-video annotations,
/// ordered by video id with frames ordered by timestamp.
pub fn parse_annotations<R: BufRead>(
    reader: R,
    registry: &RoomTypeRegistry,
    strict: bool,
) -> Result<Vec<VideoAnnotation>, AnnotationError> {
    let mut videos: BTreeMap<String, Vec<(usize, FrameRecord)>> = BTreeMap::new();
    let mut seen: BTreeSet<(String, u32)> = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame = parse_frame_line(line_no, &line, registry, strict)?;
        if !seen.insert((frame.video_id.clone(), frame.frame_index)) {
            return Err(AnnotationError::Duplicate {
                line: line_no,
                video_id: frame.video_id,
                frame_index: frame.frame_index,
            });
        }
        videos.entry(frame.video_id.clone()).or_default().push((line_no, frame));
    }

    let mut out = Vec::with_capacity(videos.len());
    for (video_id, mut frames) in videos {
        frames.sort_by_key(|(_, f)| f.frame_index);
        for pair in frames.windows(2) {
            let (_, prev) = &pair[0];
            let (line, next) = &pair[1];
            if next.timestamp_s <= prev.timestamp_s {
                return Err(schema(
                    *line,
                    format!(
                        "timestamp {} of frame {} does not increase over frame {} ({})",
                        next.timestamp_s, next.frame_index, prev.frame_index, prev.timestamp_s
                    ),
                ));
            }
        }
        out.push(VideoAnnotation {
            video_id,
            source_fps_hint: None,
            frames: frames.into_iter().map(|(_, f)| f).collect(),
        });
    }
    Ok(out)
}

/// Greedy sparse sampling by timestamp: the k-th kept frame is the first
/// frame at or after `k / rate_hz` seconds.
pub fn sparse_sample(video: &VideoAnnotation, rate_hz: f64) -> Result<Vec<FrameRecord>, AnnotationError> {
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(AnnotationError::InvalidRate(rate_hz));
    }
    // absorbs rounding in timestamps derived from frame_index / fps
    const SLACK: f64 = 1e-9;
    let mut kept = Vec::new();
    for frame in &video.frames {
        let due = kept.len() as f64 / rate_hz;
        if frame.timestamp_s + SLACK >= due {
            kept.push(frame.clone());
        }
    }
    Ok(kept)
}

/// First applicable reason, in priority order person > outdoor > no_regions.
pub fn reject_reason(frame: &FrameRecord) -> Option<RejectReason> {
    if frame.person {
        Some(RejectReason::Person)
    } else if frame.outdoor {
        Some(RejectReason::Outdoor)
    } else if frame.region_count == 0 {
        Some(RejectReason::NoRegions)
    } else {
        None
    }
}

pub fn filter_frames(frames: &[FrameRecord]) -> FilterReport {
    let mut report = FilterReport::default();
    for frame in frames {
        match reject_reason(frame) {
            Some(reason) => report.rejected.push((frame.id(), reason)),
            None => report.kept.push(frame.id()),
        }
    }
    report
}

/// Convenience: the frames that survive [`filter_frames`], in order.
pub fn clean_frames(frames: &[FrameRecord]) -> Vec<FrameRecord> {
    frames.iter().filter(|f| reject_reason(f).is_none()).cloned().collect()
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn room_entropy(probs: &[f64]) -> Result<f64, NegativeProbability> {
    let mut h = 0.0;
    for (index, &p) in probs.iter().enumerate() {
        if p < 0.0 {
            return Err(NegativeProbability { index, value: p });
        }
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    // -0.0 for one-hot inputs
    Ok(h.max(0.0))
}
