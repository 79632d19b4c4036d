//! Synthetic house-tour annotation corpora.
//!
//! Tours follow a fixed room-adjacency grammar: a walk from the entryway
//! along allowed successor edges until a room with no successor. Frame-level
//! noise (people, outdoor shots, empty frames) and variable frame rates
//! exercise the ingest filters.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotation::{Action, DetectedObject, FrameRecord};
use crate::instruction::{wrap_degrees, TURN_THRESHOLD_DEG};
use crate::registry::{RoomTypeRegistry, ROOM_TYPE_COUNT};

/// Allowed successors of each room in a tour. Rooms without successors end it.
pub const GRAMMAR: [(&str, &[&str]); ROOM_TYPE_COUNT] = [
    ("entryway", &["hallway", "living room"]),
    ("hallway", &["living room", "family room", "office"]),
    ("living room", &["dining room", "family room"]),
    ("family room", &["dining room", "kitchen"]),
    ("dining room", &["kitchen"]),
    ("kitchen", &["laundry room", "garage", "office"]),
    ("laundry room", &["garage", "office"]),
    ("garage", &[]),
    ("office", &["bedroom"]),
    ("bedroom", &["closet", "bathroom"]),
    ("closet", &["bathroom"]),
    ("bathroom", &[]),
];

/// Whether `to` may directly follow `from` in a tour.
pub fn allowed(from: &str, to: &str) -> bool {
    GRAMMAR.iter().any(|(f, succ)| *f == from && succ.contains(&to))
}

fn objects_for(room: &str) -> &'static [&'static str] {
    match room {
        "bathroom" => &["sink", "toilet", "bathtub", "mirror"],
        "bedroom" => &["bed", "nightstand", "lamp", "dresser"],
        "closet" => &["shelf", "hanger", "shoe rack"],
        "dining room" => &["dining table", "chair", "chandelier"],
        "entryway" => &["door", "coat rack", "bench"],
        "family room" => &["sofa", "television", "rug"],
        "garage" => &["car", "workbench", "garage door"],
        "hallway" => &["stairs", "picture", "runner"],
        "kitchen" => &["oven", "refrigerator", "counter", "stool"],
        "laundry room" => &["washer", "dryer", "basket"],
        "living room" => &["sofa", "fireplace", "coffee table", "armchair"],
        "office" => &["desk", "monitor", "bookshelf"],
        _ => &["chair"],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub videos: usize,
    pub fps: [f64; 2],
    pub segment_seconds: [f64; 2],
    pub min_segments: usize,
    pub person_rate: f64,
    pub outdoor_rate: f64,
    pub empty_rate: f64,
    pub yaw_rate: f64,
    pub action_rate: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            videos: 12,
            fps: [1.0, 3.0],
            segment_seconds: [8.0, 22.0],
            min_segments: 6,
            person_rate: 0.04,
            outdoor_rate: 0.03,
            empty_rate: 0.03,
            yaw_rate: 0.97,
            action_rate: 0.7,
        }
    }
}

/// One walk through the grammar, as registry ordinals.
fn tour<R: Rng + ?Sized>(spec: &CorpusSpec, registry: &RoomTypeRegistry, rng: &mut R) -> Vec<usize> {
    loop {
        let mut room = GRAMMAR[0].0;
        let mut rooms = vec![room];
        loop {
            let succ = GRAMMAR.iter().find(|(f, _)| *f == room).map(|(_, s)| *s).unwrap_or(&[]);
            if succ.is_empty() {
                break;
            }
            room = succ[rng.random_range(0..succ.len())];
            rooms.push(room);
        }
        if rooms.len() >= spec.min_segments {
            return rooms.iter().map(|r| registry.ordinal(r).unwrap_or(0)).collect();
        }
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn room_probs<R: Rng + ?Sized>(room: usize, rng: &mut R) -> [f64; ROOM_TYPE_COUNT] {
    let mass: f64 = rng.random_range(0.52..0.97);
    let raw: Vec<f64> = (0..ROOM_TYPE_COUNT).map(|_| rng.random_range(0.0..1.0)).collect();
    let other: f64 = raw.iter().enumerate().filter(|(i, _)| *i != room).map(|(_, v)| v).sum();
    let mut p = [0.0; ROOM_TYPE_COUNT];
    for i in 0..ROOM_TYPE_COUNT {
        if i != room {
            p[i] = round4((1.0 - mass) * raw[i] / other);
        }
    }
    p[room] = 1.0 - p.iter().sum::<f64>();
    p
}

fn canonical_yaw(y: f64) -> f64 {
    let w = wrap_degrees(y);
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// Generates annotation records for `spec.videos` tours.
pub fn generate_corpus<R: Rng + ?Sized>(
    spec: &CorpusSpec,
    registry: &RoomTypeRegistry,
    rng: &mut R,
) -> Vec<FrameRecord> {
    let turn = Normal::new(0.0, 25.0).expect("valid sigma");
    let mut out = Vec::new();
    for v in 0..spec.videos {
        let video_id = format!("tour{v:03}");
        let fps = round4(rng.random_range(spec.fps[0]..=spec.fps[1]));
        let rooms = tour(spec, registry, rng);
        let mut frames: Vec<FrameRecord> = Vec::new();
        let mut yaw: f64 = rng.random_range(-180.0..180.0);
        for (seg, &room) in rooms.iter().enumerate() {
            let label = registry.label(room).unwrap_or("room");
            let vocab = objects_for(label);
            let secs = rng.random_range(spec.segment_seconds[0]..=spec.segment_seconds[1]);
            let n = ((secs * fps).round() as usize).max(1);
            for _ in 0..n {
                let frame_index = frames.len() as u32;
                let outdoor_rate = if seg == 0 { spec.outdoor_rate * 4.0 } else { spec.outdoor_rate };
                let n_objects = rng.random_range(0..=vocab.len().min(3));
                let mut objects: Vec<DetectedObject> = (0..n_objects)
                    .map(|_| DetectedObject {
                        label: vocab[rng.random_range(0..vocab.len())].to_string(),
                        score: round4(rng.random_range(0.3..1.0)),
                    })
                    .collect();
                objects.dedup_by(|a, b| a.label == b.label);
                yaw = canonical_yaw(yaw + turn.sample(rng));
                frames.push(FrameRecord {
                    video_id: video_id.clone(),
                    frame_index,
                    timestamp_s: round4(frame_index as f64 / fps),
                    room_probs: room_probs(room, rng),
                    person: rng.random_bool(spec.person_rate),
                    outdoor: rng.random_bool(outdoor_rate.min(1.0)),
                    objects,
                    region_count: if rng.random_bool(spec.empty_rate) { 0 } else { rng.random_range(1..=36) },
                    yaw_deg: Some(round4(yaw)),
                    action_to_next: None,
                });
            }
        }
        // labels follow the heading change to the next frame
        for i in 0..frames.len() {
            let next_yaw = frames.get(i + 1).and_then(|f| f.yaw_deg);
            if let (Some(a), Some(b)) = (frames[i].yaw_deg, next_yaw) {
                if rng.random_bool(spec.action_rate) {
                    let d = wrap_degrees(b - a);
                    frames[i].action_to_next = Some(if d < -TURN_THRESHOLD_DEG {
                        Action::Left
                    } else if d > TURN_THRESHOLD_DEG {
                        Action::Right
                    } else {
                        Action::Forward
                    });
                }
            }
        }
        for f in &mut frames {
            if !rng.random_bool(spec.yaw_rate) {
                f.yaw_deg = None;
            }
        }
        out.extend(frames);
    }
    out
}

/// Line-delimited serialization in the annotation file schema.
pub fn to_jsonl(frames: &[FrameRecord]) -> String {
    let mut s = String::new();
    for f in frames {
        s.push_str(&serde_json::to_string(f).expect("frames serialize"));
        s.push('\n');
    }
    s
}
