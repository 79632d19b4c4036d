//! Builds vision-and-language navigation datasets from per-frame
//! annotations of house-tour videos: room-level trajectories, templated
//! instructions, trajectory-judgment samples, plus two small learners that
//! exercise the data (a weighted-BCE trajectory judge and a 12-way layout
//! probe).

pub mod annotation;
pub mod diagnostics;
pub mod instruction;
pub mod judgment;
pub mod pipeline;
pub mod probe;
pub mod registry;
pub mod rng;
pub mod samples;
pub mod synth;
pub mod trajectory;

pub use annotation::{Action, DetectedObject, FilterReport, FrameId, FrameRecord, RejectReason, VideoAnnotation};
pub use diagnostics::Diagnostic;
pub use instruction::{ActionWord, InstructionTemplate, NodeCaption, PathInstructionPair, TemplateBank};
pub use judgment::{LinearModel, TrainHyper, WeightMode};
pub use pipeline::{Pipeline, PipelineConfig, PipelineError, Stage};
pub use registry::RoomTypeRegistry;
pub use samples::{JudgmentSample, Strategy};
pub use trajectory::{NodeKind, Trajectory, TrajectoryConfig, TrajectoryNode};
