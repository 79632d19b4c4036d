//! Trajectory judgment at desk scale: symbolic trajectory features, a linear
//! scorer and the positive-weighted binary cross-entropy objective
//!
//! ```text
//! L = -(1/N) Σ [ w·y·ln p + (1 - y)·ln(1 - p) ]
//! ```
//!
//! where `p = sigmoid(weights·x + bias)` and `w` is the ratio of negative to
//! positive samples in the batch.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{RoomTypeRegistry, ROOM_TYPE_COUNT};
use crate::samples::{JudgmentSample, Strategy};
use crate::trajectory::Trajectory;

pub const FEATURE_VERSION: &str = "bigram12-hist12-kr/1";
pub const BIGRAM_BLOCK: usize = ROOM_TYPE_COUNT * ROOM_TYPE_COUNT;
pub const FEATURE_DIM: usize = BIGRAM_BLOCK + ROOM_TYPE_COUNT + 2;
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum JudgmentError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("training data needs both classes (positives: {n_pos}, negatives: {n_neg})")]
    SingleClass { n_pos: usize, n_neg: usize },
    #[error("sample {sample_id}: unknown room type {room:?}")]
    UnknownRoom { sample_id: String, room: String },
    #[error("sample {sample_id}: node order refers to missing slot {slot}")]
    BadSlot { sample_id: String, slot: usize },
    #[error("sample {sample_id}: unknown trajectory {trajectory_id}")]
    UnknownTrajectory { sample_id: String, trajectory_id: String },
    #[error("feature dimension {got} does not match model dimension {want}")]
    Dimension { got: usize, want: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub feature_version: String,
}

/// Room-type sequence of a judgment sample, following its node order.
pub fn sample_rooms<'a>(sample: &'a JudgmentSample, trajectory: &'a Trajectory) -> Result<Vec<&'a str>, JudgmentError> {
    let k = trajectory.nodes.len();
    sample
        .node_order
        .iter()
        .map(|&slot| {
            if slot < k {
                Ok(trajectory.nodes[slot].view.room_type.as_str())
            } else {
                sample
                    .foreign_nodes
                    .as_ref()
                    .and_then(|f| f.get(slot - k))
                    .map(|n| n.room_type.as_str())
                    .ok_or_else(|| JudgmentError::BadSlot { sample_id: sample.sample_id.clone(), slot })
            }
        })
        .collect()
}

/// Ordered room-type bigram counts, a room-type histogram, then K and R.
pub fn featurize(
    sample: &JudgmentSample,
    trajectory: &Trajectory,
    registry: &RoomTypeRegistry,
) -> Result<FeatureVector, JudgmentError> {
    let rooms = sample_rooms(sample, trajectory)?;
    let ordinals = rooms
        .iter()
        .map(|r| {
            registry
                .ordinal(r)
                .ok_or_else(|| JudgmentError::UnknownRoom { sample_id: sample.sample_id.clone(), room: r.to_string() })
        })
        .collect::<Result<Vec<usize>, _>>()?;
    let mut values = vec![0.0; FEATURE_DIM];
    for pair in ordinals.windows(2) {
        values[pair[0] * ROOM_TYPE_COUNT + pair[1]] += 1.0;
    }
    for &o in &ordinals {
        values[BIGRAM_BLOCK + o] += 1.0;
    }
    values[FEATURE_DIM - 2] = ordinals.len() as f64;
    values[FEATURE_DIM - 1] = trajectory.room_node_count as f64;
    Ok(FeatureVector { values, feature_version: FEATURE_VERSION.to_string() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        Self { weights: vec![0.0; dim], bias: 0.0 }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

/// Imbalance weight: negatives per positive, or 1 when either class is absent.
pub fn auto_weight(n_pos: usize, n_neg: usize) -> f64 {
    if n_pos == 0 || n_neg == 0 {
        1.0
    } else {
        n_neg as f64 / n_pos as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum WeightMode {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentBatch {
    pub samples: Vec<(Vec<f64>, u8)>,
    pub w: f64,
}

impl JudgmentBatch {
    pub fn new(samples: Vec<(Vec<f64>, u8)>, mode: WeightMode) -> Self {
        let (n_pos, n_neg) = class_counts(&samples);
        let w = match mode {
            WeightMode::Auto => auto_weight(n_pos, n_neg),
            WeightMode::Fixed(w) => w,
        };
        Self { samples, w }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn class_counts(samples: &[(Vec<f64>, u8)]) -> (usize, usize) {
    let n_pos = samples.iter().filter(|(_, y)| *y == 1).count();
    (n_pos, samples.len() - n_pos)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss: f64,
    /// d loss / d weights, followed by d loss / d bias.
    pub gradient: Vec<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Evaluates the weighted objective and its analytic gradient. The
/// probability is clipped to `[PROB_EPS, 1 - PROB_EPS]`; clipped samples
/// contribute no gradient.
pub fn tj_loss(model: &LinearModel, batch: &JudgmentBatch) -> Result<LossReport, JudgmentError> {
    if batch.is_empty() {
        return Err(JudgmentError::EmptyBatch);
    }
    let dim = model.weights.len();
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut gradient = vec![0.0; dim + 1];
    for (x, y) in &batch.samples {
        if x.len() != dim {
            return Err(JudgmentError::Dimension { got: x.len(), want: dim });
        }
        let raw = model.probability(x);
        let p = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let y = f64::from(*y);
        loss -= batch.w * y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        if raw == p {
            // d/dz of the per-sample term, z being the logit
            let dz = -(batch.w * y * (1.0 - p) - (1.0 - y) * p) / n;
            for (g, v) in gradient.iter_mut().zip(x) {
                *g += dz * v;
            }
            gradient[dim] += dz;
        }
    }
    let (n_pos, n_neg) = class_counts(&batch.samples);
    Ok(LossReport { loss: loss / n, gradient, n_pos, n_neg })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub w_mode: WeightMode,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self { lr: 0.5, epochs: 1000, seed: 0, w_mode: WeightMode::Auto }
    }
}

/// Full-batch gradient descent from a zero model. The history holds the
/// loss before every step and after the last one.
pub fn train(samples: &[(Vec<f64>, u8)], hyper: &TrainHyper) -> Result<(LinearModel, Vec<f64>), JudgmentError> {
    let (n_pos, n_neg) = class_counts(samples);
    if n_pos == 0 || n_neg == 0 {
        return Err(JudgmentError::SingleClass { n_pos, n_neg });
    }
    let dim = samples[0].0.len();
    let batch = JudgmentBatch::new(samples.to_vec(), hyper.w_mode);
    let mut model = LinearModel::zeros(dim);
    let mut history = Vec::with_capacity(hyper.epochs + 1);
    for _ in 0..hyper.epochs {
        let report = tj_loss(&model, &batch)?;
        history.push(report.loss);
        for (w, g) in model.weights.iter_mut().zip(&report.gradient) {
            *w -= hyper.lr * g;
        }
        model.bias -= hyper.lr * report.gradient[dim];
    }
    history.push(tj_loss(&model, &batch)?.loss);
    Ok((model, history))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgmentMetrics {
    pub n: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Accuracy per sample strategy; strategies with no samples are absent.
    pub per_strategy: BTreeMap<Strategy, f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// A sample is predicted reasonable when `p > 0.5`.
pub fn evaluate(model: &LinearModel, samples: &[(Vec<f64>, u8, Strategy)]) -> JudgmentMetrics {
    let mut correct = 0;
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    let mut buckets: BTreeMap<Strategy, (usize, usize)> = BTreeMap::new();
    for (x, y, strategy) in samples {
        let predicted = u8::from(model.probability(x) > 0.5);
        let hit = predicted == *y;
        correct += usize::from(hit);
        match (predicted, *y) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fneg += 1,
            _ => {}
        }
        let b = buckets.entry(*strategy).or_default();
        b.0 += usize::from(hit);
        b.1 += 1;
    }
    JudgmentMetrics {
        n: samples.len(),
        accuracy: ratio(correct, samples.len()),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
        per_strategy: buckets.into_iter().filter_map(|(s, (c, n))| ratio(c, n).map(|a| (s, a))).collect(),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

impl JudgmentMetrics {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>10}", "metric", "value");
        let _ = writeln!(s, "{:<24} {:>10}", "samples", self.n);
        let _ = writeln!(s, "{:<24} {:>10}", "accuracy", cell(self.accuracy));
        let _ = writeln!(s, "{:<24} {:>10}", "precision", cell(self.precision));
        let _ = writeln!(s, "{:<24} {:>10}", "recall", cell(self.recall));
        for strategy in
            [Strategy::Positive, Strategy::ShuffleTransitions, Strategy::ShuffleAll, Strategy::InsertForeign]
        {
            let _ = writeln!(
                s,
                "{:<24} {:>10}",
                format!("acc[{strategy}]"),
                cell(self.per_strategy.get(&strategy).copied())
            );
        }
        s
    }
}

/// Serialized trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TjModelFile {
    pub feature_version: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub hyper: TrainHyper,
    pub final_metrics: JudgmentMetrics,
}
