//! Layout-reasoning probe on synthetic houses: predict which of twelve
//! 30-degree sectors holds a queried room type, relative to the agent's
//! heading, with a linear softmax classifier.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::registry::ROOM_TYPE_COUNT;
use crate::rng::{derive_seed, seeded};

pub const INTERVAL_COUNT: usize = 12;
pub const INTERVAL_WIDTH_DEG: f64 = 360.0 / INTERVAL_COUNT as f64;
pub const PROBE_FEATURES: usize = 2 * ROOM_TYPE_COUNT;
pub const CE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("angle {0} outside [-180, 180]")]
    AngleOutOfRange(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("training targets all fall in interval {0}")]
    SingleClass(usize),
    #[error("target interval {0} out of range")]
    BadTarget(usize),
}

/// Sector of an angle in degrees. Sector `i` covers
/// `[-180 + 30 i, -180 + 30 (i + 1))`; 180 itself belongs to sector 11.
pub fn angle_to_interval(s: f64) -> Result<usize, ProbeError> {
    if !(-180.0..=180.0).contains(&s) {
        return Err(ProbeError::AngleOutOfRange(s));
    }
    let i = ((s + 180.0) / INTERVAL_WIDTH_DEG).floor() as usize;
    Ok(i.min(INTERVAL_COUNT - 1))
}

/// Directional regularity shared by every house a rule generates: each room
/// type sits at a fixed anchor, up to a small jitter and a global shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutRule {
    pub rule_id: String,
    pub anchors: Vec<[f64; 2]>,
    pub jitter: f64,
    pub shift: f64,
    pub min_types: usize,
    pub max_types: usize,
}

impl LayoutRule {
    /// Room types on a regular 12-gon, rotated so that every chord direction
    /// sits 7.5 degrees from the nearest sector boundary.
    pub fn ring() -> Self {
        let anchors = (0..ROOM_TYPE_COUNT)
            .map(|i| {
                let a = (30.0 * i as f64 + 7.5).to_radians();
                [10.0 * a.cos(), 10.0 * a.sin()]
            })
            .collect();
        Self { rule_id: "ring12".into(), anchors, jitter: 0.1, shift: 50.0, min_types: 6, max_types: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseNode {
    pub node_id: usize,
    pub position: [f64; 2],
    pub room_type: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthHouse {
    pub house_id: String,
    pub nodes: Vec<HouseNode>,
    pub edges: Vec<(usize, usize)>,
    pub rule_id: String,
}

impl SynthHouse {
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| match (a == node, b == node) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for m in self.neighbors(n) {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Angle in degrees from `from`'s heading (east unless it carries a yaw)
    /// to node `to`, in (-180, 180].
    pub fn relative_angle(&self, from: usize, to: usize) -> f64 {
        let a = &self.nodes[from];
        let b = &self.nodes[to];
        let bearing = (b.position[1] - a.position[1]).atan2(b.position[0] - a.position[0]) * 180.0 / PI;
        crate::instruction::wrap_degrees(bearing - a.yaw_deg.unwrap_or(0.0))
    }
}

/// Generates houses under `rule`. Each house holds a random subset of room
/// types, one node per type, and every pair of nodes is adjacent.
pub fn generate_houses<R: Rng + ?Sized>(count: usize, rng: &mut R, rule: &LayoutRule) -> Vec<SynthHouse> {
    (0..count)
        .map(|h| {
            let n_types = rng.random_range(rule.min_types..=rule.max_types);
            let mut types = index::sample(rng, rule.anchors.len(), n_types).into_vec();
            types.sort_unstable();
            let dx = rng.random_range(-rule.shift..=rule.shift);
            let dy = rng.random_range(-rule.shift..=rule.shift);
            let nodes = types
                .into_iter()
                .enumerate()
                .map(|(node_id, t)| {
                    let [ax, ay] = rule.anchors[t];
                    let jx = rng.random_range(-rule.jitter..=rule.jitter);
                    let jy = rng.random_range(-rule.jitter..=rule.jitter);
                    HouseNode { node_id, position: [ax + dx + jx, ay + dy + jy], room_type: t, yaw_deg: None }
                })
                .collect::<Vec<_>>();
            let edges = (0..nodes.len()).flat_map(|a| (a + 1..nodes.len()).map(move |b| (a, b))).collect();
            SynthHouse { house_id: format!("house{h:05}"), nodes, edges, rule_id: rule.rule_id.clone() }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeInstance {
    pub house_ref: String,
    pub current_node: usize,
    pub query_room_type: usize,
    pub s: f64,
    pub target_interval: usize,
    pub features: Vec<f64>,
}

pub fn probe_features(current_type: usize, query_type: usize) -> Vec<f64> {
    let mut f = vec![0.0; PROBE_FEATURES];
    f[current_type] = 1.0;
    f[ROOM_TYPE_COUNT + query_type] = 1.0;
    f
}

/// Samples `count` (current node, candidate neighbour) pairs from a house.
pub fn make_instances<R: Rng + ?Sized>(house: &SynthHouse, count: usize, rng: &mut R) -> Vec<ProbeInstance> {
    let mut out = Vec::with_capacity(count);
    if house.nodes.len() < 2 {
        return out;
    }
    for _ in 0..count {
        let current = rng.random_range(0..house.nodes.len());
        let candidates = house.neighbors(current);
        if candidates.is_empty() {
            continue;
        }
        let other = candidates[rng.random_range(0..candidates.len())];
        let query = house.nodes[other].room_type;
        // the first node of the queried type is the matching node
        let Some(matching) = house.nodes.iter().position(|n| n.room_type == query) else {
            continue;
        };
        let s = house.relative_angle(current, matching);
        let target_interval = angle_to_interval(s).expect("wrapped angles lie in range");
        out.push(ProbeInstance {
            house_ref: house.house_id.clone(),
            current_node: current,
            query_room_type: query,
            s,
            target_interval,
            features: probe_features(house.nodes[current].room_type, query),
        });
    }
    out
}

/// Linear 12-way classifier; `weights` is row-major `12 x n_features`.
/// With `negate_logits` the class probabilities are `softmax(-x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    pub weights: Vec<f64>,
    pub n_features: usize,
    pub negate_logits: bool,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl SoftmaxModel {
    pub fn zeros(n_features: usize, negate_logits: bool) -> Self {
        Self { weights: vec![0.0; INTERVAL_COUNT * n_features], n_features, negate_logits }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights.chunks(self.n_features).map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum()).collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.logits(x);
        if self.negate_logits {
            z.iter_mut().for_each(|v| *v = -*v);
        }
        softmax(&z)
    }

    /// Most probable interval; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        crate::annotation::argmax_lowest(&self.probabilities(x))
    }
}

/// Mean cross-entropy over the batch and its gradient with respect to the
/// model weights.
pub fn ce_loss(model: &SoftmaxModel, batch: &[(Vec<f64>, usize)]) -> Result<(f64, Vec<f64>), ProbeError> {
    if batch.is_empty() {
        return Err(ProbeError::EmptyBatch);
    }
    let n = batch.len() as f64;
    let f = model.n_features;
    let sign = if model.negate_logits { -1.0 } else { 1.0 };
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.weights.len()];
    for (x, target) in batch {
        if *target >= INTERVAL_COUNT {
            return Err(ProbeError::BadTarget(*target));
        }
        let probs = model.probabilities(x);
        let p = probs[*target];
        loss -= p.max(CE_EPS).ln();
        if p < CE_EPS {
            continue;
        }
        for (c, pc) in probs.iter().enumerate() {
            let dz = sign * (pc - f64::from(u8::from(c == *target))) / n;
            for (g, v) in grad[c * f..(c + 1) * f].iter_mut().zip(x) {
                *g += dz * v;
            }
        }
    }
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeHyper {
    pub lr: f64,
    pub epochs: usize,
    pub negate_logits: bool,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        Self { lr: 2.0, epochs: 500, negate_logits: false }
    }
}

fn batch_of(instances: &[ProbeInstance]) -> Vec<(Vec<f64>, usize)> {
    instances.iter().map(|i| (i.features.clone(), i.target_interval)).collect()
}

/// Distinct feature vectors with per-class target counts.
struct GroupedBatch {
    groups: Vec<(Vec<f64>, [usize; INTERVAL_COUNT])>,
    n: usize,
}

impl GroupedBatch {
    fn new(batch: &[(Vec<f64>, usize)]) -> Result<Self, ProbeError> {
        let mut index: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        let mut groups: Vec<(Vec<f64>, [usize; INTERVAL_COUNT])> = Vec::new();
        for (x, target) in batch {
            if *target >= INTERVAL_COUNT {
                return Err(ProbeError::BadTarget(*target));
            }
            let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                groups.push((x.clone(), [0; INTERVAL_COUNT]));
                groups.len() - 1
            });
            groups[g].1[*target] += 1;
        }
        Ok(Self { groups, n: batch.len() })
    }

    /// Same value and gradient as [`ce_loss`] over the ungrouped batch.
    fn loss(&self, model: &SoftmaxModel) -> (f64, Vec<f64>) {
        let n = self.n as f64;
        let f = model.n_features;
        let sign = if model.negate_logits { -1.0 } else { 1.0 };
        let mut loss = 0.0;
        let mut grad = vec![0.0; model.weights.len()];
        for (x, counts) in &self.groups {
            let probs = model.probabilities(x);
            let mut dz = [0.0; INTERVAL_COUNT];
            for (t, &count) in counts.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                let p = probs[t];
                loss -= count as f64 * p.max(CE_EPS).ln();
                if p < CE_EPS {
                    continue;
                }
                for (c, pc) in probs.iter().enumerate() {
                    dz[c] += count as f64 * sign * (pc - f64::from(u8::from(c == t))) / n;
                }
            }
            for (c, d) in dz.iter().enumerate() {
                for (g, v) in grad[c * f..(c + 1) * f].iter_mut().zip(x) {
                    *g += d * v;
                }
            }
        }
        (loss / n, grad)
    }
}

/// Full-batch gradient descent from zero weights; the history holds the loss
/// before every step.
pub fn train_probe(instances: &[ProbeInstance], hyper: &ProbeHyper) -> Result<(SoftmaxModel, Vec<f64>), ProbeError> {
    let first = instances.first().ok_or(ProbeError::EmptyBatch)?;
    if instances.iter().all(|i| i.target_interval == first.target_interval) {
        return Err(ProbeError::SingleClass(first.target_interval));
    }
    let batch = GroupedBatch::new(&batch_of(instances))?;
    let mut model = SoftmaxModel::zeros(first.features.len(), hyper.negate_logits);
    let mut history = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        let (loss, grad) = batch.loss(&model);
        history.push(loss);
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= hyper.lr * g;
        }
    }
    Ok((model, history))
}

pub fn evaluate_probe(model: &SoftmaxModel, instances: &[ProbeInstance]) -> Option<f64> {
    if instances.is_empty() {
        return None;
    }
    let hits = instances.iter().filter(|i| model.predict(&i.features) == i.target_interval).count();
    Some(hits as f64 / instances.len() as f64)
}

/// One-sided pooled two-proportion z-test for `p1 > p2`.
pub fn two_proportion_p_value(hits1: usize, n1: usize, hits2: usize, n2: usize) -> f64 {
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let p1 = hits1 as f64 / n1f;
    let p2 = hits2 as f64 / n2f;
    let pooled = (hits1 + hits2) as f64 / (n1f + n2f);
    let se = (pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f)).sqrt();
    if se == 0.0 {
        return if p1 > p2 { 0.0 } else { 1.0 };
    }
    let z = (p1 - p2) / se;
    1.0 - Normal::standard().cdf(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub train_houses: usize,
    pub test_houses: usize,
    pub samples_per_house: usize,
    pub hyper: ProbeHyper,
    /// Train on permuted targets as a no-signal control.
    pub shuffled_control: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            train_houses: 200,
            test_houses: 100,
            samples_per_house: 30,
            hyper: ProbeHyper::default(),
            shuffled_control: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub untrained_acc: f64,
    pub trained_acc: f64,
    pub n_test: usize,
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffled_acc: Option<f64>,
    pub final_train_loss: f64,
}

pub struct ProbeRun {
    pub train_houses: Vec<SynthHouse>,
    pub test_houses: Vec<SynthHouse>,
    pub report: ProbeReport,
}

fn instances_for<R: Rng + ?Sized>(houses: &[SynthHouse], per_house: usize, rng: &mut R) -> Vec<ProbeInstance> {
    houses.iter().flat_map(|h| make_instances(h, per_house, rng)).collect()
}

/// Generates disjoint train and test houses, trains the probe and compares
/// it with the untrained model on the test instances.
pub fn run_probe(config: &ProbeConfig, rule: &LayoutRule, seed: u64) -> Result<ProbeRun, ProbeError> {
    let mut train_rng = seeded(derive_seed(seed, &["probe", "train-houses"]));
    let mut test_rng = seeded(derive_seed(seed, &["probe", "test-houses"]));
    let train_houses = generate_houses(config.train_houses, &mut train_rng, rule);
    let mut test_houses = generate_houses(config.test_houses, &mut test_rng, rule);
    for h in &mut test_houses {
        h.house_id = format!("test-{}", h.house_id);
    }
    let mut inst_rng = seeded(derive_seed(seed, &["probe", "instances"]));
    let train = instances_for(&train_houses, config.samples_per_house, &mut inst_rng);
    let test = instances_for(&test_houses, config.samples_per_house, &mut inst_rng);
    if test.is_empty() {
        return Err(ProbeError::EmptyBatch);
    }

    let untrained = SoftmaxModel::zeros(PROBE_FEATURES, config.hyper.negate_logits);
    let untrained_acc = evaluate_probe(&untrained, &test).unwrap_or(0.0);
    let (model, history) = train_probe(&train, &config.hyper)?;
    let trained_acc = evaluate_probe(&model, &test).unwrap_or(0.0);

    let shuffled_acc = if config.shuffled_control {
        let mut shuffled = train.clone();
        let mut targets: Vec<usize> = shuffled.iter().map(|i| i.target_interval).collect();
        rand::seq::SliceRandom::shuffle(targets.as_mut_slice(), &mut seeded(derive_seed(seed, &["probe", "shuffle"])));
        for (inst, t) in shuffled.iter_mut().zip(targets) {
            inst.target_interval = t;
        }
        let (control, _) = train_probe(&shuffled, &config.hyper)?;
        evaluate_probe(&control, &test)
    } else {
        None
    };

    let n = test.len();
    let hits = |acc: f64| (acc * n as f64).round() as usize;
    let p_value = two_proportion_p_value(hits(trained_acc), n, hits(untrained_acc), n);
    Ok(ProbeRun {
        train_houses,
        test_houses,
        report: ProbeReport {
            untrained_acc,
            trained_acc,
            n_test: n,
            p_value,
            shuffled_acc,
            final_train_loss: history.last().copied().unwrap_or(f64::NAN),
        },
    })
}
