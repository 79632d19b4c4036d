//! Pretext-task samples: trajectory-judgment positives and negatives, path
//! ranking candidate sets, masked-language samples and the video-level split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::Diagnostic;
use crate::trajectory::Trajectory;

pub const DEFAULT_MASK_PROB: f64 = 0.15;
pub const DEFAULT_SPLIT_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Positive,
    ShuffleTransitions,
    ShuffleAll,
    InsertForeign,
}

impl Strategy {
    pub const NEGATIVES: [Strategy; 3] = [Strategy::ShuffleTransitions, Strategy::ShuffleAll, Strategy::InsertForeign];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Positive => "positive",
            Strategy::ShuffleTransitions => "shuffle_transitions",
            Strategy::ShuffleAll => "shuffle_all",
            Strategy::InsertForeign => "insert_foreign",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A node borrowed from another video's trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignNode {
    pub donor_video_id: String,
    pub donor_trajectory_id: String,
    pub donor_slot: usize,
    pub room_type: String,
    pub keyframe: u32,
}

/// A labeled trajectory for the judgment task. `node_order[i]` names the
/// content of slot `i`: values below K index the source trajectory's nodes,
/// values `K + j` index `foreign_nodes[j]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentSample {
    pub sample_id: String,
    pub pair_id: String,
    pub trajectory_id: String,
    pub label: u8,
    pub strategy: Strategy,
    pub node_order: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foreign_nodes: Option<Vec<ForeignNode>>,
}

impl JudgmentSample {
    pub fn is_identity(&self) -> bool {
        self.node_order.iter().enumerate().all(|(i, &o)| i == o)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Inapplicable {
    #[error("need at least 2 transition nodes, found {0}")]
    TooFewTransitions(usize),
    #[error("need at least 2 nodes, found {0}")]
    TooFewNodes(usize),
    #[error("trajectory has no transition slots to replace")]
    NoTransitionSlots,
    #[error("donor pool has no node from another video")]
    NoForeignDonors,
}

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
    #[error("split fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("ranking pool has {available} distractors, need {requested}")]
    PoolTooSmall { requested: usize, available: usize },
    #[error("mask probability {0} must lie strictly between 0 and 1")]
    BadMaskProb(f64),
    #[error("cannot mask an empty token list")]
    NoTokens,
}

/// Source of a judgment sample: a pair id plus its trajectory.
#[derive(Debug, Clone, Copy)]
pub struct PairRef<'a> {
    pub pair_id: &'a str,
    pub trajectory: &'a Trajectory,
}

fn sample(src: PairRef<'_>, sample_id: String, strategy: Strategy, node_order: Vec<usize>) -> JudgmentSample {
    JudgmentSample {
        sample_id,
        pair_id: src.pair_id.to_string(),
        trajectory_id: src.trajectory.trajectory_id.clone(),
        label: u8::from(strategy == Strategy::Positive),
        strategy,
        node_order,
        foreign_nodes: None,
    }
}

pub fn make_positive(src: PairRef<'_>, sample_id: String) -> JudgmentSample {
    sample(src, sample_id, Strategy::Positive, (0..src.trajectory.nodes.len()).collect())
}

/// Shuffles `items` until the result differs from the input.
fn non_identity_shuffle<R: Rng + ?Sized>(items: &[usize], rng: &mut R) -> Vec<usize> {
    debug_assert!(items.len() >= 2);
    loop {
        let mut out = items.to_vec();
        out.shuffle(rng);
        if out != items {
            return out;
        }
    }
}

/// Permutes only the transition slots, by a non-identity permutation.
pub fn shuffle_transitions<R: Rng + ?Sized>(
    src: PairRef<'_>,
    sample_id: String,
    rng: &mut R,
) -> Result<JudgmentSample, Inapplicable> {
    let slots = src.trajectory.transition_slots();
    if slots.len() < 2 {
        return Err(Inapplicable::TooFewTransitions(slots.len()));
    }
    let permuted = non_identity_shuffle(&slots, rng);
    let mut order: Vec<usize> = (0..src.trajectory.nodes.len()).collect();
    for (&slot, &content) in slots.iter().zip(&permuted) {
        order[slot] = content;
    }
    Ok(sample(src, sample_id, Strategy::ShuffleTransitions, order))
}

pub fn shuffle_all<R: Rng + ?Sized>(
    src: PairRef<'_>,
    sample_id: String,
    rng: &mut R,
) -> Result<JudgmentSample, Inapplicable> {
    let k = src.trajectory.nodes.len();
    if k < 2 {
        return Err(Inapplicable::TooFewNodes(k));
    }
    let identity: Vec<usize> = (0..k).collect();
    let order = non_identity_shuffle(&identity, rng);
    Ok(sample(src, sample_id, Strategy::ShuffleAll, order))
}

/// Every node of every trajectory, available for foreign insertion.
#[derive(Debug, Clone, Default)]
pub struct DonorPool {
    nodes: Vec<ForeignNode>,
}

impl DonorPool {
    pub fn from_trajectories<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let mut nodes = Vec::new();
        for t in trajectories {
            for (slot, n) in t.nodes.iter().enumerate() {
                nodes.push(ForeignNode {
                    donor_video_id: t.video_id.clone(),
                    donor_trajectory_id: t.trajectory_id.clone(),
                    donor_slot: slot,
                    room_type: n.view.room_type.clone(),
                    keyframe: n.view.keyframe_id,
                });
            }
        }
        Self { nodes }
    }

    pub fn from_nodes(nodes: Vec<ForeignNode>) -> Self {
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn eligible(&self, video_id: &str) -> Vec<&ForeignNode> {
        self.nodes.iter().filter(|n| n.donor_video_id != video_id).collect()
    }
}

/// Keeps room slots in place and replaces every transition slot with a
/// node drawn uniformly from other videos.
pub fn insert_foreign<R: Rng + ?Sized>(
    src: PairRef<'_>,
    pool: &DonorPool,
    sample_id: String,
    rng: &mut R,
) -> Result<JudgmentSample, Inapplicable> {
    let slots = src.trajectory.transition_slots();
    if slots.is_empty() {
        return Err(Inapplicable::NoTransitionSlots);
    }
    let eligible = pool.eligible(&src.trajectory.video_id);
    if eligible.is_empty() {
        return Err(Inapplicable::NoForeignDonors);
    }
    let k = src.trajectory.nodes.len();
    let mut order: Vec<usize> = (0..k).collect();
    let mut foreign = Vec::with_capacity(slots.len());
    for (j, &slot) in slots.iter().enumerate() {
        foreign.push(eligible[rng.random_range(0..eligible.len())].clone());
        order[slot] = k + j;
    }
    let mut s = sample(src, sample_id, Strategy::InsertForeign, order);
    s.foreign_nodes = Some(foreign);
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NegativeCounts {
    pub shuffle_transitions: usize,
    pub shuffle_all: usize,
    pub insert_foreign: usize,
}

impl Default for NegativeCounts {
    fn default() -> Self {
        Self { shuffle_transitions: 1, shuffle_all: 1, insert_foreign: 1 }
    }
}

impl NegativeCounts {
    pub fn zero() -> Self {
        Self { shuffle_transitions: 0, shuffle_all: 0, insert_foreign: 0 }
    }

    pub fn get(&self, s: Strategy) -> usize {
        match s {
            Strategy::Positive => 0,
            Strategy::ShuffleTransitions => self.shuffle_transitions,
            Strategy::ShuffleAll => self.shuffle_all,
            Strategy::InsertForeign => self.insert_foreign,
        }
    }
}

/// Applies each negative strategy its requested number of times. Strategies
/// that do not apply to this trajectory are skipped with a diagnostic.
pub fn make_negatives<R: Rng + ?Sized>(
    src: PairRef<'_>,
    pool: &DonorPool,
    rng: &mut R,
    counts: &NegativeCounts,
) -> (Vec<JudgmentSample>, Vec<Diagnostic>) {
    let mut out = Vec::new();
    let mut diags = Vec::new();
    for strategy in Strategy::NEGATIVES {
        for n in 0..counts.get(strategy) {
            let id = format!("{}-{}-{n}", src.pair_id, strategy);
            let made = match strategy {
                Strategy::ShuffleTransitions => shuffle_transitions(src, id.clone(), rng),
                Strategy::ShuffleAll => shuffle_all(src, id.clone(), rng),
                Strategy::InsertForeign => insert_foreign(src, pool, id.clone(), rng),
                Strategy::Positive => unreachable!(),
            };
            match made {
                Ok(s) => out.push(s),
                Err(e) => {
                    diags.push(Diagnostic::new("samples", id, format!("{strategy} inapplicable: {e}")));
                    break;
                }
            }
        }
    }
    (out, diags)
}

/// Recorded class counts of an emitted sample batch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n_pos: usize,
    pub n_neg: usize,
    pub per_strategy: BTreeMap<Strategy, usize>,
}

pub fn summarize<'a>(samples: impl IntoIterator<Item = &'a JudgmentSample>) -> BatchSummary {
    let mut s = BatchSummary::default();
    for sample in samples {
        if sample.label == 1 {
            s.n_pos += 1;
        } else {
            s.n_neg += 1;
        }
        *s.per_strategy.entry(sample.strategy).or_default() += 1;
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_videos: Vec<String>,
    pub test_videos: Vec<String>,
    pub fraction: f64,
}

impl DatasetSplit {
    pub fn warning(&self) -> Option<String> {
        if self.test_videos.is_empty() {
            Some(format!("split at fraction {} leaves the test set empty", self.fraction))
        } else if self.train_videos.is_empty() {
            Some(format!("split at fraction {} leaves the training set empty", self.fraction))
        } else {
            None
        }
    }

    pub fn is_train(&self, video_id: &str) -> bool {
        self.train_videos.binary_search_by(|v| v.as_str().cmp(video_id)).is_ok()
    }
}

/// Shuffles the distinct video ids and sends the first
/// `round(fraction * n)` of them to training. Both lists come back sorted.
pub fn split_videos<R: Rng + ?Sized>(
    video_ids: &[String],
    fraction: f64,
    rng: &mut R,
) -> Result<DatasetSplit, SampleError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SampleError::BadFraction(fraction));
    }
    let mut ids: Vec<String> = video_ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.is_empty() {
        return Err(SampleError::EmptyCorpus);
    }
    ids.shuffle(rng);
    let n_train = (fraction * ids.len() as f64).round() as usize;
    let mut test_videos = ids.split_off(n_train);
    let mut train_videos = ids;
    train_videos.sort();
    test_videos.sort();
    let split = DatasetSplit { train_videos, test_videos, fraction };
    if let Some(w) = split.warning() {
        log::warn!("{w}");
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingSample {
    pub sample_id: String,
    pub instruction_ref: String,
    pub candidates: Vec<String>,
    pub gold_index: usize,
}

/// Builds a candidate set of the gold trajectory plus `c` distinct
/// distractors drawn from `pool`, with the gold placed uniformly.
pub fn make_ranking_set<R: Rng + ?Sized>(
    sample_id: String,
    instruction_ref: &str,
    gold_trajectory: &str,
    pool: &[String],
    c: usize,
    rng: &mut R,
) -> Result<RankingSample, SampleError> {
    let eligible: Vec<&String> =
        pool.iter().filter(|t| t.as_str() != gold_trajectory).collect::<BTreeSet<_>>().into_iter().collect();
    if eligible.len() < c {
        return Err(SampleError::PoolTooSmall { requested: c, available: eligible.len() });
    }
    let mut candidates: Vec<String> =
        index::sample(rng, eligible.len(), c).into_iter().map(|i| eligible[i].clone()).collect();
    let gold_index = rng.random_range(0..=c);
    candidates.insert(gold_index, gold_trajectory.to_string());
    Ok(RankingSample { sample_id, instruction_ref: instruction_ref.to_string(), candidates, gold_index })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlmSample {
    pub sample_id: String,
    pub pair_id: String,
    pub masked_positions: Vec<usize>,
    pub original_tokens: Vec<String>,
}

/// Masks each token independently with probability `p_mask`; if nothing was
/// picked, one uniformly chosen token is masked.
pub fn make_mlm_sample<R: Rng + ?Sized>(
    sample_id: String,
    pair_id: &str,
    tokens: &[String],
    p_mask: f64,
    rng: &mut R,
) -> Result<MlmSample, SampleError> {
    if !(p_mask > 0.0 && p_mask < 1.0) {
        return Err(SampleError::BadMaskProb(p_mask));
    }
    if tokens.is_empty() {
        return Err(SampleError::NoTokens);
    }
    let mut masked_positions: Vec<usize> = (0..tokens.len()).filter(|_| rng.random_bool(p_mask)).collect();
    if masked_positions.is_empty() {
        masked_positions.push(rng.random_range(0..tokens.len()));
    }
    let original_tokens = masked_positions.iter().map(|&i| tokens[i].clone()).collect();
    Ok(MlmSample { sample_id, pair_id: pair_id.to_string(), masked_positions, original_tokens })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::trajectory::{MergedView, NodeKind, TrajectoryNode};

    pub(crate) fn traj(video: &str, kinds: &[NodeKind]) -> Trajectory {
        let nodes: Vec<TrajectoryNode> = kinds
            .iter()
            .enumerate()
            .map(|(i, &kind)| TrajectoryNode {
                kind,
                view: MergedView {
                    keyframe_id: i as u32,
                    merged_frame_ids: vec![i as u32],
                    object_union: vec![],
                    room_type: format!("room{i}"),
                },
                group_ref: (kind == NodeKind::Room).then_some(i),
                entropy_at_keyframe: 0.0,
                timestamp_s: i as f64,
                yaw_deg: None,
                action_to_next: None,
            })
            .collect();
        Trajectory {
            trajectory_id: format!("{video}-t00"),
            video_id: video.into(),
            k: nodes.len(),
            room_node_count: kinds.iter().filter(|k| **k == NodeKind::Room).count(),
            k_drawn: nodes.len(),
            rng_seed_used: 0,
            nodes,
        }
    }

    use NodeKind::{Room as R, Transition as T};

    fn src(t: &Trajectory) -> PairRef<'_> {
        PairRef { pair_id: "p", trajectory: t }
    }

    #[test]
    fn positive_is_identity() {
        let t = traj("v", &[R, T, R, R]);
        let s = make_positive(src(&t), "s".into());
        assert_eq!(s.node_order, vec![0, 1, 2, 3]);
        assert_eq!(s.label, 1);
        assert_eq!(s, make_positive(src(&t), "s".into()));
    }

    #[test]
    fn two_transitions_swap() {
        let t = traj("v", &[R, T, R, T, R]);
        let s = shuffle_transitions(src(&t), "s".into(), &mut seeded(0)).unwrap();
        assert_eq!(s.node_order, vec![0, 3, 2, 1, 4]);
        assert_eq!(s.label, 0);
        let t1 = traj("v", &[R, T, R, R]);
        assert_eq!(shuffle_transitions(src(&t1), "s".into(), &mut seeded(0)), Err(Inapplicable::TooFewTransitions(1)));
    }

    #[test]
    fn shuffle_all_k2_swaps() {
        let t = traj("v", &[R, R]);
        assert_eq!(shuffle_all(src(&t), "s".into(), &mut seeded(9)).unwrap().node_order, vec![1, 0]);
        let t5 = traj("v", &[R, T, R, T, R]);
        assert_eq!(
            shuffle_all(src(&t5), "s".into(), &mut seeded(5)),
            shuffle_all(src(&t5), "s".into(), &mut seeded(5))
        );
    }

    #[test]
    fn shuffle_all_never_identity() {
        let t = traj("v", &[R, T, R, R]);
        let mut rng = seeded(11);
        for _ in 0..10_000 {
            assert!(!shuffle_all(src(&t), "s".into(), &mut rng).unwrap().is_identity());
        }
    }

    #[test]
    fn insert_foreign_contracts() {
        let t = traj("v", &[R, T, R, T, R]);
        let same = DonorPool::from_trajectories([&traj("v", &[R, R, R, R])]);
        assert_eq!(insert_foreign(src(&t), &same, "s".into(), &mut seeded(0)), Err(Inapplicable::NoForeignDonors));

        let other = traj("w", &[R, T, R, R]);
        let pool = DonorPool::from_trajectories([&t, &other]);
        let s = insert_foreign(src(&t), &pool, "s".into(), &mut seeded(0)).unwrap();
        let foreign = s.foreign_nodes.as_ref().unwrap();
        assert_eq!(foreign.len(), 2);
        assert!(foreign.iter().all(|f| f.donor_video_id == "w"));
        assert_eq!(s.node_order, vec![0, 5, 2, 6, 4]);
        assert!(!s.is_identity());

        let no_trans = traj("v", &[R, R, R, R]);
        assert_eq!(
            insert_foreign(src(&no_trans), &pool, "s".into(), &mut seeded(0)),
            Err(Inapplicable::NoTransitionSlots)
        );
    }

    #[test]
    fn negative_counts() {
        let t = traj("v", &[R, T, R, T, R]);
        let pool = DonorPool::from_trajectories([&traj("w", &[R, R, R, R])]);
        let (neg, diags) = make_negatives(src(&t), &pool, &mut seeded(0), &NegativeCounts::default());
        assert_eq!(neg.len(), 3);
        assert!(diags.is_empty());
        let strategies: Vec<Strategy> = neg.iter().map(|s| s.strategy).collect();
        assert_eq!(strategies, Strategy::NEGATIVES.to_vec());

        let flat = traj("v", &[R, R, R, R]);
        let (neg, diags) = make_negatives(src(&flat), &pool, &mut seeded(0), &NegativeCounts::default());
        assert_eq!(neg.len(), 1);
        assert_eq!(neg[0].strategy, Strategy::ShuffleAll);
        assert_eq!(diags.len(), 2);

        let (neg, _) = make_negatives(src(&t), &pool, &mut seeded(0), &NegativeCounts::zero());
        assert!(neg.is_empty());

        let s = summarize(&neg);
        assert_eq!((s.n_pos, s.n_neg), (0, 0));
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("vid{i:03}")).collect()
    }

    #[test]
    fn split_rounding() {
        let s = split_videos(&ids(20), 0.95, &mut seeded(1)).unwrap();
        assert_eq!((s.train_videos.len(), s.test_videos.len()), (19, 1));
        assert!(s.warning().is_none());

        let s = split_videos(&ids(1), 0.95, &mut seeded(1)).unwrap();
        assert_eq!((s.train_videos.len(), s.test_videos.len()), (1, 0));
        assert!(s.warning().is_some());

        assert_eq!(split_videos(&ids(20), 0.95, &mut seeded(4)), split_videos(&ids(20), 0.95, &mut seeded(4)));
        assert_eq!(split_videos(&[], 0.95, &mut seeded(4)), Err(SampleError::EmptyCorpus));
        assert_eq!(split_videos(&ids(3), 1.0, &mut seeded(4)), Err(SampleError::BadFraction(1.0)));
    }

    #[test]
    fn ranking_sets() {
        let pool: Vec<String> = ids(6);
        let r = make_ranking_set("r".into(), "p", "vid000", &pool, 0, &mut seeded(0)).unwrap();
        assert_eq!((r.candidates.len(), r.gold_index), (1, 0));

        for seed in 0..50 {
            let r = make_ranking_set("r".into(), "p", "vid000", &pool, 3, &mut seeded(seed)).unwrap();
            assert_eq!(r.candidates.len(), 4);
            assert!(r.gold_index <= 3);
            assert_eq!(r.candidates[r.gold_index], "vid000");
            assert_eq!(r.candidates.iter().filter(|c| *c == "vid000").count(), 1);
            assert_eq!(r.candidates.iter().collect::<BTreeSet<_>>().len(), 4);
        }
        assert_eq!(
            make_ranking_set("r".into(), "p", "vid000", &pool, 6, &mut seeded(0)),
            Err(SampleError::PoolTooSmall { requested: 6, available: 5 })
        );
    }

    #[test]
    fn mlm_forcing_and_sorting() {
        let tokens: Vec<String> = "walk past the sofa".split(' ').map(String::from).collect();
        let s = make_mlm_sample("m".into(), "p", &tokens, 1e-12, &mut seeded(0)).unwrap();
        assert_eq!(s.masked_positions.len(), 1);
        assert_eq!(s.original_tokens[0], tokens[s.masked_positions[0]]);

        let s = make_mlm_sample("m".into(), "p", &tokens, 0.9, &mut seeded(2)).unwrap();
        assert!(s.masked_positions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(make_mlm_sample("m".into(), "p", &[], 0.15, &mut seeded(0)), Err(SampleError::NoTokens));
        assert_eq!(make_mlm_sample("m".into(), "p", &tokens, 0.0, &mut seeded(0)), Err(SampleError::BadMaskProb(0.0)));
    }

    /// Monte Carlo against the exact expectation: for n tokens and mask
    /// probability p, E[#masked] = n p + (1 - p)^n.
    #[test]
    fn mlm_mask_rate() {
        let tokens: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let mut rng = seeded(2024);
        let trials = 10_000;
        let total: usize = (0..trials)
            .map(|_| make_mlm_sample("m".into(), "p", &tokens, 0.15, &mut rng).unwrap().masked_positions.len())
            .sum();
        let mean = total as f64 / trials as f64;
        let expected = 10.0 * 0.15 + 0.85f64.powi(10);
        assert!((expected - 1.6969).abs() < 1e-3);
        assert!((mean - 1.5).abs() < 0.1 + 0.85f64.powi(10), "mean {mean}");
        assert!((mean - expected).abs() < 0.05, "mean {mean} vs {expected}");
    }
}
