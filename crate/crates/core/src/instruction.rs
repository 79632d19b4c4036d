//! Instruction rendering: fill-in-the-blank templates, node captions and
//! action words.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::Action;
use crate::trajectory::{NodeKind, Trajectory, TrajectoryNode};

pub const NOUN_PLACEHOLDER: &str = "{NP}";
pub const VERB_PLACEHOLDER: &str = "{VP}";

/// Heading change (degrees) beyond which a move counts as a turn.
pub const TURN_THRESHOLD_DEG: f64 = 30.0;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("template file contains no templates")]
    EmptyTemplateFile,
    #[error("reading templates: {0}")]
    Io(#[from] std::io::Error),
    #[error("no template with {0} noun blanks")]
    NoTemplateForR(usize),
    #[error("template {template_id} has {nouns} noun blanks but {captions} captions were given")]
    CaptionCount { template_id: String, nouns: usize, captions: usize },
    #[error("template {template_id} has {verbs} verb blanks but {actions} actions were given")]
    ActionCount { template_id: String, verbs: usize, actions: usize },
    #[error("node {slot} has no action label and no usable yaw pair with the next room node")]
    Unactionable { slot: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlankKind {
    Noun,
    Verb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Blank {
    /// Character offset of the placeholder in the template text.
    pub position: usize,
    pub kind: BlankKind,
    byte_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionTemplate {
    pub template_id: String,
    pub text: String,
    pub blanks: Vec<Blank>,
    pub noun_count: usize,
    pub verb_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRejection {
    pub line: usize,
    pub reason: String,
}

impl InstructionTemplate {
    /// Scans a template line for `{NP}` / `{VP}` placeholders. Returns the
    /// rejection reason when the blank counts are inconsistent.
    pub fn parse(template_id: impl Into<String>, text: &str) -> Result<Self, String> {
        let mut blanks = Vec::new();
        let mut chars = 0;
        let mut rest = text;
        let mut byte = 0;
        while !rest.is_empty() {
            let kind = if rest.starts_with(NOUN_PLACEHOLDER) {
                Some(BlankKind::Noun)
            } else if rest.starts_with(VERB_PLACEHOLDER) {
                Some(BlankKind::Verb)
            } else {
                None
            };
            let step = match kind {
                Some(kind) => {
                    blanks.push(Blank { position: chars, kind, byte_offset: byte });
                    NOUN_PLACEHOLDER.len()
                }
                None => rest.chars().next().map_or(1, char::len_utf8),
            };
            chars += rest[..step].chars().count();
            byte += step;
            rest = &rest[step..];
        }
        let noun_count = blanks.iter().filter(|b| b.kind == BlankKind::Noun).count();
        let verb_count = blanks.len() - noun_count;
        if noun_count == 0 {
            return Err("template has no noun blanks".into());
        }
        if verb_count + 1 != noun_count {
            return Err(format!("{noun_count} noun blanks need {} verb blanks, found {verb_count}", noun_count - 1));
        }
        Ok(Self { template_id: template_id.into(), text: text.to_string(), blanks, noun_count, verb_count })
    }

    fn positions(&self, kind: BlankKind) -> impl Iterator<Item = (usize, &Blank)> {
        self.blanks.iter().enumerate().filter(move |(_, b)| b.kind == kind)
    }
}

/// Parses a template file, one template per line. Inconsistent lines are
/// reported, not fatal.
pub fn parse_templates<R: BufRead>(
    reader: R,
) -> Result<(Vec<InstructionTemplate>, Vec<TemplateRejection>), ForgeError> {
    let mut templates = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        match InstructionTemplate::parse(format!("tpl-{:05}", i + 1), text) {
            Ok(t) => templates.push(t),
            Err(reason) => rejected.push(TemplateRejection { line: i + 1, reason }),
        }
    }
    if templates.is_empty() && rejected.is_empty() {
        return Err(ForgeError::EmptyTemplateFile);
    }
    Ok((templates, rejected))
}

/// Templates indexed by noun-blank count.
#[derive(Debug, Clone, Default)]
pub struct TemplateBank {
    templates: Vec<InstructionTemplate>,
    by_nouns: BTreeMap<usize, Vec<usize>>,
}

impl TemplateBank {
    pub fn new(templates: Vec<InstructionTemplate>) -> Self {
        let mut by_nouns: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, t) in templates.iter().enumerate() {
            by_nouns.entry(t.noun_count).or_default().push(i);
        }
        Self { templates, by_nouns }
    }

    pub fn with_nouns(&self, r: usize) -> impl Iterator<Item = &InstructionTemplate> {
        self.by_nouns.get(&r).into_iter().flatten().map(|&i| &self.templates[i])
    }

    pub fn noun_counts(&self) -> Vec<usize> {
        self.by_nouns.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionForm {
    RoomWithObject,
    RoomOnly,
    ObjectOnly,
}

impl CaptionForm {
    pub const ALL: [CaptionForm; 3] = [CaptionForm::RoomWithObject, CaptionForm::RoomOnly, CaptionForm::ObjectOnly];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCaption {
    pub node_ref: usize,
    pub room: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    pub form: CaptionForm,
    pub text: String,
}

impl NodeCaption {
    pub fn render(room: &str, object: Option<&str>, form: CaptionForm) -> String {
        match (form, object) {
            (CaptionForm::RoomWithObject, Some(o)) => format!("{room} with {o}"),
            (CaptionForm::ObjectOnly, Some(o)) => o.to_string(),
            _ => room.to_string(),
        }
    }
}

/// Captions a room node. Nodes without objects always get the bare room
/// label; otherwise the form is drawn uniformly.
pub fn caption_node<R: Rng + ?Sized>(node: &TrajectoryNode, node_ref: usize, rng: &mut R) -> NodeCaption {
    let room = node.view.room_type.clone();
    let object = node.view.top_object().map(|o| o.label.clone());
    let form = match object {
        Some(_) => CaptionForm::ALL[rng.random_range(0..CaptionForm::ALL.len())],
        None => CaptionForm::RoomOnly,
    };
    let text = NodeCaption::render(&room, object.as_deref(), form);
    NodeCaption { node_ref, room, object, form, text }
}

/// One of the three navigation verbs, serialized as its phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ActionWord(pub Action);

impl ActionWord {
    pub fn text(self) -> &'static str {
        match self.0 {
            Action::Forward => "go forward",
            Action::Left => "turn left",
            Action::Right => "turn right",
        }
    }

    pub fn from_text(text: &str) -> Option<Self> {
        Action::ALL.into_iter().map(ActionWord).find(|a| a.text() == text)
    }
}

impl fmt::Display for ActionWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

impl From<ActionWord> for String {
    fn from(a: ActionWord) -> Self {
        a.text().to_string()
    }
}

impl TryFrom<String> for ActionWord {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::from_text(&s).ok_or_else(|| format!("unknown action phrase {s:?}"))
    }
}

/// Wraps a heading difference into (-180, 180].
pub fn wrap_degrees(delta: f64) -> f64 {
    let r = delta.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Action that takes the agent from node `a` to node `b`: the annotated
/// label on `a`'s keyframe if present, else the yaw-difference fallback.
pub fn infer_action(a: &TrajectoryNode, b: &TrajectoryNode) -> Option<ActionWord> {
    if let Some(action) = a.action_to_next {
        return Some(ActionWord(action));
    }
    let (ya, yb) = (a.yaw_deg?, b.yaw_deg?);
    let delta = wrap_degrees(yb - ya);
    let action = if delta < -TURN_THRESHOLD_DEG {
        Action::Left
    } else if delta > TURN_THRESHOLD_DEG {
        Action::Right
    } else {
        Action::Forward
    };
    Some(ActionWord(action))
}

/// Fills noun blanks with captions in order, and gives action `i` to the
/// still-unfilled verb blank closest (in characters of the original text) to
/// noun blank `i`, earlier blank on ties.
pub fn fill_template(
    template: &InstructionTemplate,
    captions: &[String],
    actions: &[ActionWord],
) -> Result<String, ForgeError> {
    if captions.len() != template.noun_count {
        return Err(ForgeError::CaptionCount {
            template_id: template.template_id.clone(),
            nouns: template.noun_count,
            captions: captions.len(),
        });
    }
    if actions.len() != template.verb_count {
        return Err(ForgeError::ActionCount {
            template_id: template.template_id.clone(),
            verbs: template.verb_count,
            actions: actions.len(),
        });
    }

    let mut fill: Vec<Option<&str>> = vec![None; template.blanks.len()];
    for (n, (slot, _)) in template.positions(BlankKind::Noun).enumerate() {
        fill[slot] = Some(captions[n].as_str());
    }
    let nouns: Vec<&Blank> = template.positions(BlankKind::Noun).map(|(_, b)| b).collect();
    for (i, action) in actions.iter().enumerate() {
        let anchor = nouns[i].position;
        let target = template
            .positions(BlankKind::Verb)
            .filter(|(slot, _)| fill[*slot].is_none())
            .min_by_key(|(_, b)| b.position.abs_diff(anchor))
            .map(|(slot, _)| slot)
            .expect("verb blanks outnumber assigned actions");
        fill[target] = Some(action.text());
    }

    let mut out = String::with_capacity(template.text.len() + 16 * template.blanks.len());
    let mut cursor = 0;
    for (blank, value) in template.blanks.iter().zip(fill) {
        out.push_str(&template.text[cursor..blank.byte_offset]);
        out.push_str(value.expect("every blank is assigned"));
        cursor = blank.byte_offset + NOUN_PLACEHOLDER.len();
    }
    out.push_str(&template.text[cursor..]);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathInstructionPair {
    pub pair_id: String,
    pub trajectory_id: String,
    pub template_id: String,
    pub instruction: String,
    pub captions: Vec<NodeCaption>,
    pub actions: Vec<ActionWord>,
}

/// Captions and actions for the room nodes of a trajectory, in order.
pub fn caption_and_act<R: Rng + ?Sized>(
    trajectory: &Trajectory,
    rng: &mut R,
) -> Result<(Vec<NodeCaption>, Vec<ActionWord>), ForgeError> {
    let rooms: Vec<(usize, &TrajectoryNode)> =
        trajectory.nodes.iter().enumerate().filter(|(_, n)| n.kind == NodeKind::Room).collect();
    let mut actions = Vec::with_capacity(rooms.len().saturating_sub(1));
    for pair in rooms.windows(2) {
        let (slot, a) = pair[0];
        let (_, b) = pair[1];
        actions.push(infer_action(a, b).ok_or(ForgeError::Unactionable { slot })?);
    }
    let captions = rooms.iter().map(|(slot, n)| caption_node(n, *slot, rng)).collect();
    Ok((captions, actions))
}

pub fn generate_pair<R: Rng + ?Sized>(
    trajectory: &Trajectory,
    bank: &TemplateBank,
    rng: &mut R,
) -> Result<PathInstructionPair, ForgeError> {
    let r = trajectory.room_node_count;
    let candidates: Vec<&InstructionTemplate> = bank.with_nouns(r).collect();
    if candidates.is_empty() {
        return Err(ForgeError::NoTemplateForR(r));
    }
    let template = candidates[rng.random_range(0..candidates.len())];
    let (captions, actions) = caption_and_act(trajectory, rng)?;
    let texts: Vec<String> = captions.iter().map(|c| c.text.clone()).collect();
    let instruction = fill_template(template, &texts, &actions)?;
    Ok(PathInstructionPair {
        pair_id: format!("{}-p", trajectory.trajectory_id),
        trajectory_id: trajectory.trajectory_id.clone(),
        template_id: template.template_id.clone(),
        instruction,
        captions,
        actions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::DetectedObject;
    use crate::rng::seeded;
    use crate::trajectory::MergedView;

    fn tpl(text: &str) -> InstructionTemplate {
        InstructionTemplate::parse("t", text).unwrap()
    }

    fn node(room: &str, objects: &[(&str, f64)], yaw: Option<f64>, action: Option<Action>, t: f64) -> TrajectoryNode {
        TrajectoryNode {
            kind: NodeKind::Room,
            view: MergedView {
                keyframe_id: t as u32,
                merged_frame_ids: vec![t as u32],
                object_union: objects.iter().map(|(l, s)| DetectedObject { label: l.to_string(), score: *s }).collect(),
                room_type: room.into(),
            },
            group_ref: Some(t as usize),
            entropy_at_keyframe: 0.1,
            timestamp_s: t,
            yaw_deg: yaw,
            action_to_next: action,
        }
    }

    fn trajectory(nodes: Vec<TrajectoryNode>) -> Trajectory {
        let r = nodes.iter().filter(|n| n.kind == NodeKind::Room).count();
        Trajectory {
            trajectory_id: "v-t00".into(),
            video_id: "v".into(),
            k: nodes.len(),
            room_node_count: r,
            k_drawn: nodes.len(),
            rng_seed_used: 0,
            nodes,
        }
    }

    #[test]
    fn parse_counts_blanks() {
        let t = tpl("walk past the {NP} and {VP} into the {NP}");
        assert_eq!((t.noun_count, t.verb_count), (2, 1));
        assert_eq!(t.blanks.iter().map(|b| b.position).collect::<Vec<_>>(), vec![14, 23, 37]);
        assert!(InstructionTemplate::parse("t", "{NP} {VP} {VP} {NP}").is_err());
        assert!(InstructionTemplate::parse("t", "go straight").is_err());
    }

    #[test]
    fn parse_file_reports_invalid_lines() {
        let text = "{NP}\nexit the {NP} and {VP} to the {NP}\n{NP} {VP} {VP} {NP}\n\nstop at {NP}\n";
        let (templates, rejected) = parse_templates(text.as_bytes()).unwrap();
        assert_eq!(templates.len(), 3);
        assert_eq!(rejected.len(), 1);
        assert_eq!(rejected[0].line, 3);
        assert!(matches!(parse_templates("".as_bytes()), Err(ForgeError::EmptyTemplateFile)));
        assert!(matches!(parse_templates("\n  \n".as_bytes()), Err(ForgeError::EmptyTemplateFile)));
    }

    #[test]
    fn fill_worked_example() {
        let t = tpl("walk past the {NP} and {VP} into the {NP}");
        let s = fill_template(&t, &["sofa".into(), "kitchen".into()], &[ActionWord(Action::Left)]).unwrap();
        assert_eq!(s, "walk past the sofa and turn left into the kitchen");
    }

    #[test]
    fn fill_single_noun() {
        let t = tpl("stop in the {NP}.");
        assert_eq!(fill_template(&t, &["office".into()], &[]).unwrap(), "stop in the office.");
    }

    #[test]
    fn fill_errors_on_count_mismatch() {
        let t = tpl("walk past the {NP} and {VP} into the {NP}");
        assert!(matches!(
            fill_template(&t, &["a".into()], &[ActionWord(Action::Left)]),
            Err(ForgeError::CaptionCount { .. })
        ));
        assert!(matches!(fill_template(&t, &["a".into(), "b".into()], &[]), Err(ForgeError::ActionCount { .. })));
    }

    /// Distance enumeration for the tie case: `{VP}` blanks at equal
    /// distance on both sides of the first noun blank.
    #[test]
    fn fill_tie_goes_to_earlier_verb_blank() {
        let t = tpl("{VP} x {NP} x {VP} then {NP} and {NP}");
        let noun0 = t.blanks[1].position;
        let d: Vec<usize> =
            t.blanks.iter().filter(|b| b.kind == BlankKind::Verb).map(|b| b.position.abs_diff(noun0)).collect();
        assert_eq!(d[0], d[1]);
        let s = fill_template(
            &t,
            &["a".into(), "b".into(), "c".into()],
            &[ActionWord(Action::Left), ActionWord(Action::Right)],
        )
        .unwrap();
        assert_eq!(s, "turn left x a x turn right then b and c");
    }

    #[test]
    fn fill_measures_on_original_offsets() {
        // noun 0 is far from both verb blanks; noun 1 sits next to the second
        let t = tpl("{NP} aaaaaaaaaaaaaaaaaaaa {VP} b {VP} {NP} c {NP}");
        let s = fill_template(
            &t,
            &["long caption here".into(), "y".into(), "z".into()],
            &[ActionWord(Action::Forward), ActionWord(Action::Right)],
        )
        .unwrap();
        assert_eq!(s, "long caption here aaaaaaaaaaaaaaaaaaaa go forward b turn right y c z");
    }

    #[test]
    fn action_inference_rules() {
        let a = node("kitchen", &[], Some(10.0), Some(Action::Left), 0.0);
        let b = node("hallway", &[], Some(20.0), None, 1.0);
        assert_eq!(infer_action(&a, &b).unwrap().text(), "turn left");

        let a = node("kitchen", &[], Some(10.0), None, 0.0);
        assert_eq!(infer_action(&a, &b).unwrap().text(), "go forward");

        let a = node("kitchen", &[], Some(170.0), None, 0.0);
        let b = node("hallway", &[], Some(-170.0), None, 1.0);
        assert_eq!(wrap_degrees(-170.0 - 170.0), 20.0);
        assert_eq!(infer_action(&a, &b).unwrap().text(), "go forward");

        let b = node("hallway", &[], Some(-100.0), None, 1.0);
        // -270 wraps to +90
        assert_eq!(infer_action(&a, &b).unwrap().0, Action::Right);
        let b = node("hallway", &[], Some(120.0), None, 1.0);
        assert_eq!(infer_action(&a, &b).unwrap().0, Action::Left);

        let b = node("hallway", &[], None, None, 1.0);
        assert!(infer_action(&a, &b).is_none());
    }

    #[test]
    fn wrap_range_table() {
        for (d, w) in [(0.0, 0.0), (180.0, 180.0), (-180.0, 180.0), (190.0, -170.0), (-190.0, 170.0), (359.0, -1.0)] {
            assert_eq!(wrap_degrees(d), w, "{d}");
        }
    }

    #[test]
    fn action_word_is_bijective() {
        for a in Action::ALL {
            assert_eq!(ActionWord::from_text(ActionWord(a).text()), Some(ActionWord(a)));
        }
        let json = serde_json::to_string(&ActionWord(Action::Right)).unwrap();
        assert_eq!(json, "\"turn right\"");
    }

    #[test]
    fn captions() {
        let n = node("kitchen", &[("oven", 0.9), ("cup", 0.2)], None, None, 0.0);
        assert_eq!(NodeCaption::render("kitchen", Some("oven"), CaptionForm::RoomWithObject), "kitchen with oven");
        let c = caption_node(&n, 0, &mut seeded(3));
        assert_eq!(c.object.as_deref(), Some("oven"));
        assert_eq!(c.text, NodeCaption::render("kitchen", Some("oven"), c.form));
        assert_eq!(c, caption_node(&n, 0, &mut seeded(3)));

        let bare = node("kitchen", &[], None, None, 0.0);
        let c = caption_node(&bare, 0, &mut seeded(3));
        assert_eq!((c.text.as_str(), c.form), ("kitchen", CaptionForm::RoomOnly));

        let mut seen = std::collections::HashSet::new();
        for s in 0..64 {
            seen.insert(caption_node(&n, 0, &mut seeded(s)).form);
        }
        assert_eq!(seen.len(), 3);
    }

    fn bank(lines: &str) -> TemplateBank {
        TemplateBank::new(parse_templates(lines.as_bytes()).unwrap().0)
    }

    #[test]
    fn generate_pair_contracts() {
        let t = trajectory(vec![
            node("kitchen", &[("oven", 0.9)], Some(0.0), None, 0.0),
            node("hallway", &[], Some(90.0), None, 1.0),
        ]);
        let b = bank("walk past the {NP} and {VP} into the {NP}\nstop at {NP}\n");
        let pair = generate_pair(&t, &b, &mut seeded(1)).unwrap();
        assert_eq!(pair.template_id, "tpl-00001");
        assert_eq!(pair.actions, vec![ActionWord(Action::Right)]);
        assert!(pair.instruction.contains("turn right"));
        assert!(pair.instruction.ends_with("into the hallway"));
        assert!(!pair.instruction.contains('{'));
        assert_eq!(pair, generate_pair(&t, &b, &mut seeded(1)).unwrap());

        let t3 = trajectory(vec![
            node("kitchen", &[], Some(0.0), None, 0.0),
            node("hallway", &[], Some(0.0), None, 1.0),
            node("office", &[], Some(0.0), None, 2.0),
        ]);
        let err = generate_pair(&t3, &b, &mut seeded(1)).unwrap_err();
        assert!(matches!(err, ForgeError::NoTemplateForR(3)));
        assert!(err.to_string().contains('3'));

        let no_yaw = trajectory(vec![node("kitchen", &[], None, None, 0.0), node("hallway", &[], None, None, 1.0)]);
        assert!(matches!(generate_pair(&no_yaw, &b, &mut seeded(1)), Err(ForgeError::Unactionable { slot: 0 })));
    }

    #[test]
    fn transition_nodes_get_no_captions() {
        let mut trans = node("closet", &[("box", 0.5)], Some(0.0), None, 1.0);
        trans.kind = NodeKind::Transition;
        trans.group_ref = None;
        let t = trajectory(vec![
            node("kitchen", &[], Some(0.0), Some(Action::Forward), 0.0),
            trans,
            node("hallway", &[], Some(0.0), None, 2.0),
        ]);
        let (captions, actions) = caption_and_act(&t, &mut seeded(0)).unwrap();
        assert_eq!(captions.iter().map(|c| c.node_ref).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(actions.len(), 1);
    }
}
