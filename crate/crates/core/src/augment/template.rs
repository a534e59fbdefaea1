use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{BodyPart, LEFT_HAND, PELVIS, RIGHT_HAND};
use crate::uvocab::{is_slot_marker, split_words};

/// Typed placeholders allowed in prompt text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    Track,
    Time,
    Occlusion,
    State,
    StateN,
    State1,
    Caption,
    Motion,
}

impl Slot {
    pub const ALL: [Slot; 8] =
        [Slot::Track, Slot::Time, Slot::Occlusion, Slot::State, Slot::StateN, Slot::State1, Slot::Caption, Slot::Motion];

    pub fn marker(self) -> &'static str {
        match self {
            Slot::Track => "<Track>",
            Slot::Time => "<Time>",
            Slot::Occlusion => "<Occlusion>",
            Slot::State => "<State>",
            Slot::StateN => "<StateN>",
            Slot::State1 => "<State1>",
            Slot::Caption => "<Caption>",
            Slot::Motion => "<Motion>",
        }
    }

    pub fn from_marker(s: &str) -> Option<Slot> {
        Self::ALL.into_iter().find(|x| x.marker() == s)
    }

    fn is_state(self) -> bool {
        matches!(self, Slot::State | Slot::StateN | Slot::State1)
    }
}

/// What the answer of a record is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerSpec {
    /// The whole tokenized clip.
    Motion,
    /// Waypoint bins of one joint.
    Track,
    /// Clip length as a numeral.
    Time,
    /// The five codes of the first frame.
    StateFirst,
    /// The five codes of the last frame.
    StateLast,
}

impl AnswerSpec {
    pub fn name(self) -> &'static str {
        match self {
            AnswerSpec::Motion => "motion",
            AnswerSpec::Track => "track",
            AnswerSpec::Time => "time",
            AnswerSpec::StateFirst => "state-first",
            AnswerSpec::StateLast => "state-last",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [AnswerSpec::Motion, AnswerSpec::Track, AnswerSpec::Time, AnswerSpec::StateFirst, AnswerSpec::StateLast]
            .into_iter()
            .find(|a| a.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackJoint {
    Pelvis,
    LeftHand,
    RightHand,
}

impl TrackJoint {
    pub fn joint_index(self) -> usize {
        match self {
            TrackJoint::Pelvis => PELVIS,
            TrackJoint::LeftHand => LEFT_HAND,
            TrackJoint::RightHand => RIGHT_HAND,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrackJoint::Pelvis => "pelvis",
            TrackJoint::LeftHand => "left_hand",
            TrackJoint::RightHand => "right_hand",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [TrackJoint::Pelvis, TrackJoint::LeftHand, TrackJoint::RightHand].into_iter().find(|j| j.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    Frames,
    Seconds,
}

impl TimeUnit {
    pub fn name(self) -> &'static str {
        match self {
            TimeUnit::Frames => "frames",
            TimeUnit::Seconds => "seconds",
        }
    }
}

/// Task families. Each one fixes which slots a prompt must use and which
/// answers it may ask for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskFamily {
    CaptionToMotion,
    OcclusionToMotion,
    TrackToMotion,
    MotionToTrack,
    TimeToMotion,
    MotionToTime,
    StateToMotion,
    /// Describe the pose at one end of a clip.
    MotionToState,
    StateTimeToMotion,
    OcclusionCaptionToMotion,
    TrackCaptionToMotion,
    StateTrackCaptionToMotion,
    MotionTimeCaptionToMotion,
}

/// A required slot group: one concrete slot, or any of the three state slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Need {
    Slot(Slot),
    AnyState,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 13] = [
        TaskFamily::CaptionToMotion,
        TaskFamily::OcclusionToMotion,
        TaskFamily::TrackToMotion,
        TaskFamily::MotionToTrack,
        TaskFamily::TimeToMotion,
        TaskFamily::MotionToTime,
        TaskFamily::StateToMotion,
        TaskFamily::MotionToState,
        TaskFamily::StateTimeToMotion,
        TaskFamily::OcclusionCaptionToMotion,
        TaskFamily::TrackCaptionToMotion,
        TaskFamily::StateTrackCaptionToMotion,
        TaskFamily::MotionTimeCaptionToMotion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskFamily::CaptionToMotion => "caption->motion",
            TaskFamily::OcclusionToMotion => "occlusion->motion",
            TaskFamily::TrackToMotion => "track->motion",
            TaskFamily::MotionToTrack => "motion->track",
            TaskFamily::TimeToMotion => "time->motion",
            TaskFamily::MotionToTime => "motion->time",
            TaskFamily::StateToMotion => "state->motion",
            TaskFamily::MotionToState => "motion->state",
            TaskFamily::StateTimeToMotion => "state+time->motion",
            TaskFamily::OcclusionCaptionToMotion => "occlusion+caption->motion",
            TaskFamily::TrackCaptionToMotion => "track+caption->motion",
            TaskFamily::StateTrackCaptionToMotion => "state+track+caption->motion",
            TaskFamily::MotionTimeCaptionToMotion => "motion+time+caption->motion",
        }
    }

    fn needs(self) -> &'static [Need] {
        use Need::{AnyState, Slot as N};
        use Slot as S;
        match self {
            TaskFamily::CaptionToMotion => &[N(S::Caption)],
            TaskFamily::OcclusionToMotion => &[N(S::Occlusion)],
            TaskFamily::TrackToMotion => &[N(S::Track)],
            TaskFamily::MotionToTrack | TaskFamily::MotionToTime | TaskFamily::MotionToState => &[N(S::Motion)],
            TaskFamily::TimeToMotion => &[N(S::Time)],
            TaskFamily::StateToMotion => &[AnyState],
            TaskFamily::StateTimeToMotion => &[AnyState, N(S::Time)],
            TaskFamily::OcclusionCaptionToMotion => &[N(S::Occlusion), N(S::Caption)],
            TaskFamily::TrackCaptionToMotion => &[N(S::Track), N(S::Caption)],
            TaskFamily::StateTrackCaptionToMotion => &[AnyState, N(S::Track), N(S::Caption)],
            TaskFamily::MotionTimeCaptionToMotion => &[N(S::Motion), N(S::Time), N(S::Caption)],
        }
    }

    /// Slots a prompt of this family may contain.
    pub fn allowed_slots(self) -> Vec<Slot> {
        let mut out = Vec::new();
        for n in self.needs() {
            match n {
                Need::Slot(s) => out.push(*s),
                Need::AnyState => out.extend([Slot::State, Slot::State1, Slot::StateN]),
            }
        }
        out
    }

    pub fn allowed_answers(self) -> &'static [AnswerSpec] {
        match self {
            TaskFamily::MotionToTrack => &[AnswerSpec::Track],
            TaskFamily::MotionToTime => &[AnswerSpec::Time],
            TaskFamily::MotionToState => &[AnswerSpec::StateFirst, AnswerSpec::StateLast],
            _ => &[AnswerSpec::Motion],
        }
    }

    pub fn needs_caption(self) -> bool {
        self.needs().contains(&Need::Slot(Slot::Caption))
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown task family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub task: TaskFamily,
    pub id: u32,
    pub prompt: String,
    pub answer: AnswerSpec,
    /// Part to hide for `<Occlusion>`; drawn per record when absent.
    pub part: Option<BodyPart>,
    pub joint: TrackJoint,
    pub unit: TimeUnit,
    /// Slots in order of appearance.
    pub slots: Vec<Slot>,
    pub line: usize,
}

/// Splits a line on `|` outside double quotes.
fn split_fields(line: &str) -> std::result::Result<Vec<&str>, String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '|' if !quoted => {
                out.push(line[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    if quoted {
        return Err("unterminated quote".into());
    }
    out.push(line[start..].trim());
    Ok(out)
}

fn parse_line(line: &str, lineno: usize) -> Result<Template> {
    let err = |msg: String| Error::Template { line: lineno, msg };
    let mut task = None;
    let mut id = None;
    let mut prompt = None;
    let mut answer = None;
    let mut part = None;
    let mut joint = None;
    let mut unit = None;
    let mut seen = BTreeSet::new();
    for field in split_fields(line).map_err(err)? {
        let (key, value) = field.split_once(char::is_whitespace).ok_or_else(|| err(format!("field `{field}` has no value")))?;
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(err(format!("field {key} given twice")));
        }
        match key {
            "TASK" => task = Some(value.parse::<TaskFamily>().map_err(|e| err(e.to_string()))?),
            "ID" => id = Some(value.parse::<u32>().map_err(|_| err(format!("bad template id `{value}`")))?),
            "PROMPT" => {
                let text = value
                    .strip_prefix('"')
                    .and_then(|v| v.strip_suffix('"'))
                    .filter(|v| !v.contains('"'))
                    .ok_or_else(|| err("PROMPT must be one double-quoted string".into()))?;
                prompt = Some(text.to_string());
            }
            "ANSWER" => {
                answer = Some(AnswerSpec::from_name(value).ok_or_else(|| err(format!("unknown answer `{value}`")))?)
            }
            "PART" => part = Some(BodyPart::from_name(value).map_err(|_| err(format!("unknown part `{value}`")))?),
            "JOINT" => {
                joint = Some(TrackJoint::from_name(value).ok_or_else(|| err(format!("unknown track joint `{value}`")))?)
            }
            "UNIT" => {
                unit = Some(match value {
                    "frames" => TimeUnit::Frames,
                    "seconds" => TimeUnit::Seconds,
                    _ => return Err(err(format!("unknown unit `{value}`"))),
                })
            }
            _ => return Err(err(format!("unknown field `{key}`"))),
        }
    }
    let task = task.ok_or_else(|| err("missing TASK".into()))?;
    let id = id.ok_or_else(|| err("missing ID".into()))?;
    let prompt = prompt.ok_or_else(|| err("missing PROMPT".into()))?;
    let answer = answer.ok_or_else(|| err("missing ANSWER".into()))?;

    let mut slots = Vec::new();
    for tok in split_words(&prompt) {
        if is_slot_marker(&tok) {
            let slot = Slot::from_marker(&tok).ok_or_else(|| err(format!("unknown slot {tok}")))?;
            slots.push(slot);
        } else if tok.contains(['<', '>']) {
            return Err(err(format!("stray angle bracket in `{tok}`")));
        }
    }
    let allowed = task.allowed_slots();
    if let Some(s) = slots.iter().find(|s| !allowed.contains(s)) {
        return Err(err(format!("slot {} is not declared by task {task}", s.marker())));
    }
    for need in task.needs() {
        let ok = match need {
            Need::Slot(s) => slots.contains(s),
            Need::AnyState => slots.iter().any(|s| s.is_state()),
        };
        if !ok {
            let what = match need {
                Need::Slot(s) => s.marker(),
                Need::AnyState => "a state slot",
            };
            return Err(err(format!("task {task} requires {what} in the prompt")));
        }
    }
    if !task.allowed_answers().contains(&answer) {
        return Err(err(format!("answer {} is not valid for task {task}", answer.name())));
    }
    let has = |s: Slot| slots.contains(&s);
    if matches!(answer, AnswerSpec::Track | AnswerSpec::Time | AnswerSpec::StateFirst | AnswerSpec::StateLast)
        && !has(Slot::Motion)
    {
        return Err(err(format!("answer {} depends on <Motion>, which the prompt lacks", answer.name())));
    }
    if part.is_some() && !has(Slot::Occlusion) {
        return Err(err("PART needs an <Occlusion> slot".into()));
    }
    if joint.is_some() && !has(Slot::Track) && answer != AnswerSpec::Track {
        return Err(err("JOINT needs a <Track> slot or a track answer".into()));
    }
    if unit.is_some() && !has(Slot::Time) && answer != AnswerSpec::Time {
        return Err(err("UNIT needs a <Time> slot or a time answer".into()));
    }
    Ok(Template {
        task,
        id,
        prompt,
        answer,
        part,
        joint: joint.unwrap_or(TrackJoint::Pelvis),
        unit: unit.unwrap_or(TimeUnit::Frames),
        slots,
        line: lineno,
    })
}

/// Parses the template DSL. Blank lines and `#` comments are ignored.
pub fn parse_templates(text: &str) -> Result<Vec<Template>> {
    let mut out: Vec<Template> = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t = parse_line(line, i + 1)?;
        if !ids.insert(t.id) {
            return Err(Error::Template { line: i + 1, msg: format!("duplicate template id {}", t.id) });
        }
        out.push(t);
    }
    if out.is_empty() {
        log::warn!("template file contains no templates");
    }
    Ok(out)
}

pub fn load_templates(path: &Path) -> Result<Vec<Template>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    parse_templates(&std::fs::read_to_string(path)?)
}

/// The template file shipped with the crate.
pub const DEFAULT_TEMPLATES: &str = include_str!("../../assets/templates.hvt");

pub fn default_templates() -> Vec<Template> {
    parse_templates(DEFAULT_TEMPLATES).expect("shipped templates parse")
}
