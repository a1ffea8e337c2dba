//! Answer parsing. Unparseable, refused or hedged answers come back as an
//! invalid value rather than an error.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::{Action, Transparency, ViscosityClass, VisualDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairwiseDecision {
    Left,
    Right,
    Invalid,
}

impl PairwiseDecision {
    pub fn flipped(self) -> Self {
        match self {
            PairwiseDecision::Left => PairwiseDecision::Right,
            PairwiseDecision::Right => PairwiseDecision::Left,
            PairwiseDecision::Invalid => PairwiseDecision::Invalid,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairwiseDecision::Left => "left",
            PairwiseDecision::Right => "right",
            PairwiseDecision::Invalid => "invalid",
        }
    }
}

macro_rules! regex {
    ($re:literal) => {{
        static RE: OnceLock<Regex> = OnceLock::new();
        RE.get_or_init(|| Regex::new($re).unwrap())
    }};
}

fn sentences(text: &str) -> Vec<String> {
    regex!(r"[.!?;\n](?:\s|$)|\n")
        .split(&text.to_lowercase())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn is_refusal(sentence: &str) -> bool {
    regex!(r"\b(cannot|can't|can not|unable|impossible|sorry|refuse|not possible|as an ai|no way to tell|indeterminate)\b").is_match(sentence)
}

fn is_hedged(sentence: &str) -> bool {
    regex!(r"\b(could|might|may|possibly|perhaps|either|or|whether|not sure|uncertain|unclear|hard to say|difficult to say)\b").is_match(sentence)
}

fn committed(sentence: &str) -> bool {
    !is_refusal(sentence) && !is_hedged(sentence)
}

/// Viscosity classes named in one sentence; `None` marks a self-contradictory
/// range such as "low to high".
fn classes_in(sentence: &str) -> Option<HashSet<ViscosityClass>> {
    use ViscosityClass::*;
    let mut s = regex!(r"\bnot\s+(?:very\s+|particularly\s+)?(low|moderate|moderately|medium|high|highly)\b").replace_all(sentence, " ").into_owned();
    let mut found = HashSet::new();
    let mut contradiction = false;

    let ranges = regex!(r"\b(low|moderate|medium)(?:ly)?\s*(?:-|–|to)\s*(moderate|medium|high)\b");
    for c in ranges.captures_iter(&s) {
        let is_low = &c[1] == "low";
        let is_high = &c[2] == "high";
        match (is_low, is_high) {
            (true, false) => found.insert(ModerateLow),
            (false, true) => found.insert(ModerateHigh),
            (true, true) => {
                contradiction = true;
                false
            }
            (false, false) => found.insert(Moderate),
        };
    }
    s = ranges.replace_all(&s, " ").into_owned();

    let moderately = regex!(r"\bmoderately\s+(high|low)\b");
    for c in moderately.captures_iter(&s) {
        found.insert(if &c[1] == "high" { ModerateHigh } else { ModerateLow });
    }
    s = moderately.replace_all(&s, " ").into_owned();

    let strong = regex!(r"\b(highly|very|extremely)\s+(viscous|thick)\b");
    if strong.is_match(&s) {
        found.insert(High);
    }
    s = strong.replace_all(&s, " ").into_owned();

    for c in regex!(r"\b(low|moderate|moderately|medium|high)\b").captures_iter(&s) {
        found.insert(match &c[1] {
            "low" => Low,
            "high" => High,
            _ => Moderate,
        });
    }
    (!contradiction).then_some(found)
}

/// Extracts a committed viscosity class. Hedged or refusing sentences are
/// ignored; more than one committed class is a contradiction.
pub fn parse_viscosity(text: &str) -> ViscosityClass {
    let mut all = HashSet::new();
    for sentence in sentences(text).iter().filter(|s| committed(s)) {
        match classes_in(sentence) {
            Some(found) => all.extend(found),
            None => return ViscosityClass::Invalid,
        }
    }
    if all.len() == 1 {
        *all.iter().next().unwrap()
    } else {
        ViscosityClass::Invalid
    }
}

fn side_at(sentence: &str, at: usize, flip: bool) -> Option<PairwiseDecision> {
    let sides: Vec<(usize, PairwiseDecision)> = regex!(r"\b(left|right)\b")
        .captures_iter(sentence)
        .map(|c| {
            let m = c.get(1).unwrap();
            (m.start(), if m.as_str() == "left" { PairwiseDecision::Left } else { PairwiseDecision::Right })
        })
        .collect();
    let before = sides.iter().rev().find(|(p, _)| *p < at);
    let after = sides.iter().find(|(p, _)| *p > at);
    let side = before.or(after).map(|(_, s)| *s)?;
    Some(if flip { side.flipped() } else { side })
}

/// Decides which side of a pair the answer calls more viscous.
pub fn parse_pairwise(text: &str) -> PairwiseDecision {
    let more = regex!(r"\b(more viscous|most viscous|higher viscosity|greater viscosity|more viscosity|thicker|more damped|viscous one)\b");
    let less = regex!(r"\b(less viscous|least viscous|lower viscosity|thinner|less damped)\b");
    let all = sentences(text);
    let mut decisions = HashSet::new();
    let mut comparative = false;
    for sentence in &all {
        for (re, flip) in [(more, false), (less, true)] {
            for m in re.find_iter(sentence) {
                comparative = true;
                if !committed(sentence) {
                    continue;
                }
                if let Some(side) = side_at(sentence, m.start(), flip) {
                    decisions.insert(side);
                }
            }
        }
    }
    if !comparative {
        for sentence in all.iter().filter(|s| committed(s)) {
            for c in regex!(r"\b(left|right)\b").captures_iter(sentence) {
                decisions.insert(if &c[1] == "left" { PairwiseDecision::Left } else { PairwiseDecision::Right });
            }
        }
    }
    if decisions.len() == 1 {
        *decisions.iter().next().unwrap()
    } else {
        PairwiseDecision::Invalid
    }
}

fn action_in(text: &str) -> Vec<Action> {
    regex!(r"(?i)\b(shake|look|finish)\s*\[\s*(?:container\s*|bottle\s*)?(scene|\d+)\s*\]")
        .captures_iter(text)
        .filter_map(|c| {
            let verb = c[1].to_lowercase();
            let arg = c[2].to_lowercase();
            let index = arg.parse::<usize>().ok();
            match (verb.as_str(), index) {
                ("look", None) => Some(Action::LookScene),
                ("look", Some(i)) => Some(Action::LookContainer(i)),
                ("shake", Some(i)) => Some(Action::ShakeContainer(i)),
                ("finish", Some(i)) => Some(Action::Finish(i)),
                _ => None,
            }
        })
        .collect()
}

/// Parses an action. When the text has `Action:` lines the last one
/// decides; otherwise every action token in the text must agree.
pub fn parse_action(text: &str) -> Option<Action> {
    let action_lines: Vec<&str> = text.lines().filter(|l| regex!(r"(?i)^\s*action(\s*\d+)?\s*:").is_match(l)).collect();
    if let Some(line) = action_lines.last() {
        return action_in(line).into_iter().next();
    }
    let found = action_in(text);
    let first = *found.first()?;
    found.iter().all(|a| *a == first).then_some(first)
}

/// Splits a reasoning reply into the predicted properties (the last
/// `Thought:` line) and the selected action.
pub fn parse_react(text: &str) -> (String, Option<Action>) {
    let thought = regex!(r"(?im)^\s*thought(?:\s*\d+)?\s*:\s*(.*)$");
    let predicted = match thought.captures_iter(text).last() {
        Some(c) => c[1].trim().to_string(),
        None => text
            .lines()
            .take_while(|l| !regex!(r"(?i)^\s*action(\s*\d+)?\s*:").is_match(l))
            .collect::<Vec<_>>()
            .join(" ")
            .trim()
            .to_string(),
    };
    (predicted, parse_action(text))
}

/// Reads `<index>: <color>` lines of a scene answer.
pub fn parse_scene_colors(text: &str) -> Vec<(usize, String)> {
    let mut out: Vec<(usize, String)> = regex!(r"(?m)^\s*(?:container\s*|bottle\s*)?\(?(\d+)\)?\s*[:\-]\s*(.+?)\s*\.?\s*$")
        .captures_iter(text)
        .filter_map(|c| Some((c[1].parse().ok()?, c[2].to_lowercase())))
        .collect();
    out.sort_by_key(|(i, _)| *i);
    out.dedup_by_key(|(i, _)| *i);
    out
}

/// Textual form of a descriptor, as served in descriptor mode and by the
/// rule-based backend.
pub fn describe(d: &VisualDescriptor) -> String {
    let label = match &d.label_text {
        Some(text) => format!(" The label reads \"{text}\"."),
        None => " No label text is visible.".to_string(),
    };
    format!("A {} {}. The liquid inside is {} and {}.{label}", d.material, d.shape, d.color, d.transparency.as_str())
}

/// Inverse of [`describe`]; `None` for free-form descriptions.
pub fn parse_container_description(text: &str, index: usize) -> Option<VisualDescriptor> {
    let vessel = regex!(r"(?i)\ba ([a-z]+) ([a-z]+)\.").captures(text)?;
    let content = regex!(r"(?i)liquid inside is ([a-z][a-z \-]*?) and (transparent|translucent|opaque)\b").captures(text)?;
    let transparency = match content[2].to_lowercase().as_str() {
        "transparent" => Transparency::Transparent,
        "translucent" => Transparency::Translucent,
        _ => Transparency::Opaque,
    };
    let label_text = regex!(r#"label reads "([^"]*)""#).captures(text).map(|c| c[1].to_string());
    Some(VisualDescriptor {
        index,
        color: content[1].to_lowercase(),
        transparency,
        shape: vessel[2].to_lowercase(),
        material: vessel[1].to_lowercase(),
        label_text,
    })
}
