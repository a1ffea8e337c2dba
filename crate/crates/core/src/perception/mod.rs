//! Prompts, reasoning backends and answer parsing.

mod backends;
pub mod parse;
mod remote;
mod rules;
pub mod template;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ActionKind, ClassThresholds, EpisodeContext, TorqueSignal, ViscosityClass, VisualDescriptor};
use crate::render::PlotImage;

pub use backends::{HeuristicOracle, RefusalInjector, Replay, REFUSAL_TEXT};
pub use parse::{parse_action, parse_pairwise, parse_react, parse_viscosity, PairwiseDecision};
pub use remote::{RemoteLvlm, RemoteSettings, ENDPOINT_VAR, KEY_VAR};
pub use rules::RuleBased;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("replay script exhausted after {0} answers")]
    ReplayExhausted(usize),
    #[error("{0} prompt needs a side channel this backend can read")]
    MissingSideChannel(PromptKind),
    #[error("{backend} backend cannot answer {kind} prompts")]
    Unsupported { backend: BackendKind, kind: PromptKind },
    #[error("invalid replay script: {0}")]
    InvalidScript(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Haptic,
    Pairwise,
    Scene,
    Container,
    Reasoning,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Haptic => "haptic",
            PromptKind::Pairwise => "pairwise",
            PromptKind::Scene => "scene",
            PromptKind::Container => "container",
            PromptKind::Reasoning => "reasoning",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptVariant {
    Plain,
    KnowledgeEnhanced,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 2] = [PromptVariant::Plain, PromptVariant::KnowledgeEnhanced];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::Plain => "plain",
            PromptVariant::KnowledgeEnhanced => "knowledge-enhanced",
        }
    }

    fn knowledge_block(self) -> &'static str {
        match self {
            PromptVariant::Plain => "",
            PromptVariant::KnowledgeEnhanced => template::KNOWLEDGE,
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "plain" => Ok(PromptVariant::Plain),
            "knowledge" | "knowledge-enhanced" | "knowledge_enhanced" => Ok(PromptVariant::KnowledgeEnhanced),
            other => Err(format!("unknown prompt variant '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    RemoteLvlm,
    HeuristicOracle,
    RuleBased,
    Replay,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::RemoteLvlm => "remote-lvlm",
            BackendKind::HeuristicOracle => "heuristic-oracle",
            BackendKind::RuleBased => "rule-based",
            BackendKind::Replay => "replay",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "remote" | "remote-lvlm" | "lvlm" => Ok(BackendKind::RemoteLvlm),
            "heuristic" | "heuristic-oracle" | "oracle" => Ok(BackendKind::HeuristicOracle),
            "rule-based" | "rules" | "rule" => Ok(BackendKind::RuleBased),
            "replay" => Ok(BackendKind::Replay),
            other => Err(format!("unknown backend '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    system_text: String,
    user_text: String,
    images: Vec<PlotImage>,
    kind: PromptKind,
    advisories: Vec<String>,
}

impl Prompt {
    pub fn system_text(&self) -> &str {
        &self.system_text
    }

    pub fn user_text(&self) -> &str {
        &self.user_text
    }

    pub fn images(&self) -> &[PlotImage] {
        &self.images
    }

    pub fn temperature(&self) -> f64 {
        0.0
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    /// Non-fatal notes about the inputs, for the trace.
    pub fn advisories(&self) -> &[String] {
        &self.advisories
    }

    /// Appends a line to the user text; used when re-asking.
    pub fn with_note(&self, note: &str) -> Prompt {
        let mut p = self.clone();
        p.user_text = format!("{}\n{note}", p.user_text.trim_end());
        p
    }

    fn new(kind: PromptKind, user_text: String, images: Vec<PlotImage>) -> Self {
        Self { system_text: template::SYSTEM.trim().to_string(), user_text, images, kind, advisories: Vec::new() }
    }
}

/// Ground-truth inputs that non-LVLM backends answer from in place of pixels.
#[derive(Debug, Clone, PartialEq)]
pub enum SideChannel {
    Signal(TorqueSignal),
    Pair(TorqueSignal, TorqueSignal),
    Descriptor(VisualDescriptor),
    Scene(Vec<VisualDescriptor>),
    Episode(EpisodeView),
}

/// What a rule-based reasoner may know about a running episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeView {
    pub question: String,
    pub context: EpisodeContext,
    pub allowed: Vec<ActionKind>,
    pub containers: Vec<usize>,
    pub max_steps: usize,
    pub seed: u64,
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn answer(&self, prompt: &Prompt, side: Option<&SideChannel>) -> Result<String, PerceptionError>;
}

pub fn answer(backend: &dyn Backend, prompt: &Prompt, side: Option<&SideChannel>) -> Result<String, PerceptionError> {
    backend.answer(prompt, side)
}

fn render(template_text: &str, vars: &[(&str, &str)]) -> String {
    let text = template::fill(template_text, vars).expect("bundled templates only use supplied placeholders");
    let collapsed = regex::Regex::new(r"\n{3,}").unwrap().replace_all(text.trim(), "\n\n");
    collapsed.into_owned()
}

pub fn build_haptic_prompt(action_context: &str, plot: &PlotImage, variant: PromptVariant) -> Prompt {
    let text = render(template::HAPTIC, &[("action_context", action_context), ("knowledge_block", variant.knowledge_block())]);
    Prompt::new(PromptKind::Haptic, text, vec![plot.clone()])
}

pub fn build_pairwise_prompt(pair_plot: &PlotImage, variant: PromptVariant) -> Prompt {
    let text = render(template::PAIRWISE, &[("knowledge_block", variant.knowledge_block())]);
    let mut prompt = Prompt::new(PromptKind::Pairwise, text, vec![pair_plot.clone()]);
    if !pair_plot.caption.starts_with("(left) ") {
        prompt.advisories.push("pairwise prompt image is not a side-by-side concatenation".into());
    }
    prompt
}

pub fn build_scene_prompt(annotated: &PlotImage) -> Prompt {
    Prompt::new(PromptKind::Scene, render(template::SCENE, &[]), vec![annotated.clone()])
}

pub fn build_container_prompt(cropped: &PlotImage) -> Prompt {
    Prompt::new(PromptKind::Container, render(template::CONTAINER, &[]), vec![cropped.clone()])
}

fn action_syntax(kind: ActionKind) -> &'static str {
    match kind {
        ActionKind::LookScene => "Look[Scene] (observe all containers)",
        ActionKind::LookContainer => "Look[i] (observe container i up close)",
        ActionKind::ShakeContainer => "Shake[i] (shake container i and sense the liquid's viscosity)",
        ActionKind::Finish => "Finish[i] (answer that container i holds the queried liquid)",
    }
}

/// Text-only prompt for one reasoning step. Finish is always offered.
pub fn build_reasoning_prompt(question: &str, example: &str, context: &EpisodeContext, allowed: &[ActionKind]) -> Prompt {
    let mut kinds: Vec<ActionKind> = [ActionKind::LookScene, ActionKind::LookContainer, ActionKind::ShakeContainer]
        .into_iter()
        .filter(|k| allowed.contains(k))
        .collect();
    kinds.push(ActionKind::Finish);
    let actions = kinds.into_iter().map(action_syntax).collect::<Vec<_>>().join("; ");
    let history = context.serialize();
    let text = render(
        template::REASONING,
        &[("example", example.trim()), ("question", question.trim()), ("actions", &actions), ("context", &history)],
    );
    Prompt::new(PromptKind::Reasoning, text, Vec::new())
}

pub fn default_example() -> &'static str {
    template::EXAMPLE
}

/// Maps a damping feature to a class; `None` (oscillation gone before a
/// decrement can be measured) counts as the most viscous.
pub fn decrement_class(delta: Option<f64>, thresholds: &ClassThresholds) -> ViscosityClass {
    match delta {
        Some(d) => thresholds.classify(d),
        None => ViscosityClass::High,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{ImageFormat, PlotImage};

    const REFS: [&str; 2] = ["peaks with slowly decreasing amplitudes", "peaks with rapidly decaying amplitudes"];

    fn image(caption: &str) -> PlotImage {
        PlotImage::from_bytes(ImageFormat::Svg, b"<svg width=\"4\" height=\"3\"></svg>".to_vec(), caption).unwrap()
    }

    #[test]
    fn haptic_variants() {
        let plot = image("p");
        let ke = build_haptic_prompt("shook container 3", &plot, PromptVariant::KnowledgeEnhanced);
        let plain = build_haptic_prompt("shook container 3", &plot, PromptVariant::Plain);
        for r in REFS {
            assert_eq!(ke.user_text().matches(r).count(), 1);
            assert!(!plain.user_text().contains(r));
        }
        assert!(ke.user_text().contains("shook container 3") && plain.user_text().contains("shook container 3"));
        assert_eq!(ke.temperature(), 0.0);
        assert_eq!(ke.images().len(), 1);
        let empty = build_haptic_prompt("", &plot, PromptVariant::Plain);
        assert!(empty.user_text().starts_with("The attached plot"));
    }

    #[test]
    fn pairwise_ends_with_question() {
        let pair = image("(left) a (right) b");
        for variant in PromptVariant::ALL {
            let p = build_pairwise_prompt(&pair, variant);
            assert!(p.user_text().ends_with("Which one is more viscous?"));
            assert_eq!(p.images().len(), 1);
            assert!(p.advisories().is_empty());
        }
        let plain = build_pairwise_prompt(&pair, PromptVariant::Plain).user_text().to_string();
        let mut ke = build_pairwise_prompt(&pair, PromptVariant::KnowledgeEnhanced).user_text().to_string();
        for line in template::KNOWLEDGE.lines() {
            ke = ke.replace(&format!("{line}\n"), "");
        }
        assert_eq!(ke, plain);
        assert_eq!(build_pairwise_prompt(&image("single"), PromptVariant::Plain).advisories().len(), 1);
    }

    #[test]
    fn scene_and_container_examples() {
        let scene = build_scene_prompt(&image("s"));
        assert!(scene.user_text().contains("[Input Image]"));
        assert!(scene.user_text().contains("Example:"));
        assert!(scene.user_text().contains("color"));
        let container = build_container_prompt(&image("c"));
        assert!(!container.user_text().contains("Example"));
        assert!(!container.user_text().contains("[Input Image]"));
    }

    #[test]
    fn builders_are_pure() {
        let plot = image("(left) a (right) b");
        assert_eq!(build_pairwise_prompt(&plot, PromptVariant::Plain), build_pairwise_prompt(&plot, PromptVariant::Plain));
        let ctx = EpisodeContext::new();
        let a = build_reasoning_prompt("which of these bottles contains peanut oil?", default_example(), &ctx, &[ActionKind::LookScene]);
        let b = build_reasoning_prompt("which of these bottles contains peanut oil?", default_example(), &ctx, &[ActionKind::LookScene]);
        assert_eq!(a, b);
        assert!(a.user_text().contains("Look[Scene]") && a.user_text().contains("Finish[i]"));
        assert!(!a.user_text().contains("Shake[i]"));
    }

    #[test]
    fn decrement_map_is_monotone() {
        let t = ClassThresholds::DECREMENT_DEFAULT;
        let mut last = decrement_class(Some(0.0), &t);
        for k in 1..400 {
            let c = decrement_class(Some(k as f64 * 0.01), &t);
            assert!(c >= last);
            last = c;
        }
        assert_eq!(decrement_class(None, &t), ViscosityClass::High);
    }
}
