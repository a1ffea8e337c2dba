//! The reason-act loop: ask the backend for a predicted property and an
//! action, perceive the action's feedback, append both to the context.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    Action, ActionKind, EpisodeContext, FillLevel, LiquidSpec, Observation, StructuredObservation, TorqueSignal, ViscosityClass,
};
use crate::dsp::{self, DspConfig};
use crate::perception::parse::{describe, parse_container_description, parse_scene_colors};
use crate::perception::{
    build_container_prompt, build_haptic_prompt, build_reasoning_prompt, build_scene_prompt, parse_react, parse_viscosity, Backend,
    EpisodeView, PerceptionError, Prompt, PromptVariant, SideChannel,
};
use crate::render::{self, PlotImage, PlotStyle, RenderError};
use crate::sloshsim::{simulate_liquid, SimConfig};
use crate::vision::{descriptor_of, SceneFixture, VisionError};

pub const DEFAULT_MAX_STEPS: usize = 12;

const REASK_NOTE: &str =
    "Your previous reply did not select an available action. Reply again with a Thought line and an Action line using only the available actions.";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("signal source for container {index}: {reason}")]
    Signal { index: usize, reason: String },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvMode {
    ImageMode,
    DescriptorMode,
}

impl std::str::FromStr for EnvMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "image" | "image-mode" => Ok(EnvMode::ImageMode),
            "descriptor" | "descriptors" | "descriptor-mode" => Ok(EnvMode::DescriptorMode),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SignalSource {
    Simulated(LiquidSpec),
    Recorded(PathBuf),
}

#[derive(Debug, Clone)]
pub struct EnvironmentHandle {
    pub fixture: SceneFixture,
    pub signals: BTreeMap<usize, SignalSource>,
    pub mode: EnvMode,
    pub fill: FillLevel,
    pub sim: SimConfig,
    pub dsp: DspConfig,
    pub style: PlotStyle,
    pub variant: PromptVariant,
    pub noise_seed: u64,
}

impl EnvironmentHandle {
    pub fn new(fixture: SceneFixture, signals: BTreeMap<usize, SignalSource>, mode: EnvMode) -> Result<Self, AgentError> {
        if let Some(b) = fixture.detections().iter().find(|b| !signals.contains_key(&b.index)) {
            return Err(AgentError::InvalidEnvironment(format!("container {} has no signal source", b.index)));
        }
        Ok(Self {
            fixture,
            signals,
            mode,
            fill: FillLevel::TwoThirds,
            sim: SimConfig::default(),
            dsp: DspConfig::default(),
            style: PlotStyle::default(),
            variant: PromptVariant::KnowledgeEnhanced,
            noise_seed: 0,
        })
    }

    /// Container `i` holds registry liquid `i`.
    pub fn from_registry(fixture: SceneFixture, registry: &[LiquidSpec], mode: EnvMode) -> Result<Self, AgentError> {
        let signals = fixture
            .detections()
            .iter()
            .filter_map(|b| registry.iter().find(|l| l.id == b.index).map(|l| (b.index, SignalSource::Simulated(l.clone()))))
            .collect();
        Self::new(fixture, signals, mode)
    }

    pub fn containers(&self) -> Vec<usize> {
        self.fixture.detections().iter().map(|b| b.index).collect()
    }

    pub fn has_container(&self, index: usize) -> bool {
        self.fixture.detections().iter().any(|b| b.index == index)
    }

    fn shake_seed(&self, index: usize) -> u64 {
        self.noise_seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }

    pub fn raw_signal(&self, index: usize) -> Result<TorqueSignal, AgentError> {
        let source = self.signals.get(&index).ok_or(VisionError::UnknownIndex(index))?;
        let err = |reason: String| AgentError::Signal { index, reason };
        match source {
            SignalSource::Simulated(liquid) => simulate_liquid(liquid, self.fill, &self.sim, self.shake_seed(index)).map_err(|e| err(e.to_string())),
            SignalSource::Recorded(path) => dsp::io::read_signal(path).map_err(|e| err(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionTask {
    pub question: String,
    /// Scoring only; never sent to a backend.
    pub target_name: String,
    pub example: String,
    pub max_steps: usize,
    pub action_mask: Vec<ActionKind>,
    pub seed: u64,
}

pub const FULL_MASK: [ActionKind; 3] = [ActionKind::LookScene, ActionKind::LookContainer, ActionKind::ShakeContainer];

impl RecognitionTask {
    pub fn for_liquid(name: &str) -> Self {
        Self {
            question: format!("which of these bottles contains {name}?"),
            target_name: name.to_string(),
            example: crate::perception::default_example().to_string(),
            max_steps: DEFAULT_MAX_STEPS,
            action_mask: FULL_MASK.to_vec(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_steps == 0 {
            return Err(AgentError::InvalidTask("max_steps must be at least 1".into()));
        }
        if self.question.trim().is_empty() {
            return Err(AgentError::InvalidTask("empty question".into()));
        }
        Ok(())
    }

    pub fn allows(&self, kind: ActionKind) -> bool {
        kind == ActionKind::Finish || self.action_mask.contains(&kind)
    }
}

/// Parses a comma-separated action mask such as `scene,container,shake`.
pub fn parse_mask(text: &str) -> Result<Vec<ActionKind>, String> {
    let mut mask = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let kind = match part.to_lowercase().as_str() {
            "scene" | "look-scene" => ActionKind::LookScene,
            "container" | "look-container" => ActionKind::LookContainer,
            "shake" => ActionKind::ShakeContainer,
            "finish" => ActionKind::Finish,
            other => return Err(format!("unknown action '{other}'")),
        };
        if !mask.contains(&kind) {
            mask.push(kind);
        }
    }
    mask.sort();
    Ok(mask)
}

pub fn mask_label(mask: &[ActionKind]) -> String {
    let mut kinds: Vec<ActionKind> = mask.iter().copied().filter(|k| *k != ActionKind::Finish).collect();
    kinds.sort();
    kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDecision {
    pub predicted: String,
    pub action: Option<Action>,
    pub raw: Vec<String>,
}

fn admissible(task: &RecognitionTask, env: &EnvironmentHandle, action: &Action) -> bool {
    task.allows(action.kind()) && action.target().map_or(true, |i| env.has_container(i))
}

/// One reasoning call, re-asked once when the reply has no admissible action.
pub fn react_step(
    task: &RecognitionTask,
    context: &EpisodeContext,
    env: &EnvironmentHandle,
    backend: &dyn Backend,
) -> Result<StepDecision, AgentError> {
    if context.len() >= task.max_steps {
        return Err(AgentError::InvalidTask(format!("context already holds {} steps", context.len())));
    }
    let prompt = build_reasoning_prompt(&task.question, &task.example, context, &task.action_mask);
    let side = SideChannel::Episode(EpisodeView {
        question: task.question.clone(),
        context: context.clone(),
        allowed: task.action_mask.clone(),
        containers: env.containers(),
        max_steps: task.max_steps,
        seed: task.seed,
    });
    let mut raw = Vec::new();
    let mut predicted = String::new();
    for attempt in 0..2 {
        let asked: Prompt = if attempt == 0 { prompt.clone() } else { prompt.with_note(REASK_NOTE) };
        let text = backend.answer(&asked, Some(&side))?;
        let (thought, action) = parse_react(&text);
        raw.push(text);
        predicted = thought;
        if let Some(action) = action.filter(|a| admissible(task, env, a)) {
            return Ok(StepDecision { predicted, action: Some(action), raw });
        }
    }
    Ok(StepDecision { predicted, action: None, raw })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perceived {
    pub observation: Observation,
    pub image: Option<PlotImage>,
    pub advisories: Vec<String>,
}

fn action_context(step: usize, action: &Action) -> String {
    match action {
        Action::ShakeContainer(i) => {
            format!("Action {step}: {action}. The robot grasped container {i}, shook it and held it still while the wrist sensor recorded.")
        }
        _ => format!("Action {step}: {action}."),
    }
}

/// Executes a non-Finish action and textualizes its feedback.
pub fn perceive(action: &Action, step: usize, env: &EnvironmentHandle, backend: &dyn Backend) -> Result<Perceived, AgentError> {
    let observed = |text: String, structured: Option<StructuredObservation>, image: Option<PlotImage>, advisories: Vec<String>| Perceived {
        observation: Observation { text, source_action: *action, structured },
        image,
        advisories,
    };
    match *action {
        Action::Finish(_) => Err(AgentError::InvalidTask("Finish has no feedback to perceive".into())),
        Action::LookScene => {
            let descriptors = env.fixture.descriptors().to_vec();
            match env.mode {
                EnvMode::DescriptorMode => {
                    let colors: Vec<(usize, String)> = descriptors.iter().map(|d| (d.index, d.color.clone())).collect();
                    let text = colors.iter().map(|(i, c)| format!("{i}: {c}")).collect::<Vec<_>>().join("\n");
                    Ok(observed(text, Some(StructuredObservation::SceneColors(colors)), None, vec![]))
                }
                EnvMode::ImageMode => {
                    let scene = env.fixture.scene_image().ok_or_else(|| AgentError::InvalidEnvironment("image mode needs a scene image".into()))?;
                    let annotated = render::annotate_scene(scene, env.fixture.detections())?;
                    let prompt = build_scene_prompt(&annotated);
                    let text = backend.answer(&prompt, Some(&SideChannel::Scene(descriptors)))?;
                    let colors = parse_scene_colors(&text);
                    let structured = (!colors.is_empty()).then_some(StructuredObservation::SceneColors(colors));
                    Ok(observed(text, structured, Some(annotated), prompt.advisories().to_vec()))
                }
            }
        }
        Action::LookContainer(i) => {
            let descriptor = descriptor_of(&env.fixture, i)?;
            match env.mode {
                EnvMode::DescriptorMode => Ok(observed(describe(&descriptor), Some(StructuredObservation::Descriptor(descriptor)), None, vec![])),
                EnvMode::ImageMode => {
                    let scene = env.fixture.scene_image().ok_or_else(|| AgentError::InvalidEnvironment("image mode needs a scene image".into()))?;
                    let cropped = render::crop(scene, &env.fixture.bbox(i)?)?;
                    let prompt = build_container_prompt(&cropped);
                    let text = backend.answer(&prompt, Some(&SideChannel::Descriptor(descriptor)))?;
                    let structured = parse_container_description(&text, i).map(StructuredObservation::Descriptor);
                    Ok(observed(text, structured, Some(cropped), prompt.advisories().to_vec()))
                }
            }
        }
        Action::ShakeContainer(i) => {
            if !env.has_container(i) {
                return Err(VisionError::UnknownIndex(i).into());
            }
            let raw = env.raw_signal(i)?;
            let standardized = match dsp::condition(&raw, &env.dsp) {
                Ok(s) => s,
                Err(e) => {
                    let text = format!("Shaking container {i} gave no usable torque feedback ({e}).");
                    return Ok(observed(text, Some(StructuredObservation::Viscosity(ViscosityClass::Invalid)), None, vec![]));
                }
            };
            let plot = render::render_timeseries(&standardized, &env.style)?;
            let prompt = build_haptic_prompt(&action_context(step, action), &plot, env.variant);
            let text = backend.answer(&prompt, Some(&SideChannel::Signal(standardized)))?;
            let class = parse_viscosity(&text);
            Ok(observed(text, Some(StructuredObservation::Viscosity(class)), Some(plot), prompt.advisories().to_vec()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Outcome {
    Answered(usize),
    Invalid,
    StepBudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub predicted: String,
    pub action: Option<Action>,
    pub raw: Vec<String>,
    pub observation: Option<Observation>,
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub advisories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub question: String,
    pub target_name: String,
    pub steps: Vec<TraceStep>,
    pub outcome: Outcome,
    pub images: Vec<(String, PlotImage)>,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TraceRecord<'a> {
    Step(&'a TraceStep),
    Summary { question: &'a str, target_name: &'a str, steps: usize, outcome: Outcome },
}

impl EpisodeTrace {
    /// One JSON object per step followed by a summary record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&serde_json::to_string(&TraceRecord::Step(step)).expect("trace serializes"));
            out.push('\n');
        }
        let summary = TraceRecord::Summary {
            question: &self.question,
            target_name: &self.target_name,
            steps: self.steps.len(),
            outcome: self.outcome,
        };
        out.push_str(&serde_json::to_string(&summary).expect("trace serializes"));
        out.push('\n');
        out
    }

    /// Writes `trace.jsonl` and the step images into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), AgentError> {
        let io = |p: &Path, e: std::io::Error| AgentError::Io(format!("{}: {e}", p.display()));
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let path = dir.join("trace.jsonl");
        std::fs::write(&path, self.to_jsonl()).map_err(|e| io(&path, e))?;
        for (name, image) in &self.images {
            let path = dir.join(name);
            std::fs::write(&path, image.bytes()).map_err(|e| io(&path, e))?;
        }
        Ok(())
    }
}

/// Runs the loop until Finish, an invalid reply or the step budget.
pub fn run_episode(task: &RecognitionTask, env: &EnvironmentHandle, backend: &dyn Backend) -> Result<EpisodeTrace, AgentError> {
    task.validate()?;
    let mut context = EpisodeContext::new();
    let mut steps = Vec::new();
    let mut images = Vec::new();
    let mut outcome = Outcome::StepBudgetExhausted;
    while context.len() < task.max_steps {
        let n = steps.len() + 1;
        let decision = react_step(task, &context, env, backend)?;
        let mut record = TraceStep {
            step: n,
            predicted: decision.predicted.clone(),
            action: decision.action,
            raw: decision.raw,
            observation: None,
            image: None,
            advisories: Vec::new(),
        };
        let Some(action) = decision.action else {
            steps.push(record);
            outcome = Outcome::Invalid;
            break;
        };
        if let Action::Finish(i) = action {
            steps.push(record);
            outcome = Outcome::Answered(i);
            break;
        }
        let perceived = perceive(&action, n, env, backend)?;
        if let Some(image) = perceived.image {
            let name = format!("step{n:02}-{}.{}", action.kind().as_str(), image.format().extension());
            record.image = Some(name.clone());
            images.push((name, image));
        }
        record.observation = Some(perceived.observation.clone());
        record.advisories = perceived.advisories;
        context.push(decision.predicted, action, perceived.observation);
        steps.push(record);
    }
    Ok(EpisodeTrace { question: task.question.clone(), target_name: task.target_name.clone(), steps, outcome, images })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{bundled_registry, ClassThresholds};
    use crate::perception::{BackendKind, HeuristicOracle, Replay, RuleBased};
    use crate::vision::{bundled_fixture, Setting};
    use std::sync::Mutex;

    fn env(setting: Setting, mode: EnvMode) -> EnvironmentHandle {
        EnvironmentHandle::from_registry(bundled_fixture(setting), &bundled_registry(), mode).unwrap()
    }

    fn rules() -> RuleBased {
        RuleBased::new(bundled_registry(), ClassThresholds::VISCOSITY_DEFAULT, HeuristicOracle::default())
    }

    /// Records every prompt it is asked, then defers to the rule-based backend.
    struct Spy {
        inner: RuleBased,
        prompts: Mutex<Vec<String>>,
    }

    impl Backend for Spy {
        fn kind(&self) -> BackendKind {
            BackendKind::RuleBased
        }

        fn answer(&self, prompt: &Prompt, side: Option<&SideChannel>) -> Result<String, PerceptionError> {
            self.prompts.lock().unwrap().push(format!("{:?}", prompt.kind()));
            if let Some(SideChannel::Episode(view)) = side {
                let kinds: Vec<ActionKind> = view.context.steps().iter().map(|s| s.action.kind()).collect();
                assert!(kinds.iter().all(|k| view.allowed.contains(k)));
            }
            self.inner.answer(prompt, side)
        }
    }

    #[test]
    fn honey_shake_reads_as_viscous() {
        let env = env(Setting::WithoutLabels, EnvMode::DescriptorMode);
        let honey = bundled_registry().iter().find(|l| l.name == "honey").unwrap().id;
        let perceived = perceive(&Action::ShakeContainer(honey), 1, &env, &HeuristicOracle::default()).unwrap();
        let class = parse_viscosity(&perceived.observation.text);
        assert!(matches!(class, ViscosityClass::High | ViscosityClass::ModerateHigh), "{class:?}");
        assert!(perceived.image.is_some());
    }

    #[test]
    fn whiskey_label_visible_with_labels() {
        let env = env(Setting::WithLabels, EnvMode::DescriptorMode);
        let perceived = perceive(&Action::LookContainer(5), 1, &env, &rules()).unwrap();
        assert!(perceived.observation.text.contains("Whiskey"));
        let no_labels = env_with(Setting::WithoutLabels);
        assert!(!perceive(&Action::LookContainer(5), 1, &no_labels, &rules()).unwrap().observation.text.contains("Whiskey"));
    }

    fn env_with(setting: Setting) -> EnvironmentHandle {
        env(setting, EnvMode::DescriptorMode)
    }

    #[test]
    fn scene_in_descriptor_mode_lists_colors() {
        let perceived = perceive(&Action::LookScene, 1, &env_with(Setting::WithoutLabels), &rules()).unwrap();
        assert_eq!(perceived.observation.text.lines().count(), 10);
        assert!(perceived.observation.text.starts_with("0: dark brown\n1: clear"));
    }

    #[test]
    fn image_mode_round_trips_through_text() {
        let env = env(Setting::WithLabels, EnvMode::ImageMode);
        let task = RecognitionTask::for_liquid("honey");
        let trace = run_episode(&task, &env, &rules()).unwrap();
        assert_eq!(trace.outcome, Outcome::Answered(8));
        assert!(trace.steps.iter().any(|s| s.image.as_deref() == Some("step01-scene.svg")));
    }

    #[test]
    fn unparseable_action_is_reasked_once() {
        let env = env_with(Setting::WithoutLabels);
        let replay = Replay::new(vec!["Thought: dance.\nAction: Dance[2]".into(), "Action: Dance[2]".into()]);
        let trace = run_episode(&RecognitionTask::for_liquid("water"), &env, &replay).unwrap();
        assert_eq!(trace.outcome, Outcome::Invalid);
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].raw.len(), 2);
        assert_eq!(replay.remaining(), 0);
    }

    #[test]
    fn masked_action_counts_as_invalid() {
        let env = env_with(Setting::WithoutLabels);
        let replay = Replay::new(vec!["Action: Shake[1]".into(), "Action: Finish[1]".into()]);
        let mut task = RecognitionTask::for_liquid("water");
        task.action_mask = vec![ActionKind::LookScene];
        let trace = run_episode(&task, &env, &replay).unwrap();
        assert_eq!(trace.outcome, Outcome::Answered(1));
        assert_eq!(trace.steps[0].raw.len(), 2);
    }

    #[test]
    fn budget_runs_out() {
        let env = env_with(Setting::WithoutLabels);
        let replay = Replay::new(vec!["Action: Look[Scene]".into(); 3]);
        let mut task = RecognitionTask::for_liquid("water");
        task.max_steps = 3;
        let trace = run_episode(&task, &env, &replay).unwrap();
        assert_eq!(trace.outcome, Outcome::StepBudgetExhausted);
        assert_eq!(trace.steps.len(), 3);
    }

    #[test]
    fn scene_only_mask_never_reaches_other_actions() {
        let env = env_with(Setting::WithoutLabels);
        for liquid in bundled_registry() {
            let spy = Spy { inner: rules(), prompts: Mutex::new(vec![]) };
            let mut task = RecognitionTask::for_liquid(&liquid.name);
            task.action_mask = vec![ActionKind::LookScene];
            let trace = run_episode(&task, &env, &spy).unwrap();
            assert!(matches!(trace.outcome, Outcome::Answered(i) if i < 10));
            for step in &trace.steps {
                assert!(matches!(step.action, Some(Action::LookScene) | Some(Action::Finish(_))));
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let env = env(Setting::WithoutLabels, EnvMode::ImageMode);
        let mut task = RecognitionTask::for_liquid("soy sauce");
        task.seed = 11;
        let a = run_episode(&task, &env, &rules()).unwrap();
        let b = run_episode(&task, &env, &rules()).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let dir = tempfile::tempdir().unwrap();
        a.write(dir.path()).unwrap();
        for (name, _) in &a.images {
            assert!(dir.path().join(name).exists());
        }
        let jsonl = a.to_jsonl();
        assert!(jsonl.lines().last().unwrap().contains("\"record\":\"summary\""));
    }

    #[test]
    fn context_grows_by_one_pair_per_step() {
        let env = env_with(Setting::WithoutLabels);
        let mut task = RecognitionTask::for_liquid("peanut oil");
        task.max_steps = 12;
        let trace = run_episode(&task, &env, &rules()).unwrap();
        let observed = trace.steps.iter().filter(|s| s.observation.is_some()).count();
        assert_eq!(observed + 1, trace.steps.len());
        for (k, step) in trace.steps.iter().enumerate() {
            assert_eq!(step.step, k + 1);
        }
    }

    #[test]
    fn mask_parsing() {
        assert_eq!(parse_mask("shake, scene").unwrap(), vec![ActionKind::LookScene, ActionKind::ShakeContainer]);
        assert!(parse_mask("jump").is_err());
        assert_eq!(mask_label(&FULL_MASK), "scene,container,shake");
    }
}
