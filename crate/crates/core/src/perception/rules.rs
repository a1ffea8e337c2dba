use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::parse::describe;
use super::{Backend, BackendKind, EpisodeView, HeuristicOracle, PerceptionError, Prompt, PromptKind, SideChannel};
use crate::domain::{
    viscosity_class_of, Action, ActionKind, ClassThresholds, LiquidSpec, StructuredObservation, Transparency, ViscosityClass,
    VisualDescriptor,
};
use crate::vision::transparency_of;

/// Registry-backed reasoner. Visual questions are answered from
/// descriptors, haptic ones through the heuristic oracle, and reasoning
/// steps by eliminating containers that contradict the queried liquid's
/// known color, transparency and viscosity class.
#[derive(Debug, Clone)]
pub struct RuleBased {
    registry: Vec<LiquidSpec>,
    viscosity_thresholds: ClassThresholds,
    oracle: HeuristicOracle,
}

struct Expectation<'a> {
    liquid: &'a LiquidSpec,
    color: &'a str,
    transparency: Transparency,
    class: ViscosityClass,
}

#[derive(Default)]
struct Evidence {
    scene_seen: bool,
    looked: BTreeSet<usize>,
    shaken: BTreeMap<usize, ViscosityClass>,
    confirmed: Option<usize>,
}

/// Keeps the items passing `keep`, or all of them when none would pass.
fn narrow(candidates: &mut Vec<usize>, keep: impl Fn(usize) -> bool) {
    let kept: Vec<usize> = candidates.iter().copied().filter(|&i| keep(i)).collect();
    if !kept.is_empty() {
        *candidates = kept;
    }
}

impl RuleBased {
    pub fn new(registry: Vec<LiquidSpec>, viscosity_thresholds: ClassThresholds, oracle: HeuristicOracle) -> Self {
        Self { registry, viscosity_thresholds, oracle }
    }

    /// Registry entry named in the question; the longest name wins.
    fn target(&self, question: &str) -> Option<&LiquidSpec> {
        let q = question.to_lowercase();
        self.registry.iter().filter(|l| q.contains(&l.name.to_lowercase())).max_by_key(|l| l.name.len())
    }

    fn expect<'a>(&self, liquid: &'a LiquidSpec) -> Expectation<'a> {
        Expectation {
            liquid,
            color: &liquid.color_descriptor,
            transparency: transparency_of(liquid),
            class: viscosity_class_of(liquid.nominal_viscosity, &self.viscosity_thresholds).unwrap_or(ViscosityClass::Invalid),
        }
    }

    fn label_verdict(&self, label: &str, target: &LiquidSpec) -> Option<bool> {
        let label = label.to_lowercase();
        if label.contains(&target.name.to_lowercase()) {
            Some(true)
        } else if self.registry.iter().any(|l| label.contains(&l.name.to_lowercase())) {
            Some(false)
        } else {
            None
        }
    }

    fn apply_descriptor(&self, d: &VisualDescriptor, want: &Expectation, candidates: &mut Vec<usize>, evidence: &mut Evidence) {
        if let Some(label) = &d.label_text {
            match self.label_verdict(label, want.liquid) {
                Some(true) => {
                    evidence.confirmed = Some(d.index);
                    return;
                }
                Some(false) => {
                    narrow(candidates, |i| i != d.index);
                    return;
                }
                None => {}
            }
        }
        if d.color != want.color || d.transparency != want.transparency {
            narrow(candidates, |i| i != d.index);
        }
    }

    fn gather(&self, view: &EpisodeView, want: &Expectation) -> (Vec<usize>, Evidence) {
        let mut candidates = view.containers.clone();
        let mut evidence = Evidence::default();
        for step in view.context.steps() {
            match (step.action, &step.observation.structured) {
                (Action::LookScene, structured) => {
                    evidence.scene_seen = true;
                    if let Some(StructuredObservation::SceneColors(colors)) = structured {
                        let matching: BTreeSet<usize> = colors.iter().filter(|(_, c)| c == want.color).map(|(i, _)| *i).collect();
                        narrow(&mut candidates, |i| matching.contains(&i));
                    }
                }
                (Action::LookContainer(i), structured) => {
                    evidence.looked.insert(i);
                    if let Some(StructuredObservation::Descriptor(d)) = structured {
                        self.apply_descriptor(d, want, &mut candidates, &mut evidence);
                    }
                }
                (Action::ShakeContainer(i), structured) => {
                    let class = match structured {
                        Some(StructuredObservation::Viscosity(c)) => *c,
                        _ => ViscosityClass::Invalid,
                    };
                    evidence.shaken.insert(i, class);
                }
                (Action::Finish(_), _) => {}
            }
        }
        // Unshaken containers and unreadable shakes still count as plausible.
        let distance = |i: usize| evidence.shaken.get(&i).and_then(|c| c.distance(want.class)).unwrap_or(0);
        if let Some(best) = candidates.iter().map(|&i| distance(i)).min() {
            narrow(&mut candidates, |i| distance(i) == best);
        }
        (candidates, evidence)
    }

    fn reason(&self, view: &EpisodeView) -> String {
        let Some(liquid) = self.target(&view.question) else {
            return "Thought: I do not know the queried liquid, so I cannot select a container.".into();
        };
        let want = self.expect(liquid);
        let thought = format!(
            "The queried liquid is typically {} and {} with {} viscosity.",
            want.color,
            want.transparency.as_str(),
            want.class.phrase()
        );
        let (candidates, evidence) = self.gather(view, &want);
        let allowed = |k: ActionKind| view.allowed.contains(&k);
        let room = view.max_steps.saturating_sub(view.context.len()) > 1;
        let action = if let Some(i) = evidence.confirmed {
            Action::Finish(i)
        } else if candidates.len() <= 1 || !room {
            Action::Finish(self.choose(&candidates, view.seed))
        } else if allowed(ActionKind::LookScene) && !evidence.scene_seen {
            Action::LookScene
        } else if let Some(&i) = candidates.iter().find(|i| allowed(ActionKind::LookContainer) && !evidence.looked.contains(i)) {
            Action::LookContainer(i)
        } else if let Some(&i) = candidates.iter().find(|i| allowed(ActionKind::ShakeContainer) && !evidence.shaken.contains_key(i)) {
            Action::ShakeContainer(i)
        } else {
            Action::Finish(self.choose(&candidates, view.seed))
        };
        let candidates_note = match candidates.len() {
            0 => String::new(),
            _ => format!(" Remaining candidates: {}.", candidates.iter().map(|i| format!("({i})")).collect::<Vec<_>>().join(", ")),
        };
        format!("Thought: {thought}{candidates_note}\nAction: {action}")
    }

    fn choose(&self, candidates: &[usize], seed: u64) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        *candidates.choose(&mut rng).unwrap_or(&0)
    }
}

impl Backend for RuleBased {
    fn kind(&self) -> BackendKind {
        BackendKind::RuleBased
    }

    fn answer(&self, prompt: &Prompt, side: Option<&SideChannel>) -> Result<String, PerceptionError> {
        match (prompt.kind(), side) {
            (PromptKind::Haptic | PromptKind::Pairwise, _) => self.oracle.answer(prompt, side),
            (PromptKind::Scene, Some(SideChannel::Scene(descriptors))) => {
                Ok(descriptors.iter().map(|d| format!("{}: {}", d.index, d.color)).collect::<Vec<_>>().join("\n"))
            }
            (PromptKind::Container, Some(SideChannel::Descriptor(d))) => Ok(describe(d)),
            (PromptKind::Reasoning, Some(SideChannel::Episode(view))) => Ok(self.reason(view)),
            (kind, _) => Err(PerceptionError::MissingSideChannel(kind)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{bundled_registry, EpisodeContext, Observation};
    use crate::perception::{build_reasoning_prompt, default_example, parse_react};
    use crate::vision::{bundled_fixture, descriptor_of, Setting};

    fn backend() -> RuleBased {
        RuleBased::new(bundled_registry(), ClassThresholds::VISCOSITY_DEFAULT, HeuristicOracle::default())
    }

    fn view(question: &str, context: EpisodeContext, allowed: &[ActionKind]) -> EpisodeView {
        EpisodeView {
            question: question.into(),
            context,
            allowed: allowed.to_vec(),
            containers: (0..10).collect(),
            max_steps: 12,
            seed: 3,
        }
    }

    fn step(b: &RuleBased, v: &EpisodeView) -> Action {
        let prompt = build_reasoning_prompt(&v.question, default_example(), &v.context, &v.allowed);
        parse_react(&b.answer(&prompt, Some(&SideChannel::Episode(v.clone()))).unwrap()).1.unwrap()
    }

    fn scene_obs() -> Observation {
        let fixture = bundled_fixture(Setting::WithoutLabels);
        let colors = fixture.descriptors().iter().map(|d| (d.index, d.color.clone())).collect();
        Observation { text: String::new(), source_action: Action::LookScene, structured: Some(StructuredObservation::SceneColors(colors)) }
    }

    #[test]
    fn looks_at_scene_first_then_candidates() {
        let b = backend();
        let all = [ActionKind::LookScene, ActionKind::LookContainer, ActionKind::ShakeContainer];
        let mut ctx = EpisodeContext::new();
        assert_eq!(step(&b, &view("which of these bottles contains peanut oil?", ctx.clone(), &all)), Action::LookScene);
        ctx.push("t".into(), Action::LookScene, scene_obs());
        assert_eq!(step(&b, &view("which of these bottles contains peanut oil?", ctx.clone(), &all)), Action::LookContainer(3));
        let fixture = bundled_fixture(Setting::WithLabels);
        let d = descriptor_of(&fixture, 3).unwrap();
        let obs = Observation { text: describe(&d), source_action: Action::LookContainer(3), structured: Some(StructuredObservation::Descriptor(d)) };
        ctx.push("t".into(), Action::LookContainer(3), obs);
        assert_eq!(step(&b, &view("which of these bottles contains peanut oil?", ctx, &all)), Action::Finish(3));
    }

    #[test]
    fn shake_separates_candidates() {
        let b = backend();
        let mask = [ActionKind::LookScene, ActionKind::ShakeContainer];
        let mut ctx = EpisodeContext::new();
        ctx.push("t".into(), Action::LookScene, scene_obs());
        let q = "which of these bottles contains whiskey?";
        assert_eq!(step(&b, &view(q, ctx.clone(), &mask)), Action::ShakeContainer(3));
        for (i, class) in [(3, ViscosityClass::Moderate), (5, ViscosityClass::ModerateLow), (8, ViscosityClass::High)] {
            let obs = Observation { text: String::new(), source_action: Action::ShakeContainer(i), structured: Some(StructuredObservation::Viscosity(class)) };
            ctx.push("t".into(), Action::ShakeContainer(i), obs);
        }
        assert_eq!(step(&b, &view(q, ctx, &mask)), Action::Finish(5));
    }

    #[test]
    fn mismatched_shake_keeps_unshaken_candidates() {
        let b = backend();
        let mask = [ActionKind::LookScene, ActionKind::ShakeContainer];
        let mut ctx = EpisodeContext::new();
        ctx.push("t".into(), Action::LookScene, scene_obs());
        let obs = Observation { text: String::new(), source_action: Action::ShakeContainer(0), structured: Some(StructuredObservation::Viscosity(ViscosityClass::Low)) };
        ctx.push("t".into(), Action::ShakeContainer(0), obs);
        assert_eq!(step(&b, &view("which of these bottles contains soy sauce?", ctx, &mask)), Action::ShakeContainer(4));
    }

    #[test]
    fn scene_only_mask_finishes_after_scene() {
        let b = backend();
        let mut ctx = EpisodeContext::new();
        ctx.push("t".into(), Action::LookScene, scene_obs());
        let action = step(&b, &view("which of these bottles contains milk?", ctx, &[ActionKind::LookScene]));
        assert_eq!(action, Action::Finish(9));
    }

    #[test]
    fn unknown_liquid_gives_no_action() {
        let b = backend();
        let v = view("which of these bottles contains ketchup?", EpisodeContext::new(), &[ActionKind::LookScene]);
        let prompt = build_reasoning_prompt(&v.question, default_example(), &v.context, &v.allowed);
        assert_eq!(parse_react(&b.answer(&prompt, Some(&SideChannel::Episode(v))).unwrap()).1, None);
    }
}
