use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::{decrement_class, Backend, BackendKind, PerceptionError, Prompt, PromptKind, SideChannel};
use crate::domain::{ClassThresholds, SignalStage, TorqueSignal, ViscosityClass};
use crate::dsp::{self, DspConfig};

/// Answers haptic and pairwise questions from the damping feature of the
/// side-channel signals.
#[derive(Debug, Clone)]
pub struct HeuristicOracle {
    pub dsp: DspConfig,
    pub thresholds: ClassThresholds,
}

impl Default for HeuristicOracle {
    fn default() -> Self {
        Self { dsp: DspConfig::default(), thresholds: ClassThresholds::DECREMENT_DEFAULT }
    }
}

impl HeuristicOracle {
    pub fn new(dsp: DspConfig, thresholds: ClassThresholds) -> Self {
        Self { dsp, thresholds }
    }

    /// Damping feature of a signal at any stage; `Err` when the signal has no
    /// usable oscillation.
    pub fn feature(&self, signal: &TorqueSignal) -> Result<Option<f64>, dsp::DspError> {
        let standardized = match signal.stage() {
            SignalStage::Raw => dsp::condition(signal, &self.dsp)?,
            SignalStage::Filtered => dsp::standardize(signal)?,
            SignalStage::Standardized => signal.clone(),
        };
        dsp::damping_feature(&standardized, &self.dsp)
    }

    pub fn classify(&self, signal: &TorqueSignal) -> ViscosityClass {
        match self.feature(signal) {
            Ok(delta) => decrement_class(delta, &self.thresholds),
            Err(_) => ViscosityClass::Invalid,
        }
    }

    fn haptic(&self, signal: &TorqueSignal) -> String {
        match self.feature(signal) {
            Err(_) => "I cannot determine the viscosity: the signal shows no usable oscillation.".into(),
            Ok(None) => format!(
                "The oscillation dies out almost immediately after the shake. The liquid appears to have {} viscosity.",
                decrement_class(None, &self.thresholds).phrase()
            ),
            Ok(Some(delta)) => format!(
                "Successive peaks shrink with a logarithmic decrement of {delta:.2}. The liquid appears to have {} viscosity.",
                decrement_class(Some(delta), &self.thresholds).phrase()
            ),
        }
    }

    fn pairwise(&self, left: &TorqueSignal, right: &TorqueSignal) -> String {
        let score = |s: &TorqueSignal| self.feature(s).map(|d| d.unwrap_or(f64::INFINITY));
        match (score(left), score(right)) {
            (Ok(l), Ok(r)) if l > r => "The left plot decays faster than the right plot. The left one is more viscous.".into(),
            (Ok(l), Ok(r)) if r > l => "The right plot decays faster than the left plot. The right one is more viscous.".into(),
            _ => "Both plots decay alike, so I cannot determine which one is more viscous.".into(),
        }
    }
}

impl Backend for HeuristicOracle {
    fn kind(&self) -> BackendKind {
        BackendKind::HeuristicOracle
    }

    fn answer(&self, prompt: &Prompt, side: Option<&SideChannel>) -> Result<String, PerceptionError> {
        match (prompt.kind(), side) {
            (PromptKind::Haptic, Some(SideChannel::Signal(s))) => Ok(self.haptic(s)),
            (PromptKind::Pairwise, Some(SideChannel::Pair(l, r))) => Ok(self.pairwise(l, r)),
            (kind @ (PromptKind::Haptic | PromptKind::Pairwise), _) => Err(PerceptionError::MissingSideChannel(kind)),
            (kind, _) => Err(PerceptionError::Unsupported { backend: BackendKind::HeuristicOracle, kind }),
        }
    }
}

/// Returns scripted answers in order, one per call, whatever the prompt.
#[derive(Debug)]
pub struct Replay {
    script: Vec<String>,
    next: Mutex<usize>,
}

impl Replay {
    pub fn new(script: Vec<String>) -> Self {
        Self { script, next: Mutex::new(0) }
    }

    pub fn from_json(text: &str) -> Result<Self, PerceptionError> {
        let script: Vec<String> = serde_json::from_str(text).map_err(|e| PerceptionError::InvalidScript(e.to_string()))?;
        Ok(Self::new(script))
    }

    pub fn load(path: &Path) -> Result<Self, PerceptionError> {
        let text = std::fs::read_to_string(path).map_err(|e| PerceptionError::InvalidScript(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn remaining(&self) -> usize {
        self.script.len() - *self.next.lock().unwrap()
    }
}

impl Backend for Replay {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn answer(&self, _prompt: &Prompt, _side: Option<&SideChannel>) -> Result<String, PerceptionError> {
        let mut next = self.next.lock().unwrap();
        let line = self.script.get(*next).cloned().ok_or(PerceptionError::ReplayExhausted(self.script.len()))?;
        *next += 1;
        Ok(line)
    }
}

pub const REFUSAL_TEXT: &str = "I'm sorry, but I cannot determine that from the provided image.";

/// Replaces the inner backend's answer with a refusal on scheduled calls.
/// The schedule is indexed by call number and repeats.
pub struct RefusalInjector {
    inner: Arc<dyn Backend>,
    schedule: Vec<bool>,
    calls: AtomicUsize,
}

impl RefusalInjector {
    pub fn new(inner: Arc<dyn Backend>, schedule: Vec<bool>) -> Self {
        Self { inner, schedule, calls: AtomicUsize::new(0) }
    }

    /// Refuses the first `refused` calls of every `period`.
    pub fn periodic(inner: Arc<dyn Backend>, refused: usize, period: usize) -> Self {
        Self::new(inner, (0..period.max(1)).map(|i| i < refused).collect())
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for RefusalInjector {
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn answer(&self, prompt: &Prompt, side: Option<&SideChannel>) -> Result<String, PerceptionError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        let refuse = !self.schedule.is_empty() && self.schedule[n % self.schedule.len()];
        let answer = self.inner.answer(prompt, side)?;
        Ok(if refuse { REFUSAL_TEXT.to_string() } else { answer })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{bundled_registry, find_by_name, FillLevel};
    use crate::perception::{build_pairwise_prompt, parse_pairwise, parse_viscosity, PairwiseDecision, PromptVariant};
    use crate::render::{ImageFormat, PlotImage};
    use crate::sloshsim::{simulate_liquid, SimConfig};

    fn plot() -> PlotImage {
        PlotImage::from_bytes(ImageFormat::Svg, b"<svg width=\"4\" height=\"3\"></svg>".to_vec(), "(left) a (right) b").unwrap()
    }

    fn signal(name: &str, cfg: &SimConfig, seed: u64) -> TorqueSignal {
        let liquid = find_by_name(&bundled_registry(), name).unwrap().clone();
        simulate_liquid(&liquid, FillLevel::TwoThirds, cfg, seed).unwrap()
    }

    #[test]
    fn water_honey_pair_names_honey_side() {
        let oracle = HeuristicOracle::default();
        let cfg = SimConfig::noise_free();
        let (water, honey) = (signal("water", &cfg, 0), signal("honey", &cfg, 0));
        let prompt = build_pairwise_prompt(&plot(), PromptVariant::KnowledgeEnhanced);
        let text = oracle.answer(&prompt, Some(&SideChannel::Pair(water.clone(), honey.clone()))).unwrap();
        assert_eq!(parse_pairwise(&text), PairwiseDecision::Right);
        let swapped = oracle.answer(&prompt, Some(&SideChannel::Pair(honey, water))).unwrap();
        assert_eq!(parse_pairwise(&swapped), PairwiseDecision::Left);
    }

    #[test]
    fn pairwise_decision_flips_with_order() {
        let oracle = HeuristicOracle::default();
        let cfg = SimConfig::default();
        let prompt = build_pairwise_prompt(&plot(), PromptVariant::Plain);
        let names = ["coke", "olive oil", "whiskey", "orange juice"];
        for (i, a) in names.iter().enumerate() {
            for b in &names[i + 1..] {
                let (x, y) = (signal(a, &cfg, 7), signal(b, &cfg, 8));
                let ab = parse_pairwise(&oracle.answer(&prompt, Some(&SideChannel::Pair(x.clone(), y.clone()))).unwrap());
                let ba = parse_pairwise(&oracle.answer(&prompt, Some(&SideChannel::Pair(y, x))).unwrap());
                assert_eq!(ab, ba.flipped());
            }
        }
    }

    #[test]
    fn haptic_answers_parse() {
        let oracle = HeuristicOracle::default();
        let prompt = crate::perception::build_haptic_prompt("", &plot(), PromptVariant::Plain);
        let honey = signal("honey", &SimConfig::default(), 42);
        let class = parse_viscosity(&oracle.answer(&prompt, Some(&SideChannel::Signal(honey))).unwrap());
        assert!(matches!(class, ViscosityClass::High | ViscosityClass::ModerateHigh));
        let water = signal("water", &SimConfig::noise_free(), 0);
        assert_eq!(parse_viscosity(&oracle.answer(&prompt, Some(&SideChannel::Signal(water))).unwrap()), ViscosityClass::Low);
        assert!(matches!(oracle.answer(&prompt, None), Err(PerceptionError::MissingSideChannel(PromptKind::Haptic))));
    }

    #[test]
    fn replay_runs_out() {
        let replay = Replay::from_json(r#"["a", "b", "c"]"#).unwrap();
        let prompt = build_pairwise_prompt(&plot(), PromptVariant::Plain);
        for expected in ["a", "b", "c"] {
            assert_eq!(replay.answer(&prompt, None).unwrap(), expected);
        }
        assert!(matches!(replay.answer(&prompt, None), Err(PerceptionError::ReplayExhausted(3))));
        assert!(matches!(Replay::from_json("{}"), Err(PerceptionError::InvalidScript(_))));
    }

    #[test]
    fn injector_refuses_on_schedule() {
        let inner: Arc<dyn Backend> = Arc::new(Replay::new((0..10).map(|i| format!("The right one is more viscous ({i}).")).collect()));
        let injector = RefusalInjector::periodic(inner, 1, 5);
        let prompt = build_pairwise_prompt(&plot(), PromptVariant::Plain);
        let decisions: Vec<PairwiseDecision> = (0..10).map(|_| parse_pairwise(&injector.answer(&prompt, None).unwrap())).collect();
        let invalid: Vec<usize> = decisions.iter().enumerate().filter(|(_, d)| **d == PairwiseDecision::Invalid).map(|(i, _)| i).collect();
        assert_eq!(invalid, vec![0, 5]);
    }
}
