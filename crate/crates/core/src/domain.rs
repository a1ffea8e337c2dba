//! Domain types shared by every stage of the pipeline: the liquid registry,
//! torque signals, the agent's action/observation vocabulary and the
//! qualitative viscosity scale.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_REGISTRY: &str = include_str!("../data/registry.json");

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("malformed registry: {0}")]
    MalformedRegistry(String),
    #[error("viscosity must be positive, got {0}")]
    NonPositiveViscosity(f64),
    #[error("invalid class thresholds: {0}")]
    InvalidThresholds(String),
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContainerShape {
    Bottle,
    Carton,
    Jar,
    Can,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContainerMaterial {
    Plastic,
    Glass,
    Paper,
    Metal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerSpec {
    pub shape: ContainerShape,
    pub material: ContainerMaterial,
    pub opaque: bool,
    /// Bottom-to-opening axis length in meters.
    #[serde(rename = "length_m")]
    pub effective_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquidSpec {
    pub id: usize,
    pub name: String,
    /// Nominal dynamic viscosity in mPa·s.
    #[serde(rename = "viscosity_mpas")]
    pub nominal_viscosity: f64,
    #[serde(rename = "color")]
    pub color_descriptor: String,
    pub container: ContainerSpec,
    pub label_text: Option<String>,
}

/// Loads and validates a registry file (JSON array of liquid entries).
pub fn load_registry(path: impl AsRef<Path>) -> Result<Vec<LiquidSpec>, DomainError> {
    let text = std::fs::read_to_string(path)?;
    parse_registry(&text)
}

pub fn parse_registry(text: &str) -> Result<Vec<LiquidSpec>, DomainError> {
    if text.trim().is_empty() {
        return Err(DomainError::MalformedRegistry("empty registry document".into()));
    }
    let mut entries: Vec<LiquidSpec> =
        serde_json::from_str(text).map_err(|e| DomainError::MalformedRegistry(e.to_string()))?;
    validate_registry(&entries)?;
    entries.sort_by_key(|e| e.id);
    Ok(entries)
}

pub fn validate_registry(entries: &[LiquidSpec]) -> Result<(), DomainError> {
    if entries.is_empty() {
        return Err(DomainError::MalformedRegistry("registry has no entries".into()));
    }
    let mut seen = vec![false; entries.len()];
    for entry in entries {
        if !(entry.nominal_viscosity > 0.0) || !entry.nominal_viscosity.is_finite() {
            return Err(DomainError::MalformedRegistry(format!(
                "{}: viscosity {} is not positive",
                entry.name, entry.nominal_viscosity
            )));
        }
        let len = entry.container.effective_length;
        if !(len > 0.05 && len < 0.5) {
            return Err(DomainError::MalformedRegistry(format!(
                "{}: container length {len} m outside (0.05, 0.5)",
                entry.name
            )));
        }
        if entry.name.trim().is_empty() {
            return Err(DomainError::MalformedRegistry(format!("id {} has an empty name", entry.id)));
        }
        match seen.get_mut(entry.id) {
            Some(slot) if !*slot => *slot = true,
            Some(_) => {
                return Err(DomainError::MalformedRegistry(format!("duplicate id {}", entry.id)))
            }
            None => {
                return Err(DomainError::MalformedRegistry(format!(
                    "id {} breaks the contiguous range 0..{}",
                    entry.id,
                    entries.len()
                )))
            }
        }
    }
    Ok(())
}

pub fn save_registry(path: impl AsRef<Path>, entries: &[LiquidSpec]) -> Result<(), DomainError> {
    let text = serde_json::to_string_pretty(entries)
        .map_err(|e| DomainError::MalformedRegistry(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// The ten household liquids, indexed left to right as they stand in the
/// bundled scene.
pub fn bundled_registry() -> Vec<LiquidSpec> {
    parse_registry(BUNDLED_REGISTRY).expect("bundled registry is valid")
}

pub fn bundled_registry_json() -> &'static str {
    BUNDLED_REGISTRY
}

pub fn find_by_name<'a>(registry: &'a [LiquidSpec], name: &str) -> Option<&'a LiquidSpec> {
    let wanted = normalize_name(name);
    registry.iter().find(|l| normalize_name(&l.name) == wanted)
}

fn normalize_name(name: &str) -> String {
    name.trim().to_lowercase().replace(['-', '_'], " ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillLevel {
    OneThird,
    Half,
    TwoThirds,
}

impl FillLevel {
    pub const ALL: [FillLevel; 3] = [FillLevel::OneThird, FillLevel::Half, FillLevel::TwoThirds];

    pub fn as_str(self) -> &'static str {
        match self {
            FillLevel::OneThird => "one-third",
            FillLevel::Half => "half",
            FillLevel::TwoThirds => "two-thirds",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            FillLevel::OneThird => "One third",
            FillLevel::Half => "Half",
            FillLevel::TwoThirds => "Two thirds",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for FillLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FillLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace(['_', ' '], "-").as_str() {
            "one-third" | "onethird" | "third" | "1/3" => Ok(FillLevel::OneThird),
            "half" | "1/2" => Ok(FillLevel::Half),
            "two-thirds" | "twothirds" | "2/3" => Ok(FillLevel::TwoThirds),
            other => Err(format!("unknown fill level '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalStage {
    Raw,
    Filtered,
    Standardized,
}

impl fmt::Display for SignalStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalStage::Raw => "raw",
            SignalStage::Filtered => "filtered",
            SignalStage::Standardized => "standardized",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalMeta {
    pub liquid_id: Option<usize>,
    pub fill_level: Option<FillLevel>,
    pub seed: Option<u64>,
    pub stage: SignalStage,
}

/// Uniformly sampled torque trace. Raw samples are in N·m; once
/// standardized they are dimensionless.
#[derive(Debug, Clone, PartialEq)]
pub struct TorqueSignal {
    samples: Vec<f64>,
    sample_rate: f64,
    pub meta: SignalMeta,
}

impl TorqueSignal {
    pub fn new(samples: Vec<f64>, sample_rate: f64, meta: SignalMeta) -> Result<Self, DomainError> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(DomainError::InvalidSignal(format!("sample rate {sample_rate} Hz")));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(DomainError::InvalidSignal("non-finite sample".into()));
        }
        Ok(Self { samples, sample_rate, meta })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn stage(&self) -> SignalStage {
        self.meta.stage
    }

    /// Same metadata and rate, new samples and stage.
    pub fn with_samples(&self, samples: Vec<f64>, stage: SignalStage) -> Self {
        Self {
            samples,
            sample_rate: self.sample_rate,
            meta: SignalMeta { stage, ..self.meta.clone() },
        }
    }
}

pub fn sample_count(sample_rate: f64, duration: f64) -> usize {
    (sample_rate * duration).round() as usize
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divides by n).
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Action {
    ShakeContainer(usize),
    LookScene,
    LookContainer(usize),
    Finish(usize),
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::ShakeContainer(_) => ActionKind::ShakeContainer,
            Action::LookScene => ActionKind::LookScene,
            Action::LookContainer(_) => ActionKind::LookContainer,
            Action::Finish(_) => ActionKind::Finish,
        }
    }

    pub fn target(&self) -> Option<usize> {
        match *self {
            Action::ShakeContainer(i) | Action::LookContainer(i) | Action::Finish(i) => Some(i),
            Action::LookScene => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::ShakeContainer(i) => write!(f, "Shake[{i}]"),
            Action::LookScene => f.write_str("Look[Scene]"),
            Action::LookContainer(i) => write!(f, "Look[{i}]"),
            Action::Finish(i) => write!(f, "Finish[{i}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    LookScene,
    LookContainer,
    ShakeContainer,
    Finish,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::LookScene => "scene",
            ActionKind::LookContainer => "container",
            ActionKind::ShakeContainer => "shake",
            ActionKind::Finish => "finish",
        }
    }
}

impl std::str::FromStr for ActionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "scene" | "look-scene" | "lookscene" => Ok(ActionKind::LookScene),
            "container" | "look-container" | "lookcontainer" => Ok(ActionKind::LookContainer),
            "shake" | "shake-container" => Ok(ActionKind::ShakeContainer),
            "finish" => Ok(ActionKind::Finish),
            other => Err(format!("unknown action '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transparency {
    Transparent,
    Translucent,
    Opaque,
}

impl Transparency {
    pub fn as_str(self) -> &'static str {
        match self {
            Transparency::Transparent => "transparent",
            Transparency::Translucent => "translucent",
            Transparency::Opaque => "opaque",
        }
    }
}

/// Per-container visual attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualDescriptor {
    pub index: usize,
    pub color: String,
    pub transparency: Transparency,
    pub shape: String,
    pub material: String,
    #[serde(default)]
    pub label_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum StructuredObservation {
    Viscosity(ViscosityClass),
    Descriptor(VisualDescriptor),
    SceneColors(Vec<(usize, String)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    pub source_action: Action,
    pub structured: Option<StructuredObservation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextStep {
    pub predicted: String,
    pub action: Action,
    pub observation: Observation,
}

/// Append-only record of (prediction, action, observation) triples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeContext {
    steps: Vec<ContextStep>,
}

impl EpisodeContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, predicted: String, action: Action, observation: Observation) {
        self.steps.push(ContextStep { predicted, action, observation });
    }

    pub fn steps(&self) -> &[ContextStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Numbered Thought/Action/Observation lines.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (i, step) in self.steps.iter().enumerate() {
            let n = i + 1;
            out.push_str(&format!("Thought {n}: {}\n", step.predicted.trim()));
            out.push_str(&format!("Action {n}: {}\n", step.action));
            out.push_str(&format!("Observation {n}: {}\n", step.observation.text.trim()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViscosityClass {
    Low,
    ModerateLow,
    Moderate,
    ModerateHigh,
    High,
    Invalid,
}

impl ViscosityClass {
    pub const ORDERED: [ViscosityClass; 5] = [
        ViscosityClass::Low,
        ViscosityClass::ModerateLow,
        ViscosityClass::Moderate,
        ViscosityClass::ModerateHigh,
        ViscosityClass::High,
    ];

    /// Position on the ordered scale; `None` for `Invalid`.
    pub fn rank(self) -> Option<usize> {
        Self::ORDERED.iter().position(|c| *c == self)
    }

    pub fn phrase(self) -> &'static str {
        match self {
            ViscosityClass::Low => "low",
            ViscosityClass::ModerateLow => "low to moderate",
            ViscosityClass::Moderate => "moderate",
            ViscosityClass::ModerateHigh => "moderate to high",
            ViscosityClass::High => "high",
            ViscosityClass::Invalid => "undetermined",
        }
    }

    pub fn distance(self, other: ViscosityClass) -> Option<usize> {
        Some(self.rank()?.abs_diff(other.rank()?))
    }
}

impl PartialOrd for ViscosityClass {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.rank()?.partial_cmp(&other.rank()?)
    }
}

impl fmt::Display for ViscosityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.phrase())
    }
}

/// Upper bounds (exclusive) of the first four classes on some numeric
/// scale; values at or above the last bound are `High`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds(pub [f64; 4]);

impl ClassThresholds {
    /// mPa·s bounds for registry viscosities.
    pub const VISCOSITY_DEFAULT: ClassThresholds = ClassThresholds([5.0, 50.0, 200.0, 2000.0]);
    /// Log-decrement bounds used by the heuristic oracle.
    pub const DECREMENT_DEFAULT: ClassThresholds = ClassThresholds([0.35, 0.7, 1.2, 2.0]);

    pub fn validate(&self) -> Result<(), DomainError> {
        let t = &self.0;
        if t.iter().any(|x| !x.is_finite()) || t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DomainError::InvalidThresholds(format!("{t:?} must be finite and strictly increasing")));
        }
        Ok(())
    }

    /// Ties round up to the higher class.
    pub fn classify(&self, value: f64) -> ViscosityClass {
        if value.is_nan() {
            return ViscosityClass::Invalid;
        }
        let idx = self.0.iter().take_while(|bound| value >= **bound).count();
        ViscosityClass::ORDERED[idx]
    }
}

pub fn viscosity_class_of(viscosity: f64, thresholds: &ClassThresholds) -> Result<ViscosityClass, DomainError> {
    if !(viscosity > 0.0) {
        return Err(DomainError::NonPositiveViscosity(viscosity));
    }
    Ok(thresholds.classify(viscosity))
}
