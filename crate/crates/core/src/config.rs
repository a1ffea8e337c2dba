//! Run configuration. One TOML document with a section per module; command
//! line flags are applied on top and the resolved result is snapshotted
//! next to every run's artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{parse_mask, EnvMode, DEFAULT_MAX_STEPS};
use crate::domain::{bundled_registry, load_registry, ActionKind, ClassThresholds, FillLevel, LiquidSpec};
use crate::dsp::DspConfig;
use crate::eval::DEFAULT_BIN_EDGES;
use crate::perception::{BackendKind, PromptVariant, RemoteSettings};
use crate::render::PlotStyle;
use crate::sloshsim::SimConfig;
use crate::vision::{bundled_fixture, SceneFixture, Setting};

pub const DETECTOR_VAR: &str = "DETECTOR_ENDPOINT";
pub const SNAPSHOT_NAME: &str = "resolved-config.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Liquid registry JSON; the bundled registry when unset.
    pub registry: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub sloshsim: SimConfig,
    pub dsp: DspConfig,
    pub render: PlotStyle,
    pub vision: VisionSection,
    pub perception: PerceptionSection,
    pub agent: AgentSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            registry: None,
            output_dir: PathBuf::from("out"),
            sloshsim: SimConfig::default(),
            dsp: DspConfig::default(),
            render: PlotStyle::default(),
            vision: VisionSection::default(),
            perception: PerceptionSection::default(),
            agent: AgentSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisionSection {
    /// Fixture directory; the bundled fixture for the setting when unset.
    pub fixture_dir: Option<PathBuf>,
    /// Open-vocabulary detector service. Falls back to `DETECTOR_ENDPOINT`.
    pub detector_endpoint: Option<String>,
    pub detector_queries: Vec<String>,
    pub detector_timeout_s: f64,
}

impl Default for VisionSection {
    fn default() -> Self {
        Self { fixture_dir: None, detector_endpoint: None, detector_queries: vec!["a bottle".into()], detector_timeout_s: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionSection {
    pub backend: BackendKind,
    /// JSON array of scripted answers for the replay backend.
    pub replay_script: Option<PathBuf>,
    pub decrement_thresholds: ClassThresholds,
    pub viscosity_thresholds: ClassThresholds,
    pub remote: RemoteSettings,
}

impl Default for PerceptionSection {
    fn default() -> Self {
        Self {
            backend: BackendKind::HeuristicOracle,
            replay_script: None,
            decrement_thresholds: ClassThresholds::DECREMENT_DEFAULT,
            viscosity_thresholds: ClassThresholds::VISCOSITY_DEFAULT,
            remote: RemoteSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    /// Reasoning backend for recognition episodes.
    pub backend: BackendKind,
    pub max_steps: usize,
    /// Action masks to run, e.g. `["scene", "scene,container,shake"]`.
    pub actions: Vec<String>,
    pub settings: Vec<Setting>,
    pub mode: EnvMode,
    pub fill: FillLevel,
    pub prompt: PromptVariant,
    /// Write one trace directory per episode.
    pub traces: bool,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            backend: BackendKind::RuleBased,
            max_steps: DEFAULT_MAX_STEPS,
            actions: vec!["scene".into(), "scene,shake".into(), "scene,container".into(), "scene,container,shake".into()],
            settings: Setting::ALL.to_vec(),
            mode: EnvMode::DescriptorMode,
            fill: FillLevel::TwoThirds,
            prompt: PromptVariant::KnowledgeEnhanced,
            traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub trials: usize,
    pub fills: Vec<FillLevel>,
    pub prompts: Vec<PromptVariant>,
    pub seed_base: u64,
    pub bin_edges: Vec<f64>,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            trials: 10,
            fills: FillLevel::ALL.to_vec(),
            prompts: PromptVariant::ALL.to_vec(),
            seed_base: 0,
            bin_edges: DEFAULT_BIN_EDGES.to_vec(),
            workers: 0,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.into(), reason: e.to_string() })?;
        Self::parse(&text).map_err(|e| ConfigError::Read { path: path.into(), reason: e.to_string() })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(invalid)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf, ConfigError> {
        let path = dir.join(SNAPSHOT_NAME);
        let err = |e: std::io::Error| ConfigError::Read { path: path.clone(), reason: e.to_string() };
        std::fs::create_dir_all(dir).map_err(err)?;
        std::fs::write(&path, self.to_toml()).map_err(err)?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for path in [&self.registry, &self.vision.fixture_dir, &self.perception.replay_script].into_iter().flatten() {
            if !path.exists() {
                return Err(ConfigError::Invalid(format!("{} does not exist", path.display())));
            }
        }
        self.sloshsim.validate().map_err(invalid)?;
        self.dsp.validate().map_err(invalid)?;
        self.perception.decrement_thresholds.validate().map_err(invalid)?;
        self.perception.viscosity_thresholds.validate().map_err(invalid)?;
        if self.render.width < 16 || self.render.height < 16 || !(self.render.stroke_width > 0.0) {
            return Err(invalid("plot must be at least 16x16 px with a positive stroke width"));
        }
        if !(self.vision.detector_timeout_s > 0.0) || !(self.perception.remote.timeout_s > 0.0) {
            return Err(invalid("timeouts must be positive"));
        }
        if self.agent.max_steps == 0 {
            return Err(invalid("agent.max_steps must be at least 1"));
        }
        if self.agent.actions.is_empty() || self.agent.settings.is_empty() {
            return Err(invalid("agent.actions and agent.settings must not be empty"));
        }
        self.masks()?;
        if self.eval.trials == 0 {
            return Err(invalid("eval.trials must be at least 1"));
        }
        if self.eval.fills.is_empty() || self.eval.prompts.is_empty() {
            return Err(invalid("eval.fills and eval.prompts must not be empty"));
        }
        let edges = &self.eval.bin_edges;
        if edges.is_empty() || edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid(format!("eval.bin_edges must be finite and strictly increasing: {edges:?}")));
        }
        let replay = [self.perception.backend, self.agent.backend].contains(&BackendKind::Replay);
        if replay && self.perception.replay_script.is_none() {
            return Err(invalid("the replay backend needs perception.replay_script"));
        }
        Ok(())
    }

    pub fn masks(&self) -> Result<Vec<Vec<ActionKind>>, ConfigError> {
        self.agent
            .actions
            .iter()
            .map(|m| {
                let mask = parse_mask(m).map_err(invalid)?;
                if mask.iter().all(|k| *k == ActionKind::Finish) {
                    return Err(invalid(format!("action mask '{m}' has no perception action")));
                }
                Ok(mask)
            })
            .collect()
    }

    pub fn registry(&self) -> Result<Vec<LiquidSpec>, ConfigError> {
        match &self.registry {
            Some(path) => load_registry(path).map_err(invalid),
            None => Ok(bundled_registry()),
        }
    }

    pub fn fixture(&self, setting: Setting) -> Result<SceneFixture, ConfigError> {
        match &self.vision.fixture_dir {
            Some(dir) => {
                let fixture = SceneFixture::load(dir).map_err(invalid)?;
                if fixture.setting() != setting {
                    return Err(invalid(format!("fixture {} is {}, run asks for {}", dir.display(), fixture.setting().as_str(), setting.as_str())));
                }
                Ok(fixture)
            }
            None => Ok(bundled_fixture(setting)),
        }
    }

    pub fn detector_endpoint(&self) -> Option<String> {
        self.vision.detector_endpoint.clone().or_else(|| std::env::var(DETECTOR_VAR).ok()).filter(|s| !s.trim().is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = RunConfig::parse(
            "[sloshsim]\nnoise_rel = 0.0\n[eval]\ntrials = 3\nfills = [\"half\"]\n[agent]\nactions = [\"scene\"]\nsettings = [\"without-labels\"]\n",
        )
        .unwrap();
        assert_eq!(cfg.sloshsim.noise_rel, 0.0);
        assert_eq!(cfg.eval.trials, 3);
        assert_eq!(cfg.eval.fills, vec![FillLevel::Half]);
        assert_eq!(cfg.masks().unwrap(), vec![vec![ActionKind::LookScene]]);
        assert_eq!(cfg.dsp, DspConfig::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse("[eval]\nbogus = 1\n").is_err());
        let mut cfg = RunConfig::default();
        cfg.eval.bin_edges = vec![0.0, 100.0, 10.0];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.registry = Some("/nonexistent/registry.json".into());
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.agent.actions = vec!["scene,jump".into()];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.perception.backend = BackendKind::Replay;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.dsp.order = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn snapshot_is_reloadable() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.eval.seed_base = 99;
        let path = cfg.write_snapshot(dir.path()).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), cfg);
    }
}
