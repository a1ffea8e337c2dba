//! Command-line entry point.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::agent::{mask_label, EnvMode, EnvironmentHandle};
use crate::config::{ConfigError, RunConfig};
use crate::domain::{find_by_name, FillLevel, LiquidSpec, SignalStage};
use crate::dsp::{self, io as signal_io};
use crate::eval::report::{self, confusion_csv, confusion_svg};
use crate::eval::{
    accuracy, confusion_from, pairwise_experiment, recognition_experiment, EpisodeRecord, EvalError, ExperimentConfig, PairwiseResult,
    Partial, RecognitionConfig,
};
use crate::perception::{decrement_class, Backend, BackendKind, HeuristicOracle, PromptVariant, RemoteLvlm, Replay, RuleBased};
use crate::render::{self, ImageFormat};
use crate::sloshsim::simulate_liquid;
use crate::vision::{detect, RemoteProvider, SceneFixture, Setting};

#[derive(Debug, Parser)]
#[command(name = "liquid-perception", version, about = "Simulate, process and reason about liquid slosh signals")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for run artifacts.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for experiments (0 = one per core).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a raw torque trace for one registry liquid.
    Simulate(SimulateArgs),
    /// Filter and standardize a raw trace.
    Process(ProcessArgs),
    /// Plot one processed trace, or two side by side.
    Plot(PlotArgs),
    /// Run the pairwise viscosity comparison.
    Pairwise(PairwiseArgs),
    /// Run liquid recognition episodes.
    Recognize(RecognizeArgs),
    /// Rebuild reports from stored result files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub liquid: String,
    #[arg(long, default_value = "two-thirds")]
    pub fill: FillLevel,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; a JSON sidecar is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProcessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// One or two processed traces.
    #[arg(long, required = true, num_args = 1..=2)]
    pub input: Vec<PathBuf>,
    /// `.svg` or `.png`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PairwiseArgs {
    #[arg(long)]
    pub backend: Option<BackendKind>,
    /// `plain`, `knowledge` or `both`.
    #[arg(long)]
    pub prompt: Option<String>,
    /// `all` or a comma-separated list of fill levels.
    #[arg(long)]
    pub fills: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Markdown report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecognizeArgs {
    #[arg(long)]
    pub backend: Option<BackendKind>,
    /// `labels`, `nolabels` or `both`.
    #[arg(long)]
    pub setting: Option<String>,
    /// Action mask such as `scene,container,shake`; repeat for several.
    #[arg(long)]
    pub actions: Vec<String>,
    #[arg(long)]
    pub mode: Option<EnvMode>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Write a trace directory per episode.
    #[arg(long)]
    pub traces: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Pairwise results CSV.
    #[arg(long)]
    pub pairwise: Option<PathBuf>,
    /// Recognition episodes CSV.
    #[arg(long)]
    pub episodes: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Backend(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Backend(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "error: {m}"),
            CliError::Backend(m) => write!(f, "backend failure: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn parse_list<T: std::str::FromStr<Err = String> + Clone>(text: &str, all: &[T]) -> Result<Vec<T>, CliError> {
    match text.trim().to_lowercase().as_str() {
        "all" | "both" => Ok(all.to_vec()),
        _ => text.split(',').map(|p| p.trim().parse::<T>().map_err(validation)).collect(),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| validation(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| validation(format!("{}: {e}", path.display())))
}

fn dir_of(path: &Path) -> PathBuf {
    path.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &cli.out_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(w) = cli.workers {
        cfg.eval.workers = w;
    }
    match cli.command {
        Command::Simulate(a) => cmd_simulate(cfg, a),
        Command::Process(a) => cmd_process(cfg, a),
        Command::Plot(a) => cmd_plot(cfg, a),
        Command::Pairwise(a) => cmd_pairwise(cfg, a),
        Command::Recognize(a) => cmd_recognize(cfg, a),
        Command::Report(a) => cmd_report(cfg, a),
    }
}

fn cmd_simulate(cfg: RunConfig, a: SimulateArgs) -> Result<(), CliError> {
    cfg.validate()?;
    let registry = cfg.registry()?;
    let liquid = find_by_name(&registry, &a.liquid).ok_or_else(|| validation(format!("unknown liquid '{}'", a.liquid)))?;
    let out = a.out.unwrap_or_else(|| cfg.output_dir.join(format!("{}-{}-{}.csv", liquid.name.replace(' ', "-"), a.fill.as_str(), a.seed)));
    let signal = simulate_liquid(liquid, a.fill, &cfg.sloshsim, a.seed).map_err(validation)?;
    cfg.write_snapshot(&dir_of(&out))?;
    signal_io::write_signal(&out, &signal).map_err(validation)?;
    println!("wrote {} ({} samples)", out.display(), signal.len());
    Ok(())
}

fn cmd_process(cfg: RunConfig, a: ProcessArgs) -> Result<(), CliError> {
    cfg.validate()?;
    let raw = signal_io::read_signal(&a.input).map_err(validation)?;
    if raw.stage() != SignalStage::Raw {
        return Err(validation(format!("{} is {}, process needs a raw trace", a.input.display(), raw.stage())));
    }
    let processed = dsp::condition(&raw, &cfg.dsp).map_err(validation)?;
    let out = a.out.unwrap_or_else(|| {
        let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("signal");
        dir_of(&a.input).join(format!("{stem}-processed.csv"))
    });
    cfg.write_snapshot(&dir_of(&out))?;
    signal_io::write_signal(&out, &processed).map_err(validation)?;
    let oracle = HeuristicOracle::new(cfg.dsp.clone(), cfg.perception.decrement_thresholds);
    match oracle.feature(&processed) {
        Ok(Some(delta)) => println!("log decrement {delta:.3}: {}", decrement_class(Some(delta), &cfg.perception.decrement_thresholds)),
        Ok(None) => println!("oscillation dies out immediately: {}", decrement_class(None, &cfg.perception.decrement_thresholds)),
        Err(e) => println!("no damping estimate: {e}"),
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_plot(mut cfg: RunConfig, a: PlotArgs) -> Result<(), CliError> {
    let ext = a.out.extension().and_then(|e| e.to_str()).unwrap_or("");
    cfg.render.format = ext.parse::<ImageFormat>().map_err(validation)?;
    cfg.validate()?;
    let mut plots = Vec::new();
    for input in &a.input {
        let signal = signal_io::read_signal(input).map_err(validation)?;
        if signal.stage() == SignalStage::Raw {
            return Err(validation(format!("{} is raw; run `process` first", input.display())));
        }
        plots.push(render::render_timeseries(&signal, &cfg.render).map_err(validation)?);
    }
    let image = match plots.as_slice() {
        [one] => one.clone(),
        [left, right] => render::concat_horizontal(left, right).map_err(validation)?,
        _ => unreachable!("clap limits inputs to two"),
    };
    cfg.write_snapshot(&dir_of(&a.out))?;
    write_file(&a.out, image.bytes())?;
    println!("wrote {} ({}x{})", a.out.display(), image.width(), image.height());
    Ok(())
}

fn build_backend(kind: BackendKind, cfg: &RunConfig, registry: &[LiquidSpec]) -> Result<Arc<dyn Backend>, CliError> {
    let oracle = HeuristicOracle::new(cfg.dsp.clone(), cfg.perception.decrement_thresholds);
    Ok(match kind {
        BackendKind::HeuristicOracle => Arc::new(oracle),
        BackendKind::RuleBased => Arc::new(RuleBased::new(registry.to_vec(), cfg.perception.viscosity_thresholds, oracle)),
        BackendKind::RemoteLvlm => {
            let remote = RemoteLvlm::from_env(cfg.perception.remote.clone()).map_err(|e| CliError::Backend(e.to_string()))?;
            Arc::new(remote)
        }
        BackendKind::Replay => {
            let path = cfg.perception.replay_script.as_ref().ok_or_else(|| validation("the replay backend needs --replay"))?;
            Arc::new(Replay::load(path).map_err(validation)?)
        }
    })
}

fn flush_partial<T: serde::Serialize>(path: &Path, partial: &Partial<T>) -> CliError {
    let note = match report::write_csv(path, &partial.results) {
        Ok(()) => format!("; {} completed results in {}", partial.results.len(), path.display()),
        Err(e) => format!("; partial results not saved: {e}"),
    };
    match partial.error {
        EvalError::InvalidConfig(_) => validation(format!("{}{note}", partial.error)),
        _ => CliError::Backend(format!("{}{note}", partial.error)),
    }
}

fn cmd_pairwise(mut cfg: RunConfig, a: PairwiseArgs) -> Result<(), CliError> {
    if let Some(b) = a.backend {
        cfg.perception.backend = b;
    }
    if let Some(p) = &a.prompt {
        cfg.eval.prompts = parse_list(p, &PromptVariant::ALL)?;
    }
    if let Some(f) = &a.fills {
        cfg.eval.fills = parse_list(f, &FillLevel::ALL)?;
    }
    if let Some(t) = a.trials {
        cfg.eval.trials = t;
    }
    if let Some(s) = a.seed {
        cfg.eval.seed_base = s;
    }
    if let Some(r) = a.replay {
        cfg.perception.replay_script = Some(r);
    }
    if cfg.perception.backend == BackendKind::Replay {
        cfg.eval.workers = 1;
    }
    cfg.validate()?;
    let registry = cfg.registry()?;
    let backend = build_backend(cfg.perception.backend, &cfg, &registry)?;
    let out_dir = cfg.output_dir.clone();
    cfg.write_snapshot(&out_dir)?;
    let results_path = out_dir.join("pairwise.csv");
    let exp = ExperimentConfig {
        seed_base: cfg.eval.seed_base,
        workers: cfg.eval.workers,
        sim: cfg.sloshsim.clone(),
        dsp: cfg.dsp.clone(),
        style: cfg.render.clone(),
    };
    let mut results: Vec<PairwiseResult> = Vec::new();
    for &variant in &cfg.eval.prompts {
        match pairwise_experiment(&registry, &cfg.eval.fills, cfg.eval.trials, variant, backend.as_ref(), &exp) {
            Ok(rs) => results.extend(rs),
            Err(mut partial) => {
                results.append(&mut partial.results);
                partial.results = results;
                return Err(flush_partial(&results_path, &partial));
            }
        }
    }
    report::write_csv(&results_path, &results).map_err(validation)?;
    let md = report::pairwise_markdown(&results, &registry, &cfg.eval.bin_edges).map_err(validation)?;
    let report_path = a.report.unwrap_or_else(|| out_dir.join("pairwise.md"));
    write_file(&report_path, &md)?;
    for &variant in &cfg.eval.prompts {
        for &fill in &cfg.eval.fills {
            let subset: Vec<PairwiseResult> = results.iter().filter(|r| r.prompt_variant == variant && r.fill == fill).cloned().collect();
            let acc = accuracy(&subset).map_or_else(|_| "n/a".to_string(), |v| format!("{v:.1}%"));
            println!("{} {}: accuracy {acc}", variant.as_str(), fill.as_str());
        }
    }
    println!("wrote {} and {}", results_path.display(), report_path.display());
    Ok(())
}

fn redetect(fixture: SceneFixture, endpoint: &str, cfg: &RunConfig) -> Result<SceneFixture, CliError> {
    let Some(scene) = fixture.scene_image().cloned() else {
        return Err(validation("remote detection needs a scene image in the fixture"));
    };
    let provider = RemoteProvider::new(endpoint, Duration::from_secs_f64(cfg.vision.detector_timeout_s)).map_err(|e| CliError::Backend(e.to_string()))?;
    let boxes = detect(&provider, &scene, &cfg.vision.detector_queries).map_err(|e| CliError::Backend(e.to_string()))?;
    SceneFixture::new(fixture.setting(), Some(scene), boxes, fixture.descriptors().to_vec()).map_err(validation)
}

fn cmd_recognize(mut cfg: RunConfig, a: RecognizeArgs) -> Result<(), CliError> {
    if let Some(b) = a.backend {
        cfg.agent.backend = b;
    }
    if let Some(s) = &a.setting {
        cfg.agent.settings = parse_list(s, &Setting::ALL)?;
    }
    if !a.actions.is_empty() {
        cfg.agent.actions = a.actions.clone();
    }
    if let Some(m) = a.mode {
        cfg.agent.mode = m;
    }
    if let Some(t) = a.trials {
        cfg.eval.trials = t;
    }
    if let Some(s) = a.seed {
        cfg.eval.seed_base = s;
    }
    if let Some(f) = a.fixture {
        cfg.vision.fixture_dir = Some(f);
    }
    if let Some(r) = a.replay {
        cfg.perception.replay_script = Some(r);
    }
    cfg.agent.traces |= a.traces;
    if cfg.agent.backend == BackendKind::Replay {
        cfg.eval.workers = 1;
    }
    cfg.validate()?;
    let registry = cfg.registry()?;
    let masks = cfg.masks()?;
    let backend = build_backend(cfg.agent.backend, &cfg, &registry)?;
    let out_dir = cfg.output_dir.clone();
    cfg.write_snapshot(&out_dir)?;
    let episodes_path = out_dir.join("episodes.csv");
    let rec = RecognitionConfig {
        seed_base: cfg.eval.seed_base,
        workers: cfg.eval.workers,
        max_steps: cfg.agent.max_steps,
        trace_dir: cfg.agent.traces.then(|| out_dir.join("traces")),
    };
    let mut episodes: Vec<EpisodeRecord> = Vec::new();
    for &setting in &cfg.agent.settings {
        let mut fixture = cfg.fixture(setting)?;
        if let Some(endpoint) = cfg.detector_endpoint() {
            fixture = redetect(fixture, &endpoint, &cfg)?;
        }
        let mut env = EnvironmentHandle::from_registry(fixture, &registry, cfg.agent.mode).map_err(validation)?;
        env.fill = cfg.agent.fill;
        env.sim = cfg.sloshsim.clone();
        env.dsp = cfg.dsp.clone();
        env.style = cfg.render.clone();
        env.variant = cfg.agent.prompt;
        for mask in &masks {
            match recognition_experiment(&registry, mask, cfg.eval.trials, backend.as_ref(), &env, &rec) {
                Ok(run) => {
                    let label = mask_label(mask);
                    let valid = run.matrix.total();
                    let acc = run.accuracy.map_or_else(|| "n/a".to_string(), |v| format!("{v:.1}%"));
                    println!("{} {label}: accuracy {acc} ({valid} answered of {} episodes)", setting.as_str(), run.episodes.len());
                    let stem = format!("confusion-{}-{}", setting.as_str(), label.replace(',', "+"));
                    write_file(&out_dir.join(format!("{stem}.csv")), confusion_csv(&run.matrix))?;
                    write_file(&out_dir.join(format!("{stem}.svg")), confusion_svg(&run.matrix, &format!("{} / {label}", setting.as_str())))?;
                    episodes.extend(run.episodes);
                }
                Err(mut partial) => {
                    episodes.append(&mut partial.results);
                    partial.results = episodes;
                    return Err(flush_partial(&episodes_path, &partial));
                }
            }
        }
    }
    report::write_csv(&episodes_path, &episodes).map_err(validation)?;
    let report_path = a.report.unwrap_or_else(|| out_dir.join("recognition.md"));
    write_file(&report_path, report::recognition_markdown(&episodes))?;
    println!("wrote {} and {}", episodes_path.display(), report_path.display());
    Ok(())
}

fn cmd_report(cfg: RunConfig, a: ReportArgs) -> Result<(), CliError> {
    if a.pairwise.is_none() && a.episodes.is_none() {
        return Err(validation("report needs --pairwise and/or --episodes"));
    }
    cfg.validate()?;
    let registry = cfg.registry()?;
    let mut md = String::new();
    if let Some(path) = &a.pairwise {
        let results: Vec<PairwiseResult> = report::read_csv(path).map_err(validation)?;
        md.push_str(&report::pairwise_markdown(&results, &registry, &cfg.eval.bin_edges).map_err(validation)?);
    }
    if let Some(path) = &a.episodes {
        let episodes: Vec<EpisodeRecord> = report::read_csv(path).map_err(validation)?;
        if !md.is_empty() {
            md.push('\n');
        }
        md.push_str(&report::recognition_markdown(&episodes));
        let mut groups: Vec<(Setting, String)> = episodes.iter().map(|e| (e.setting, e.mask.clone())).collect();
        groups.sort_by(|x, y| (x.0.as_str(), &x.1).cmp(&(y.0.as_str(), &y.1)));
        groups.dedup();
        let labels: Vec<String> = registry.iter().map(|l| l.name.clone()).collect();
        for (setting, mask) in groups {
            let subset: Vec<EpisodeRecord> = episodes.iter().filter(|e| e.setting == setting && e.mask == mask).cloned().collect();
            let m = confusion_from(&subset, labels.clone());
            let stem = format!("confusion-{}-{}", setting.as_str(), mask.replace(',', "+"));
            let dir = dir_of(&a.out);
            write_file(&dir.join(format!("{stem}.csv")), confusion_csv(&m))?;
            write_file(&dir.join(format!("{stem}.svg")), confusion_svg(&m, &format!("{} / {mask}", setting.as_str())))?;
        }
    }
    cfg.write_snapshot(&dir_of(&a.out))?;
    write_file(&a.out, &md)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
