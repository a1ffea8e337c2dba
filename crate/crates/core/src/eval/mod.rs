//! Pairwise viscosity and recognition experiments.

pub mod report;

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{mask_label, run_episode, EnvironmentHandle, Outcome, RecognitionTask, DEFAULT_MAX_STEPS};
use crate::domain::{ActionKind, FillLevel, LiquidSpec};
use crate::dsp::{self, DspConfig};
use crate::perception::{build_pairwise_prompt, parse_pairwise, Backend, PairwiseDecision, PromptVariant, SideChannel};
use crate::render::{self, PlotStyle};
use crate::sloshsim::{simulate_liquid, SimConfig};
use crate::vision::Setting;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("every result is invalid; accuracy is undefined")]
    AllInvalid,
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("trial failed: {0}")]
    Trial(String),
    #[error("{0}")]
    Io(String),
}

/// Results gathered before a failing trial stopped the run.
#[derive(Debug)]
pub struct Partial<T> {
    pub results: Vec<T>,
    pub error: EvalError,
}

impl<T> fmt::Display for Partial<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} completed trials)", self.error, self.results.len())
    }
}

impl<T: fmt::Debug> std::error::Error for Partial<T> {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub liquid_a: usize,
    pub liquid_b: usize,
    pub fill: FillLevel,
    pub trial: usize,
    pub prompt_variant: PromptVariant,
    pub seed: u64,
    pub left: usize,
    pub right: usize,
    pub decision: PairwiseDecision,
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed_base: u64,
    pub workers: usize,
    pub sim: SimConfig,
    pub dsp: DspConfig,
    pub style: PlotStyle,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, EvalError> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| EvalError::InvalidConfig(e.to_string()))
}

/// Runs `jobs` on the worker pool. After the first failure remaining jobs
/// are skipped; completed results are kept in job order.
fn run_jobs<J: Sync, T: Send>(workers: usize, jobs: &[J], f: impl Fn(&J) -> Result<T, EvalError> + Sync) -> Result<Vec<T>, Partial<T>> {
    let abort = AtomicBool::new(false);
    let outcomes: Vec<Option<Result<T, EvalError>>> = pool(workers)
        .map_err(|error| Partial { results: Vec::new(), error })?
        .install(|| {
            jobs.par_iter()
                .map(|job| {
                    if abort.load(Ordering::SeqCst) {
                        return None;
                    }
                    let out = f(job);
                    if out.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    Some(out)
                })
                .collect()
        });
    let mut results = Vec::with_capacity(outcomes.len());
    let mut first_error = None;
    for outcome in outcomes.into_iter().flatten() {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) if first_error.is_none() => first_error = Some(e),
            Err(_) => {}
        }
    }
    match first_error {
        None => Ok(results),
        Some(error) => Err(Partial { results, error }),
    }
}

/// Unordered pairs `(i, j)`, `i < j`, of registry positions with distinct
/// nominal viscosities, in lexicographic order.
pub fn registry_pairs(registry: &[LiquidSpec]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..registry.len() {
        for j in i + 1..registry.len() {
            if registry[i].nominal_viscosity != registry[j].nominal_viscosity {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Seed of one trial: `base + pair_index * trials + trial`, where the pair
/// index runs over fills then pairs.
pub fn trial_seed(base: u64, fill_index: usize, pair_index: usize, pairs: usize, trials: usize, trial: usize) -> u64 {
    base.wrapping_add(((fill_index * pairs + pair_index) * trials + trial) as u64)
}

struct PairJob {
    fill: FillLevel,
    pair: (usize, usize),
    trial: usize,
    seed: u64,
}

fn pairwise_trial(
    registry: &[LiquidSpec],
    job: &PairJob,
    variant: PromptVariant,
    backend: &dyn Backend,
    cfg: &ExperimentConfig,
) -> Result<PairwiseResult, EvalError> {
    let (a, b) = (&registry[job.pair.0], &registry[job.pair.1]);
    let trial_err = |e: &dyn fmt::Display| EvalError::Trial(format!("{} vs {} ({}, trial {}): {e}", a.name, b.name, job.fill, job.trial));
    let swap = ChaCha8Rng::seed_from_u64(job.seed).gen_bool(0.5);
    let (left, right) = if swap { (b, a) } else { (a, b) };
    let signal = |liquid: &LiquidSpec, salt: u64| -> Result<_, EvalError> {
        let raw = simulate_liquid(liquid, job.fill, &cfg.sim, job.seed.wrapping_mul(2).wrapping_add(salt)).map_err(|e| trial_err(&e))?;
        dsp::condition(&raw, &cfg.dsp).map_err(|e| trial_err(&e))
    };
    let (ls, rs) = (signal(left, u64::from(swap))?, signal(right, u64::from(!swap))?);
    let lp = render::render_timeseries(&ls, &cfg.style).map_err(|e| trial_err(&e))?;
    let rp = render::render_timeseries(&rs, &cfg.style).map_err(|e| trial_err(&e))?;
    let pair_plot = render::concat_horizontal(&lp, &rp).map_err(|e| trial_err(&e))?;
    let prompt = build_pairwise_prompt(&pair_plot, variant);
    let text = backend.answer(&prompt, Some(&SideChannel::Pair(ls, rs))).map_err(|e| trial_err(&e))?;
    let decision = parse_pairwise(&text);
    let chosen = match decision {
        PairwiseDecision::Left => Some(left),
        PairwiseDecision::Right => Some(right),
        PairwiseDecision::Invalid => None,
    };
    let more_viscous = if a.nominal_viscosity > b.nominal_viscosity { a.id } else { b.id };
    Ok(PairwiseResult {
        liquid_a: a.id,
        liquid_b: b.id,
        fill: job.fill,
        trial: job.trial,
        prompt_variant: variant,
        seed: job.seed,
        left: left.id,
        right: right.id,
        decision,
        correct: chosen.map(|c| c.id == more_viscous),
    })
}

/// Every distinct-viscosity pair at every fill, `trials` times. Results are
/// ordered by fill, pair, trial regardless of worker scheduling.
pub fn pairwise_experiment(
    registry: &[LiquidSpec],
    fills: &[FillLevel],
    trials: usize,
    variant: PromptVariant,
    backend: &dyn Backend,
    cfg: &ExperimentConfig,
) -> Result<Vec<PairwiseResult>, Partial<PairwiseResult>> {
    if trials == 0 {
        return Err(Partial { results: vec![], error: EvalError::InvalidConfig("trials must be at least 1".into()) });
    }
    let pairs = registry_pairs(registry);
    let mut jobs = Vec::new();
    for (fill_index, &fill) in fills.iter().enumerate() {
        for (pair_index, &pair) in pairs.iter().enumerate() {
            for trial in 0..trials {
                let seed = trial_seed(cfg.seed_base, fill_index, pair_index, pairs.len(), trials, trial);
                jobs.push(PairJob { fill, pair, trial, seed });
            }
        }
    }
    run_jobs(cfg.workers, &jobs, |job| pairwise_trial(registry, job, variant, backend, cfg))
}

/// Percentage of correct answers among valid ones.
pub fn accuracy(results: &[PairwiseResult]) -> Result<f64, EvalError> {
    let valid = results.iter().filter(|r| r.correct.is_some()).count();
    if valid == 0 {
        return Err(EvalError::AllInvalid);
    }
    let correct = results.iter().filter(|r| r.correct == Some(true)).count();
    Ok(100.0 * correct as f64 / valid as f64)
}

pub const DEFAULT_BIN_EDGES: [f64; 4] = [0.0, 10.0, 100.0, 1000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownBin {
    pub lower: f64,
    /// `None` for the open last bin.
    pub upper: Option<f64>,
    pub valid: usize,
    pub errors: usize,
}

impl BreakdownBin {
    pub fn error_rate(&self) -> Option<f64> {
        (self.valid > 0).then(|| 100.0 * self.errors as f64 / self.valid as f64)
    }

    pub fn label(&self) -> String {
        match self.upper {
            Some(u) => format!("{}-{}", self.lower, u),
            None => format!(">{}", self.lower),
        }
    }

    fn contains(&self, x: f64) -> bool {
        x >= self.lower && self.upper.map_or(true, |u| x < u)
    }
}

pub fn viscosity_gap(registry: &[LiquidSpec], r: &PairwiseResult) -> f64 {
    let nu = |id: usize| registry.iter().find(|l| l.id == id).map_or(f64::NAN, |l| l.nominal_viscosity);
    (nu(r.liquid_a) - nu(r.liquid_b)).abs()
}

/// Valid results and errors per `|Δν|` bin; bins are `[e_k, e_{k+1})` with
/// the last one open.
pub fn error_breakdown(results: &[PairwiseResult], registry: &[LiquidSpec], edges: &[f64]) -> Result<Vec<BreakdownBin>, EvalError> {
    if edges.is_empty() || edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(EvalError::InvalidConfig(format!("bin edges must be finite and strictly increasing: {edges:?}")));
    }
    let mut bins: Vec<BreakdownBin> = edges
        .iter()
        .enumerate()
        .map(|(k, &lower)| BreakdownBin { lower, upper: edges.get(k + 1).copied(), valid: 0, errors: 0 })
        .collect();
    for r in results {
        let Some(correct) = r.correct else { continue };
        let gap = viscosity_gap(registry, r);
        if let Some(bin) = bins.iter_mut().find(|b| b.contains(gap)) {
            bin.valid += 1;
            if !correct {
                bin.errors += 1;
            }
        }
    }
    Ok(bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[truth][predicted]`.
    pub counts: Vec<Vec<u64>>,
    /// Invalid or unfinished episodes per truth row.
    pub excluded: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self { labels, counts: vec![vec![0; n]; n], excluded: vec![0; n] }
    }

    pub fn excluded_invalid(&self) -> u64 {
        self.excluded.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum::<u64>() + self.excluded[truth]
    }

    pub fn accuracy(&self) -> Result<f64, EvalError> {
        match self.total() {
            0 => Err(EvalError::AllInvalid),
            t => Ok(100.0 * self.correct() as f64 / t as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub setting: Setting,
    pub mask: String,
    pub truth: usize,
    pub trial: usize,
    pub seed: u64,
    pub outcome: String,
    pub answer: Option<usize>,
}

impl EpisodeRecord {
    pub fn outcome_of(outcome: Outcome) -> (String, Option<usize>) {
        match outcome {
            Outcome::Answered(i) => ("answered".into(), Some(i)),
            Outcome::Invalid => ("invalid".into(), None),
            Outcome::StepBudgetExhausted => ("step_budget_exhausted".into(), None),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecognitionReport {
    pub setting: Setting,
    pub mask: Vec<ActionKind>,
    pub matrix: ConfusionMatrix,
    pub accuracy: Option<f64>,
    pub episodes: Vec<EpisodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognitionConfig {
    pub seed_base: u64,
    pub workers: usize,
    pub max_steps: usize,
    /// Each episode's trace goes to `<dir>/<setting>/<mask>/<liquid>-<trial>`.
    pub trace_dir: Option<PathBuf>,
}

impl Default for RecognitionConfig {
    fn default() -> Self {
        Self { seed_base: 0, workers: 1, max_steps: DEFAULT_MAX_STEPS, trace_dir: None }
    }
}

/// Builds the confusion matrix from episode records.
pub fn confusion_from(records: &[EpisodeRecord], labels: Vec<String>) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::new(labels);
    let n = m.labels.len();
    for r in records {
        if r.truth >= n {
            continue;
        }
        match r.answer {
            Some(a) if a < n => m.counts[r.truth][a] += 1,
            _ => m.excluded[r.truth] += 1,
        }
    }
    m
}

/// One episode per registry liquid and trial. Container `i` is assumed to
/// hold registry liquid `i`, as in the bundled fixtures.
pub fn recognition_experiment(
    registry: &[LiquidSpec],
    mask: &[ActionKind],
    trials: usize,
    backend: &dyn Backend,
    env: &EnvironmentHandle,
    cfg: &RecognitionConfig,
) -> Result<RecognitionReport, Partial<EpisodeRecord>> {
    let invalid = |msg: String| Partial { results: vec![], error: EvalError::InvalidConfig(msg) };
    if trials == 0 {
        return Err(invalid("trials must be at least 1".into()));
    }
    if mask.is_empty() {
        return Err(invalid("action mask has no perception action".into()));
    }
    let setting = env.fixture.setting();
    let label = mask_label(mask);
    let jobs: Vec<(usize, usize, u64)> = (0..registry.len())
        .flat_map(|truth| (0..trials).map(move |trial| (truth, trial)))
        .map(|(truth, trial)| (truth, trial, cfg.seed_base.wrapping_add((truth * trials + trial) as u64)))
        .collect();
    let episodes = run_jobs(cfg.workers, &jobs, |&(truth, trial, seed)| {
        let liquid = &registry[truth];
        let mut task = RecognitionTask::for_liquid(&liquid.name);
        task.action_mask = mask.to_vec();
        task.max_steps = cfg.max_steps;
        task.seed = seed;
        let mut trial_env = env.clone();
        trial_env.noise_seed = seed;
        let trace = run_episode(&task, &trial_env, backend).map_err(|e| EvalError::Trial(format!("{} trial {trial}: {e}", liquid.name)))?;
        if let Some(dir) = &cfg.trace_dir {
            let dir = dir.join(setting.as_str()).join(label.replace(',', "+")).join(format!("{}-{trial:02}", liquid.name.replace(' ', "-")));
            trace.write(&dir).map_err(|e| EvalError::Io(e.to_string()))?;
        }
        let (outcome, answer) = EpisodeRecord::outcome_of(trace.outcome);
        Ok(EpisodeRecord { setting, mask: label.clone(), truth, trial, seed, outcome, answer })
    })?;
    let matrix = confusion_from(&episodes, registry.iter().map(|l| l.name.clone()).collect());
    Ok(RecognitionReport { setting, mask: mask.to_vec(), accuracy: matrix.accuracy().ok(), matrix, episodes })
}
