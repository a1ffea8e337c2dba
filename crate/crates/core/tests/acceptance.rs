//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use liquid_perception::agent::{run_episode, EnvMode, EnvironmentHandle, RecognitionTask, FULL_MASK};
use liquid_perception::domain::{bundled_registry, mean, population_std, FillLevel, LiquidSpec, SignalMeta, SignalStage, TorqueSignal};
use liquid_perception::dsp::Butterworth;
use liquid_perception::dsp::{self, DspConfig};
use liquid_perception::eval::report::{TABLE_I, TABLE_II};
use liquid_perception::eval::{
    accuracy, error_breakdown, pairwise_experiment, recognition_experiment, viscosity_gap, ExperimentConfig, PairwiseResult,
    RecognitionConfig, DEFAULT_BIN_EDGES,
};
use liquid_perception::perception::{
    build_pairwise_prompt, parse_pairwise, Backend, KEY_VAR, HeuristicOracle, PairwiseDecision, PromptVariant, RefusalInjector, RemoteLvlm,
    RemoteSettings, Replay, RuleBased, SideChannel,
};
use liquid_perception::domain::{ActionKind, ClassThresholds};
use liquid_perception::render::{self, PlotStyle};
use liquid_perception::sloshsim::{simulate_liquid, simulate_shake, SimConfig, SloshParams};
use liquid_perception::vision::{bundled_fixture, Setting};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn meta(stage: SignalStage) -> SignalMeta {
    SignalMeta { liquid_id: None, fill_level: None, seed: None, stage }
}

fn crit1_dsp() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let n = rng.gen_range(50..2000);
        let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
        let offset = rng.gen_range(-100.0..100.0);
        let xs: Vec<f64> = (0..n).map(|_| offset + scale * rng.gen_range(-1.0..1.0)).collect();
        let raw = TorqueSignal::new(xs, 100.0, meta(SignalStage::Filtered)).unwrap();
        let z = dsp::standardize(&raw).unwrap();
        worst.0 = worst.0.max(mean(z.samples()).abs());
        worst.1 = worst.1.max((population_std(z.samples()) - 1.0).abs());
    }
    let filter = Butterworth::lowpass(5, 2.0, 100.0);
    let (g2, g10) = (filter.magnitude_db(2.0), filter.magnitude_db(10.0));
    let elapsed = start.elapsed();
    let ok = worst.0 < 1e-9 && worst.1 < 1e-9 && (g2 + 3.01).abs() <= 0.1 && g10 <= -68.0 && elapsed < Duration::from_secs(5);
    check(ok, format!("max |mean| {:.1e}, max |std-1| {:.1e}, gain 2 Hz {g2:.3} dB, 10 Hz {g10:.1} dB, {elapsed:.2?}", worst.0, worst.1))
}

fn crit2_decrement() -> Verdict {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for zeta in [0.05, 0.1, 0.2, 0.3] {
        let p = SloshParams::new(zeta, 2.0 * PI, 1.0).unwrap();
        let raw = simulate_shake(&p, 10.0, 100.0, 0, meta(SignalStage::Raw)).unwrap();
        let s = dsp::condition(&raw, &DspConfig::default()).unwrap();
        let analytic = 2.0 * PI * zeta / (1.0 - zeta * zeta).sqrt();
        let measured = dsp::find_peaks(&s, DspConfig::default().prominence).and_then(|p| dsp::log_decrement(&p));
        match measured {
            Ok(d) => {
                let err = (d / analytic - 1.0).abs();
                ok &= err < 0.05;
                details.push(format!("ζ={zeta}: {d:.4} vs {analytic:.4} ({:.2}%)", 100.0 * err));
            }
            Err(e) => {
                ok = false;
                details.push(format!("ζ={zeta}: {e}"));
            }
        }
    }
    let elapsed = start.elapsed();
    check(ok && elapsed < Duration::from_secs(5), format!("{}; {elapsed:.2?}", details.join(", ")))
}

fn crit3_pairwise_scale() -> Verdict {
    let registry = bundled_registry();
    let start = Instant::now();
    let results =
        pairwise_experiment(&registry, &FillLevel::ALL, 10, PromptVariant::KnowledgeEnhanced, &HeuristicOracle::default(), &ExperimentConfig::default());
    let elapsed = start.elapsed();
    let results = match results {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let wide: Vec<PairwiseResult> = results.iter().filter(|r| viscosity_gap(&registry, r) > 100.0).cloned().collect();
    let wide_acc = accuracy(&wide).unwrap_or(0.0);
    let bins = error_breakdown(&results, &registry, &DEFAULT_BIN_EDGES).unwrap();
    let rate = |pick: &dyn Fn(f64) -> bool| {
        let (v, e) = bins.iter().filter(|b| pick(b.lower)).fold((0, 0), |(v, e), b| (v + b.valid, e + b.errors));
        if v == 0 {
            f64::NAN
        } else {
            100.0 * e as f64 / v as f64
        }
    };
    let above = rate(&|lower| lower >= 100.0);
    let below = rate(&|lower| lower < 10.0);
    let ok = results.len() == 1350 && elapsed < Duration::from_secs(60) && wide_acc >= 95.0 && above <= below;
    check(
        ok,
        format!(
            "{} trials in {elapsed:.2?}; accuracy |Δν|>100: {wide_acc:.1}%; error rate >100: {above:.1}% vs <10: {below:.1}%",
            results.len()
        ),
    )
}

fn result(correct: Option<bool>) -> PairwiseResult {
    PairwiseResult {
        liquid_a: 1,
        liquid_b: 8,
        fill: FillLevel::Half,
        trial: 0,
        prompt_variant: PromptVariant::Plain,
        seed: 0,
        left: 1,
        right: 8,
        decision: if correct.is_some() { PairwiseDecision::Right } else { PairwiseDecision::Invalid },
        correct,
    }
}

fn crit4_exclusion() -> Verdict {
    // Fixed fixture: 10 results, 2 refused, 6 of the remaining 8 correct.
    let pattern = [Some(true), None, Some(true), Some(false), Some(true), Some(true), None, Some(true), Some(false), Some(true)];
    let fixture: Vec<PairwiseResult> = pattern.iter().map(|c| result(*c)).collect();
    let fixture_acc = accuracy(&fixture).unwrap();
    let fixture_ok = fixture_acc == 75.0;

    // Injected: ten pairs of five liquids, every fifth call refused.
    let registry: Vec<LiquidSpec> = bundled_registry().into_iter().filter(|l| [0, 1, 3, 6, 8].contains(&l.id)).collect();
    let cfg = ExperimentConfig { workers: 1, ..ExperimentConfig::default() };
    let oracle: Arc<dyn Backend> = Arc::new(HeuristicOracle::default());
    let baseline = pairwise_experiment(&registry, &[FillLevel::Half], 1, PromptVariant::Plain, oracle.as_ref(), &cfg).unwrap();
    let injector = RefusalInjector::periodic(oracle.clone(), 1, 5);
    let injected = pairwise_experiment(&registry, &[FillLevel::Half], 1, PromptVariant::Plain, &injector, &cfg).unwrap();
    let refused: Vec<usize> = (0..injected.len()).filter(|i| injected[*i].correct.is_none()).collect();
    let kept: Vec<usize> = (0..baseline.len()).filter(|i| !refused.contains(i)).collect();
    let numerator = kept.iter().filter(|&&i| baseline[i].correct == Some(true)).count();
    let expected = 100.0 * numerator as f64 / kept.len() as f64;
    let got = accuracy(&injected).unwrap();
    let ok = fixture_ok && injected.len() == 10 && refused == vec![0, 5] && kept.len() == 8 && (got - expected).abs() < 1e-12;
    check(
        ok,
        format!("fixture 6/8 = {fixture_acc:.1}%; injected refusals at calls {refused:?}, accuracy {got:.1}% vs expected {numerator}/8 = {expected:.1}%"),
    )
}

fn replay_case(script: &str, setting: Setting, liquid: &str) -> Result<(String, String), String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/replays").join(script);
    let env = EnvironmentHandle::from_registry(bundled_fixture(setting), &bundled_registry(), EnvMode::ImageMode).map_err(|e| e.to_string())?;
    let task = RecognitionTask::for_liquid(liquid);
    let mut runs = Vec::new();
    for _ in 0..2 {
        let replay = Replay::load(&path).map_err(|e| e.to_string())?;
        let trace = run_episode(&task, &env, &replay).map_err(|e| e.to_string())?;
        if replay.remaining() != 0 {
            return Err(format!("{script}: {} scripted answers unused", replay.remaining()));
        }
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        trace.write(dir.path()).map_err(|e| e.to_string())?;
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap())
            .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
            .collect();
        files.sort();
        runs.push((format!("{:?}", trace.outcome), files));
    }
    if runs[0].1 != runs[1].1 {
        return Err(format!("{script}: traces differ between runs"));
    }
    Ok((runs[0].0.clone(), format!("{} files", runs[0].1.len())))
}

fn crit5_replay() -> Verdict {
    let registry = bundled_registry();
    let honey_truth = registry.iter().find(|l| l.name == "honey").map(|l| l.id);
    let peanut = replay_case("peanut-oil-without-labels.json", Setting::WithoutLabels, "peanut oil");
    let honey = replay_case("honey-with-labels.json", Setting::WithLabels, "honey");
    match (peanut, honey) {
        (Ok(p), Ok(h)) => check(
            p.0 == "Answered(3)" && h.0 == "Answered(3)" && honey_truth == Some(8),
            format!("peanut oil: {} ({}), honey: {} ({}), honey truth {honey_truth:?}; identical across runs", p.0, p.1, h.0, h.1),
        ),
        (p, h) => Verdict::Fail(format!("peanut oil: {:?}; honey: {:?}", p.err(), h.err())),
    }
}

fn crit6_ablation() -> Verdict {
    let start = Instant::now();
    let registry = bundled_registry();
    let backend = RuleBased::new(registry.clone(), ClassThresholds::VISCOSITY_DEFAULT, HeuristicOracle::default());
    let env = EnvironmentHandle::from_registry(bundled_fixture(Setting::WithoutLabels), &registry, EnvMode::DescriptorMode).unwrap();
    let cfg = RecognitionConfig { workers: 0, ..RecognitionConfig::default() };
    let run = |mask: &[ActionKind]| recognition_experiment(&registry, mask, 10, &backend, &env, &cfg).map(|r| r.accuracy.unwrap_or(0.0));
    let (scene, full) = match (run(&[ActionKind::LookScene]), run(&FULL_MASK)) {
        (Ok(s), Ok(f)) => (s, f),
        (s, f) => return Verdict::Fail(format!("{:?} {:?}", s.err().map(|e| e.to_string()), f.err().map(|e| e.to_string()))),
    };
    let elapsed = start.elapsed();
    check(full > scene && elapsed < Duration::from_secs(120), format!("full {full:.1}% vs scene-only {scene:.1}%, {elapsed:.2?}"))
}

fn table_rows(md: &str, header_start: &str) -> Option<(Vec<String>, Vec<Vec<String>>)> {
    let lines: Vec<&str> = md.lines().collect();
    let at = lines.iter().position(|l| l.starts_with(header_start))?;
    let cells = |l: &str| l.trim().trim_matches('|').split('|').map(|c| c.trim().to_string()).collect::<Vec<_>>();
    let header = cells(lines[at]);
    let rows = lines[at + 2..].iter().take_while(|l| l.starts_with('|')).map(|l| cells(l)).collect();
    Some((header, rows))
}

fn crit7_reports() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_liquid-perception");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let run = |args: &[&str]| Command::new(bin).args(args).output().map_err(|e| e.to_string());
    let pw = run(&[
        "pairwise", "--backend", "heuristic", "--prompt", "both", "--fills", "all", "--trials", "1", "--out-dir", out.to_str().unwrap(),
        "--report", out.join("table1.md").to_str().unwrap(),
    ]);
    let rec = run(&["recognize", "--trials", "1", "--out-dir", out.join("rec").to_str().unwrap()]);
    let (pw, rec) = match (pw, rec) {
        (Ok(a), Ok(b)) if a.status.success() && b.status.success() => (a, b),
        (a, b) => return Verdict::Fail(format!("commands failed: {a:?} {b:?}")),
    };
    let _ = (pw, rec);
    let t1 = std::fs::read_to_string(out.join("table1.md")).unwrap_or_default();
    let t2 = std::fs::read_to_string(out.join("rec/recognition.md")).unwrap_or_default();
    let mut problems = Vec::new();
    match table_rows(&t1, "| Fill level") {
        Some((header, rows)) => {
            if header != ["Fill level", "Plain (ours)", "Plain (reported)", "Knowledge-enhanced (ours)", "Knowledge-enhanced (reported)"] {
                problems.push(format!("table I header {header:?}"));
            }
            if rows.len() != 3 {
                problems.push(format!("table I has {} rows", rows.len()));
            }
            for ((fill, plain, ke), row) in TABLE_I.iter().zip(&rows) {
                if row.len() != 5 || row[0] != fill.display_name() || row[2] != format!("{plain:.1}") || row[4] != format!("{ke:.1}") {
                    problems.push(format!("table I row {row:?}"));
                }
            }
        }
        None => problems.push("table I missing".into()),
    }
    match table_rows(&t2, "| Method") {
        Some((header, rows)) => {
            if header != ["Method", "W/o labels (ours)", "W/o labels (reported)", "W/ labels (ours)", "W/ labels (reported)"] {
                problems.push(format!("table II header {header:?}"));
            }
            if rows.len() != 4 {
                problems.push(format!("table II has {} rows", rows.len()));
            }
            for ((label, _, without, with), row) in TABLE_II.iter().zip(&rows) {
                if row.len() != 5 || row[0] != *label || row[2] != format!("{without:.1}") || row[4] != format!("{with:.1}") || row[1] == "n/a" {
                    problems.push(format!("table II row {row:?}"));
                }
            }
        }
        None => problems.push("table II missing".into()),
    }
    let regen = run(&["report", "--pairwise", out.join("pairwise.csv").to_str().unwrap(), "--out", out.join("again.md").to_str().unwrap()]);
    let again = std::fs::read_to_string(out.join("again.md")).unwrap_or_default();
    if !matches!(regen, Ok(ref o) if o.status.success()) || again != t1 {
        problems.push("report regenerated from pairwise.csv differs".into());
    }
    if !out.join("resolved-config.toml").exists() || !out.join("rec/resolved-config.toml").exists() {
        problems.push("missing resolved-config snapshot".into());
    }
    check(problems.is_empty(), if problems.is_empty() { "Table I 3x2 and Table II 4x2 with reference columns; report regenerates identically".into() } else { problems.join("; ") })
}

fn crit8_live() -> Verdict {
    if std::env::var(KEY_VAR).map_or(true, |k| k.trim().is_empty()) {
        return Verdict::Skip(format!("{KEY_VAR} not set"));
    }
    let backend = match RemoteLvlm::from_env(RemoteSettings::default()) {
        Ok(b) => b,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let registry = bundled_registry();
    let cfg = SimConfig::default();
    let style = PlotStyle::default();
    let plot = |name: &str, seed| {
        let liquid = registry.iter().find(|l| l.name == name).unwrap();
        let s = dsp::condition(&simulate_liquid(liquid, FillLevel::TwoThirds, &cfg, seed).unwrap(), &DspConfig::default()).unwrap();
        render::render_timeseries(&s, &style).unwrap()
    };
    let pair = render::concat_horizontal(&plot("water", 1), &plot("honey", 2)).unwrap();
    let prompt = build_pairwise_prompt(&pair, PromptVariant::KnowledgeEnhanced);
    match backend.answer(&prompt, None::<&SideChannel>) {
        Ok(text) => {
            let d = parse_pairwise(&text);
            check(d != PairwiseDecision::Invalid, format!("decision {}", d.as_str()))
        }
        Err(e) => Verdict::Fail(e.to_string()),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("1 dsp correctness", crit1_dsp),
        ("2 damping oracle vs analytic", crit2_decrement),
        ("3 heuristic pairwise at scale", crit3_pairwise_scale),
        ("4 invalid-output exclusion", crit4_exclusion),
        ("5 replayed case-study traces", crit5_replay),
        ("6 ablation ordering", crit6_ablation),
        ("7 report shape", crit7_reports),
        ("8 live remote smoke test", crit8_live),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let verdict = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Verdict::Fail(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match verdict {
            Verdict::Pass(d) => println!("PASS criterion {name}: {d}"),
            Verdict::Skip(d) => println!("SKIP criterion {name}: {d}"),
            Verdict::Fail(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
