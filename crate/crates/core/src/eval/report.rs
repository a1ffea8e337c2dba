//! Result files and the tables rendered from them. Every report is a pure
//! function of the stored results, so rerunning it gives identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{accuracy, error_breakdown, ConfusionMatrix, EpisodeRecord, EvalError, PairwiseResult};
use crate::domain::{FillLevel, LiquidSpec};
use crate::perception::PromptVariant;
use crate::vision::Setting;

/// Published pairwise accuracy per fill level: (plain, knowledge-enhanced).
pub const TABLE_I: [(FillLevel, f64, f64); 3] = [
    (FillLevel::OneThird, 66.4, 77.1),
    (FillLevel::Half, 67.8, 77.5),
    (FillLevel::TwoThirds, 66.4, 79.9),
];

/// Published recognition accuracy per method: (label, mask, without labels, with labels).
pub const TABLE_II: [(&str, &str, f64, f64); 4] = [
    ("Look[Scn.]", "scene", 62.0, 76.0),
    ("Look[Scn.]+Shake[Cnt.]", "scene,shake", 56.0, 67.0),
    ("Look[Scn.]+Look[Cnt.]", "scene,container", 69.0, 97.0),
    ("Look[Scn.]+Look[Cnt.]+Shake[Cnt.](Ours)", "scene,container,shake", 86.0, 93.0),
];

fn io_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Io(format!("{}: {e}", path.display()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), EvalError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| io_err(path, e))
}

fn pct(value: Option<f64>) -> String {
    value.map_or_else(|| "n/a".into(), |v| format!("{v:.1}"))
}

/// Table of pairwise accuracy per fill level next to the published values,
/// followed by the error breakdown over viscosity gaps.
pub fn pairwise_markdown(results: &[PairwiseResult], registry: &[LiquidSpec], edges: &[f64]) -> Result<String, EvalError> {
    let acc = |variant: PromptVariant, fill: Option<FillLevel>| {
        let subset: Vec<PairwiseResult> =
            results.iter().filter(|r| r.prompt_variant == variant && fill.map_or(true, |f| r.fill == f)).cloned().collect();
        accuracy(&subset).ok()
    };
    let mut out = String::new();
    writeln!(out, "## Pairwise viscosity comparison\n").unwrap();
    writeln!(out, "| Fill level | Plain (ours) | Plain (reported) | Knowledge-enhanced (ours) | Knowledge-enhanced (reported) |").unwrap();
    writeln!(out, "|---|---|---|---|---|").unwrap();
    for (fill, plain, ke) in TABLE_I {
        writeln!(
            out,
            "| {} | {} | {plain:.1} | {} | {ke:.1} |",
            fill.display_name(),
            pct(acc(PromptVariant::Plain, Some(fill))),
            pct(acc(PromptVariant::KnowledgeEnhanced, Some(fill)))
        )
        .unwrap();
    }
    let invalid = results.iter().filter(|r| r.correct.is_none()).count();
    writeln!(out, "\nTrials: {}. Invalid answers excluded: {invalid}.\n", results.len()).unwrap();

    writeln!(out, "## Errors by viscosity gap\n").unwrap();
    writeln!(out, "| Prompt | Gap (mPa·s) | Valid | Errors | Error rate (%) | Share of errors (%) |").unwrap();
    writeln!(out, "|---|---|---|---|---|---|").unwrap();
    for variant in [PromptVariant::Plain, PromptVariant::KnowledgeEnhanced] {
        let subset: Vec<PairwiseResult> = results.iter().filter(|r| r.prompt_variant == variant).cloned().collect();
        if subset.is_empty() {
            continue;
        }
        let bins = error_breakdown(&subset, registry, edges)?;
        let total: usize = bins.iter().map(|b| b.errors).sum();
        for bin in bins {
            let share = (total > 0).then(|| 100.0 * bin.errors as f64 / total as f64);
            writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} |",
                variant.as_str(),
                bin.label(),
                bin.valid,
                bin.errors,
                pct(bin.error_rate()),
                pct(share)
            )
            .unwrap();
        }
    }
    Ok(out)
}

fn record_accuracy(records: &[EpisodeRecord], setting: Setting, mask: &str) -> Option<f64> {
    let subset: Vec<&EpisodeRecord> = records.iter().filter(|r| r.setting == setting && r.mask == mask).collect();
    let valid: Vec<&&EpisodeRecord> = subset.iter().filter(|r| r.answer.is_some()).collect();
    if valid.is_empty() {
        return None;
    }
    let correct = valid.iter().filter(|r| r.answer == Some(r.truth)).count();
    Some(100.0 * correct as f64 / valid.len() as f64)
}

/// Recognition accuracy per action mask and label setting next to the
/// published values. Masks outside the four published rows are listed after.
pub fn recognition_markdown(records: &[EpisodeRecord]) -> String {
    let mut out = String::new();
    writeln!(out, "## Liquid recognition\n").unwrap();
    writeln!(out, "| Method | W/o labels (ours) | W/o labels (reported) | W/ labels (ours) | W/ labels (reported) |").unwrap();
    writeln!(out, "|---|---|---|---|---|").unwrap();
    for (label, mask, without, with) in TABLE_II {
        writeln!(
            out,
            "| {label} | {} | {without:.1} | {} | {with:.1} |",
            pct(record_accuracy(records, Setting::WithoutLabels, mask)),
            pct(record_accuracy(records, Setting::WithLabels, mask))
        )
        .unwrap();
    }
    let mut extra: Vec<&str> = records.iter().map(|r| r.mask.as_str()).filter(|m| TABLE_II.iter().all(|row| row.1 != *m)).collect();
    extra.sort_unstable();
    extra.dedup();
    for mask in extra {
        writeln!(
            out,
            "| {mask} | {} | - | {} | - |",
            pct(record_accuracy(records, Setting::WithoutLabels, mask)),
            pct(record_accuracy(records, Setting::WithLabels, mask))
        )
        .unwrap();
    }
    let unanswered = records.iter().filter(|r| r.answer.is_none()).count();
    writeln!(out, "\nEpisodes: {}. Unanswered episodes excluded: {unanswered}.", records.len()).unwrap();
    out
}

pub fn confusion_csv(m: &ConfusionMatrix) -> String {
    let mut out = String::from("truth");
    for l in &m.labels {
        write!(out, ",{l}").unwrap();
    }
    out.push_str(",excluded\n");
    for (i, row) in m.counts.iter().enumerate() {
        out.push_str(&m.labels[i]);
        for c in row {
            write!(out, ",{c}").unwrap();
        }
        writeln!(out, ",{}", m.excluded[i]).unwrap();
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Heatmap with rows as true liquids and columns as predictions; cell
/// shading is the row-normalised count.
pub fn confusion_svg(m: &ConfusionMatrix, title: &str) -> String {
    const CELL: usize = 40;
    const LEFT: usize = 110;
    const TOP: usize = 120;
    let n = m.labels.len();
    let (w, h) = (LEFT + n * CELL + 20, TOP + n * CELL + 20);
    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#).unwrap();
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, w / 2, escape(title)).unwrap();
    for (i, label) in m.labels.iter().enumerate() {
        let y = TOP + i * CELL + CELL / 2 + 4;
        writeln!(out, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, LEFT - 6, escape(label)).unwrap();
        let x = LEFT + i * CELL + CELL / 2;
        writeln!(out, r#"<text x="{x}" y="{}" transform="rotate(-60 {x} {})">{}</text>"#, TOP - 6, TOP - 6, escape(label)).unwrap();
    }
    for (i, row) in m.counts.iter().enumerate() {
        let total = m.row_total(i).max(1) as f64;
        for (j, &c) in row.iter().enumerate() {
            let shade = 255 - (c as f64 / total * 200.0).round() as u8;
            let (x, y) = (LEFT + j * CELL, TOP + i * CELL);
            writeln!(out, r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="gray"/>"#).unwrap();
            if c > 0 {
                writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{c}</text>"#, x + CELL / 2, y + CELL / 2 + 4).unwrap();
            }
        }
    }
    out.push_str("</svg>\n");
    out
}
