use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Deserialize;

use super::config::Variant;
use super::run::{RunManifest, SOURCE_MODEL};
use crate::error::{Error, Result};
use crate::eval::{format_delta, format_score, BenchmarkMatrix, EvalReport};

/// Rendered outputs of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub matrix: BenchmarkMatrix,
    pub markdown: String,
    /// `model,lang,weighted_f1`, seed means rounded for display.
    pub csv: String,
    pub seed_csv: String,
    /// `model,lang,seed,heldout_loss`.
    pub heldout_csv: String,
    pub deltas: Vec<String>,
}

#[derive(Deserialize)]
struct Heldout {
    loss: BTreeMap<String, f64>,
}

fn read<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

/// Column order: source model first, then natural-data variants, then the
/// synthetic ones, random before ofa within each group.
fn column_order(models: &[String]) -> Vec<String> {
    let rank = |m: &String| match Variant::parse(m) {
        None => (0, 0),
        Some(v) => (1 + v.synthetic as u8, 1 + v.init as u8),
    };
    let mut out = models.to_vec();
    out.sort_by_key(rank);
    out
}

/// Delta lines comparing initialization schemes within a data condition,
/// synthetic against natural data per scheme, and adapted models against
/// the source model.
fn delta_lines(m: &BenchmarkMatrix) -> Vec<String> {
    let avg: BTreeMap<&str, f64> = m.models.iter().map(String::as_str).zip(m.averages()).collect();
    let mut out = Vec::new();
    let mut push = |ours: &str, base: &str| {
        if let (Some(&a), Some(&b)) = (avg.get(ours), avg.get(base)) {
            out.push(format_delta(ours, a, base, b));
        }
    };
    push("ofa", "random");
    push("ofa+synthetic", "random+synthetic");
    push("random+synthetic", "random");
    push("ofa+synthetic", "ofa");
    for v in Variant::ALL {
        push(&v.name(), SOURCE_MODEL);
    }
    out
}

/// Builds the benchmark table, delta lines and CSVs from a manifest. Fails
/// naming every artifact that is missing.
pub fn render_report(manifest: &RunManifest) -> Result<Report> {
    let missing: Vec<String> = manifest
        .required_artifacts()
        .into_iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "incomplete run manifest; missing artifacts:\n  {}",
            missing.join("\n  ")
        )));
    }
    for m in &manifest.models {
        for &s in &manifest.seeds {
            if !manifest.evaluations.iter().any(|a| a.model == *m && a.seed == s) {
                return Err(Error::Data(format!("incomplete run manifest; no evaluation for {m} seed {s}")));
            }
        }
    }
    let models = column_order(&manifest.models);
    let mut matrix = BenchmarkMatrix::new(models.clone(), manifest.languages.clone());
    for (j, model) in models.iter().enumerate() {
        for &seed in &manifest.seeds {
            let a = manifest
                .evaluations
                .iter()
                .find(|a| a.model == *model && a.seed == seed)
                .expect("checked above");
            let scores: BTreeMap<String, EvalReport> = read(&a.path)?;
            for (l, lang) in manifest.languages.iter().enumerate() {
                let r = scores
                    .get(lang)
                    .ok_or_else(|| Error::Data(format!("{} has no score for {lang}", a.path.display())))?;
                matrix.scores[l][j].push(100.0 * r.weighted_f1);
            }
        }
    }

    let mut heldout_csv = String::from("model,lang,seed,heldout_loss\n");
    let mut loss_means: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for a in &manifest.heldout {
        let h: Heldout = read(&a.path)?;
        for (lang, loss) in h.loss {
            let _ = writeln!(heldout_csv, "{},{lang},{},{loss}", a.model, a.seed);
            loss_means.entry((a.model.clone(), lang)).or_default().push(loss);
        }
    }

    let deltas = delta_lines(&matrix);
    let n_seeds = manifest.seeds.len();
    let mut md = String::new();
    let _ = writeln!(md, "# Benchmark\n");
    let _ = writeln!(
        md,
        "Weighted F1 ×100, mean over {n_seeds} seed{}. `Ave.` is the unweighted mean over languages, rounded half to even.\n",
        if n_seeds == 1 { "" } else { "s" }
    );
    let groups: Vec<String> = [(false, "natural data only"), (true, "with synthetic data")]
        .iter()
        .filter_map(|&(syn, label)| {
            let cols: Vec<&str> = models
                .iter()
                .filter(|m| Variant::parse(m).is_some_and(|v| v.synthetic == syn))
                .map(String::as_str)
                .collect();
            (!cols.is_empty()).then(|| format!("{label}: {}", cols.join(", ")))
        })
        .collect();
    if !groups.is_empty() {
        let _ = writeln!(md, "Column groups: {}.\n", groups.join("; "));
    }
    md.push_str(&matrix.render_markdown());
    if !deltas.is_empty() {
        md.push('\n');
        for d in &deltas {
            let _ = writeln!(md, "- {d}");
        }
    }
    if !loss_means.is_empty() {
        let _ = writeln!(md, "\n## Held-out MLM loss\n");
        let _ = writeln!(md, "| model | lang | loss |");
        let _ = writeln!(md, "| --- | --- | ---: |");
        for m in &models {
            for ((model, lang), v) in loss_means.iter().filter(|((model, _), _)| model == m) {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let _ = writeln!(md, "| {model} | {lang} | {mean:.4} |");
            }
        }
    }
    let _ = writeln!(md, "\nPer-seed values: `benchmark_seeds.csv`. Overall: {}.", {
        let avgs = matrix.averages();
        models
            .iter()
            .zip(avgs)
            .map(|(m, a)| format!("{m} {}", format_score(a)))
            .collect::<Vec<_>>()
            .join(", ")
    });
    Ok(Report {
        csv: matrix.to_csv(),
        seed_csv: matrix.to_seed_csv(),
        matrix,
        markdown: md,
        heldout_csv,
        deltas,
    })
}
