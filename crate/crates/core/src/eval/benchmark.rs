use std::fmt::Write as _;

use super::classifier::{evaluate, finetune_classifier, HeadHyper};
use super::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::mlm::Checkpoint;
use crate::tokenizer::BpeTokenizer;

const AVERAGE_ROW: &str = "Ave.";

/// Rounds to `decimals` places, sending exact halves to the even neighbour.
/// Values within 1e-9 (in units of the last place) of a half count as halves,
/// so decimal inputs like 0.125 that are not exactly representable still tie.
pub fn round_half_even(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let y = x * scale;
    let floor = y.floor();
    let frac = y - floor;
    let r = if (frac - 0.5).abs() < 1e-9 {
        if floor % 2.0 == 0.0 {
            floor
        } else {
            floor + 1.0
        }
    } else {
        y.round()
    };
    r / scale
}

/// One decimal, round-half-even.
pub fn format_score(points: f64) -> String {
    format!("{:.1}", round_half_even(points, 1))
}

/// `Δ(ours, baseline) = +12.3`, computed from the one-decimal printed values.
pub fn format_delta(ours_name: &str, ours: f64, base_name: &str, base: f64) -> String {
    let d = round_half_even(round_half_even(ours, 1) - round_half_even(base, 1), 1);
    format!("Δ({ours_name}, {base_name}) = {d:+.1}")
}

/// Weighted F1 ×100 per (language, model), with per-seed values kept.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkMatrix {
    pub models: Vec<String>,
    pub langs: Vec<String>,
    /// `scores[lang][model]` holds one value per seed.
    pub scores: Vec<Vec<Vec<f64>>>,
}

impl BenchmarkMatrix {
    pub fn new(models: Vec<String>, langs: Vec<String>) -> Self {
        let scores = vec![vec![Vec::new(); models.len()]; langs.len()];
        BenchmarkMatrix { models, langs, scores }
    }

    /// Builds a single-seed matrix from `cells[lang][model]` in points.
    pub fn from_cells(models: Vec<String>, langs: Vec<String>, cells: &[Vec<f64>]) -> Result<Self> {
        let mut m = Self::new(models, langs);
        if cells.len() != m.langs.len() || cells.iter().any(|r| r.len() != m.models.len()) {
            return Err(Error::Shape("cell grid does not match languages × models".into()));
        }
        for (l, row) in cells.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m.scores[l][j].push(v);
            }
        }
        Ok(m)
    }

    pub fn cell(&self, lang: usize, model: usize) -> f64 {
        let v = &self.scores[lang][model];
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Unweighted mean over languages of each model's cell means. Rounding
    /// happens only at display time, so a column printed as 58.4, 64.7,
    /// 82.4, 73.5, 63.3 averages to 68.46 and prints as 68.5 even where a
    /// hand-made table shows 68.4.
    pub fn averages(&self) -> Vec<f64> {
        (0..self.models.len())
            .map(|j| (0..self.langs.len()).map(|l| self.cell(l, j)).sum::<f64>() / self.langs.len().max(1) as f64)
            .collect()
    }

    fn rows(&self) -> Vec<(String, Vec<String>)> {
        let mut rows: Vec<(String, Vec<String>)> = self
            .langs
            .iter()
            .enumerate()
            .map(|(l, name)| (name.clone(), (0..self.models.len()).map(|j| format_score(self.cell(l, j))).collect()))
            .collect();
        rows.push((AVERAGE_ROW.into(), self.averages().into_iter().map(format_score).collect()));
        rows
    }

    /// `model,lang,weighted_f1` with display-rounded values, average rows last.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,lang,weighted_f1\n");
        for (lang, vals) in self.rows() {
            for (model, v) in self.models.iter().zip(vals) {
                let _ = writeln!(out, "{model},{lang},{v}");
            }
        }
        out
    }

    /// `model,lang,seed_index,weighted_f1` at full precision.
    pub fn to_seed_csv(&self) -> String {
        let mut out = String::from("model,lang,seed_index,weighted_f1\n");
        for (l, lang) in self.langs.iter().enumerate() {
            for (j, model) in self.models.iter().enumerate() {
                for (s, v) in self.scores[l][j].iter().enumerate() {
                    let _ = writeln!(out, "{model},{lang},{s},{v}");
                }
            }
        }
        out
    }

    /// Parses [`Self::to_csv`] output. Average rows are recomputed, not read.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("model,lang,weighted_f1") {
            return Err(Error::Data("benchmark CSV must start with `model,lang,weighted_f1`".into()));
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            let v = match cols.as_slice() {
                [_, _, v] => v.parse::<f64>().ok(),
                _ => None,
            }
            .ok_or_else(|| Error::Data(format!("benchmark CSV line {}: {line:?}", i + 2)))?;
            entries.push((cols[0].to_string(), cols[1].to_string(), v));
        }
        let mut models = Vec::new();
        let mut langs = Vec::new();
        for (m, l, _) in &entries {
            if !models.contains(m) {
                models.push(m.clone());
            }
            if l != AVERAGE_ROW && !langs.contains(l) {
                langs.push(l.clone());
            }
        }
        let mut out = Self::new(models, langs);
        for (m, l, v) in entries.into_iter().filter(|(_, l, _)| l != AVERAGE_ROW) {
            let j = out.models.iter().position(|x| *x == m).unwrap();
            let li = out.langs.iter().position(|x| *x == l).unwrap();
            out.scores[li][j].push(v);
        }
        Ok(out)
    }

    fn table(&self, sep: &str, markdown: bool) -> String {
        let header: Vec<String> = std::iter::once("lang".to_string()).chain(self.models.iter().cloned()).collect();
        let rows = self.rows();
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for (lang, vals) in &rows {
            widths[0] = widths[0].max(lang.chars().count());
            for (j, v) in vals.iter().enumerate() {
                widths[j + 1] = widths[j + 1].max(v.len());
            }
        }
        let line = |cells: Vec<String>| -> String {
            let padded: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let pad = widths[i] - c.chars().count();
                    if i == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            if markdown {
                format!("| {} |", padded.join(" | "))
            } else {
                padded.join(sep)
            }
        };
        let mut out = line(header) + "\n";
        if markdown {
            let rule: Vec<String> = widths
                .iter()
                .enumerate()
                .map(|(i, w)| if i == 0 { "-".repeat(*w) } else { format!("{}:", "-".repeat(w.saturating_sub(1))) })
                .collect();
            out += &format!("| {} |\n", rule.join(" | "));
        }
        for (lang, vals) in rows {
            out += &line(std::iter::once(lang).chain(vals).collect());
            out.push('\n');
        }
        out
    }

    pub fn render_text(&self) -> String {
        self.table("  ", false)
    }

    pub fn render_markdown(&self) -> String {
        self.table("", true)
    }
}

/// Train, dev and test splits of one language.
#[derive(Debug, Clone)]
pub struct DatasetTriplet {
    pub train: LabeledDataset,
    pub dev: LabeledDataset,
    pub test: LabeledDataset,
}

/// Fine-tunes and scores every (model, language) cell once per seed.
pub fn benchmark_matrix(
    models: &[(String, &Checkpoint, &BpeTokenizer)],
    datasets: &[(String, DatasetTriplet)],
    hyper: &HeadHyper,
    seeds: &[u64],
) -> Result<BenchmarkMatrix> {
    if models.is_empty() || datasets.is_empty() || seeds.is_empty() {
        return Err(Error::Argument("benchmark needs at least one model, language and seed".into()));
    }
    let mut m = BenchmarkMatrix::new(
        models.iter().map(|(n, _, _)| n.clone()).collect(),
        datasets.iter().map(|(l, _)| l.clone()).collect(),
    );
    for (l, (_, data)) in datasets.iter().enumerate() {
        for (j, (_, ckpt, tok)) in models.iter().enumerate() {
            for &seed in seeds {
                let h = HeadHyper { seed, ..hyper.clone() };
                let (head, tuned) = finetune_classifier(ckpt, tok, &data.train, &data.dev, &h)?;
                let report = evaluate(tuned.as_ref().unwrap_or(ckpt), tok, &head, &data.test)?;
                m.scores[l][j].push(100.0 * report.weighted_f1);
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_even_rounding() {
        assert_eq!(round_half_even(68.46, 1), 68.5);
        assert_eq!(round_half_even(0.125, 2), 0.12);
        assert_eq!(round_half_even(0.135, 2), 0.14);
        assert_eq!(round_half_even(68.45, 1), 68.4);
        assert_eq!(round_half_even(-1.25, 1), -1.2);
        assert_eq!(format_score(12.3), "12.3");
    }

    fn ang_ofa() -> BenchmarkMatrix {
        let langs = ["kin", "kmb", "kon", "lua", "umb"].map(String::from).to_vec();
        let cells: Vec<Vec<f64>> = [58.4, 64.7, 82.4, 73.5, 63.3].iter().map(|&v| vec![v]).collect();
        BenchmarkMatrix::from_cells(vec!["OFA".into()], langs, &cells).unwrap()
    }

    #[test]
    fn column_average_prints_half_even() {
        let m = ang_ofa();
        assert!((m.averages()[0] - 68.46).abs() < 1e-9);
        assert!(m.render_text().lines().last().unwrap().ends_with("68.5"));
    }

    #[test]
    fn delta_from_printed_averages() {
        assert_eq!(format_delta("ours", 68.4, "baseline", 56.1), "Δ(ours, baseline) = +12.3");
        assert_eq!(format_delta("a", 50.0, "b", 53.8), "Δ(a, b) = -3.8");
    }

    #[test]
    fn single_cell_table() {
        let m = BenchmarkMatrix::from_cells(vec!["m".into()], vec!["x".into()], &[vec![42.0]]).unwrap();
        assert_eq!(m.averages(), vec![42.0]);
        let md = m.render_markdown();
        assert_eq!(md.lines().count(), 4);
        assert!(md.contains("| Ave. |"));
    }

    #[test]
    fn csv_roundtrip_equals_rendered_values() {
        let mut m = ang_ofa();
        m.models.push("random".into());
        for (l, row) in m.scores.iter_mut().enumerate() {
            row.push(vec![40.0 + l as f64 * 3.33, 41.0]);
        }
        let csv = m.to_csv();
        let back = BenchmarkMatrix::from_csv(&csv).unwrap();
        for l in 0..m.langs.len() {
            for j in 0..m.models.len() {
                assert_eq!(format_score(back.cell(l, j)), format_score(m.cell(l, j)));
            }
        }
        assert!(m.to_seed_csv().lines().count() == 1 + 5 + 10);
    }
}
