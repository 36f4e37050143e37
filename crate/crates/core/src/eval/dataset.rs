use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The seven topic categories, in class-index order.
pub const SIB_LABELS: [&str; 7] = [
    "science/technology",
    "travel",
    "politics",
    "sports",
    "health",
    "entertainment",
    "geography",
];

pub const NUM_CLASSES: usize = SIB_LABELS.len();

const HEADER: &str = "index\tcategory\ttext";

pub fn label_index(label: &str) -> Option<usize> {
    SIB_LABELS.iter().position(|l| *l == label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// Text and class index into [`SIB_LABELS`].
    pub examples: Vec<(String, usize)>,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(split: Split) -> Self {
        LabeledDataset {
            examples: Vec::new(),
            split,
        }
    }

    pub fn push(&mut self, text: &str, label: usize) -> Result<()> {
        if label >= NUM_CLASSES {
            return Err(Error::Data(format!("class index {label} out of range")));
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::Data("empty example text".into()));
        }
        self.examples.push((text.to_string(), label));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.examples.iter().map(|(t, _)| t.as_str()).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|(_, l)| *l).collect()
    }

    /// Examples per class, in class-index order.
    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for (_, l) in &self.examples {
            counts[*l] += 1;
        }
        counts
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("{HEADER}\n");
        for (i, (text, l)) in self.examples.iter().enumerate() {
            out.push_str(&format!("{i}\t{}\t{}\n", SIB_LABELS[*l], text.replace(['\t', '\n'], " ")));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Reads a TSV with header `index<TAB>category<TAB>text`.
pub fn load_sib_dataset(path: impl AsRef<Path>, split: Split) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end_matches('\r') == HEADER => {}
        _ => return Err(Error::parse(path, 1, format!("expected header {HEADER:?}"))),
    }
    let mut ds = LabeledDataset::new(split);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.splitn(3, '\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(path, lineno, "expected 3 tab-separated columns"));
        }
        if cols[2].trim().is_empty() {
            return Err(Error::parse(path, lineno, "empty text"));
        }
        let label = label_index(cols[1].trim()).ok_or_else(|| {
            Error::Data(format!("{}:{lineno}: unknown category {:?}", path.display(), cols[1]))
        })?;
        ds.push(cols[2], label)?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("d.tsv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn class_proportion_fixture_totals() {
        let counts = [252, 198, 146, 122, 110, 93, 83];
        let mut ds = LabeledDataset::new(Split::Train);
        for (label, &n) in counts.iter().enumerate() {
            for i in 0..n {
                ds.push(&format!("sentence {i}"), label).unwrap();
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.tsv");
        ds.save(&p).unwrap();
        let back = load_sib_dataset(&p, Split::Train).unwrap();
        assert_eq!(back.len(), 1004);
        assert_eq!(back.class_counts(), counts);
        assert_eq!(back, ds);
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_sib_dataset(write(&dir, "index\tcategory\ttext\n"), Split::Dev).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn unknown_label_and_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_sib_dataset(write(&dir, "index\tcategory\ttext\n0\tweather\tit rains\n"), Split::Test).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("weather")));
        let err = load_sib_dataset(write(&dir, "index\tcategory\ttext\n0\ttravel\n"), Split::Test).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = load_sib_dataset(write(&dir, "id\tlabel\ttext\n"), Split::Test).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
