use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::adapt::InitScheme;
use crate::corpus::Fallback;
use crate::error::{Error, Result, ValidationIssue};
use crate::eval::HeadHyper;
use crate::mlm::{Checkpoint, MaskingPolicy, TrainRun};
use crate::ofa::DEFAULT_NEIGHBORS;

/// One column of the experiment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Variant {
    pub init: InitScheme,
    pub synthetic: bool,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant { init: InitScheme::Random, synthetic: false },
        Variant { init: InitScheme::Ofa, synthetic: false },
        Variant { init: InitScheme::Random, synthetic: true },
        Variant { init: InitScheme::Ofa, synthetic: true },
    ];

    /// `random`, `ofa`, `random+synthetic` or `ofa+synthetic`.
    pub fn name(&self) -> String {
        if self.synthetic {
            format!("{}+synthetic", self.init.name())
        } else {
            self.init.name().to_string()
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Variant::parse(&s).ok_or_else(|| {
            serde::de::Error::custom(format!(
                "unknown variant {s:?}, expected one of random, ofa, random+synthetic, ofa+synthetic"
            ))
        })
    }
}

/// Dictionary-translated text for one target language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    /// Corpora in the lexicon's source language.
    pub corpora: Vec<PathBuf>,
    pub lexicon: PathBuf,
    #[serde(default)]
    pub fallback: Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageConfig {
    pub corpora: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalPaths>,
}

/// A validated experiment. Paths are absolute; every default is filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Checkpoint directory that also holds the source `vocab.txt` and `merges.txt`.
    pub source_checkpoint: PathBuf,
    pub languages: BTreeMap<String, LanguageConfig>,
    /// word2vec-style text file; needed by the `ofa` variants.
    pub external_vectors: Option<PathBuf>,
    pub vocab_size: usize,
    /// Factorization rank; `None` means the model width.
    pub latent_dim: Option<usize>,
    pub neighbors: usize,
    pub masking: MaskingPolicy,
    /// Seed field is ignored; each entry of `seeds` is used in turn.
    pub pretrain: TrainRun,
    /// Seed field is ignored, as for `pretrain`.
    pub classifier: HeadHyper,
    /// Share of each natural corpus held out for MLM loss.
    pub heldout_fraction: f64,
    pub variants: Vec<Variant>,
    /// Also evaluate the unadapted source model with its own tokenizer.
    pub include_source: bool,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    /// JSON form that [`validate_value`] turns back into an equal config.
    /// The per-run seeds inside `pretrain` and `classifier` are left out.
    pub fn to_value(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        for k in ["pretrain", "classifier"] {
            if let Some(o) = v.get_mut(k).and_then(Value::as_object_mut) {
                o.remove("seed");
            }
        }
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_value().to_string().as_bytes()))
    }

    pub fn eval_languages(&self) -> Vec<&str> {
        self.languages
            .iter()
            .filter(|(_, l)| l.eval.is_some())
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

/// Reads and validates a JSON experiment file. Relative paths resolve
/// against the file's directory.
pub fn validate_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| {
        Error::Validation(vec![ValidationIssue {
            pointer: String::new(),
            message: format!("not valid JSON: {e}"),
        }])
    })?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    validate_value(&value, base)
}

struct Checker<'a> {
    base: &'a Path,
    issues: Vec<ValidationIssue>,
}

impl Checker<'_> {
    fn issue(&mut self, pointer: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            pointer: pointer.into(),
            message: message.into(),
        });
    }

    fn typed<T: DeserializeOwned>(&mut self, v: &Value, pointer: &str) -> Option<T> {
        match serde_json::from_value(v.clone()) {
            Ok(t) => Some(t),
            Err(e) => {
                self.issue(pointer, e.to_string());
                None
            }
        }
    }

    fn field<T: DeserializeOwned>(&mut self, obj: &Map<String, Value>, key: &str, pointer: &str) -> Option<T> {
        let p = format!("{pointer}/{key}");
        match obj.get(key) {
            None => {
                self.issue(p, "required field is missing");
                None
            }
            Some(v) => self.typed(v, &p),
        }
    }

    fn optional<T: DeserializeOwned>(&mut self, obj: &Map<String, Value>, key: &str, pointer: &str) -> Option<Option<T>> {
        match obj.get(key) {
            None | Some(Value::Null) => Some(None),
            Some(v) => self.typed(v, &format!("{pointer}/{key}")).map(Some),
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        let joined = if p.is_absolute() { p.to_path_buf() } else { self.base.join(p) };
        std::path::absolute(&joined).unwrap_or(joined)
    }

    fn existing(&mut self, p: PathBuf, pointer: &str, dir: bool) -> PathBuf {
        let abs = self.resolve(&p);
        let ok = if dir { abs.is_dir() } else { abs.is_file() };
        if !ok {
            let kind = if dir { "directory" } else { "file" };
            self.issue(pointer, format!("{kind} {} does not exist", abs.display()));
        }
        abs
    }

    fn existing_list(&mut self, ps: Vec<PathBuf>, pointer: &str) -> Vec<PathBuf> {
        if ps.is_empty() {
            self.issue(pointer, "list must not be empty");
        }
        ps.into_iter()
            .enumerate()
            .map(|(i, p)| self.existing(p, &format!("{pointer}/{i}"), false))
            .collect()
    }
}

/// Escapes a key for use inside a JSON pointer.
fn escape(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}

const KNOWN_FIELDS: [&str; 15] = [
    "output_dir",
    "source_checkpoint",
    "languages",
    "external_vectors",
    "vocab_size",
    "latent_dim",
    "neighbors",
    "masking",
    "pretrain",
    "classifier",
    "heldout_fraction",
    "variants",
    "include_source",
    "seeds",
    "$comment",
];

/// Validates an already parsed config, collecting every violation.
pub fn validate_value(value: &Value, base: &Path) -> Result<ExperimentConfig> {
    let mut c = Checker {
        base,
        issues: Vec::new(),
    };
    let Some(obj) = value.as_object() else {
        return Err(Error::Validation(vec![ValidationIssue {
            pointer: String::new(),
            message: "config must be a JSON object".into(),
        }]));
    };
    for key in obj.keys().filter(|k| !KNOWN_FIELDS.contains(&k.as_str())) {
        c.issue(format!("/{}", escape(key)), "unknown field");
    }

    let output_dir = c.field::<PathBuf>(obj, "output_dir", "").map(|p| c.resolve(&p));
    let source_checkpoint = c
        .field::<PathBuf>(obj, "source_checkpoint", "")
        .map(|p| c.existing(p, "/source_checkpoint", true));
    let source = source_checkpoint.as_ref().filter(|p| p.is_dir()).and_then(|dir| {
        let mut missing = false;
        for f in ["vocab.txt", "merges.txt"] {
            if !dir.join(f).is_file() {
                c.issue("/source_checkpoint", format!("{} has no {f}", dir.display()));
                missing = true;
            }
        }
        match Checkpoint::load(dir) {
            Ok(ck) if !missing => Some(ck),
            Ok(_) => None,
            Err(e) => {
                c.issue("/source_checkpoint", format!("unreadable checkpoint: {e}"));
                None
            }
        }
    });

    let variants = c
        .optional::<Vec<Variant>>(obj, "variants", "")
        .map(|v| v.unwrap_or_else(|| Variant::ALL.to_vec()));
    if let Some(vs) = &variants {
        if vs.is_empty() {
            c.issue("/variants", "at least one variant is required");
        }
        for (i, v) in vs.iter().enumerate() {
            if vs[..i].contains(v) {
                c.issue(format!("/variants/{i}"), format!("duplicate variant {:?}", v.name()));
            }
        }
    }
    let wants_synthetic = variants.as_ref().is_some_and(|vs| vs.iter().any(|v| v.synthetic));
    let wants_ofa = variants.as_ref().is_some_and(|vs| vs.iter().any(|v| v.init == InitScheme::Ofa));

    let languages = match obj.get("languages") {
        None => {
            c.issue("/languages", "required field is missing");
            None
        }
        Some(Value::Object(langs)) => {
            if langs.is_empty() {
                c.issue("/languages", "at least one language is required");
            }
            let mut out = BTreeMap::new();
            for (code, lv) in langs {
                let p = format!("/languages/{}", escape(code));
                if let Some(mut l) = c.typed::<LanguageConfig>(lv, &p) {
                    l.corpora = c.existing_list(l.corpora, &format!("{p}/corpora"));
                    if let Some(s) = l.synthetic.as_mut() {
                        s.corpora = c.existing_list(std::mem::take(&mut s.corpora), &format!("{p}/synthetic/corpora"));
                        s.lexicon = c.existing(s.lexicon.clone(), &format!("{p}/synthetic/lexicon"), false);
                    } else if wants_synthetic {
                        c.issue(format!("{p}/synthetic"), "required by the synthetic variants");
                    }
                    if let Some(e) = l.eval.as_mut() {
                        e.train = c.existing(e.train.clone(), &format!("{p}/eval/train"), false);
                        e.dev = c.existing(e.dev.clone(), &format!("{p}/eval/dev"), false);
                        e.test = c.existing(e.test.clone(), &format!("{p}/eval/test"), false);
                    }
                    out.insert(code.clone(), l);
                }
            }
            if !langs.is_empty() && !out.is_empty() && out.values().all(|l| l.eval.is_none()) {
                c.issue("/languages", "no language has an `eval` section");
            }
            Some(out)
        }
        Some(_) => {
            c.issue("/languages", "expected an object keyed by language code");
            None
        }
    };

    let external_vectors = c
        .optional::<PathBuf>(obj, "external_vectors", "")
        .map(|p| p.map(|p| c.existing(p, "/external_vectors", false)));
    if wants_ofa && matches!(external_vectors, Some(None)) {
        c.issue("/external_vectors", "required by the ofa variants");
    }

    let vocab_size = c.field::<usize>(obj, "vocab_size", "");
    if vocab_size == Some(0) {
        c.issue("/vocab_size", "must be positive");
    }
    let latent_dim = c.optional::<usize>(obj, "latent_dim", "");
    if let (Some(Some(d)), Some(ck)) = (latent_dim, source.as_ref()) {
        if d == 0 || d > ck.config.dim {
            c.issue(
                "/latent_dim",
                format!("latent_dim {d} must lie in 1..={} (the source model width)", ck.config.dim),
            );
        }
    }
    let neighbors = c
        .optional::<usize>(obj, "neighbors", "")
        .map(|k| k.unwrap_or(DEFAULT_NEIGHBORS));
    if neighbors == Some(0) {
        c.issue("/neighbors", "must be at least 1");
    }

    let masking = c.optional::<MaskingPolicy>(obj, "masking", "").map(Option::unwrap_or_default);
    if let Some(Err(e)) = masking.as_ref().map(MaskingPolicy::validate) {
        c.issue("/masking", e.to_string());
    }
    let pretrain = c.optional::<TrainRun>(obj, "pretrain", "").map(Option::unwrap_or_default);
    if obj.get("pretrain").and_then(|p| p.get("seed")).is_some() {
        c.issue("/pretrain/seed", "set seeds at the top level");
    }
    if let Some(p) = &pretrain {
        if p.batch_size == 0 {
            c.issue("/pretrain/batch_size", "must be positive");
        }
        if let Err(e) = p.adam.validate() {
            c.issue("/pretrain", e.to_string());
        }
    }
    let classifier = c.optional::<HeadHyper>(obj, "classifier", "").map(Option::unwrap_or_default);
    if obj.get("classifier").and_then(|p| p.get("seed")).is_some() {
        c.issue("/classifier/seed", "set seeds at the top level");
    }
    if let Some(h) = &classifier {
        if h.batch_size == 0 || h.eval_every == 0 {
            c.issue("/classifier", "batch_size and eval_every must be positive");
        }
        if let Err(e) = h.adam.validate() {
            c.issue("/classifier", e.to_string());
        }
    }
    let heldout_fraction = c.optional::<f64>(obj, "heldout_fraction", "").map(|h| h.unwrap_or(0.1));
    if let Some(h) = heldout_fraction {
        if !(h > 0.0 && h < 0.5) {
            c.issue("/heldout_fraction", format!("{h} outside (0, 0.5)"));
        }
    }
    let include_source = c.optional::<bool>(obj, "include_source", "").map(|b| b.unwrap_or(false));
    let seeds = c.field::<Vec<u64>>(obj, "seeds", "");
    if let Some(s) = &seeds {
        if s.is_empty() {
            c.issue("/seeds", "at least one seed is required");
        }
        for (i, x) in s.iter().enumerate() {
            if s[..i].contains(x) {
                c.issue(format!("/seeds/{i}"), format!("duplicate seed {x}"));
            }
        }
    }

    if !c.issues.is_empty() {
        return Err(Error::Validation(c.issues));
    }
    let missing = || Error::Validation(Vec::new());
    Ok(ExperimentConfig {
        output_dir: output_dir.ok_or_else(missing)?,
        source_checkpoint: source_checkpoint.ok_or_else(missing)?,
        languages: languages.ok_or_else(missing)?,
        external_vectors: external_vectors.ok_or_else(missing)?,
        vocab_size: vocab_size.ok_or_else(missing)?,
        latent_dim: latent_dim.ok_or_else(missing)?,
        neighbors: neighbors.ok_or_else(missing)?,
        masking: masking.ok_or_else(missing)?,
        pretrain: pretrain.ok_or_else(missing)?,
        classifier: classifier.ok_or_else(missing)?,
        heldout_fraction: heldout_fraction.ok_or_else(missing)?,
        variants: variants.ok_or_else(missing)?,
        include_source: include_source.ok_or_else(missing)?,
        seeds: seeds.ok_or_else(missing)?,
    })
}
