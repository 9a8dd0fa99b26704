//! Pipeline configuration: TOML with includes, dotted overrides and a
//! content hash.

use std::fs;
use std::path::{Path, PathBuf};

use oqgen_core::corpus::Split;
use oqgen_model::{DecodeOptions, ModelConfig, SamplingOptions, SelectionMode, TrainConfig, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{CliError, Result};

/// Includes nested deeper than this are treated as a cycle.
const MAX_INCLUDE_DEPTH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Base seed. Required; every stage derives its own seed from it.
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub classifier: ClassifierSettings,
    #[serde(default)]
    pub decode: DecodeOptions,
    #[serde(default)]
    pub generate: GenerateSettings,
    #[serde(default)]
    pub split: SplitSettings,
    #[serde(default)]
    pub templates: TemplateSettings,
    #[serde(default)]
    pub diversity: DiversitySettings,
    #[serde(default)]
    pub correlate: CorrelateSettings,
}

/// Input files are optional until a command needs them; outputs go under
/// `reports` and `checkpoints`, which are created on demand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub qa: Option<PathBuf>,
    /// Parsed answers, keyed by pair id.
    pub parsed: Option<PathBuf>,
    /// Parsed questions, keyed by pair id.
    pub parsed_questions: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub exemplars: Option<PathBuf>,
    pub protected: Option<PathBuf>,
    /// Directory holding `stopwords.txt`, `question_starters.txt`,
    /// `abusive.txt`, `emoticons.txt` and `dictionary.txt`; each is optional.
    pub lexicons: Option<PathBuf>,
    pub blocklist: Option<PathBuf>,
    /// Extracted templates; defaults to `reports/templates.jsonl`.
    pub templates: Option<PathBuf>,
    /// Generation output to score; defaults to `reports/generations.jsonl`.
    pub hypotheses: Option<PathBuf>,
    /// Reference questions; defaults to `qa`.
    pub references: Option<PathBuf>,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            qa: None,
            parsed: None,
            parsed_questions: None,
            embeddings: None,
            exemplars: None,
            protected: None,
            lexicons: None,
            blocklist: None,
            templates: None,
            hypotheses: None,
            references: None,
            checkpoints: PathBuf::from("checkpoints"),
            reports: PathBuf::from("reports"),
        }
    }
}

impl Paths {
    fn inputs_mut(&mut self) -> [(&'static str, &mut Option<PathBuf>); 11] {
        [
            ("paths.qa", &mut self.qa),
            ("paths.parsed", &mut self.parsed),
            ("paths.parsed_questions", &mut self.parsed_questions),
            ("paths.embeddings", &mut self.embeddings),
            ("paths.exemplars", &mut self.exemplars),
            ("paths.protected", &mut self.protected),
            ("paths.lexicons", &mut self.lexicons),
            ("paths.blocklist", &mut self.blocklist),
            ("paths.templates", &mut self.templates),
            ("paths.hypotheses", &mut self.hypotheses),
            ("paths.references", &mut self.references),
        ]
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for (_, p) in self.inputs_mut() {
            if let Some(p) = p {
                join(p);
            }
        }
        join(&mut self.checkpoints);
        join(&mut self.reports);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub variant: Variant,
    /// Words seen fewer times map to the unknown token.
    pub min_word_count: usize,
    /// `optimizer.seed` must stay 0; the stage seed replaces it.
    pub optimizer: TrainConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            variant: Variant::JointGen,
            min_word_count: 1,
            optimizer: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSettings {
    pub model: ModelConfig,
    pub optimizer: TrainConfig,
    /// Self-training keeps predictions strictly above this confidence.
    pub confidence_threshold: f64,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        ClassifierSettings {
            model: ModelConfig {
                decoder_layers: 1,
                ..ModelConfig::default()
            },
            optimizer: TrainConfig::default(),
            confidence_threshold: 0.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeStrategy {
    Beam,
    Greedy,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSettings {
    pub variant: Variant,
    pub strategy: DecodeStrategy,
    pub sampling: SamplingOptions,
    pub selection: SelectionMode,
    pub split: Split,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        GenerateSettings {
            variant: Variant::JointGen,
            strategy: DecodeStrategy::Beam,
            sampling: SamplingOptions::default(),
            selection: SelectionMode::Learned,
            split: Split::Test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    /// Train, valid and test fractions.
    pub ratios: [f64; 3],
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            ratios: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateSettings {
    /// Share of question content words a template replaces.
    pub threshold: f64,
    /// Mined exemplars must be seen strictly more often than this.
    pub min_freq: usize,
}

impl Default for TemplateSettings {
    fn default() -> Self {
        TemplateSettings {
            threshold: oqgen_core::template::DEFAULT_REPLACE_THRESHOLD,
            min_freq: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiversitySettings {
    /// Most confident answer-side types to generate for.
    pub top_k: usize,
    pub split: Split,
}

impl Default for DiversitySettings {
    fn default() -> Self {
        DiversitySettings {
            top_k: 9,
            split: Split::Test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelateSettings {
    pub bins: usize,
    pub p_threshold: f64,
}

impl Default for CorrelateSettings {
    fn default() -> Self {
        CorrelateSettings {
            bins: 8,
            p_threshold: 0.05,
        }
    }
}

/// Per-stage seed offsets from the base seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Split,
    Init,
    Train,
    Classifier,
    Sample,
}

fn read_table(path: &Path) -> Result<Table> {
    let raw = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    raw.parse::<Table>().map_err(|e| CliError::ConfigFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Values in `top` win; nested tables merge key by key.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Reads `path` and the files named by its `include` list (relative to
/// the including file), earlier includes first and the file itself last.
fn load_with_includes(path: &Path, depth: usize) -> Result<Table> {
    if depth > MAX_INCLUDE_DEPTH {
        return Err(CliError::ConfigFile {
            path: path.to_path_buf(),
            reason: "includes nest too deeply (cycle?)".into(),
        });
    }
    let mut own = read_table(path)?;
    let includes = match own.remove("include") {
        None => Vec::new(),
        Some(Value::String(s)) => vec![s],
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                other => Err(CliError::config("include", format!("expected a path, got {other}"))),
            })
            .collect::<Result<_>>()?,
        Some(other) => return Err(CliError::config("include", format!("expected a path list, got {other}"))),
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    anchor_paths(&mut own, dir);
    let mut table = Table::new();
    for inc in includes {
        merge(&mut table, load_with_includes(&dir.join(inc), depth + 1)?);
    }
    merge(&mut table, own);
    Ok(table)
}

/// Makes relative entries of a file's `[paths]` table relative to that
/// file, so included files keep pointing where their author meant.
fn anchor_paths(table: &mut Table, dir: &Path) {
    let Some(Value::Table(paths)) = table.get_mut("paths") else {
        return;
    };
    for (_, value) in paths.iter_mut() {
        if let Value::String(s) = value {
            if Path::new(s.as_str()).is_relative() {
                *s = dir.join(&*s).to_string_lossy().into_owned();
            }
        }
    }
}

/// Parses `a.b.c=value`; the value is read as TOML and falls back to a
/// bare string.
fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Override(spec.to_string()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Override(spec.to_string()));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::config(key, format!("`{part}` is not a table"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// Loads, applies overrides and the seed flag, resolves relative paths
    /// against the config file's directory, and validates.
    pub fn load(path: impl AsRef<Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let path = &std::path::absolute(path.as_ref()).map_err(|e| CliError::io(path.as_ref(), e))?;
        let mut table = load_with_includes(path, 0)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        if let Some(s) = seed {
            let s = i64::try_from(s).map_err(|_| CliError::config("seed", "does not fit a TOML integer"))?;
            table.insert("seed".into(), Value::Integer(s));
        }
        let mut config: PipelineConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| {
            CliError::ConfigFile {
                path: path.to_path_buf(),
                reason: e.message().to_string(),
            }
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.paths.resolve(base);
        config.validate()?;
        Ok(config)
    }

    /// Reports the first failing field.
    pub fn validate(&self) -> Result<()> {
        let model = |field: &str, r: oqgen_model::Result<()>| r.map_err(|e| CliError::config(field, e.to_string()));
        model("model", self.model.validate())?;
        model("classifier.model", self.classifier.model.validate())?;
        model("train.optimizer", self.train.optimizer.validate())?;
        model("classifier.optimizer", self.classifier.optimizer.validate())?;
        for (field, opt) in [
            ("train.optimizer.seed", &self.train.optimizer),
            ("classifier.optimizer.seed", &self.classifier.optimizer),
        ] {
            if opt.seed != 0 {
                return Err(CliError::config(field, "seeds derive from the top-level `seed`; leave this unset"));
            }
        }
        if self.train.min_word_count == 0 {
            return Err(CliError::config("train.min_word_count", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.classifier.confidence_threshold) {
            return Err(CliError::config("classifier.confidence_threshold", "must lie in [0, 1)"));
        }
        if self.decode.beam == 0 {
            return Err(CliError::config("decode.beam", "must be at least 1"));
        }
        if self.decode.min_len > self.decode.max_len {
            return Err(CliError::config("decode.min_len", "exceeds decode.max_len"));
        }
        let s = &self.generate.sampling;
        if s.top_k == 0 {
            return Err(CliError::config("generate.sampling.top_k", "must be at least 1"));
        }
        if !(s.top_p > 0.0 && s.top_p <= 1.0) {
            return Err(CliError::config("generate.sampling.top_p", "must lie in (0, 1]"));
        }
        let r = self.split.ratios;
        if r.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CliError::config("split.ratios", "must be nonnegative and sum to 1"));
        }
        if !(self.templates.threshold > 0.0 && self.templates.threshold <= 1.0) {
            return Err(CliError::config("templates.threshold", "must lie in (0, 1]"));
        }
        if self.templates.min_freq == 0 {
            return Err(CliError::config("templates.min_freq", "must be at least 1"));
        }
        if !(2..=10).contains(&self.diversity.top_k) {
            return Err(CliError::config("diversity.top_k", "must lie in 2..=10"));
        }
        if self.correlate.bins == 0 {
            return Err(CliError::config("correlate.bins", "must be at least 1"));
        }
        if !(self.correlate.p_threshold > 0.0 && self.correlate.p_threshold < 1.0) {
            return Err(CliError::config("correlate.p_threshold", "must lie in (0, 1)"));
        }
        let mut paths = self.paths.clone();
        for (field, p) in paths.inputs_mut() {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(CliError::MissingPath {
                        field: field.to_string(),
                        path: p.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        let offset = match stage {
            Stage::Split => 0,
            Stage::Init => 1,
            Stage::Train => 2,
            Stage::Classifier => 3,
            Stage::Sample => 4,
        };
        self.seed.wrapping_add(offset)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.stage_seed(Stage::Train),
            ..self.train.optimizer
        }
    }

    pub fn classifier_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.stage_seed(Stage::Classifier),
            ..self.classifier.optimizer
        }
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.paths.reports.join(name)
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.paths.checkpoints.join(name)
    }

    /// The configured input at `field`, or a missing-input error for
    /// `command`.
    pub fn require<'a>(&self, command: &str, field: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| CliError::missing(command, format!("`{field}` to be set")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_toml_values() {
        let mut t = Table::new();
        apply_override(&mut t, "model.d_model=32").unwrap();
        apply_override(&mut t, "generate.strategy=greedy").unwrap();
        apply_override(&mut t, "split.ratios=[0.5, 0.25, 0.25]").unwrap();
        assert_eq!(t["model"]["d_model"].as_integer(), Some(32));
        assert_eq!(t["generate"]["strategy"].as_str(), Some("greedy"));
        assert_eq!(t["split"]["ratios"].as_array().unwrap().len(), 3);
        assert!(apply_override(&mut t, "noequals").is_err());
        assert!(apply_override(&mut t, "a..b=1").is_err());
    }

    #[test]
    fn merge_is_deep() {
        let mut base: Table = "[model]\nd_model = 8\nheads = 2\n".parse().unwrap();
        merge(&mut base, "[model]\nheads = 4\n".parse().unwrap());
        assert_eq!(base["model"]["d_model"].as_integer(), Some(8));
        assert_eq!(base["model"]["heads"].as_integer(), Some(4));
    }
}
