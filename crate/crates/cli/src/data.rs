//! Loading and joining pipeline inputs, and the JSONL records commands
//! exchange.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use oqgen_core::corpus::{load_lexicon, load_qa_pairs, write_qa_pairs, Lexicons, QAPair, QuestionType, Split};
use oqgen_core::parse::{load_parsed_documents, ParsedDocument, Token};
use oqgen_core::template::{load_embeddings, EmbeddingTable, ExemplarInventory, ProtectedWordLists};
use oqgen_core::text;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};

/// One generated question, as written by `generate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    #[serde(rename = "type")]
    pub qtype: QuestionType,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus_nodes: Option<Vec<usize>>,
}

/// Any JSONL record with an id and a question: generation output and
/// `qa.jsonl` both qualify.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct IdQuestion {
    pub id: String,
    pub question: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub id: String,
    #[serde(rename = "type")]
    pub qtype: QuestionType,
    pub template: String,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let raw = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_string_pretty(value).expect("value serializes");
    out.push('\n');
    write_text(path, &out)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        None => Ok(()),
    }
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn write_pairs(path: &Path, pairs: &[QAPair]) -> Result<()> {
    ensure_parent(path)?;
    Ok(write_qa_pairs(path, pairs)?)
}

/// Built-in lists, replaced or extended by whichever files the lexicon
/// directory holds.
pub fn load_lexicons(dir: Option<&Path>) -> Result<Lexicons> {
    let mut lex = Lexicons::default();
    let Some(dir) = dir else {
        return Ok(lex);
    };
    let read = |name: &str, lowercase: bool| -> Result<Option<_>> {
        let p = dir.join(name);
        if p.exists() {
            Ok(Some(load_lexicon(&p, lowercase)?))
        } else {
            Ok(None)
        }
    };
    if let Some(s) = read("stopwords.txt", true)? {
        lex.stopwords = s;
    }
    if let Some(s) = read("question_starters.txt", true)? {
        lex.question_starters = s;
    }
    lex.abusive = read("abusive.txt", true)?;
    lex.emoticons = read("emoticons.txt", false)?;
    lex.dictionary = read("dictionary.txt", true)?;
    Ok(lex)
}

pub fn load_inventory(config: &PipelineConfig) -> Result<ExemplarInventory> {
    Ok(match &config.paths.exemplars {
        Some(p) => ExemplarInventory::load(p)?,
        None => ExemplarInventory::defaults(),
    })
}

pub fn load_protected(config: &PipelineConfig) -> Result<ProtectedWordLists> {
    Ok(match &config.paths.protected {
        Some(p) => ProtectedWordLists::load(p)?,
        None => ProtectedWordLists::defaults(),
    })
}

pub fn load_embedding_table(config: &PipelineConfig, command: &str) -> Result<EmbeddingTable> {
    Ok(load_embeddings(config.require(command, "paths.embeddings", &config.paths.embeddings)?)?)
}

pub fn index_documents(docs: Vec<ParsedDocument>) -> BTreeMap<String, ParsedDocument> {
    docs.into_iter().map(|d| (d.id.clone(), d)).collect()
}

/// QA pairs joined with their parsed answers and, when configured, parsed
/// questions.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub pairs: Vec<QAPair>,
    pub answers: BTreeMap<String, ParsedDocument>,
    pub questions: BTreeMap<String, ParsedDocument>,
}

impl Corpus {
    pub fn load(config: &PipelineConfig, command: &str) -> Result<Self> {
        let pairs = load_qa_pairs(config.require(command, "paths.qa", &config.paths.qa)?)?;
        let answers = index_documents(load_parsed_documents(config.require(
            command,
            "paths.parsed",
            &config.paths.parsed,
        )?)?);
        let questions = match &config.paths.parsed_questions {
            Some(p) => index_documents(load_parsed_documents(p)?),
            None => BTreeMap::new(),
        };
        Ok(Corpus {
            pairs,
            answers,
            questions,
        })
    }

    /// Pairs in `split` that have a parsed answer. When no pair carries a
    /// split label, every pair counts as part of every split.
    pub fn in_split(&self, split: Split) -> Vec<&QAPair> {
        let labelled = self.pairs.iter().any(|p| p.split.is_some());
        self.pairs
            .iter()
            .filter(|p| !labelled || p.split == Some(split))
            .filter(|p| self.answers.contains_key(&p.id))
            .collect()
    }

    pub fn answer(&self, id: &str) -> Option<&ParsedDocument> {
        self.answers.get(id)
    }

    /// Tokens of the parsed question, or of the raw question text with the
    /// lowercase word as lemma when no parse is available.
    pub fn question_tokens(&self, pair: &QAPair) -> Vec<Token> {
        match self.questions.get(&pair.id) {
            Some(d) => d.tokens().cloned().collect(),
            None => pair
                .question_tokens()
                .iter()
                .enumerate()
                .map(|(i, w)| Token::new(i, w, &w.to_lowercase(), ""))
                .collect(),
        }
    }

    /// Answer words as the classifiers see them.
    pub fn answer_words(&self, pair: &QAPair) -> Vec<String> {
        match self.answers.get(&pair.id) {
            Some(d) => d.tokens().map(|t| t.text.clone()).collect(),
            None => pair.answer_tokens(),
        }
    }
}

/// Lowercased tokens, the form every metric compares.
pub fn metric_tokens(s: &str) -> Vec<String> {
    text::tokenize(s).into_iter().map(|w| w.to_lowercase()).collect()
}

/// The first `max` tokens.
pub fn clip(mut tokens: Vec<String>, max: usize) -> Vec<String> {
    tokens.truncate(max);
    tokens
}
