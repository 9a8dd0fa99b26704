//! Question–answer records, lexicons, cleaning and splitting.

mod clean;
mod split;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CoreError, Result};
use crate::text;

pub use clean::{apply_cleaning_rules, CleanVerdict, CleaningReport, CleaningRule};
pub use split::{split_dataset, Split, SplitAssignment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuestionType {
    Verification,
    Disjunctive,
    Concept,
    Extent,
    Example,
    Comparison,
    Cause,
    Consequence,
    Procedural,
    Judgmental,
}

impl QuestionType {
    pub const ALL: [QuestionType; 10] = [
        QuestionType::Verification,
        QuestionType::Disjunctive,
        QuestionType::Concept,
        QuestionType::Extent,
        QuestionType::Example,
        QuestionType::Comparison,
        QuestionType::Cause,
        QuestionType::Consequence,
        QuestionType::Procedural,
        QuestionType::Judgmental,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuestionType::Verification => "Verification",
            QuestionType::Disjunctive => "Disjunctive",
            QuestionType::Concept => "Concept",
            QuestionType::Extent => "Extent",
            QuestionType::Example => "Example",
            QuestionType::Comparison => "Comparison",
            QuestionType::Cause => "Cause",
            QuestionType::Consequence => "Consequence",
            QuestionType::Procedural => "Procedural",
            QuestionType::Judgmental => "Judgmental",
        }
    }

    /// Position in [`QuestionType::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<QuestionType> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Case-insensitive lookup over the ten canonical names.
pub fn parse_question_type(label: &str) -> Result<QuestionType> {
    let trimmed = label.trim();
    QuestionType::ALL
        .into_iter()
        .find(|t| t.name().eq_ignore_ascii_case(trimmed))
        .ok_or_else(|| CoreError::UnknownQuestionType {
            label: label.to_string(),
            valid: QuestionType::ALL.map(QuestionType::name).join(", "),
        })
}

impl FromStr for QuestionType {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        parse_question_type(s)
    }
}

impl Serialize for QuestionType {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for QuestionType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_question_type(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: String,
    pub question: String,
    pub answer: String,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub qtype: Option<QuestionType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl QAPair {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        answer: impl Into<String>,
    ) -> Self {
        QAPair {
            id: id.into(),
            question: question.into(),
            answer: answer.into(),
            qtype: None,
            split: None,
        }
    }

    pub fn question_tokens(&self) -> Vec<String> {
        text::tokenize(&self.question)
    }

    pub fn answer_tokens(&self) -> Vec<String> {
        text::tokenize(&self.answer)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.question.trim().is_empty() {
            return Err(format!("empty question for id `{}`", self.id));
        }
        if self.answer.trim().is_empty() {
            return Err(format!("empty answer for id `{}`", self.id));
        }
        Ok(())
    }
}

/// Reads `qa.jsonl`. Blank lines are skipped; unknown fields are ignored.
pub fn load_qa_pairs(path: impl AsRef<Path>) -> Result<Vec<QAPair>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: QAPair = serde_json::from_str(line)
            .map_err(|e| CoreError::malformed(path, i + 1, e.to_string()))?;
        pair.validate()
            .map_err(|reason| CoreError::malformed(path, i + 1, reason))?;
        if !seen.insert(pair.id.clone()) {
            return Err(CoreError::DuplicateId(pair.id));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_qa_pairs(path: impl AsRef<Path>, pairs: &[QAPair]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).expect("plain data serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");
const DEFAULT_STARTERS: &str = include_str!("../../data/question_starters.txt");

/// Word lists consulted by the cleaning rules and content-word tests.
/// Entries are stored lowercase.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicons {
    pub stopwords: BTreeSet<String>,
    pub abusive: Option<BTreeSet<String>>,
    pub emoticons: Option<BTreeSet<String>>,
    pub dictionary: Option<BTreeSet<String>>,
    pub question_starters: BTreeSet<String>,
}

impl Default for Lexicons {
    fn default() -> Self {
        Lexicons {
            stopwords: parse_lexicon(DEFAULT_STOPWORDS, true),
            abusive: None,
            emoticons: None,
            dictionary: None,
            question_starters: parse_lexicon(DEFAULT_STARTERS, true),
        }
    }
}

impl Lexicons {
    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(&word.to_lowercase())
    }
}

/// One entry per line, `#` starts a comment line. Emoticons are case
/// sensitive, so lowercasing is optional.
pub fn parse_lexicon(contents: &str, lowercase: bool) -> BTreeSet<String> {
    contents
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            if lowercase {
                l.to_lowercase()
            } else {
                l.to_string()
            }
        })
        .collect()
}

pub fn load_lexicon(path: impl AsRef<Path>, lowercase: bool) -> Result<BTreeSet<String>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    Ok(parse_lexicon(&raw, lowercase))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn question_type_names_are_case_insensitive() {
        assert_eq!(
            parse_question_type("procedural").unwrap(),
            QuestionType::Procedural
        );
        assert_eq!(parse_question_type("CAUSE").unwrap(), QuestionType::Cause);
        let err = parse_question_type("factoid").unwrap_err().to_string();
        assert!(
            err.contains("Verification") && err.contains("Judgmental"),
            "{err}"
        );
        for t in QuestionType::ALL {
            assert_eq!(parse_question_type(t.name()).unwrap(), t);
            assert_eq!(QuestionType::from_index(t.index()), Some(t));
        }
    }

    #[test]
    fn default_lexicons() {
        let lex = Lexicons::default();
        assert_eq!(lex.stopwords.len(), 179);
        assert_eq!(lex.question_starters.len(), 27);
        assert!(lex.is_stopword("The"));
        assert!(lex.abusive.is_none());
    }
}
