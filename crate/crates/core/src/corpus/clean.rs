use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Lexicons, QAPair};
use crate::error::{CoreError, Result};
use crate::parse::is_content_word;
use crate::text::{self, is_punctuation, is_word};

/// The data-cleaning filters, identified by stable kebab-case ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CleaningRule {
    QuestionUrl,
    QuestionSentenceForm,
    /// Fewer than 4 words or fewer than 1 content word.
    QuestionMinLength,
    QuestionStarter,
    AnswerMinContentWords,
    AnswerFewerContentWords,
    AnswerDigitRatio,
    #[serde(rename = "qa-min-overlap")]
    MinOverlap,
    AbusiveWords,
    Emoticons,
    ConsecutivePunctuation,
    ConsecutiveUppercase,
    TitleCaseRatio,
    OutOfDictionary,
}

impl CleaningRule {
    pub const ALL: [CleaningRule; 14] = [
        CleaningRule::QuestionUrl,
        CleaningRule::QuestionSentenceForm,
        CleaningRule::QuestionMinLength,
        CleaningRule::QuestionStarter,
        CleaningRule::AnswerMinContentWords,
        CleaningRule::AnswerFewerContentWords,
        CleaningRule::AnswerDigitRatio,
        CleaningRule::MinOverlap,
        CleaningRule::AbusiveWords,
        CleaningRule::Emoticons,
        CleaningRule::ConsecutivePunctuation,
        CleaningRule::ConsecutiveUppercase,
        CleaningRule::TitleCaseRatio,
        CleaningRule::OutOfDictionary,
    ];

    pub fn id(self) -> &'static str {
        match self {
            CleaningRule::QuestionUrl => "question-url",
            CleaningRule::QuestionSentenceForm => "question-sentence-form",
            CleaningRule::QuestionMinLength => "question-min-length",
            CleaningRule::QuestionStarter => "question-starter",
            CleaningRule::AnswerMinContentWords => "answer-min-content-words",
            CleaningRule::AnswerFewerContentWords => "answer-fewer-content-words",
            CleaningRule::AnswerDigitRatio => "answer-digit-ratio",
            CleaningRule::MinOverlap => "qa-min-overlap",
            CleaningRule::AbusiveWords => "abusive-words",
            CleaningRule::Emoticons => "emoticons",
            CleaningRule::ConsecutivePunctuation => "consecutive-punctuation",
            CleaningRule::ConsecutiveUppercase => "consecutive-uppercase",
            CleaningRule::TitleCaseRatio => "title-case-ratio",
            CleaningRule::OutOfDictionary => "out-of-dictionary",
        }
    }
}

impl fmt::Display for CleaningRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for CleaningRule {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        CleaningRule::ALL
            .into_iter()
            .find(|r| r.id() == s)
            .ok_or_else(|| CoreError::InvalidArgument(format!("unknown cleaning rule `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanVerdict {
    pub accepted: bool,
    /// Sorted in rule order, without duplicates.
    pub violated_rules: Vec<CleaningRule>,
    /// Enabled rules that could not run because their lexicon is absent.
    pub skipped_rules: Vec<CleaningRule>,
}

pub const MIN_QUESTION_WORDS: usize = 4;
pub const MIN_QUESTION_CONTENT_WORDS: usize = 1;
pub const MIN_ANSWER_CONTENT_WORDS: usize = 15;
pub const MAX_ANSWER_DIGIT_RATIO: f64 = 0.3;
pub const MIN_OVERLAP: usize = 2;
pub const MAX_QUESTION_TITLE_RATIO: f64 = 0.9;
pub const MAX_ANSWER_TITLE_RATIO: f64 = 0.3;
pub const MAX_QUESTION_OOV: usize = 1;
pub const MAX_ANSWER_OOV: usize = 2;
const RUN_LENGTH: usize = 3;

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|ftp://|www\.)\S+").expect("static regex"));

struct Side<'a> {
    raw: &'a str,
    tokens: Vec<String>,
    words: Vec<&'a str>,
}

impl<'a> Side<'a> {
    fn new(raw: &'a str, tokens: Vec<String>) -> Self {
        Side {
            raw,
            tokens,
            words: Vec::new(),
        }
    }
}

fn word_tokens(tokens: &[String]) -> Vec<&str> {
    tokens
        .iter()
        .map(String::as_str)
        .filter(|t| is_word(t))
        .collect()
}

fn content_words(words: &[&str], lex: &Lexicons) -> Vec<String> {
    words
        .iter()
        .filter(|w| is_content_word(w, None, lex))
        .map(|w| w.to_lowercase())
        .collect()
}

fn sentence_count(tokens: &[String]) -> usize {
    let mut count = 0;
    let mut open = false;
    for t in tokens {
        if matches!(t.as_str(), "." | "!" | "?") {
            if open {
                count += 1;
            }
            open = false;
        } else if is_word(t) {
            open = true;
        }
    }
    count + usize::from(open)
}

fn is_title_case(word: &str) -> bool {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() && c.is_uppercase() => {
            chars.all(|c| c.is_alphabetic() && c.is_lowercase())
        }
        _ => false,
    }
}

fn is_fully_uppercase(word: &str) -> bool {
    word.chars().any(char::is_alphabetic) && !word.chars().any(char::is_lowercase)
}

fn is_numeric(word: &str) -> bool {
    word.chars().any(|c| c.is_ascii_digit())
        && word
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | ',' | '-'))
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn has_run<T>(items: &[T], pred: impl Fn(&T) -> bool) -> bool {
    let mut run = 0;
    for it in items {
        run = if pred(it) { run + 1 } else { 0 };
        if run >= RUN_LENGTH {
            return true;
        }
    }
    false
}

fn oov_count(words: &[&str], dict: &BTreeSet<String>) -> usize {
    words
        .iter()
        .filter(|w| w.chars().all(char::is_alphabetic))
        .map(|w| w.to_lowercase())
        .filter(|w| !dict.contains(w))
        .collect::<BTreeSet<_>>()
        .len()
}

/// Evaluates every enabled rule against one pair and collects all violations.
pub fn apply_cleaning_rules(
    pair: &QAPair,
    lexicons: &Lexicons,
    rules: &[CleaningRule],
) -> CleanVerdict {
    let mut q = Side::new(&pair.question, text::tokenize(&pair.question));
    let mut a = Side::new(&pair.answer, text::tokenize(&pair.answer));
    q.words = word_tokens(&q.tokens);
    a.words = word_tokens(&a.tokens);
    let q_content = content_words(&q.words, lexicons);
    let a_content = content_words(&a.words, lexicons);

    let enabled: BTreeSet<CleaningRule> = rules.iter().copied().collect();
    let mut violated = Vec::new();
    let mut skipped = Vec::new();
    for rule in enabled {
        let outcome = match rule {
            CleaningRule::QuestionUrl => Some(URL_RE.is_match(q.raw)),
            CleaningRule::QuestionSentenceForm => Some(
                sentence_count(&q.tokens) > 1 || q.tokens.last().map(String::as_str) != Some("?"),
            ),
            CleaningRule::QuestionMinLength => Some(
                q.words.len() < MIN_QUESTION_WORDS || q_content.len() < MIN_QUESTION_CONTENT_WORDS,
            ),
            CleaningRule::QuestionStarter => Some(
                q.words
                    .first()
                    .is_none_or(|w| !lexicons.question_starters.contains(&w.to_lowercase())),
            ),
            CleaningRule::AnswerMinContentWords => Some(a_content.len() < MIN_ANSWER_CONTENT_WORDS),
            CleaningRule::AnswerFewerContentWords => Some(a_content.len() < q_content.len()),
            CleaningRule::AnswerDigitRatio => {
                let digits = a.words.iter().filter(|w| is_numeric(w)).count();
                Some(ratio(digits, a.words.len()) > MAX_ANSWER_DIGIT_RATIO)
            }
            CleaningRule::MinOverlap => {
                let qs: BTreeSet<&String> = q_content.iter().collect();
                let shared = a_content
                    .iter()
                    .collect::<BTreeSet<_>>()
                    .intersection(&qs)
                    .count();
                Some(shared < MIN_OVERLAP)
            }
            CleaningRule::AbusiveWords => lexicons.abusive.as_ref().map(|bad| {
                q.words
                    .iter()
                    .chain(&a.words)
                    .any(|w| bad.contains(&w.to_lowercase()))
            }),
            CleaningRule::Emoticons => lexicons.emoticons.as_ref().map(|emo| {
                q.raw
                    .split_whitespace()
                    .chain(a.raw.split_whitespace())
                    .any(|t| emo.contains(t))
            }),
            CleaningRule::ConsecutivePunctuation => Some(
                has_run(&q.tokens, |t| is_punctuation(t))
                    || has_run(&a.tokens, |t| is_punctuation(t)),
            ),
            CleaningRule::ConsecutiveUppercase => Some(
                has_run(&q.words, |w| is_fully_uppercase(w))
                    || has_run(&a.words, |w| is_fully_uppercase(w)),
            ),
            CleaningRule::TitleCaseRatio => {
                let qt = q.words.iter().filter(|w| is_title_case(w)).count();
                let at = a.words.iter().filter(|w| is_title_case(w)).count();
                Some(
                    ratio(qt, q.words.len()) > MAX_QUESTION_TITLE_RATIO
                        || ratio(at, a.words.len()) > MAX_ANSWER_TITLE_RATIO,
                )
            }
            CleaningRule::OutOfDictionary => lexicons.dictionary.as_ref().map(|dict| {
                oov_count(&q.words, dict) > MAX_QUESTION_OOV
                    || oov_count(&a.words, dict) > MAX_ANSWER_OOV
            }),
        };
        match outcome {
            Some(true) => violated.push(rule),
            Some(false) => {}
            None => skipped.push(rule),
        }
    }
    CleanVerdict {
        accepted: violated.is_empty(),
        violated_rules: violated,
        skipped_rules: skipped,
    }
}

/// Aggregate counts over a batch of verdicts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub accepted_count: usize,
    pub rejected_count: usize,
    pub per_rule_counts: BTreeMap<String, usize>,
}

impl CleaningReport {
    pub fn from_verdicts<'a>(verdicts: impl IntoIterator<Item = &'a CleanVerdict>) -> Self {
        let mut report = CleaningReport::default();
        for v in verdicts {
            if v.accepted {
                report.accepted_count += 1;
            } else {
                report.rejected_count += 1;
            }
            for r in &v.violated_rules {
                *report
                    .per_rule_counts
                    .entry(r.id().to_string())
                    .or_default() += 1;
            }
        }
        report
    }
}
