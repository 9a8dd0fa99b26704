//! Pre-computed linguistic annotations and the lemma / content-word helpers
//! built on them.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::Lexicons;
use crate::error::{CoreError, Result};
use crate::text::is_slot_token;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// Position in the sentence; assigned on load.
    #[serde(skip)]
    pub index: usize,
    pub text: String,
    #[serde(default)]
    pub lemma: String,
    #[serde(default)]
    pub pos: String,
}

impl Token {
    pub fn new(index: usize, text: &str, lemma: &str, pos: &str) -> Self {
        Token {
            index,
            text: text.to_string(),
            lemma: lemma.to_string(),
            pos: pos.to_string(),
        }
    }

    /// Lowercase lemma, falling back to the lowercase surface form.
    pub fn lemma_key(&self) -> String {
        if self.lemma.is_empty() {
            self.text.to_lowercase()
        } else {
            self.lemma.to_lowercase()
        }
    }

    pub fn is_verb(&self) -> bool {
        self.pos == "VERB" || self.pos.starts_with("VB")
    }
}

fn ser_head<S: Serializer>(head: &Option<usize>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match head {
        Some(h) => s.serialize_i64(*h as i64),
        None => s.serialize_i64(-1),
    }
}

fn de_head<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<usize>, D::Error> {
    let raw: Option<i64> = Option::deserialize(d)?;
    Ok(raw.and_then(|h| usize::try_from(h).ok()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyEdge {
    /// `None` is the ROOT attachment (`-1` or `null` on disk).
    #[serde(serialize_with = "ser_head", deserialize_with = "de_head")]
    pub head: Option<usize>,
    #[serde(rename = "dep")]
    pub dependent: usize,
    #[serde(rename = "rel")]
    pub relation: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSpan {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrlFrame {
    #[serde(rename = "pred")]
    pub predicate: usize,
    #[serde(default)]
    pub roles: Vec<RoleSpan>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhraseLabel {
    NP,
    ADJP,
    ADVP,
}

impl fmt::Display for PhraseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhraseLabel::NP => "NP",
            PhraseLabel::ADJP => "ADJP",
            PhraseLabel::ADVP => "ADVP",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub label: PhraseLabel,
    pub start: usize,
    pub end: usize,
    pub head: usize,
}

impl Chunk {
    pub fn contains(&self, i: usize) -> bool {
        (self.start..self.end).contains(&i)
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    #[serde(default)]
    pub deps: Vec<DependencyEdge>,
    #[serde(default)]
    pub srl: Vec<SrlFrame>,
    #[serde(default)]
    pub chunks: Vec<Chunk>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Dependency head of each token (`None` for roots and unattached tokens).
    pub fn heads(&self) -> Vec<Option<usize>> {
        let mut heads = vec![None; self.tokens.len()];
        for e in &self.deps {
            if let Some(slot) = heads.get_mut(e.dependent) {
                *slot = e.head;
            }
        }
        heads
    }

    /// The span token whose dependency head lies outside `[start, end)`,
    /// earliest first; the last span token when none qualifies.
    pub fn span_head(&self, start: usize, end: usize) -> usize {
        let heads = self.heads();
        (start..end)
            .find(|&i| heads[i].is_none_or(|h| h < start || h >= end))
            .unwrap_or(end - 1)
    }

    fn reindex(&mut self) {
        for (i, t) in self.tokens.iter_mut().enumerate() {
            t.index = i;
        }
    }

    fn validate(&self, s: usize) -> std::result::Result<(), String> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(format!("sentence {s} has no tokens"));
        }
        if let Some(t) = self.tokens.iter().find(|t| t.text.is_empty()) {
            return Err(format!("sentence {s} token {} has empty text", t.index));
        }
        let mut head = vec![None; n];
        let mut attached = vec![false; n];
        for e in &self.deps {
            if e.dependent >= n || e.head.is_some_and(|h| h >= n) {
                return Err(format!(
                    "sentence {s} dependency {:?}->{} out of bounds",
                    e.head, e.dependent
                ));
            }
            if e.head == Some(e.dependent) {
                return Err(format!(
                    "sentence {s} token {} is its own head",
                    e.dependent
                ));
            }
            if attached[e.dependent] {
                return Err(format!(
                    "sentence {s} token {} has more than one head",
                    e.dependent
                ));
            }
            attached[e.dependent] = true;
            head[e.dependent] = e.head;
        }
        let roots = (0..n).filter(|&i| head[i].is_none()).count();
        if roots != 1 {
            return Err(format!(
                "sentence {s} dependencies form {roots} trees, expected 1"
            ));
        }
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(h) = head[cur] {
                cur = h;
                steps += 1;
                if steps > n {
                    return Err(format!(
                        "sentence {s} dependencies contain a cycle through token {start}"
                    ));
                }
            }
        }
        for f in &self.srl {
            if f.predicate >= n {
                return Err(format!(
                    "sentence {s} predicate {} out of bounds",
                    f.predicate
                ));
            }
            for r in &f.roles {
                if r.start >= r.end || r.end > n {
                    return Err(format!(
                        "sentence {s} role {} span [{},{}) out of bounds",
                        r.label, r.start, r.end
                    ));
                }
            }
        }
        for c in &self.chunks {
            if c.start >= c.end || c.end > n {
                return Err(format!(
                    "sentence {s} chunk span [{},{}) out of bounds",
                    c.start, c.end
                ));
            }
            if !c.contains(c.head) {
                return Err(format!(
                    "sentence {s} chunk head {} outside [{},{})",
                    c.head, c.start, c.end
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mention {
    #[serde(rename = "sent")]
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedDocument {
    pub id: String,
    pub sentences: Vec<Sentence>,
    #[serde(rename = "coref", default)]
    pub coref_chains: Vec<Vec<Mention>>,
}

impl ParsedDocument {
    /// Assigns token indices and checks every structural invariant.
    pub fn validate(&mut self) -> Result<()> {
        for s in &mut self.sentences {
            s.reindex();
        }
        for (i, s) in self.sentences.iter().enumerate() {
            s.validate(i)
                .map_err(|r| CoreError::invalid_doc(&self.id, r))?;
        }
        for (c, chain) in self.coref_chains.iter().enumerate() {
            for m in chain {
                let ok = self
                    .sentences
                    .get(m.sentence)
                    .is_some_and(|s| m.start < m.end && m.end <= s.len());
                if !ok {
                    return Err(CoreError::invalid_doc(
                        &self.id,
                        format!("coref chain {c} mention {:?} out of bounds", m),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn token(&self, sentence: usize, index: usize) -> &Token {
        &self.sentences[sentence].tokens[index]
    }

    /// All tokens in document order.
    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }

    pub fn mention_head(&self, m: &Mention) -> usize {
        self.sentences[m.sentence].span_head(m.start, m.end)
    }

    /// Concatenates all sentences into one, shifting token indices.
    /// Dependency roots of later sentences stay roots.
    pub fn flatten(&self) -> Sentence {
        let mut out = Sentence::default();
        for s in &self.sentences {
            let off = out.tokens.len();
            out.tokens.extend(s.tokens.iter().cloned());
            out.deps.extend(s.deps.iter().map(|e| DependencyEdge {
                head: e.head.map(|h| h + off),
                dependent: e.dependent + off,
                relation: e.relation.clone(),
            }));
            out.srl.extend(s.srl.iter().map(|f| {
                SrlFrame {
                    predicate: f.predicate + off,
                    roles: f
                        .roles
                        .iter()
                        .map(|r| RoleSpan {
                            label: r.label.clone(),
                            start: r.start + off,
                            end: r.end + off,
                        })
                        .collect(),
                }
            }));
            out.chunks.extend(s.chunks.iter().map(|c| Chunk {
                label: c.label,
                start: c.start + off,
                end: c.end + off,
                head: c.head + off,
            }));
        }
        out.reindex();
        out
    }
}

/// Reads `parsed.jsonl`, validating every document.
pub fn load_parsed_documents(path: impl AsRef<Path>) -> Result<Vec<ParsedDocument>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut doc: ParsedDocument = serde_json::from_str(line)
            .map_err(|e| CoreError::malformed(path, i + 1, e.to_string()))?;
        doc.validate()?;
        if !seen.insert(doc.id.clone()) {
            return Err(CoreError::invalid_doc(&doc.id, "duplicate document id"));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_parsed_documents(path: impl AsRef<Path>, docs: &[ParsedDocument]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("plain data serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

const CONTENT_UPOS: [&str; 6] = ["NOUN", "PROPN", "VERB", "ADJ", "ADV", "NUM"];
const CONTENT_PTB_PREFIXES: [&str; 5] = ["NN", "VB", "JJ", "RB", "CD"];

/// Content-word test. With a POS tag (Universal or Penn Treebank), the tag
/// must be an open class or number; without one, any alphanumeric token
/// passes. Stopwords and slot tokens never count.
pub fn is_content_word(text: &str, pos: Option<&str>, lexicons: &Lexicons) -> bool {
    if is_slot_token(text) || lexicons.is_stopword(text) {
        return false;
    }
    if !text.chars().any(char::is_alphanumeric)
        || !text
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '\'' | '’' | '-' | '.'))
    {
        return false;
    }
    match pos.filter(|p| !p.is_empty()) {
        Some(p) => {
            CONTENT_UPOS.contains(&p) || CONTENT_PTB_PREFIXES.iter().any(|pre| p.starts_with(pre))
        }
        None => true,
    }
}

pub fn content_word_indices(tokens: &[Token], lexicons: &Lexicons) -> BTreeSet<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| is_content_word(&t.text, Some(&t.pos), lexicons))
        .map(|(i, _)| i)
        .collect()
}

/// Question content-word positions whose lowercase lemma occurs among the
/// answer's lemmas.
pub fn lemma_overlap(question: &[Token], answer: &[Token], lexicons: &Lexicons) -> BTreeSet<usize> {
    let answer_lemmas: HashSet<String> = answer.iter().map(Token::lemma_key).collect();
    content_word_indices(question, lexicons)
        .into_iter()
        .filter(|&i| answer_lemmas.contains(&question[i].lemma_key()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(i: usize, text: &str, pos: &str) -> Token {
        Token::new(i, text, &text.to_lowercase(), pos)
    }

    #[test]
    fn content_words_by_tag_and_fallback() {
        let lex = Lexicons::default();
        let toks = [tok(0, "the", ""), tok(1, "gang", "")];
        assert_eq!(content_word_indices(&toks, &lex), BTreeSet::from([1]));
        assert!(is_content_word("quickly", Some("RB"), &lex));
        assert!(!is_content_word("quickly", Some("IN"), &lex));
        assert!(is_content_word("42", Some("CD"), &lex));
        assert!(!is_content_word("[NP]", None, &lex));
        assert!(!is_content_word("?", None, &lex));
    }

    #[test]
    fn span_head_prefers_external_attachment() {
        let s = Sentence {
            tokens: vec![
                tok(0, "my", "PRON"),
                tok(1, "son", "NOUN"),
                tok(2, "sleeps", "VERB"),
            ],
            deps: vec![
                DependencyEdge {
                    head: Some(1),
                    dependent: 0,
                    relation: "nmod:poss".into(),
                },
                DependencyEdge {
                    head: Some(2),
                    dependent: 1,
                    relation: "nsubj".into(),
                },
                DependencyEdge {
                    head: None,
                    dependent: 2,
                    relation: "root".into(),
                },
            ],
            ..Default::default()
        };
        assert_eq!(s.span_head(0, 2), 1);
        assert_eq!(s.span_head(0, 3), 2);
        assert_eq!(s.span_head(0, 1), 0);
    }
}
