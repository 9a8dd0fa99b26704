//! Question templates: slot-token skeletons, extraction from parsed
//! questions, exemplar inventories and token edit distance.

mod embedding;
mod extract;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{parse_question_type, QuestionType};
use crate::error::{CoreError, Result};
use crate::parse::{Chunk, PhraseLabel, Token};
use crate::text;

pub use embedding::{cosine_similarity, load_embeddings, EmbeddingTable};
pub use extract::{extract_template, Extraction, TemplateExtractor, DEFAULT_REPLACE_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotToken {
    NP,
    ADJP,
    ADVP,
    V,
    Other,
}

impl SlotToken {
    pub const ALL: [SlotToken; 5] = [
        SlotToken::NP,
        SlotToken::ADJP,
        SlotToken::ADVP,
        SlotToken::V,
        SlotToken::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SlotToken::NP => "[NP]",
            SlotToken::ADJP => "[ADJP]",
            SlotToken::ADVP => "[ADVP]",
            SlotToken::V => "[V]",
            SlotToken::Other => "[OTHER]",
        }
    }

    pub fn is_phrase(self) -> bool {
        matches!(self, SlotToken::NP | SlotToken::ADJP | SlotToken::ADVP)
    }

    pub fn parse(s: &str) -> Option<SlotToken> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl From<PhraseLabel> for SlotToken {
    fn from(l: PhraseLabel) -> Self {
        match l {
            PhraseLabel::NP => SlotToken::NP,
            PhraseLabel::ADJP => SlotToken::ADJP,
            PhraseLabel::ADVP => SlotToken::ADVP,
        }
    }
}

impl fmt::Display for SlotToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Slot for a replaced token: the phrase slot of a collapsed chunk it
/// belongs to, else `[V]` for verbs, else `[OTHER]`.
pub fn slot_token_for(token: &Token, chunk_context: Option<&Chunk>) -> SlotToken {
    match chunk_context {
        Some(c) => c.label.into(),
        None if token.is_verb() => SlotToken::V,
        None => SlotToken::Other,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemplateToken {
    Word(String),
    Slot(SlotToken),
}

impl TemplateToken {
    pub fn from_text(s: &str) -> Self {
        match SlotToken::parse(s) {
            Some(slot) => TemplateToken::Slot(slot),
            None => TemplateToken::Word(s.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            TemplateToken::Word(w) => w,
            TemplateToken::Slot(s) => s.as_str(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Template {
    pub tokens: Vec<TemplateToken>,
    pub source_question_id: Option<String>,
}

impl Template {
    pub fn parse(text: &str) -> Self {
        Template::from_strings(&text::tokenize(text))
    }

    pub fn from_strings<S: AsRef<str>>(tokens: &[S]) -> Self {
        Template {
            tokens: tokens
                .iter()
                .map(|t| TemplateToken::from_text(t.as_ref()))
                .collect(),
            source_question_id: None,
        }
    }

    pub fn token_strings(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.as_str().to_string()).collect()
    }

    /// Lowercased token strings; the identity used for grouping and
    /// edit distance.
    pub fn key(&self) -> Vec<String> {
        self.tokens
            .iter()
            .map(|t| t.as_str().to_lowercase())
            .collect()
    }

    pub fn render(&self) -> String {
        text::detokenize(&self.token_strings())
    }

    pub fn slot_count(&self) -> usize {
        self.tokens
            .iter()
            .filter(|t| matches!(t, TemplateToken::Slot(_)))
            .count()
    }

    pub fn has_adjacent_duplicate_phrase_slots(&self) -> bool {
        self.tokens.windows(2).any(|w| match (&w[0], &w[1]) {
            (TemplateToken::Slot(a), TemplateToken::Slot(b)) => a == b && a.is_phrase(),
            _ => false,
        })
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl Serialize for Template {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for Template {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Template::parse(&String::deserialize(d)?))
    }
}

/// Token-level Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn parse_tsv_rows(contents: &str, origin: &Path) -> Result<Vec<(QuestionType, String)>> {
    let mut rows = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (ty, rest) = line
            .split_once('\t')
            .ok_or_else(|| CoreError::malformed(origin, i + 1, "expected `type<TAB>value`"))?;
        let ty = parse_question_type(ty)
            .map_err(|e| CoreError::malformed(origin, i + 1, e.to_string()))?;
        rows.push((ty, rest.trim().to_string()));
    }
    Ok(rows)
}

const DEFAULT_PROTECTED: &str = include_str!("../../data/protected.tsv");
const DEFAULT_EXEMPLARS: &str = include_str!("../../data/exemplars.tsv");

/// Per-type words that template extraction must keep verbatim.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ProtectedWordLists {
    pub words: BTreeMap<QuestionType, BTreeSet<String>>,
}

impl ProtectedWordLists {
    pub fn defaults() -> Self {
        Self::parse(DEFAULT_PROTECTED, Path::new("<builtin protected.tsv>"))
            .expect("builtin table parses")
    }

    pub fn parse(contents: &str, origin: &Path) -> Result<Self> {
        let mut words: BTreeMap<QuestionType, BTreeSet<String>> = BTreeMap::new();
        for (ty, w) in parse_tsv_rows(contents, origin)? {
            words.entry(ty).or_default().insert(w.to_lowercase());
        }
        Ok(ProtectedWordLists { words })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::parse(&raw, path)
    }

    pub fn for_type(&self, ty: QuestionType) -> impl Iterator<Item = &str> {
        self.words
            .get(&ty)
            .into_iter()
            .flatten()
            .map(String::as_str)
    }

    /// Matches on lowercase surface form or lemma.
    pub fn is_protected(&self, ty: QuestionType, token: &Token) -> bool {
        self.words.get(&ty).is_some_and(|set| {
            set.contains(&token.text.to_lowercase()) || set.contains(&token.lemma_key())
        })
    }
}

/// Ordered exemplar templates per question type.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExemplarInventory {
    pub per_type: BTreeMap<QuestionType, Vec<Template>>,
    pub min_freq: Option<usize>,
    pub blocklist_applied: bool,
}

impl ExemplarInventory {
    /// The shipped inventory of curated exemplars.
    pub fn defaults() -> Self {
        Self::parse(DEFAULT_EXEMPLARS, Path::new("<builtin exemplars.tsv>"))
            .expect("builtin table parses")
    }

    /// Reads `type<TAB>template` rows. Repeated templates within a type keep
    /// their first position.
    pub fn parse(contents: &str, origin: &Path) -> Result<Self> {
        let mut inv = ExemplarInventory::default();
        for (ty, t) in parse_tsv_rows(contents, origin)? {
            inv.push(ty, Template::parse(&t));
        }
        Ok(inv)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::parse(&raw, path)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# type\ttemplate tokens\n");
        for (ty, list) in &self.per_type {
            for t in list {
                out.push_str(&format!("{ty}\t{}\n", t.token_strings().join(" ")));
            }
        }
        out
    }

    /// Appends unless an equal template (by key) is already listed.
    pub fn push(&mut self, ty: QuestionType, template: Template) -> bool {
        let list = self.per_type.entry(ty).or_default();
        let key = template.key();
        if list.iter().any(|t| t.key() == key) {
            return false;
        }
        list.push(template);
        true
    }

    pub fn get(&self, ty: QuestionType) -> &[Template] {
        self.per_type.get(&ty).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total(&self) -> usize {
        self.per_type.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Index and distance of the exemplar nearest to `template` by token
    /// edit distance; ties go to the lowest index.
    pub fn nearest(&self, ty: QuestionType, template: &Template) -> Result<(usize, usize)> {
        let key = template.key();
        self.get(ty)
            .iter()
            .enumerate()
            .map(|(i, e)| (i, edit_distance(&e.key(), &key)))
            .min_by_key(|&(i, d)| (d, i))
            .ok_or_else(|| CoreError::InvalidArgument(format!("no exemplars for type {ty}")))
    }
}

/// Blocklist file: one template per line, `#` comments allowed.
pub fn load_blocklist(path: impl AsRef<Path>) -> Result<BTreeSet<Vec<String>>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    Ok(raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| Template::parse(l).key())
        .collect())
}

/// Keeps templates seen strictly more than `min_freq` times per type and
/// not blocklisted, ordered by descending frequency then first occurrence.
pub fn mine_exemplars(
    templates: &[(QuestionType, Template)],
    min_freq: usize,
    blocklist: &BTreeSet<Vec<String>>,
) -> Result<ExemplarInventory> {
    if min_freq < 1 {
        return Err(CoreError::InvalidArgument(
            "min_freq must be at least 1".into(),
        ));
    }
    struct Group<'a> {
        first: usize,
        count: usize,
        template: &'a Template,
    }
    let mut groups: BTreeMap<(QuestionType, Vec<String>), Group> = BTreeMap::new();
    for (pos, (ty, t)) in templates.iter().enumerate() {
        groups
            .entry((*ty, t.key()))
            .and_modify(|g| g.count += 1)
            .or_insert(Group {
                first: pos,
                count: 1,
                template: t,
            });
    }
    let mut kept: Vec<(QuestionType, Group)> = groups
        .into_iter()
        .filter(|((_, key), g)| g.count > min_freq && !blocklist.contains(key))
        .map(|((ty, _), g)| (ty, g))
        .collect();
    kept.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(b.1.count.cmp(&a.1.count))
            .then(a.1.first.cmp(&b.1.first))
    });

    let mut inv = ExemplarInventory {
        min_freq: Some(min_freq),
        blocklist_applied: !blocklist.is_empty(),
        ..Default::default()
    };
    for (ty, g) in kept {
        let mut t = g.template.clone();
        t.source_question_id = None;
        inv.push(ty, t);
    }
    Ok(inv)
}

impl FromStr for Template {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(Template::parse(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tables() {
        let inv = ExemplarInventory::defaults();
        assert_eq!(inv.total(), 72);
        assert_eq!(inv.get(QuestionType::Cause).len(), 6);
        assert_eq!(inv.get(QuestionType::Concept).len(), 16);
        let p = ProtectedWordLists::defaults();
        assert_eq!(
            p.for_type(QuestionType::Comparison).collect::<Vec<_>>(),
            ["and", "best", "better", "difference", "or"]
        );
        assert_eq!(p.for_type(QuestionType::Verification).count(), 0);
    }

    #[test]
    fn edit_distance_small_cases() {
        let a: Vec<&str> = "a b c".split(' ').collect();
        let b: Vec<&str> = "a x c".split(' ').collect();
        assert_eq!(edit_distance(&a, &a), 0);
        assert_eq!(edit_distance(&a, &b), 1);
        assert_eq!(edit_distance::<&str>(&[], &a), 3);
        assert_eq!(
            edit_distance(
                &"kitten".chars().collect::<Vec<_>>(),
                &"sitting".chars().collect::<Vec<_>>()
            ),
            3
        );
    }

    #[test]
    fn template_text_round_trip() {
        let t = Template::parse("Is it [ADJP] to [V] [NP]?");
        assert_eq!(t.slot_count(), 3);
        assert_eq!(t.render(), "Is it [ADJP] to [V] [NP]?");
        assert!(Template::parse("Is [NP] [NP]?").has_adjacent_duplicate_phrase_slots());
        assert!(!Template::parse("[V] [V]").has_adjacent_duplicate_phrase_slots());
    }
}
