use std::collections::{BTreeMap, HashMap};

use oqgen_core::corpus::QuestionType;
use oqgen_core::text::{is_slot_token, SLOT_TOKENS};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
pub const SEP: &str = "[SEP]";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;
pub const SEP_ID: usize = 4;
const TYPE_BASE: usize = 5;
const SLOT_BASE: usize = TYPE_BASE + QuestionType::ALL.len();
/// Number of reserved ids before ordinary words.
pub const NUM_SPECIAL: usize = SLOT_BASE + SLOT_TOKENS.len();

pub fn type_token(ty: QuestionType) -> String {
    format!("[TYPE={}]", ty.name())
}

/// What a decoder is allowed to emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    /// Words only.
    Question,
    /// Words and slot tokens.
    Template,
}

/// Word-level vocabulary. Ordinary words are lowercased; special, type and
/// slot tokens keep their spelling and occupy fixed ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn specials() -> Vec<String> {
        let mut v: Vec<String> = [PAD, UNK, BOS, EOS, SEP].iter().map(|s| s.to_string()).collect();
        v.extend(QuestionType::ALL.iter().map(|&t| type_token(t)));
        v.extend(SLOT_TOKENS.iter().map(|s| s.to_string()));
        v
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    /// Words seen at least `min_count` times, ordered by descending count
    /// then alphabetically.
    pub fn build<'a, I, S>(sequences: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for seq in sequences {
            for w in seq {
                let w = w.as_ref();
                if !is_slot_token(w) {
                    *counts.entry(w.to_lowercase()).or_insert(0) += 1;
                }
            }
        }
        let specials = Self::specials();
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count.max(1) && !specials.contains(w))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = specials;
        tokens.extend(words.into_iter().map(|(w, _)| w));
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn normalize(word: &str) -> String {
        if word.starts_with('[') && is_reserved(word) {
            word.to_string()
        } else {
            word.to_lowercase()
        }
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(&Self::normalize(word)).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(&Self::normalize(word))
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK, String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Tokens up to the first end token, without specials other than slots.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS_ID)
            .filter(|&&i| i >= SLOT_BASE || i == UNK_ID)
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    pub fn type_id(ty: QuestionType) -> usize {
        TYPE_BASE + ty.index()
    }

    pub fn slot_ids() -> std::ops::Range<usize> {
        SLOT_BASE..NUM_SPECIAL
    }

    pub fn is_slot(id: usize) -> bool {
        Self::slot_ids().contains(&id)
    }

    /// Per-id flags for the ids a decoder may emit.
    pub fn output_mask(&self, kind: OutputKind) -> Vec<bool> {
        (0..self.len())
            .map(|i| match i {
                UNK_ID | EOS_ID => true,
                i if Self::is_slot(i) => kind == OutputKind::Template,
                i => i >= NUM_SPECIAL,
            })
            .collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

fn is_reserved(word: &str) -> bool {
    is_slot_token(word)
        || [PAD, UNK, BOS, EOS, SEP].contains(&word)
        || (word.starts_with("[TYPE=") && word.ends_with(']'))
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        let specials = Self::specials();
        if tokens.len() < specials.len() || tokens[..specials.len()] != specials[..] {
            return Err(serde::de::Error::custom("vocabulary special tokens do not match"));
        }
        let v = Self::from_tokens(tokens);
        if v.index.len() != v.tokens.len() {
            return Err(serde::de::Error::custom("vocabulary has duplicate tokens"));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_are_fixed_and_words_lowercased() {
        let seqs: Vec<Vec<&str>> = vec![vec!["Why", "do", "cats", "purr", "?"], vec!["cats", "[NP]"]];
        let v = Vocabulary::build(seqs.iter().map(Vec::as_slice), 1);
        assert_eq!(v.id(PAD), PAD_ID);
        assert_eq!(v.id(EOS), EOS_ID);
        assert_eq!(v.id("[NP]"), SLOT_BASE);
        assert_eq!(v.id("[TYPE=Cause]"), Vocabulary::type_id(QuestionType::Cause));
        assert_eq!(v.token(NUM_SPECIAL), "cats");
        assert_eq!(v.id("CATS"), v.id("cats"));
        assert_eq!(v.id("zebra"), UNK_ID);
        assert_eq!(v.len(), NUM_SPECIAL + 5);

        let ids = v.encode(&["why", "[NP]", "purr"]);
        assert_eq!(v.decode(&[ids[0], ids[1], ids[2], EOS_ID, ids[0]]), ["why", "[NP]", "purr"]);

        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
        assert!(serde_json::from_str::<Vocabulary>("[\"a\"]").is_err());
    }

    #[test]
    fn question_mask_excludes_slots_and_controls() {
        let seqs = [vec!["a", "b"]];
        let v = Vocabulary::build(seqs.iter().map(Vec::as_slice), 1);
        let q = v.output_mask(OutputKind::Question);
        let t = v.output_mask(OutputKind::Template);
        for id in [PAD_ID, BOS_ID, SEP_ID, Vocabulary::type_id(QuestionType::Example)] {
            assert!(!q[id] && !t[id]);
        }
        for id in Vocabulary::slot_ids() {
            assert!(!q[id] && t[id]);
        }
        assert!(q[EOS_ID] && q[v.id("a")]);
    }
}
