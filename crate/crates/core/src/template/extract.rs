use std::collections::{BTreeMap, BTreeSet};

use super::{
    cosine_similarity, slot_token_for, EmbeddingTable, ProtectedWordLists, Template, TemplateToken,
};
use crate::corpus::{Lexicons, QuestionType};
use crate::parse::{
    content_word_indices, is_content_word, lemma_overlap, Chunk, ParsedDocument, Sentence, Token,
};
use crate::text::is_slot_token;

pub const DEFAULT_REPLACE_THRESHOLD: f64 = 0.8;

/// Extraction result with the bookkeeping needed to audit it.
#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub template: Template,
    /// Question content-word positions (protected words included).
    pub content_words: BTreeSet<usize>,
    /// Positions replaced by lemma overlap with the answer.
    pub stage1: BTreeSet<usize>,
    /// All replaced positions, `stage1` included.
    pub replaced: BTreeSet<usize>,
    /// `ceil(threshold * content_words.len())`.
    pub target: usize,
}

/// Turns questions into templates by replacing topic words with slots.
#[derive(Clone, Copy, Debug)]
pub struct TemplateExtractor<'a> {
    pub embeddings: &'a EmbeddingTable,
    pub protected: &'a ProtectedWordLists,
    pub lexicons: &'a Lexicons,
    pub threshold: f64,
}

fn vector<'e>(emb: &'e EmbeddingTable, tok: &Token) -> Option<&'e [f64]> {
    emb.get(&tok.text)
        .or_else(|| emb.get(&tok.lemma_key()))
        .filter(|v| v.iter().any(|&x| x != 0.0))
}

impl<'a> TemplateExtractor<'a> {
    pub fn new(
        embeddings: &'a EmbeddingTable,
        protected: &'a ProtectedWordLists,
        lexicons: &'a Lexicons,
    ) -> Self {
        TemplateExtractor {
            embeddings,
            protected,
            lexicons,
            threshold: DEFAULT_REPLACE_THRESHOLD,
        }
    }

    pub fn extract(
        &self,
        question: &Sentence,
        answer: &ParsedDocument,
        ty: QuestionType,
    ) -> Template {
        self.extract_detailed(question, answer, ty).template
    }

    pub fn extract_detailed(
        &self,
        question: &Sentence,
        answer: &ParsedDocument,
        ty: QuestionType,
    ) -> Extraction {
        let tokens = &question.tokens;
        if tokens.iter().any(|t| is_slot_token(&t.text)) {
            return Extraction {
                template: Template::from_strings(
                    &tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>(),
                ),
                content_words: BTreeSet::new(),
                stage1: BTreeSet::new(),
                replaced: BTreeSet::new(),
                target: 0,
            };
        }
        let content = content_word_indices(tokens, self.lexicons);
        let target = (self.threshold * content.len() as f64 - 1e-9)
            .ceil()
            .max(0.0) as usize;
        let replaceable = |i: usize| !self.protected.is_protected(ty, &tokens[i]);

        let answer_tokens: Vec<Token> = answer.tokens().cloned().collect();
        let stage1: BTreeSet<usize> = lemma_overlap(tokens, &answer_tokens, self.lexicons)
            .into_iter()
            .filter(|&i| replaceable(i))
            .collect();
        let mut replaced = stage1.clone();
        if replaced.len() < target {
            self.similarity_rounds(
                tokens,
                &answer_tokens,
                &content,
                &replaceable,
                target,
                &mut replaced,
            );
        }

        Extraction {
            template: collapse(question, &replaced),
            content_words: content,
            stage1,
            replaced,
            target,
        }
    }

    /// Each answer content word nominates its most similar remaining
    /// question word; nominations apply in descending similarity (earlier
    /// question position on ties) until the target is met. Rounds repeat
    /// while they make progress.
    fn similarity_rounds(
        &self,
        question: &[Token],
        answer: &[Token],
        content: &BTreeSet<usize>,
        replaceable: &dyn Fn(usize) -> bool,
        target: usize,
        replaced: &mut BTreeSet<usize>,
    ) {
        let mut seen = BTreeSet::new();
        let answer_vecs: Vec<&[f64]> = answer
            .iter()
            .filter(|t| is_content_word(&t.text, Some(&t.pos), self.lexicons))
            .filter(|t| seen.insert(t.text.to_lowercase()))
            .filter_map(|t| vector(self.embeddings, t))
            .collect();

        while replaced.len() < target {
            let candidates: Vec<(usize, &[f64])> = content
                .iter()
                .copied()
                .filter(|&i| !replaced.contains(&i) && replaceable(i))
                .filter_map(|i| vector(self.embeddings, &question[i]).map(|v| (i, v)))
                .collect();
            if candidates.is_empty() {
                return;
            }
            let mut best_per_word: BTreeMap<usize, f64> = BTreeMap::new();
            for av in &answer_vecs {
                let mut best: Option<(usize, f64)> = None;
                for &(i, qv) in &candidates {
                    let sim = cosine_similarity(av, qv).unwrap_or(0.0);
                    if best.is_none_or(|(_, b)| sim > b) {
                        best = Some((i, sim));
                    }
                }
                if let Some((i, sim)) = best {
                    let e = best_per_word.entry(i).or_insert(sim);
                    *e = e.max(sim);
                }
            }
            if best_per_word.is_empty() {
                return;
            }
            let mut ranked: Vec<(usize, f64)> = best_per_word.into_iter().collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (i, _) in ranked {
                if replaced.len() >= target {
                    break;
                }
                replaced.insert(i);
            }
        }
    }
}

/// Convenience wrapper with the default threshold.
pub fn extract_template(
    question: &Sentence,
    answer: &ParsedDocument,
    ty: QuestionType,
    embeddings: &EmbeddingTable,
    protected: &ProtectedWordLists,
    lexicons: &Lexicons,
) -> Template {
    TemplateExtractor::new(embeddings, protected, lexicons).extract(question, answer, ty)
}

/// Collapses chunks whose head was replaced (widest first, no overlaps),
/// slots the remaining replaced words, and merges adjacent equal phrase slots.
fn collapse(question: &Sentence, replaced: &BTreeSet<usize>) -> Template {
    let mut chunks: Vec<&Chunk> = question
        .chunks
        .iter()
        .filter(|c| replaced.contains(&c.head))
        .collect();
    chunks.sort_by(|a, b| b.len().cmp(&a.len()).then(a.start.cmp(&b.start)));
    let mut chosen: Vec<&Chunk> = Vec::new();
    for c in chunks {
        if chosen.iter().all(|o| c.end <= o.start || o.end <= c.start) {
            chosen.push(c);
        }
    }

    let mut out: Vec<TemplateToken> = Vec::new();
    let mut i = 0;
    while i < question.tokens.len() {
        let tok = &question.tokens[i];
        if let Some(c) = chosen.iter().find(|c| c.start == i) {
            out.push(TemplateToken::Slot(slot_token_for(tok, Some(c))));
            i = c.end;
            continue;
        }
        if replaced.contains(&i) {
            out.push(TemplateToken::Slot(slot_token_for(tok, None)));
        } else {
            out.push(TemplateToken::Word(tok.text.clone()));
        }
        i += 1;
    }
    out.dedup_by(|b, a| matches!((a, b), (TemplateToken::Slot(x), TemplateToken::Slot(y)) if x == y && x.is_phrase()));
    Template {
        tokens: out,
        source_question_id: None,
    }
}
