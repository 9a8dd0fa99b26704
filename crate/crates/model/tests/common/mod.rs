#![allow(dead_code)]

use oqgen_core::corpus::{Lexicons, QuestionType};
use oqgen_core::parse::{DependencyEdge, Mention, ParsedDocument, Sentence, Token};
use oqgen_core::synthetic::synthetic_corpus;
use oqgen_model::{ModelConfig, TrainingExample, Vocabulary};

/// `(text, lemma, pos, head, rel)` with head -1 for the root.
pub fn sent(spec: &[(&str, &str, &str, i64, &str)]) -> Sentence {
    Sentence {
        tokens: spec
            .iter()
            .enumerate()
            .map(|(i, (t, l, p, _, _))| Token::new(i, t, l, p))
            .collect(),
        deps: spec
            .iter()
            .enumerate()
            .map(|(i, (_, _, _, h, r))| DependencyEdge {
                head: usize::try_from(*h).ok(),
                dependent: i,
                relation: r.to_string(),
            })
            .collect(),
        ..Default::default()
    }
}

/// Twelve tokens; the graph keeps six nodes after the determiner, the case
/// marker and both periods drop out and "them"/"gangs" merge.
pub fn twelve_token_doc() -> ParsedDocument {
    let mut d = ParsedDocument {
        id: "grad".into(),
        sentences: vec![
            sent(&[
                ("The", "the", "DET", 1, "det"),
                ("teenagers", "teenager", "NOUN", 2, "nsubj"),
                ("join", "join", "VERB", -1, "root"),
                ("gangs", "gang", "NOUN", 2, "obj"),
                ("for", "for", "ADP", 5, "case"),
                ("protection", "protection", "NOUN", 2, "obl"),
                (".", ".", "PUNCT", 2, "punct"),
            ]),
            sent(&[
                ("Gangs", "gang", "NOUN", 1, "nsubj"),
                ("give", "give", "VERB", -1, "root"),
                ("them", "they", "PRON", 1, "iobj"),
                ("safety", "safety", "NOUN", 1, "obj"),
                (".", ".", "PUNCT", 1, "punct"),
            ]),
        ],
        coref_chains: vec![vec![
            Mention {
                sentence: 0,
                start: 0,
                end: 2,
            },
            Mention {
                sentence: 1,
                start: 2,
                end: 3,
            },
        ]],
    };
    d.validate().unwrap();
    d
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

pub fn tiny_config(d: usize) -> ModelConfig {
    ModelConfig {
        d_model: d,
        encoder_layers: 1,
        decoder_layers: 1,
        heads: 2,
        ffn_width: 2 * d,
        gat_layers: 2,
        focus_hidden: d,
        dropout: 0.0,
        max_positions: 48,
        focus_word_attention: false,
    }
}

/// JointGen training pairs from the synthetic corpus and a vocabulary over
/// both sides.
pub fn synthetic_examples(n: usize, seed: u64) -> (Vocabulary, Vec<TrainingExample>) {
    let lex = Lexicons::default();
    let corpus = synthetic_corpus(n, seed);
    let mut seqs: Vec<Vec<String>> = Vec::new();
    let mut examples = Vec::new();
    for ex in corpus {
        let q: Vec<Token> = ex.question.tokens().cloned().collect();
        let target: Vec<String> = q.iter().map(|t| t.text.clone()).collect();
        seqs.push(target.clone());
        seqs.push(ex.answer.tokens().map(|t| t.text.clone()).collect());
        let ty = ex.pair.qtype.unwrap_or(QuestionType::Concept);
        examples.push(TrainingExample::new(ty, ex.answer, &q, Vec::new(), target, &lex).unwrap());
    }
    (Vocabulary::build(seqs.iter().map(Vec::as_slice), 1), examples)
}
