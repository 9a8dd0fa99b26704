//! Deterministic toy corpus with gold annotations, for smoke tests and
//! overfitting experiments. Every answer is three sentences over a small
//! open vocabulary; questions reuse two answer nouns so focus labels and
//! lemma overlap are non-trivial.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{QAPair, QuestionType};
use crate::parse::{
    Chunk, DependencyEdge, Mention, ParsedDocument, PhraseLabel, RoleSpan, Sentence, SrlFrame,
    Token,
};
use crate::text::detokenize;

const NOUNS: [(&str, &str); 30] = [
    ("teenager", "teenagers"),
    ("gang", "gangs"),
    ("student", "students"),
    ("teacher", "teachers"),
    ("farmer", "farmers"),
    ("river", "rivers"),
    ("city", "cities"),
    ("robot", "robots"),
    ("doctor", "doctors"),
    ("plant", "plants"),
    ("engine", "engines"),
    ("artist", "artists"),
    ("market", "markets"),
    ("bird", "birds"),
    ("child", "children"),
    ("parent", "parents"),
    ("battery", "batteries"),
    ("forest", "forests"),
    ("athlete", "athletes"),
    ("coin", "coins"),
    ("bridge", "bridges"),
    ("planet", "planets"),
    ("virus", "viruses"),
    ("library", "libraries"),
    ("worker", "workers"),
    ("garden", "gardens"),
    ("storm", "storms"),
    ("island", "islands"),
    ("computer", "computers"),
    ("musician", "musicians"),
];

const VERBS: [&str; 16] = [
    "join", "build", "protect", "avoid", "study", "visit", "repair", "follow", "change", "support",
    "prefer", "attract", "damage", "collect", "design", "train",
];

const ADJECTIVES: [&str; 12] = [
    "young", "strong", "local", "quiet", "modern", "ancient", "bright", "careful", "small",
    "large", "rural", "busy",
];

/// Placeholder-or-literal token spec: `(text, pos, head, relation)`, head
/// `-1` for the root.
type Spec = (&'static str, &'static str, i64, &'static str);

struct Slots {
    nouns: [(&'static str, &'static str); 5],
    verbs: [&'static str; 3],
    adjs: [&'static str; 3],
}

impl Slots {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut n: Vec<_> = NOUNS.choose_multiple(rng, 5).copied().collect();
        n.shuffle(rng);
        let v: Vec<_> = VERBS.choose_multiple(rng, 3).copied().collect();
        let a: Vec<_> = ADJECTIVES.choose_multiple(rng, 3).copied().collect();
        Slots {
            nouns: [n[0], n[1], n[2], n[3], n[4]],
            verbs: [v[0], v[1], v[2]],
            adjs: [a[0], a[1], a[2]],
        }
    }

    /// `(text, lemma)` for a placeholder, or the literal itself.
    fn fill(&self, spec: &str) -> (String, String) {
        let noun = |k: usize| (self.nouns[k].1.to_string(), self.nouns[k].0.to_string());
        match spec {
            "N1" => noun(0),
            "N2" => noun(1),
            "N3" => noun(2),
            "N4" => noun(3),
            "N5" => noun(4),
            "N4sg" => (self.nouns[3].0.to_string(), self.nouns[3].0.to_string()),
            "V1" => (self.verbs[0].into(), self.verbs[0].into()),
            "V2" => (self.verbs[1].into(), self.verbs[1].into()),
            "V3" => (self.verbs[2].into(), self.verbs[2].into()),
            "A1" => (self.adjs[0].into(), self.adjs[0].into()),
            "A2" => (self.adjs[1].into(), self.adjs[1].into()),
            "A3" => (self.adjs[2].into(), self.adjs[2].into()),
            lit => (lit.to_string(), lemma_of(lit)),
        }
    }
}

fn lemma_of(word: &str) -> String {
    match word.to_lowercase().as_str() {
        "is" | "are" => "be".into(),
        "does" | "do" => "do".into(),
        "happens" => "happen".into(),
        "they" => "they".into(),
        w => w.to_string(),
    }
}

/// `(predicate, [(role, start, end)])`.
type Frames<'a> = [(usize, &'a [(&'a str, usize, usize)])];

fn sentence(
    slots: &Slots,
    specs: &[Spec],
    srl: &Frames<'_>,
    chunks: &[(PhraseLabel, usize, usize, usize)],
) -> Sentence {
    let tokens = specs
        .iter()
        .enumerate()
        .map(|(i, (t, pos, _, _))| {
            let (text, lemma) = slots.fill(t);
            Token {
                index: i,
                text,
                lemma,
                pos: pos.to_string(),
            }
        })
        .collect();
    let deps = specs
        .iter()
        .enumerate()
        .map(|(i, (_, _, head, rel))| DependencyEdge {
            head: usize::try_from(*head).ok(),
            dependent: i,
            relation: rel.to_string(),
        })
        .collect();
    let srl = srl
        .iter()
        .map(|(pred, roles)| SrlFrame {
            predicate: *pred,
            roles: roles
                .iter()
                .map(|(label, start, end)| RoleSpan {
                    label: label.to_string(),
                    start: *start,
                    end: *end,
                })
                .collect(),
        })
        .collect();
    let chunks = chunks
        .iter()
        .map(|&(label, start, end, head)| Chunk {
            label,
            start,
            end,
            head,
        })
        .collect();
    Sentence {
        tokens,
        deps,
        srl,
        chunks,
    }
}

use PhraseLabel::{ADJP, ADVP, NP};

fn answer_sentences(slots: &Slots) -> [Sentence; 3] {
    let s1 = sentence(
        slots,
        &[
            ("The", "DET", 2, "det"),
            ("A1", "ADJ", 2, "amod"),
            ("N1", "NOUN", 3, "nsubj"),
            ("V1", "VERB", -1, "root"),
            ("the", "DET", 5, "det"),
            ("N2", "NOUN", 3, "obj"),
            ("quickly", "ADV", 3, "advmod"),
            (".", "PUNCT", 3, "punct"),
        ],
        &[(3, &[("ARG0", 0, 3), ("ARG1", 4, 6), ("ARGM-MNR", 6, 7)])],
        &[(NP, 0, 3, 2), (NP, 4, 6, 5), (ADVP, 6, 7, 6)],
    );
    let s2 = sentence(
        slots,
        &[
            ("Many", "ADJ", 1, "amod"),
            ("N3", "NOUN", 3, "nsubj"),
            ("also", "ADV", 3, "advmod"),
            ("V2", "VERB", -1, "root"),
            ("N1", "NOUN", 3, "obj"),
            ("in", "ADP", 7, "case"),
            ("the", "DET", 7, "det"),
            ("N4sg", "NOUN", 3, "obl"),
            (".", "PUNCT", 3, "punct"),
        ],
        &[(3, &[("ARG0", 0, 2), ("ARG1", 4, 5), ("ARGM-LOC", 5, 8)])],
        &[(NP, 0, 2, 1), (NP, 4, 5, 4), (NP, 6, 8, 7)],
    );
    let s3 = sentence(
        slots,
        &[
            ("They", "PRON", 1, "nsubj"),
            ("V3", "VERB", -1, "root"),
            ("A2", "ADJ", 3, "amod"),
            ("N5", "NOUN", 1, "obj"),
            ("because", "SCONJ", 7, "mark"),
            ("N2", "NOUN", 7, "nsubj"),
            ("are", "AUX", 7, "cop"),
            ("A3", "ADJ", 1, "advcl"),
            (".", "PUNCT", 1, "punct"),
        ],
        &[(1, &[("ARG0", 0, 1), ("ARG1", 2, 4), ("ARGM-CAU", 4, 8)])],
        &[(NP, 0, 1, 0), (NP, 2, 4, 3), (NP, 5, 6, 5), (ADJP, 7, 8, 7)],
    );
    [s1, s2, s3]
}

fn question_sentence(slots: &Slots, ty: QuestionType) -> Sentence {
    match ty {
        QuestionType::Verification => sentence(
            slots,
            &[
                ("Do", "AUX", 2, "aux"),
                ("N1", "NOUN", 2, "nsubj"),
                ("V1", "VERB", -1, "root"),
                ("N2", "NOUN", 2, "obj"),
                ("?", "PUNCT", 2, "punct"),
            ],
            &[],
            &[(NP, 1, 2, 1), (NP, 3, 4, 3)],
        ),
        QuestionType::Disjunctive => sentence(
            slots,
            &[
                ("Do", "AUX", 2, "aux"),
                ("N1", "NOUN", 2, "nsubj"),
                ("V1", "VERB", -1, "root"),
                ("N2", "NOUN", 2, "obj"),
                ("or", "CCONJ", 5, "cc"),
                ("N5", "NOUN", 3, "conj"),
                ("?", "PUNCT", 2, "punct"),
            ],
            &[],
            &[(NP, 1, 2, 1), (NP, 3, 4, 3), (NP, 5, 6, 5)],
        ),
        QuestionType::Concept => sentence(
            slots,
            &[
                ("What", "PRON", -1, "root"),
                ("are", "AUX", 0, "cop"),
                ("N1", "NOUN", 0, "nsubj"),
                ("and", "CCONJ", 4, "cc"),
                ("N2", "NOUN", 2, "conj"),
                ("?", "PUNCT", 0, "punct"),
            ],
            &[],
            &[(NP, 2, 3, 2), (NP, 4, 5, 4)],
        ),
        QuestionType::Extent => sentence(
            slots,
            &[
                ("How", "ADV", 1, "advmod"),
                ("many", "ADJ", 2, "amod"),
                ("N2", "NOUN", 5, "obj"),
                ("do", "AUX", 5, "aux"),
                ("N1", "NOUN", 5, "nsubj"),
                ("V1", "VERB", -1, "root"),
                ("?", "PUNCT", 5, "punct"),
            ],
            &[],
            &[(NP, 0, 3, 2), (NP, 4, 5, 4)],
        ),
        QuestionType::Example => sentence(
            slots,
            &[
                ("What", "PRON", -1, "root"),
                ("are", "AUX", 0, "cop"),
                ("some", "DET", 4, "det"),
                ("good", "ADJ", 4, "amod"),
                ("N2", "NOUN", 0, "nsubj"),
                ("for", "ADP", 6, "case"),
                ("N1", "NOUN", 4, "nmod"),
                ("?", "PUNCT", 0, "punct"),
            ],
            &[],
            &[(NP, 2, 5, 4), (NP, 6, 7, 6)],
        ),
        QuestionType::Comparison => sentence(
            slots,
            &[
                ("What", "PRON", -1, "root"),
                ("is", "AUX", 0, "cop"),
                ("the", "DET", 3, "det"),
                ("difference", "NOUN", 0, "nsubj"),
                ("between", "ADP", 5, "case"),
                ("N1", "NOUN", 3, "nmod"),
                ("and", "CCONJ", 7, "cc"),
                ("N2", "NOUN", 5, "conj"),
                ("?", "PUNCT", 0, "punct"),
            ],
            &[],
            &[(NP, 2, 4, 3), (NP, 5, 6, 5), (NP, 7, 8, 7)],
        ),
        QuestionType::Cause => sentence(
            slots,
            &[
                ("Why", "ADV", 3, "advmod"),
                ("do", "AUX", 3, "aux"),
                ("N1", "NOUN", 3, "nsubj"),
                ("V1", "VERB", -1, "root"),
                ("N2", "NOUN", 3, "obj"),
                ("?", "PUNCT", 3, "punct"),
            ],
            &[],
            &[(NP, 2, 3, 2), (NP, 4, 5, 4)],
        ),
        QuestionType::Consequence => sentence(
            slots,
            &[
                ("What", "PRON", 1, "nsubj"),
                ("happens", "VERB", -1, "root"),
                ("if", "SCONJ", 4, "mark"),
                ("N1", "NOUN", 4, "nsubj"),
                ("V1", "VERB", 1, "advcl"),
                ("N2", "NOUN", 4, "obj"),
                ("?", "PUNCT", 1, "punct"),
            ],
            &[],
            &[(NP, 3, 4, 3), (NP, 5, 6, 5)],
        ),
        QuestionType::Procedural => sentence(
            slots,
            &[
                ("How", "ADV", 3, "advmod"),
                ("do", "AUX", 3, "aux"),
                ("N1", "NOUN", 3, "nsubj"),
                ("V1", "VERB", -1, "root"),
                ("N2", "NOUN", 3, "obj"),
                ("?", "PUNCT", 3, "punct"),
            ],
            &[],
            &[(NP, 2, 3, 2), (NP, 4, 5, 4)],
        ),
        QuestionType::Judgmental => sentence(
            slots,
            &[
                ("What", "PRON", 3, "obj"),
                ("do", "AUX", 3, "aux"),
                ("you", "PRON", 3, "nsubj"),
                ("think", "VERB", -1, "root"),
                ("of", "ADP", 5, "case"),
                ("N1", "NOUN", 3, "obl"),
                ("and", "CCONJ", 7, "cc"),
                ("N2", "NOUN", 5, "conj"),
                ("?", "PUNCT", 3, "punct"),
            ],
            &[],
            &[(NP, 5, 6, 5), (NP, 7, 8, 7)],
        ),
    }
}

fn sentence_text(s: &Sentence) -> String {
    detokenize(&s.tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>())
}

/// One generated record with gold annotations for both sides.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticExample {
    pub pair: QAPair,
    pub answer: ParsedDocument,
    pub question: ParsedDocument,
}

fn example(id: String, ty: QuestionType, rng: &mut ChaCha8Rng) -> SyntheticExample {
    let slots = Slots::draw(rng);
    let sentences = answer_sentences(&slots).to_vec();
    let answer_text = sentences
        .iter()
        .map(sentence_text)
        .collect::<Vec<_>>()
        .join(" ");
    let q = question_sentence(&slots, ty);
    let question_text = sentence_text(&q);
    let mut answer = ParsedDocument {
        id: id.clone(),
        sentences,
        coref_chains: vec![vec![
            Mention {
                sentence: 0,
                start: 0,
                end: 3,
            },
            Mention {
                sentence: 2,
                start: 0,
                end: 1,
            },
        ]],
    };
    let mut question = ParsedDocument {
        id: id.clone(),
        sentences: vec![q],
        coref_chains: Vec::new(),
    };
    answer.validate().expect("generated answer is well formed");
    question
        .validate()
        .expect("generated question is well formed");
    let mut pair = QAPair::new(id, question_text, answer_text);
    pair.qtype = Some(ty);
    SyntheticExample {
        pair,
        answer,
        question,
    }
}

/// `n` examples with types cycling through the ontology.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<SyntheticExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            example(
                format!("syn-{i:04}"),
                QuestionType::ALL[i % QuestionType::ALL.len()],
                &mut rng,
            )
        })
        .collect()
}

/// Answer documents with a random nonempty subset of the three sentence
/// shapes, in random order; the coreference chain is kept only when both
/// of its sentences survive.
pub fn synthetic_documents(n: usize, seed: u64) -> Vec<ParsedDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let slots = Slots::draw(&mut rng);
            let all = answer_sentences(&slots);
            let mut picks: Vec<usize> = (0..3).filter(|_| rng.random_bool(0.7)).collect();
            if picks.is_empty() {
                picks.push(rng.random_range(0..3));
            }
            picks.shuffle(&mut rng);
            let pos = |k: usize| picks.iter().position(|&p| p == k);
            let coref_chains = match (pos(0), pos(2)) {
                (Some(a), Some(b)) => vec![vec![
                    Mention {
                        sentence: a,
                        start: 0,
                        end: 3,
                    },
                    Mention {
                        sentence: b,
                        start: 0,
                        end: 1,
                    },
                ]],
                _ => Vec::new(),
            };
            let mut doc = ParsedDocument {
                id: format!("doc-{i:04}"),
                sentences: picks.iter().map(|&k| all[k].clone()).collect(),
                coref_chains,
            };
            doc.validate().expect("generated document is well formed");
            doc
        })
        .collect()
}
