#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use oqgen::PipelineConfig;
use oqgen_core::corpus::{write_qa_pairs, Split};
use oqgen_core::parse::{write_parsed_documents, ParsedDocument};
use oqgen_core::synthetic::synthetic_corpus;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Small model and optimizer settings so every command finishes quickly.
pub const TINY: &str = r#"
[model]
d_model = 8
encoder_layers = 1
decoder_layers = 1
heads = 2
ffn_width = 16
gat_layers = 1
focus_hidden = 8
dropout = 0.0
max_positions = 64

[train.optimizer]
steps = 6
lr = 1e-3

[classifier.model]
d_model = 8
encoder_layers = 1
decoder_layers = 1
heads = 2
ffn_width = 16
gat_layers = 1
focus_hidden = 8
dropout = 0.0
max_positions = 64

[classifier.optimizer]
steps = 6
lr = 1e-3

[templates]
min_freq = 1

[decode]
beam = 2
max_len = 12
"#;

/// A synthetic corpus on disk with a config pointing at it.
pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    /// `n` typed pairs; `split` labels them round-robin when set.
    pub fn synthetic(n: usize, seed: u64, split: bool) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synthetic_corpus(n, seed);
        let mut pairs = Vec::new();
        let mut answers: Vec<ParsedDocument> = Vec::new();
        let mut questions: Vec<ParsedDocument> = Vec::new();
        for (i, ex) in corpus.into_iter().enumerate() {
            let mut pair = ex.pair;
            if split {
                pair.split = Some(Split::ALL[i % 3]);
            }
            pairs.push(pair);
            answers.push(ex.answer);
            questions.push(ex.question);
        }
        write_qa_pairs(dir.path().join("qa.jsonl"), &pairs).unwrap();
        write_parsed_documents(dir.path().join("parsed.jsonl"), &answers).unwrap();
        write_parsed_documents(dir.path().join("parsed_questions.jsonl"), &questions).unwrap();

        let mut vocab = BTreeSet::new();
        for d in answers.iter().chain(&questions) {
            for t in d.tokens() {
                vocab.insert(t.text.to_lowercase());
                vocab.insert(t.lemma.to_lowercase());
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe5);
        let mut emb = String::new();
        for w in vocab.iter().filter(|w| !w.contains(char::is_whitespace)) {
            let _ = write!(emb, "{w}");
            for _ in 0..6 {
                let _ = write!(emb, " {:.5}", rng.random_range(-1.0..1.0));
            }
            emb.push('\n');
        }
        fs::write(dir.path().join("embeddings.txt"), emb).unwrap();

        let ws = Workspace { dir };
        ws.write_config("config.toml", "");
        ws
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Writes a config with the synthetic inputs, the tiny settings and
    /// `extra` appended.
    pub fn write_config(&self, name: &str, extra: &str) -> PathBuf {
        let body = format!(
            "seed = 7\n\n[paths]\nqa = \"qa.jsonl\"\nparsed = \"parsed.jsonl\"\n\
             parsed_questions = \"parsed_questions.jsonl\"\nembeddings = \"embeddings.txt\"\n{TINY}\n{extra}\n"
        );
        let path = self.path(name);
        fs::write(&path, body).unwrap();
        path
    }

    pub fn config(&self) -> PipelineConfig {
        PipelineConfig::load(self.path("config.toml"), &[], None).unwrap()
    }

    pub fn config_with(&self, overrides: &[&str]) -> PipelineConfig {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        PipelineConfig::load(self.path("config.toml"), &o, None).unwrap()
    }

    pub fn reports(&self) -> PathBuf {
        self.path("reports")
    }
}
