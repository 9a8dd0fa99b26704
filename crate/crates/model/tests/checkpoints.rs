mod common;

use std::path::Path;

use common::{synthetic_examples, tiny_config, words};
use oqgen_model::classifier::{ClassifierRole, SequenceClassifier};
use oqgen_model::{Checkpoint, DecodeOptions, Generator, ModelError, OutputKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

#[test]
fn save_load_decode_is_bit_identical() {
    let dir = tempdir().unwrap();
    let (vocab, examples) = synthetic_examples(10, 77);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for i in 0..10u64 {
        let mut cfg = tiny_config([8, 12, 16][i as usize % 3]);
        cfg.heads = [1, 2, 4][rng.random_range(0..3)];
        cfg.gat_layers = rng.random_range(1..4);
        cfg.focus_word_attention = i % 4 == 3;
        let output = if i % 2 == 0 { OutputKind::Question } else { OutputKind::Template };
        let model = Generator::new(cfg, vocab.clone(), output, rng.random()).unwrap();
        let input = &examples[i as usize].input;
        let opts = DecodeOptions {
            max_len: 15,
            ..DecodeOptions::default()
        };
        let before_prep = model.prepare(input).unwrap();
        let before = oqgen_model::beam_decode(&model.bind(&before_prep), &opts).unwrap();

        let path = dir.path().join(format!("m{i}/model.ckpt"));
        model.save(&path).unwrap();
        let loaded = Generator::load(&path).unwrap();
        assert_eq!(loaded, model);
        let after_prep = loaded.prepare(input).unwrap();
        assert_eq!(after_prep, before_prep);
        let after = oqgen_model::beam_decode(&loaded.bind(&after_prep), &opts).unwrap();
        assert_eq!(after, before);
        for seq in [&before[..], &[]] {
            let a = model.next_log_probs(&before_prep, seq).unwrap();
            let b = loaded.next_log_probs(&after_prep, seq).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(std::fs::read(&path).unwrap(), loaded.to_checkpoint().to_bytes().unwrap());
    }
}

#[test]
fn damaged_files_are_rejected() {
    let (vocab, _) = synthetic_examples(2, 1);
    let model = Generator::new(tiny_config(8), vocab.clone(), OutputKind::Question, 1).unwrap();
    let bytes = model.to_checkpoint().to_bytes().unwrap();
    let origin = Path::new("mem");
    assert!(Checkpoint::from_bytes(&bytes, origin).is_ok());
    for cut in [0, 4, 12, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..cut], origin),
            Err(ModelError::Checkpoint { .. })
        ));
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad, origin).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra, origin).is_err());

    let clf = SequenceClassifier::type_classifier(tiny_config(8), vocab, ClassifierRole::Answer, None, 2).unwrap();
    let err = Generator::from_checkpoint(clf.to_checkpoint(), origin).unwrap_err();
    assert!(matches!(err, ModelError::Checkpoint { .. }));
    assert!(matches!(
        Generator::load("/nonexistent/model.ckpt"),
        Err(ModelError::Io { .. })
    ));
}

#[test]
fn classifier_round_trip() {
    let dir = tempdir().unwrap();
    let vocab = oqgen_model::Vocabulary::build([words("why do birds sing")].iter().map(Vec::as_slice), 1);
    let clf = SequenceClassifier::type_classifier(tiny_config(8), vocab, ClassifierRole::Question, None, 5).unwrap();
    let path = dir.path().join("clf.ckpt");
    clf.save(&path).unwrap();
    let loaded = SequenceClassifier::load(&path).unwrap();
    assert_eq!(loaded, clf);
    let text = words("why do birds sing");
    assert_eq!(loaded.classify_type(&text).unwrap(), clf.classify_type(&text).unwrap());
}
