mod common;

use std::collections::BTreeSet;

use common::{tiny_config, words};
use oqgen_core::corpus::QuestionType;
use oqgen_core::template::{ExemplarInventory, Template};
use oqgen_model::classifier::{
    exemplar_head, select_exemplar, self_train_filter, ClassifierExample, ClassifierRole, SelectionMode,
    SequenceClassifier, TypePrediction, TYPE_HEAD,
};
use oqgen_model::{ModelError, TrainConfig, Vocabulary};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FILLER: [&str; 6] = ["the", "a", "some", "many", "often", "here"];

/// Ten classes, each marked by its own word among shared filler.
fn separable(per_class: usize) -> (Vocabulary, Vec<ClassifierExample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut examples = Vec::new();
    for (c, ty) in QuestionType::ALL.into_iter().enumerate() {
        for i in 0..per_class {
            let mut toks: Vec<String> = (0..3).map(|_| FILLER.choose(&mut rng).unwrap().to_string()).collect();
            toks.insert(i % 4, format!("marker{c}"));
            examples.push(ClassifierExample::type_example(toks, ty));
        }
    }
    let seqs: Vec<Vec<String>> = examples.iter().map(|e| e.tokens.clone()).collect();
    (Vocabulary::build(seqs.iter().map(Vec::as_slice), 1), examples)
}

fn train_config(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        lr: 3e-3,
        seed: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn distribution_covers_ten_types() {
    let (vocab, examples) = separable(1);
    let clf = SequenceClassifier::type_classifier(tiny_config(8), vocab, ClassifierRole::Answer, None, 0).unwrap();
    for e in &examples {
        let c = clf.classify_type(&e.tokens).unwrap();
        assert_eq!(c.probs.len(), 10);
        assert!((c.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(c.probs.iter().all(|&p| p > 0.0));
    }
    assert!(matches!(clf.classify_type(&[]), Err(ModelError::MissingInput(_))));
}

#[test]
fn separable_classes_are_learned_exactly() {
    let (vocab, examples) = separable(5);
    let mut clf = SequenceClassifier::type_classifier(tiny_config(16), vocab, ClassifierRole::Question, None, 1).unwrap();
    let losses = clf.train(&examples, &train_config(300)).unwrap();
    assert_eq!(losses.len(), 300);
    assert!(losses[299] < losses[0]);
    assert_eq!(clf.accuracy(&examples).unwrap(), 1.0);
    for e in examples.iter().step_by(5) {
        let (ty, conf) = clf.predict_type(&e.tokens).unwrap();
        assert_eq!(ty.index(), e.label);
        assert!(conf > 0.5);
    }
}

#[test]
fn top_nine_and_temperature() {
    let (vocab, examples) = separable(2);
    let clf = SequenceClassifier::type_classifier(tiny_config(8), vocab, ClassifierRole::Answer, None, 4).unwrap();
    for e in &examples {
        let top = clf.top_types(&e.tokens, 9).unwrap();
        assert_eq!(top.len(), 9);
        assert_eq!(top.iter().map(|t| t.0).collect::<BTreeSet<_>>().len(), 9);
        assert!(top.windows(2).all(|w| w[0].1 >= w[1].1));
        assert_eq!(top[0].0.index(), clf.classify_type(&e.tokens).unwrap().argmax);

        let base = clf.classify_type(&e.tokens).unwrap().argmax;
        for t in [0.05, 0.5, 3.0, 40.0] {
            let c = clf.classify_with_temperature(&e.tokens, TYPE_HEAD, None, t).unwrap();
            assert_eq!(c.argmax, base);
        }
    }
    assert!(clf.classify_with_temperature(&examples[0].tokens, TYPE_HEAD, None, 0.0).is_err());
}

fn pred(confidence: f64) -> TypePrediction {
    TypePrediction {
        text: words("why is the sky blue ?"),
        qtype: QuestionType::Cause,
        confidence,
    }
}

#[test]
fn self_training_keeps_confident_predictions() {
    let kept = self_train_filter(vec![pred(0.95), pred(0.91), pred(0.90), pred(0.89)], 0.9);
    assert_eq!(kept, vec![pred(0.95), pred(0.91)]);
    assert!(self_train_filter(Vec::new(), 0.9).is_empty());
}

fn oracle(inv: &ExemplarInventory, ty: QuestionType, t: &str) -> Template {
    select_exemplar(inv, ty, SelectionMode::Oracle, Some(&Template::parse(t)), None).unwrap()
}

#[test]
fn oracle_selection_by_edit_distance() {
    let inv = ExemplarInventory::defaults();
    let cause: Vec<String> = inv.get(QuestionType::Cause).iter().map(Template::render).collect();
    assert_eq!(
        cause,
        [
            "Why is [NP]?",
            "Why is [NP] [ADJP]?",
            "Why do [NP]?",
            "Why do [NP] [V] [NP]?",
            "What causes [NP]?",
            "Why do [NP] [V]?"
        ]
    );
    // Distances to "why does [NP] [V] ?" are 2, 2, 2, 2, 3, 1.
    let probe = Template::parse("Why does [NP] [V] ?");
    assert_eq!(inv.nearest(QuestionType::Cause, &probe).unwrap(), (5, 1));
    assert_eq!(oracle(&inv, QuestionType::Cause, "Why does [NP] [V] ?").render(), "Why do [NP] [V]?");
    // Exact match at distance zero.
    assert_eq!(oracle(&inv, QuestionType::Cause, "What causes [NP] ?").render(), "What causes [NP]?");
    // "why are [NP] ?" is one edit from both index 0 and index 2.
    assert_eq!(inv.nearest(QuestionType::Cause, &Template::parse("Why are [NP] ?")).unwrap(), (0, 1));

    let empty = ExemplarInventory::default();
    assert!(select_exemplar(&empty, QuestionType::Cause, SelectionMode::Oracle, Some(&probe), None).is_err());
    assert!(select_exemplar(&inv, QuestionType::Cause, SelectionMode::Oracle, None, None).is_err());
    assert!(select_exemplar(&inv, QuestionType::Cause, SelectionMode::Learned, None, None).is_err());
}

#[test]
fn learned_selection_uses_the_selector_head() {
    let inv = ExemplarInventory::defaults();
    let n = inv.get(QuestionType::Cause).len();
    let answers: Vec<Vec<String>> = (0..n).map(|i| words(&format!("clue{i} the answer text"))).collect();
    let examples: Vec<ClassifierExample> = answers
        .iter()
        .enumerate()
        .flat_map(|(i, a)| std::iter::repeat_n(ClassifierExample::exemplar_example(a.clone(), QuestionType::Cause, i), 2))
        .collect();
    let vocab = Vocabulary::build(answers.iter().map(Vec::as_slice), 1);
    let mut clf =
        SequenceClassifier::type_classifier(tiny_config(16), vocab, ClassifierRole::Answer, Some(&inv), 2).unwrap();
    assert!(clf.has_head(&exemplar_head(QuestionType::Cause)));
    clf.train(&examples, &train_config(200)).unwrap();
    for (i, a) in answers.iter().enumerate() {
        let got = select_exemplar(&inv, QuestionType::Cause, SelectionMode::Learned, None, Some((&clf, a))).unwrap();
        assert_eq!(got, inv.get(QuestionType::Cause)[i]);
    }
}
