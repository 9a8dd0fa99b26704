mod common;

use common::{synthetic_examples, tiny_config};
use oqgen_core::corpus::QuestionType;
use oqgen_core::template::{ExemplarInventory, Template};
use oqgen_model::train::{evaluate, train, TrainingExample};
use oqgen_core::text::SLOT_TOKENS;
use oqgen_model::{
    generate_controlled, ControlledModels, DecodeOptions, Generator, GenerationRequest, ModelError, OutputKind,
    Strategy, TrainConfig, Variant, Vocabulary,
};

fn slot_loving(output: OutputKind, vocab: &Vocabulary, cfg: oqgen_model::ModelConfig) -> Generator {
    let mut m = Generator::new(cfg, vocab.clone(), output, 3).unwrap();
    let id = m.store.id("output.bias").unwrap();
    for slot in Vocabulary::slot_ids() {
        m.store.get_mut(id).data_mut()[slot] = 50.0;
    }
    m
}

fn strategy() -> Strategy {
    Strategy::Beam(DecodeOptions {
        max_len: 12,
        ..DecodeOptions::default()
    })
}

#[test]
fn only_template_models_emit_slots() {
    let (vocab, examples) = synthetic_examples(6, 10);
    let question = slot_loving(OutputKind::Question, &vocab, tiny_config(8));
    let mut stage2 = tiny_config(8);
    stage2.focus_word_attention = true;
    let question2 = slot_loving(OutputKind::Question, &vocab, stage2);
    let template = slot_loving(OutputKind::Template, &vocab, tiny_config(8));
    let exemplar = Template::parse("Why do [NP] [V] ?");
    for ex in &examples {
        let joint = GenerationRequest::new(Variant::JointGen, ex.input.qtype, ex.input.answer.clone());
        let out = generate_controlled(
            ControlledModels {
                generator: &question,
                template_generator: None,
            },
            &joint,
            &strategy(),
        )
        .unwrap();
        assert!(!out.question.is_empty());
        assert!(out.question.iter().all(|w| !SLOT_TOKENS.contains(&w.as_str())), "{:?}", out.question);
        assert!(out.template.is_none());

        let tpl = GenerationRequest::new(Variant::TplGen, ex.input.qtype, ex.input.answer.clone())
            .with_exemplar(exemplar.clone());
        let out = generate_controlled(
            ControlledModels {
                generator: &question2,
                template_generator: Some(&template),
            },
            &tpl,
            &strategy(),
        )
        .unwrap();
        let t = out.template.unwrap();
        assert!(t.iter().any(|w| SLOT_TOKENS.contains(&w.as_str())), "{t:?}");
        assert!(out.question.iter().all(|w| !SLOT_TOKENS.contains(&w.as_str())));
    }
}

#[test]
fn request_requirements() {
    let (vocab, examples) = synthetic_examples(1, 11);
    let q = Generator::new(tiny_config(8), vocab.clone(), OutputKind::Question, 0).unwrap();
    let t = Generator::new(tiny_config(8), vocab, OutputKind::Template, 0).unwrap();
    let answer = examples[0].input.answer.clone();
    let only = |g| ControlledModels {
        generator: g,
        template_generator: None,
    };

    let expl = GenerationRequest::new(Variant::ExplGen, QuestionType::Cause, answer.clone());
    assert!(matches!(generate_controlled(only(&q), &expl, &strategy()), Err(ModelError::MissingInput(_))));

    let tpl = GenerationRequest::new(Variant::TplGen, QuestionType::Cause, answer.clone())
        .with_exemplar(Template::parse("Why do [NP] ?"));
    assert!(matches!(generate_controlled(only(&q), &tpl, &strategy()), Err(ModelError::MissingInput(_))));

    // A supplied template skips stage one.
    let given = Template::parse("Why do [NP] [V] ?");
    let ready = GenerationRequest::new(Variant::TplGen, QuestionType::Cause, answer.clone()).with_template(given.clone());
    let out = generate_controlled(only(&q), &ready, &strategy()).unwrap();
    assert_eq!(out.template, Some(given.token_strings()));

    let joint = GenerationRequest::new(Variant::JointGen, QuestionType::Cause, answer);
    assert!(matches!(generate_controlled(only(&t), &joint, &strategy()), Err(ModelError::InvalidArgument(_))));
    assert_eq!(Variant::parse("ExplGen"), Some(Variant::ExplGen));
    assert_eq!(Variant::parse("other"), None);
}

#[test]
fn overfit_explgen_reproduces_training_questions() {
    let (_, base) = synthetic_examples(4, 12);
    let inv = ExemplarInventory::defaults();
    let examples: Vec<TrainingExample> = base
        .into_iter()
        .map(|mut e| {
            e.input.segments = vec![inv.get(e.input.qtype)[0].token_strings()];
            e
        })
        .collect();
    let seqs: Vec<Vec<String>> = examples
        .iter()
        .flat_map(|e| [e.target.clone(), e.input.answer_tokens(), e.input.segments[0].clone()])
        .collect();
    let vocab = Vocabulary::build(seqs.iter().map(Vec::as_slice), 1);
    let mut model = Generator::new(tiny_config(16), vocab, OutputKind::Question, 5).unwrap();
    let cfg = TrainConfig {
        steps: 800,
        lr: 2e-3,
        seed: 2,
        ..TrainConfig::default()
    };
    train(&mut model, &examples, &cfg, |m, s| {
        Ok(s.step % 50 != 0 || evaluate(m, &examples, 1e-7)?.token_accuracy < 1.0)
    })
    .unwrap();
    assert_eq!(evaluate(&model, &examples, 1e-7).unwrap().token_accuracy, 1.0);

    for e in &examples {
        let request = GenerationRequest::new(Variant::ExplGen, e.input.qtype, e.input.answer.clone())
            .with_exemplar(inv.get(e.input.qtype)[0].clone());
        let out = generate_controlled(
            ControlledModels {
                generator: &model,
                template_generator: None,
            },
            &request,
            &Strategy::default(),
        )
        .unwrap();
        let want: Vec<String> = e.target.iter().map(|w| w.to_lowercase()).collect();
        assert_eq!(out.question, want);
    }
}
