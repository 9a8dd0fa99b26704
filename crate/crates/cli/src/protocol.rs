//! The controllability protocol: answer-side type ranking, one generation
//! per type, question-side type check, then accuracy, unique types and
//! pairwise BLEU.

use std::collections::BTreeMap;

use oqgen_core::corpus::QuestionType;
use oqgen_core::metrics::{DiversityResult, DiversitySample};
use oqgen_core::parse::ParsedDocument;
use oqgen_core::template::{ExemplarInventory, Template};
use oqgen_model::{
    generate_controlled, select_exemplar, ControlledModels, GenerationRequest, Generator, SelectionMode,
    SequenceClassifier, Strategy, Variant,
};
use serde::{Deserialize, Serialize};

use crate::data::clip;
use crate::error::Result;

/// What a generator returns for one request.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Generated {
    pub question: Vec<String>,
    pub template: Option<Vec<String>>,
    pub focus_nodes: Option<Vec<usize>>,
}

pub trait QuestionGenerator {
    fn generate(&mut self, id: &str, answer: &ParsedDocument, qtype: QuestionType) -> Result<Generated>;
}

/// The two type classifiers: one ranks types for an answer, the other
/// labels a question.
pub trait TypePredictor {
    /// The `k` most likely types, most likely first.
    fn answer_types(&self, answer: &[String], k: usize) -> Result<Vec<QuestionType>>;
    fn question_type(&self, question: &[String]) -> Result<QuestionType>;
}

/// One answer to run the protocol on.
#[derive(Clone, Copy, Debug)]
pub struct ProtocolInput<'a> {
    pub id: &'a str,
    pub answer_words: &'a [String],
    pub answer: &'a ParsedDocument,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityRecord {
    pub id: String,
    pub specified: QuestionType,
    pub predicted: QuestionType,
    pub question: String,
}

pub fn run_diversity(
    inputs: &[ProtocolInput<'_>],
    generator: &mut dyn QuestionGenerator,
    predictor: &dyn TypePredictor,
    top_k: usize,
) -> Result<(DiversityResult, Vec<DiversityRecord>)> {
    let mut samples = Vec::with_capacity(inputs.len());
    let mut records = Vec::new();
    for input in inputs {
        let types = predictor.answer_types(input.answer_words, top_k)?;
        let mut sample = DiversitySample {
            id: input.id.to_string(),
            specified: Vec::new(),
            predicted: Vec::new(),
            questions: Vec::new(),
        };
        for ty in types {
            let q = generator.generate(input.id, input.answer, ty)?.question;
            let predicted = predictor.question_type(&q)?;
            records.push(DiversityRecord {
                id: input.id.to_string(),
                specified: ty,
                predicted,
                question: oqgen_core::text::detokenize(&q),
            });
            sample.specified.push(ty);
            sample.predicted.push(predicted);
            sample.questions.push(q);
        }
        samples.push(sample);
    }
    Ok((DiversityResult::compute(&samples)?, records))
}

/// Trained classifiers behind [`TypePredictor`].
#[derive(Clone, Debug)]
pub struct ClassifierPredictor {
    pub answer: SequenceClassifier,
    pub question: SequenceClassifier,
}

impl TypePredictor for ClassifierPredictor {
    fn answer_types(&self, answer: &[String], k: usize) -> Result<Vec<QuestionType>> {
        let words = clip(answer.to_vec(), self.answer.config.max_positions - 1);
        Ok(self.answer.top_types(&words, k)?.into_iter().map(|(t, _)| t).collect())
    }

    fn question_type(&self, question: &[String]) -> Result<QuestionType> {
        let words = clip(question.to_vec(), self.question.config.max_positions - 1);
        Ok(self.question.predict_type(&words)?.0)
    }
}

/// Trained generators behind [`QuestionGenerator`].
#[derive(Clone, Debug)]
pub struct ModelGenerator {
    pub variant: Variant,
    pub generator: Generator,
    /// Stage-1 template model for TplGen.
    pub template_generator: Option<Generator>,
    pub inventory: ExemplarInventory,
    pub selection: SelectionMode,
    /// Answer classifier with exemplar heads, for learned selection.
    pub selector: Option<SequenceClassifier>,
    /// Reference-question templates by pair id, for oracle selection.
    pub oracle_templates: BTreeMap<String, Template>,
    pub strategy: Strategy,
    calls: u64,
}

impl ModelGenerator {
    pub fn new(variant: Variant, generator: Generator, strategy: Strategy) -> Self {
        ModelGenerator {
            variant,
            generator,
            template_generator: None,
            inventory: ExemplarInventory::defaults(),
            selection: SelectionMode::Learned,
            selector: None,
            oracle_templates: BTreeMap::new(),
            strategy,
            calls: 0,
        }
    }

    fn exemplar(&self, id: &str, answer: &ParsedDocument, ty: QuestionType) -> Result<Template> {
        let words: Vec<String> = answer.tokens().map(|t| t.text.clone()).collect();
        let selector = self.selector.as_ref().map(|s| (s, clip(words, s.config.max_positions - 1)));
        Ok(select_exemplar(
            &self.inventory,
            ty,
            self.selection,
            self.oracle_templates.get(id),
            selector.as_ref().map(|(s, w)| (*s, w.as_slice())),
        )?)
    }
}

impl QuestionGenerator for ModelGenerator {
    fn generate(&mut self, id: &str, answer: &ParsedDocument, qtype: QuestionType) -> Result<Generated> {
        let mut request = GenerationRequest::new(self.variant, qtype, answer.clone());
        if self.variant != Variant::JointGen {
            request = request.with_exemplar(self.exemplar(id, answer, qtype)?);
        }
        // Sampling draws a fresh stream per call so repeated types differ.
        let strategy = match self.strategy {
            Strategy::Sample { options, seed } => Strategy::Sample {
                options,
                seed: seed.wrapping_add(self.calls),
            },
            other => other,
        };
        self.calls += 1;
        let models = ControlledModels {
            generator: &self.generator,
            template_generator: self.template_generator.as_ref(),
        };
        let out = generate_controlled(models, &request, &strategy)?;
        Ok(Generated {
            question: out.question,
            template: out.template,
            focus_nodes: Some(out.focus_nodes),
        })
    }
}
