//! Type-controlled generation with the three model variants.

use oqgen_core::corpus::QuestionType;
use oqgen_core::parse::ParsedDocument;
use oqgen_core::template::Template;
use serde::{Deserialize, Serialize};

use crate::config::{DecodeOptions, SamplingOptions};
use crate::decode::{beam_decode, greedy_decode, nucleus_sample};
use crate::error::{ModelError, Result};
use crate::generator::{Generator, GeneratorInput};
use crate::vocab::OutputKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    JointGen,
    ExplGen,
    TplGen,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Variant> {
        match s.to_ascii_lowercase().as_str() {
            "jointgen" => Some(Variant::JointGen),
            "explgen" => Some(Variant::ExplGen),
            "tplgen" => Some(Variant::TplGen),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRequest {
    pub variant: Variant,
    pub qtype: QuestionType,
    pub answer: ParsedDocument,
    pub exemplar: Option<Template>,
    /// A ready template for the second TplGen stage; when absent the first
    /// stage generates one from the exemplar.
    pub template: Option<Template>,
}

impl GenerationRequest {
    pub fn new(variant: Variant, qtype: QuestionType, answer: ParsedDocument) -> Self {
        GenerationRequest {
            variant,
            qtype,
            answer,
            exemplar: None,
            template: None,
        }
    }

    pub fn with_exemplar(mut self, exemplar: Template) -> Self {
        self.exemplar = Some(exemplar);
        self
    }

    pub fn with_template(mut self, template: Template) -> Self {
        self.template = Some(template);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    Greedy { min_len: usize, max_len: usize },
    Beam(DecodeOptions),
    Sample { options: SamplingOptions, seed: u64 },
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::Beam(DecodeOptions::default())
    }
}

/// The trained models a variant needs: the question generator and, for a
/// TplGen run that has to produce its own template, the stage-1 model.
#[derive(Clone, Copy, Debug)]
pub struct ControlledModels<'a> {
    pub generator: &'a Generator,
    pub template_generator: Option<&'a Generator>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlledOutput {
    pub question: Vec<String>,
    /// The intermediate template, for TplGen.
    pub template: Option<Vec<String>>,
    /// Predicted focus words from the question generator.
    pub focus_words: Vec<String>,
    /// Nodes of the answer graph predicted as focus.
    pub focus_nodes: Vec<usize>,
}

/// Decoded tokens plus the focus prediction they were conditioned on.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyOutput {
    pub tokens: Vec<String>,
    pub focus_words: Vec<String>,
    pub focus_nodes: Vec<usize>,
}

pub fn run_strategy(model: &Generator, input: &GeneratorInput, strategy: &Strategy) -> Result<StrategyOutput> {
    let prepared = model.prepare(input)?;
    let bound = model.bind(&prepared);
    let ids = match strategy {
        Strategy::Greedy { min_len, max_len } => greedy_decode(&bound, *min_len, *max_len, true)?,
        Strategy::Beam(opts) => beam_decode(&bound, opts)?,
        Strategy::Sample { options, seed } => nucleus_sample(&bound, options, *seed)?,
    };
    Ok(StrategyOutput {
        tokens: model.vocab.decode(&ids),
        focus_nodes: prepared.focus_nodes(),
        focus_words: prepared.focus_words,
    })
}

pub fn generate_controlled(
    models: ControlledModels<'_>,
    request: &GenerationRequest,
    strategy: &Strategy,
) -> Result<ControlledOutput> {
    let generator = models.generator;
    if generator.output != OutputKind::Question {
        return Err(ModelError::InvalidArgument("question generator has a template output layer".into()));
    }
    let exemplar_tokens = || {
        request
            .exemplar
            .as_ref()
            .map(Template::token_strings)
            .ok_or_else(|| ModelError::MissingInput(format!("{:?} needs an exemplar", request.variant)))
    };
    let (segments, template) = match request.variant {
        Variant::JointGen => (Vec::new(), None),
        Variant::ExplGen => (vec![exemplar_tokens()?], None),
        Variant::TplGen => {
            let template = match &request.template {
                Some(t) => t.token_strings(),
                None => {
                    let stage1 = models
                        .template_generator
                        .ok_or_else(|| ModelError::MissingInput("TplGen needs a stage-1 template model".into()))?;
                    if stage1.output != OutputKind::Template {
                        return Err(ModelError::InvalidArgument("stage-1 model does not emit templates".into()));
                    }
                    let input = GeneratorInput::new(request.qtype, request.answer.clone(), vec![exemplar_tokens()?])?;
                    run_strategy(stage1, &input, strategy)?.tokens
                }
            };
            (vec![template.clone()], Some(template))
        }
    };
    let input = GeneratorInput::new(request.qtype, request.answer.clone(), segments)?;
    let out = run_strategy(generator, &input, strategy)?;
    Ok(ControlledOutput {
        question: out.tokens,
        template,
        focus_words: out.focus_words,
        focus_nodes: out.focus_nodes,
    })
}
