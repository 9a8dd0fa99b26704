use oqgen_core::corpus::{Lexicons, QuestionType};
use oqgen_core::parse::{ParsedDocument, Token};
use oqgen_core::semgraph::label_focus_nodes;
use oqgen_tensor::{adam_step, AdamState, Gradients, Tape, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{ModelError, Result};
use crate::generator::{Generator, GeneratorInput, FOCUS_THRESHOLD};
use crate::layers::Dropout;
use crate::vocab::EOS_ID;

/// One supervised pair: the generator input, gold focus bits per graph
/// node, and the target token sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub input: GeneratorInput,
    pub focus_gold: Vec<bool>,
    pub target: Vec<String>,
}

impl TrainingExample {
    /// Builds the graph and labels gold focus nodes from the reference
    /// question's lemmas.
    pub fn new(
        qtype: QuestionType,
        answer: ParsedDocument,
        question: &[Token],
        segments: Vec<Vec<String>>,
        target: Vec<String>,
        lexicons: &Lexicons,
    ) -> Result<Self> {
        let input = GeneratorInput::new(qtype, answer, segments)?;
        let focus_gold = label_focus_nodes(&input.graph, &input.answer, question, lexicons).labels;
        Ok(TrainingExample {
            input,
            focus_gold,
            target,
        })
    }

    /// Supplies gold focus words to a focus-attention decoder.
    pub fn with_gold_focus_words(mut self) -> Self {
        let nodes: Vec<usize> = (0..self.focus_gold.len()).filter(|&i| self.focus_gold[i]).collect();
        self.input.focus_words = Some(self.input.node_words(nodes));
        self
    }

    /// Encoder plus decoder positions, for token-budget batching.
    pub fn token_count(&self) -> usize {
        1 + self.input.segments.iter().map(|s| s.len() + 1).sum::<usize>()
            + usize::from(!self.input.segments.is_empty())
            + self.input.answer.token_count()
            + self.target.len()
            + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss_total: f64,
    pub loss_focus: f64,
    pub loss_gen: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss_total,loss_focus,loss_gen\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{:.8},{:.8},{:.8}\n",
                s.step, s.loss_total, s.loss_focus, s.loss_gen
            ));
        }
        out
    }

    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss_total).collect()
    }
}

/// Packs example indices into batches of at most `budget` tokens, in the
/// given order; an example larger than the budget gets a batch of its own.
pub fn pack_batches(order: &[usize], sizes: &[usize], budget: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut used = 0;
    for &i in order {
        if !cur.is_empty() && used + sizes[i] > budget {
            batches.push(std::mem::take(&mut cur));
            used = 0;
        }
        cur.push(i);
        used += sizes[i];
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

fn diverged(step: usize) -> impl Fn(ModelError) -> ModelError {
    move |e| match e {
        ModelError::Tensor(TensorError::NonFinite { .. } | TensorError::NonFiniteGradient(_)) => {
            ModelError::Diverged { step, loss: f64::NAN }
        }
        other => other,
    }
}

/// Adam over token-budget batches, deterministic for a given seed.
pub struct Trainer {
    pub config: TrainConfig,
    adam: AdamState,
    order_rng: ChaCha8Rng,
    dropout: Dropout,
    queue: Vec<Vec<usize>>,
    pub step: usize,
}

impl Trainer {
    pub fn new(model: &Generator, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            config,
            adam: AdamState::new(&model.store, config.adam()),
            order_rng: ChaCha8Rng::seed_from_u64(config.seed),
            dropout: Dropout::train(
                model.config.dropout,
                ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9)),
            ),
            queue: Vec::new(),
            step: 0,
        })
    }

    fn next_batch(&mut self, examples: &[TrainingExample]) -> Vec<usize> {
        if self.queue.is_empty() {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            order.shuffle(&mut self.order_rng);
            let sizes: Vec<usize> = examples.iter().map(TrainingExample::token_count).collect();
            let mut batches = pack_batches(&order, &sizes, self.config.token_budget);
            batches.reverse();
            self.queue = batches;
        }
        self.queue.pop().unwrap_or_default()
    }

    /// One optimizer step on the next batch.
    pub fn train_step(&mut self, model: &mut Generator, examples: &[TrainingExample]) -> Result<StepLog> {
        if examples.is_empty() {
            return Err(ModelError::MissingInput("no training examples".into()));
        }
        let step = self.step + 1;
        let batch = self.next_batch(examples);
        let scale = 1.0 / batch.len() as f64;
        let mut grads = Gradients::default();
        let mut log = StepLog {
            step,
            loss_total: 0.0,
            loss_focus: 0.0,
            loss_gen: 0.0,
        };
        for &i in &batch {
            let ex = &examples[i];
            let target = model.vocab.encode(&ex.target);
            let mut tape = Tape::new();
            let (parts, _) = model
                .loss_on(
                    &model.store,
                    &mut tape,
                    &ex.input,
                    &ex.focus_gold,
                    &target,
                    self.config.bce_eps,
                    &mut self.dropout,
                )
                .map_err(diverged(step))?;
            let g = tape.backward(parts.total).map_err(|e| diverged(step)(e.into()))?;
            grads.accumulate(&g, scale);
            log.loss_total += scale * tape.value(parts.total).item()?;
            log.loss_focus += scale * tape.value(parts.focus).item()?;
            log.loss_gen += scale * tape.value(parts.generation).item()?;
        }
        if !log.loss_total.is_finite() {
            return Err(ModelError::Diverged {
                step,
                loss: log.loss_total,
            });
        }
        if self.config.clip_norm > 0.0 {
            let norm = grads.param_norm();
            if norm > self.config.clip_norm {
                grads.scale_params(self.config.clip_norm / norm);
            }
        }
        adam_step(&mut model.store, &grads, &mut self.adam, self.config.lr_at(step))
            .map_err(|e| diverged(step)(e.into()))?;
        self.step = step;
        Ok(log)
    }
}

/// Runs `config.steps` steps. `on_step` sees the model after each step and
/// may stop training early by returning `false`.
pub fn train<F>(
    model: &mut Generator,
    examples: &[TrainingExample],
    config: &TrainConfig,
    mut on_step: F,
) -> Result<TrainLog>
where
    F: FnMut(&Generator, &StepLog) -> Result<bool>,
{
    if examples.is_empty() {
        return Err(ModelError::MissingInput("training split is empty".into()));
    }
    let mut trainer = Trainer::new(model, *config)?;
    let mut log = TrainLog::default();
    for _ in 0..config.steps {
        let s = trainer.train_step(model, examples)?;
        log.steps.push(s);
        if !on_step(model, &s)? {
            break;
        }
    }
    Ok(log)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    /// Teacher-forced argmax accuracy over target tokens and the end token.
    pub token_accuracy: f64,
    pub focus_precision: f64,
    pub focus_recall: f64,
    pub focus_f1: f64,
    pub loss: f64,
}

/// Teacher-forced accuracy and pooled focus precision/recall/F1 (a node is
/// predicted focus when its probability exceeds 0.5).
pub fn evaluate(model: &Generator, examples: &[TrainingExample], bce_eps: f64) -> Result<EvalStats> {
    let (mut correct, mut total) = (0usize, 0usize);
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    let mut loss = 0.0;
    let mask = model.output_mask();
    for ex in examples {
        let target = model.vocab.encode(&ex.target);
        let mut tape = Tape::new();
        let (parts, fwd) = model.loss_on(
            &model.store,
            &mut tape,
            &ex.input,
            &ex.focus_gold,
            &target,
            bce_eps,
            &mut Dropout::off(),
        )?;
        loss += tape.value(parts.total).item()?;
        let logits = tape.value(fwd.logits);
        for (pos, &gold) in target.iter().chain(std::iter::once(&EOS_ID)).enumerate() {
            let row = logits.row(pos);
            let pred = (0..row.len())
                .filter(|&i| mask[i])
                .fold(None::<usize>, |b, i| match b {
                    Some(b) if row[b] >= row[i] => Some(b),
                    _ => Some(i),
                });
            correct += usize::from(pred == Some(gold));
            total += 1;
        }
        for (p, &g) in tape.value(fwd.focus_probs).data().iter().zip(&ex.focus_gold) {
            match (*p > FOCUS_THRESHOLD, g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(EvalStats {
        token_accuracy: ratio(correct, total),
        focus_precision: precision,
        focus_recall: recall,
        focus_f1: f1,
        loss: loss / examples.len().max(1) as f64,
    })
}
