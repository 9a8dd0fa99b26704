//! Sequence classifiers: the question/answer type classifiers and the
//! per-type exemplar selector, sharing one encoder trunk design with the
//! generator but holding their own weights.

use std::collections::BTreeMap;
use std::path::Path;

use oqgen_core::corpus::QuestionType;
use oqgen_core::template::{ExemplarInventory, Template};
use oqgen_tensor::{adam_step, glorot_uniform, AdamState, Gradients, ParamId, ParamStore, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointHeader, CheckpointKind, FORMAT_VERSION};
use crate::config::{ModelConfig, TrainConfig};
use crate::error::{ModelError, Result};
use crate::layers::{Dropout, EncoderLayerParams};
use crate::vocab::{Vocabulary, BOS_ID};

pub const TYPE_HEAD: &str = "type";
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.9;

/// Which text a type classifier reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierRole {
    /// Reads questions; labels training data.
    Question,
    /// Reads answers; predicts types at test time.
    Answer,
}

pub fn exemplar_head(ty: QuestionType) -> String {
    format!("exemplar.{}", ty.name())
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Head {
    weight: ParamId,
    bias: ParamId,
    classes: usize,
}

/// Encoder trunk with named softmax heads over the first position.
#[derive(Clone, Debug)]
pub struct SequenceClassifier {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub role: ClassifierRole,
    pub store: ParamStore,
    tokens: ParamId,
    positions: ParamId,
    layers: Vec<EncoderLayerParams>,
    heads: BTreeMap<String, Head>,
}

impl PartialEq for SequenceClassifier {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.vocab == other.vocab
            && self.role == other.role
            && self.store == other.store
            && self.head_sizes() == other.head_sizes()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassifierExample {
    pub head: String,
    pub tokens: Vec<String>,
    pub label: usize,
    /// Prepended in place of `[BOS]` (the exemplar selector uses the type
    /// token here).
    pub lead: Option<usize>,
}

impl ClassifierExample {
    pub fn type_example(tokens: Vec<String>, ty: QuestionType) -> Self {
        ClassifierExample {
            head: TYPE_HEAD.into(),
            tokens,
            label: ty.index(),
            lead: None,
        }
    }

    pub fn exemplar_example(answer: Vec<String>, ty: QuestionType, exemplar_index: usize) -> Self {
        ClassifierExample {
            head: exemplar_head(ty),
            tokens: answer,
            label: exemplar_index,
            lead: Some(Vocabulary::type_id(ty)),
        }
    }
}

/// A prediction with its full distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub probs: Vec<f64>,
    pub argmax: usize,
}

impl Classification {
    pub fn confidence(&self) -> f64 {
        self.probs[self.argmax]
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl SequenceClassifier {
    /// `heads` lists `(name, class count)`.
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        role: ClassifierRole,
        heads: &[(String, usize)],
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let tokens = store.insert("embed.tokens", glorot_uniform(vocab.len(), d, &mut rng))?;
        let positions = store.insert("embed.positions", glorot_uniform(config.max_positions, d, &mut rng))?;
        let layers = (0..config.encoder_layers)
            .map(|l| EncoderLayerParams::register(&mut store, &format!("encoder.{l}"), &config, &mut rng))
            .collect::<Result<_>>()?;
        let mut map = BTreeMap::new();
        for (name, classes) in heads {
            if *classes == 0 {
                return Err(ModelError::InvalidConfig(format!("head {name} has no classes")));
            }
            let weight = store.insert(format!("head.{name}.weight"), glorot_uniform(d, *classes, &mut rng))?;
            let bias = store.insert(format!("head.{name}.bias"), Tensor::zeros(1, *classes))?;
            map.insert(
                name.clone(),
                Head {
                    weight,
                    bias,
                    classes: *classes,
                },
            );
        }
        Ok(SequenceClassifier {
            config,
            vocab,
            role,
            store,
            tokens,
            positions,
            layers,
            heads: map,
        })
    }

    /// A type classifier with a 10-way head, plus one exemplar head per
    /// type with a nonempty inventory when `inventory` is given.
    pub fn type_classifier(
        config: ModelConfig,
        vocab: Vocabulary,
        role: ClassifierRole,
        inventory: Option<&ExemplarInventory>,
        seed: u64,
    ) -> Result<Self> {
        let mut heads = vec![(TYPE_HEAD.to_string(), QuestionType::ALL.len())];
        if let Some(inv) = inventory {
            for ty in QuestionType::ALL {
                if !inv.get(ty).is_empty() {
                    heads.push((exemplar_head(ty), inv.get(ty).len()));
                }
            }
        }
        Self::new(config, vocab, role, &heads, seed)
    }

    pub fn head_sizes(&self) -> Vec<(String, usize)> {
        self.heads.iter().map(|(n, h)| (n.clone(), h.classes)).collect()
    }

    pub fn has_head(&self, name: &str) -> bool {
        self.heads.contains_key(name)
    }

    fn head(&self, name: &str) -> Result<Head> {
        self.heads
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::InvalidArgument(format!("classifier has no head {name:?}")))
    }

    fn input_ids(&self, tokens: &[String], lead: Option<usize>) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Err(ModelError::MissingInput("classifier input is empty".into()));
        }
        let mut ids = vec![lead.unwrap_or(BOS_ID)];
        ids.extend(self.vocab.encode(tokens));
        if ids.len() > self.config.max_positions {
            return Err(ModelError::InputTooLong {
                len: ids.len(),
                max: self.config.max_positions,
            });
        }
        Ok(ids)
    }

    /// `1 x classes` logits from the first-position state.
    pub fn logits_on(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        ids: &[usize],
        head: &str,
        drop: &mut Dropout,
    ) -> Result<Var> {
        let head = self.head(head)?;
        let table = tape.param(store, self.tokens);
        let tok = tape.gather_rows(table, ids)?;
        let pos_table = tape.param(store, self.positions);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.gather_rows(pos_table, &positions)?;
        let mut x = tape.add(tok, pos)?;
        x = drop.apply(tape, x)?;
        for layer in &self.layers {
            x = layer.forward(tape, store, x, drop)?;
        }
        let first = tape.gather_rows(x, &[0])?;
        let w = tape.param(store, head.weight);
        let b = tape.param(store, head.bias);
        Ok(tape.affine(first, w, b)?)
    }

    pub fn logits(&self, tokens: &[String], head: &str, lead: Option<usize>) -> Result<Vec<f64>> {
        let ids = self.input_ids(tokens, lead)?;
        let mut tape = Tape::new();
        let v = self.logits_on(&self.store, &mut tape, &ids, head, &mut Dropout::off())?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Softmax of `logits / temperature`.
    pub fn classify_with_temperature(
        &self,
        tokens: &[String],
        head: &str,
        lead: Option<usize>,
        temperature: f64,
    ) -> Result<Classification> {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(ModelError::InvalidArgument(format!("temperature {temperature} must be positive")));
        }
        let logits: Vec<f64> = self.logits(tokens, head, lead)?.iter().map(|l| l / temperature).collect();
        let probs = softmax(&logits);
        Ok(Classification {
            argmax: argmax(&probs),
            probs,
        })
    }

    /// Distribution over the 10 types, in [`QuestionType::ALL`] order.
    pub fn classify_type(&self, tokens: &[String]) -> Result<Classification> {
        self.classify_with_temperature(tokens, TYPE_HEAD, None, 1.0)
    }

    pub fn predict_type(&self, tokens: &[String]) -> Result<(QuestionType, f64)> {
        let c = self.classify_type(tokens)?;
        Ok((QuestionType::ALL[c.argmax], c.confidence()))
    }

    /// The `n` most probable types, most probable first.
    pub fn top_types(&self, tokens: &[String], n: usize) -> Result<Vec<(QuestionType, f64)>> {
        let c = self.classify_type(tokens)?;
        let mut order: Vec<usize> = (0..c.probs.len()).collect();
        order.sort_by(|&a, &b| c.probs[b].total_cmp(&c.probs[a]).then(a.cmp(&b)));
        Ok(order
            .into_iter()
            .take(n)
            .map(|i| (QuestionType::ALL[i], c.probs[i]))
            .collect())
    }

    /// Learned exemplar choice: argmax of the type's selector head over the
    /// answer.
    pub fn select_exemplar_index(&self, answer: &[String], ty: QuestionType) -> Result<usize> {
        let c = self.classify_with_temperature(answer, &exemplar_head(ty), Some(Vocabulary::type_id(ty)), 1.0)?;
        Ok(c.argmax)
    }

    /// Mini-batch Adam on cross-entropy; returns the mean loss per step.
    pub fn train(&mut self, examples: &[ClassifierExample], config: &TrainConfig) -> Result<Vec<f64>> {
        config.validate()?;
        if examples.is_empty() {
            return Err(ModelError::MissingInput("no classifier examples".into()));
        }
        let encoded = examples
            .iter()
            .map(|e| {
                let head = self.head(&e.head)?;
                if e.label >= head.classes {
                    return Err(ModelError::InvalidArgument(format!(
                        "label {} out of range for head {} ({} classes)",
                        e.label, e.head, head.classes
                    )));
                }
                self.input_ids(&e.tokens, e.lead)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut adam = AdamState::new(&self.store, config.adam());
        let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut drop = Dropout::train(
            self.config.dropout,
            ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9)),
        );
        let sizes: Vec<usize> = encoded.iter().map(Vec::len).collect();
        let mut queue: Vec<Vec<usize>> = Vec::new();
        let mut losses = Vec::with_capacity(config.steps);
        for step in 1..=config.steps {
            if queue.is_empty() {
                let mut order: Vec<usize> = (0..examples.len()).collect();
                order.shuffle(&mut order_rng);
                queue = crate::train::pack_batches(&order, &sizes, config.token_budget);
                queue.reverse();
            }
            let batch = queue.pop().unwrap_or_default();
            let scale = 1.0 / batch.len() as f64;
            let mut grads = Gradients::default();
            let mut loss = 0.0;
            for &i in &batch {
                let mut tape = Tape::new();
                let logits = self.logits_on(&self.store, &mut tape, &encoded[i], &examples[i].head, &mut drop)?;
                let l = tape.cross_entropy(logits, &[Some(examples[i].label)], None)?;
                loss += scale * tape.value(l).item()?;
                grads.accumulate(&tape.backward(l)?, scale);
            }
            if !loss.is_finite() {
                return Err(ModelError::Diverged { step, loss });
            }
            if config.clip_norm > 0.0 {
                let norm = grads.param_norm();
                if norm > config.clip_norm {
                    grads.scale_params(config.clip_norm / norm);
                }
            }
            adam_step(&mut self.store, &grads, &mut adam, config.lr_at(step))?;
            losses.push(loss);
        }
        Ok(losses)
    }

    /// Fraction of examples whose argmax equals the label.
    pub fn accuracy(&self, examples: &[ClassifierExample]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0;
        for e in examples {
            let c = self.classify_with_temperature(&e.tokens, &e.head, e.lead, 1.0)?;
            correct += usize::from(c.argmax == e.label);
        }
        Ok(correct as f64 / examples.len() as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                kind: CheckpointKind::Classifier,
                config: self.config.clone(),
                vocab: self.vocab.clone(),
                meta: serde_json::json!({ "role": self.role, "heads": self.head_sizes() }),
            },
            store: self.store.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint, origin: &Path) -> Result<Self> {
        if ckpt.header.kind != CheckpointKind::Classifier {
            return Err(ModelError::checkpoint(origin, "not a classifier checkpoint"));
        }
        let meta = &ckpt.header.meta;
        let role: ClassifierRole = serde_json::from_value(meta["role"].clone())
            .map_err(|e| ModelError::checkpoint(origin, format!("role: {e}")))?;
        let sizes: Vec<(String, usize)> = serde_json::from_value(meta["heads"].clone())
            .map_err(|e| ModelError::checkpoint(origin, format!("heads: {e}")))?;
        let config = ckpt.header.config;
        config.validate()?;
        let store = ckpt.store;
        let layers = (0..config.encoder_layers)
            .map(|l| EncoderLayerParams::lookup(&store, &format!("encoder.{l}"), &config))
            .collect::<Result<_>>()?;
        let mut heads = BTreeMap::new();
        for (name, classes) in sizes {
            let weight = store.id(&format!("head.{name}.weight"))?;
            if store.get(weight).shape() != [config.d_model, classes] {
                return Err(ModelError::checkpoint(origin, format!("head {name} has the wrong shape")));
            }
            let bias = store.id(&format!("head.{name}.bias"))?;
            heads.insert(name, Head { weight, bias, classes });
        }
        Ok(SequenceClassifier {
            tokens: store.id("embed.tokens")?,
            positions: store.id("embed.positions")?,
            config,
            vocab: ckpt.header.vocab,
            role,
            store,
            layers,
            heads,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_checkpoint(Checkpoint::load(path)?, path)
    }
}

/// One classifier prediction over unlabeled text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypePrediction {
    pub text: Vec<String>,
    pub qtype: QuestionType,
    pub confidence: f64,
}

/// Keeps predictions whose confidence is strictly above `threshold`.
pub fn self_train_filter(predictions: Vec<TypePrediction>, threshold: f64) -> Vec<TypePrediction> {
    predictions
        .into_iter()
        .filter(|p| p.confidence > threshold)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Oracle,
    Learned,
}

/// Exemplar for a question of type `ty`. Oracle mode needs the question's
/// template and takes the inventory entry at minimum edit distance; learned
/// mode needs a selector and the answer tokens.
pub fn select_exemplar(
    inventory: &ExemplarInventory,
    ty: QuestionType,
    mode: SelectionMode,
    question_template: Option<&Template>,
    selector: Option<(&SequenceClassifier, &[String])>,
) -> Result<Template> {
    let list = inventory.get(ty);
    if list.is_empty() {
        return Err(ModelError::MissingInput(format!("no exemplars for type {}", ty.name())));
    }
    let index = match mode {
        SelectionMode::Oracle => {
            let t = question_template
                .ok_or_else(|| ModelError::MissingInput("oracle selection needs the question template".into()))?;
            inventory.nearest(ty, t)?.0
        }
        SelectionMode::Learned => {
            let (model, answer) =
                selector.ok_or_else(|| ModelError::MissingInput("learned selection needs a selector model".into()))?;
            model.select_exemplar_index(answer, ty)?
        }
    };
    list.get(index)
        .cloned()
        .ok_or_else(|| ModelError::InvalidArgument(format!("selector chose exemplar {index} of {}", list.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(c: f64) -> TypePrediction {
        TypePrediction {
            text: vec!["x".into()],
            qtype: QuestionType::Cause,
            confidence: c,
        }
    }

    #[test]
    fn filter_is_strict() {
        let kept = self_train_filter(vec![pred(0.95), pred(0.9), pred(0.2)], DEFAULT_CONFIDENCE_THRESHOLD);
        assert_eq!(kept, vec![pred(0.95)]);
        assert!(self_train_filter(vec![], 0.9).is_empty());
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, 2.0, -3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(argmax(&p), 1);
    }
}
