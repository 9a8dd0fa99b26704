use std::collections::BTreeSet;

use oqgen_core::corpus::QuestionType;
use oqgen_core::parse::ParsedDocument;
use oqgen_core::semgraph::{build_semantic_graph, default_pruned_relations, merge_nodes, SemanticGraph};
use oqgen_tensor::{glorot_uniform, GatLayerParams, ParamId, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::layers::{
    decoder_layer, decoder_self_block, gate_nodes, init_node_reps, joint_loss, predict_focus,
    run_gat, DecoderLayerParams, Dropout, EncoderLayerParams, FocusHeadParams, LossParts,
    FREQ_BITS,
};
use crate::vocab::{OutputKind, Vocabulary, BOS_ID, EOS_ID, SEP_ID};

/// Everything the generator conditions on for one question.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorInput {
    pub qtype: QuestionType,
    pub answer: ParsedDocument,
    /// Merged semantic graph of `answer`.
    pub graph: SemanticGraph,
    /// Extra encoder segments (exemplar, template), each preceded by a
    /// separator.
    pub segments: Vec<Vec<String>>,
    /// Words for the focus-word attention. `None` takes the tokens of nodes
    /// the model itself predicts as focus.
    pub focus_words: Option<Vec<String>>,
}

impl GeneratorInput {
    /// Builds the merged graph with the default pruned relations.
    pub fn new(qtype: QuestionType, answer: ParsedDocument, segments: Vec<Vec<String>>) -> Result<Self> {
        let raw = build_semantic_graph(&answer, &default_pruned_relations())?;
        let graph = merge_nodes(&raw, &answer);
        Ok(GeneratorInput {
            qtype,
            answer,
            graph,
            segments,
            focus_words: None,
        })
    }

    pub fn answer_tokens(&self) -> Vec<String> {
        self.answer.tokens().map(|t| t.text.clone()).collect()
    }

    /// Surface tokens of the given nodes in node order, deduplicated
    /// case-insensitively.
    pub fn node_words(&self, nodes: impl IntoIterator<Item = usize>) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for i in nodes {
            for r in &self.graph.nodes[i].token_refs {
                let t = &self.answer.token(r.sentence, r.token).text;
                if seen.insert(t.to_lowercase()) {
                    out.push(t.clone());
                }
            }
        }
        out
    }
}

/// Encoder ids plus the graph bookkeeping aligned to them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedInput {
    pub ids: Vec<usize>,
    pub answer_offset: usize,
    pub node_positions: Vec<Vec<usize>>,
    pub merge_counts: Vec<usize>,
    pub neighbors: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
struct GeneratorParams {
    tokens: ParamId,
    positions: ParamId,
    encoder: Vec<EncoderLayerParams>,
    gat: Vec<GatLayerParams>,
    focus: FocusHeadParams,
    decoder: Vec<DecoderLayerParams>,
    out_w: ParamId,
    out_b: ParamId,
}

impl GeneratorParams {
    fn register(store: &mut ParamStore, cfg: &ModelConfig, vocab_size: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.d_model;
        let tokens = store.insert("embed.tokens", glorot_uniform(vocab_size, d, rng))?;
        let positions = store.insert("embed.positions", glorot_uniform(cfg.max_positions, d, rng))?;
        let encoder = (0..cfg.encoder_layers)
            .map(|l| EncoderLayerParams::register(store, &format!("encoder.{l}"), cfg, rng))
            .collect::<Result<_>>()?;
        let gat = (0..cfg.gat_layers)
            .map(|l| {
                let in_w = if l == 0 { d + FREQ_BITS } else { d };
                Ok(GatLayerParams::register(store, &format!("gat.{l}"), in_w, d, rng)?)
            })
            .collect::<Result<_>>()?;
        let focus = FocusHeadParams::register(store, "focus", d, cfg.focus_hidden, rng)?;
        let decoder = (0..cfg.decoder_layers)
            .map(|l| DecoderLayerParams::register(store, &format!("decoder.{l}"), cfg, rng))
            .collect::<Result<_>>()?;
        let out_w = store.insert("output.weight", glorot_uniform(d, vocab_size, rng))?;
        let out_b = store.insert("output.bias", Tensor::zeros(1, vocab_size))?;
        Ok(GeneratorParams {
            tokens,
            positions,
            encoder,
            gat,
            focus,
            decoder,
            out_w,
            out_b,
        })
    }

    fn lookup(store: &ParamStore, cfg: &ModelConfig) -> Result<Self> {
        Ok(GeneratorParams {
            tokens: store.id("embed.tokens")?,
            positions: store.id("embed.positions")?,
            encoder: (0..cfg.encoder_layers)
                .map(|l| EncoderLayerParams::lookup(store, &format!("encoder.{l}"), cfg))
                .collect::<Result<_>>()?,
            gat: (0..cfg.gat_layers)
                .map(|l| Ok(GatLayerParams::lookup(store, &format!("gat.{l}"))?))
                .collect::<Result<_>>()?,
            focus: FocusHeadParams::lookup(store, "focus")?,
            decoder: (0..cfg.decoder_layers)
                .map(|l| DecoderLayerParams::lookup(store, &format!("decoder.{l}"), cfg))
                .collect::<Result<_>>()?,
            out_w: store.id("output.weight")?,
            out_b: store.id("output.bias")?,
        })
    }
}

/// Tape values from one full forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub h: Var,
    pub node_reps: Var,
    pub focus_probs: Var,
    pub gated: Var,
    pub logits: Var,
}

/// Encoder states, gated node states and focus memory for an input,
/// computed once and reused at every decoding step.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedInput {
    pub h: Tensor,
    pub gated: Tensor,
    pub focus_memory: Option<Tensor>,
    pub focus_probs: Vec<f64>,
    pub focus_words: Vec<String>,
}

/// Focus probability above which a node counts as predicted focus.
pub const FOCUS_THRESHOLD: f64 = 0.5;

impl PreparedInput {
    /// Nodes predicted as focus, in node order.
    pub fn focus_nodes(&self) -> Vec<usize> {
        (0..self.focus_probs.len())
            .filter(|&i| self.focus_probs[i] > FOCUS_THRESHOLD)
            .collect()
    }
}

/// The graph-augmented encoder-decoder question (or template) generator.
#[derive(Clone, Debug)]
pub struct Generator {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub output: OutputKind,
    pub store: ParamStore,
    params: GeneratorParams,
    output_mask: Vec<bool>,
}

impl PartialEq for Generator {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.vocab == other.vocab
            && self.output == other.output
            && self.store == other.store
    }
}

impl Generator {
    pub fn new(config: ModelConfig, vocab: Vocabulary, output: OutputKind, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let params = GeneratorParams::register(&mut store, &config, vocab.len(), &mut rng)?;
        let output_mask = vocab.output_mask(output);
        Ok(Generator {
            config,
            vocab,
            output,
            store,
            params,
            output_mask,
        })
    }

    /// Rebinds stored tensors to the layer structure implied by `config`.
    pub fn from_parts(config: ModelConfig, vocab: Vocabulary, output: OutputKind, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let params = GeneratorParams::lookup(&store, &config)?;
        let expected = [vocab.len(), config.d_model];
        if store.get(params.tokens).shape() != expected {
            return Err(ModelError::InvalidConfig(format!(
                "token embedding shape {:?} does not match vocabulary {:?}",
                store.get(params.tokens).shape(),
                expected
            )));
        }
        let output_mask = vocab.output_mask(output);
        Ok(Generator {
            config,
            vocab,
            output,
            store,
            params,
            output_mask,
        })
    }

    pub fn output_mask(&self) -> &[bool] {
        &self.output_mask
    }

    pub fn gat_layers(&self) -> &[GatLayerParams] {
        &self.params.gat
    }

    pub fn focus_head(&self) -> &FocusHeadParams {
        &self.params.focus
    }

    pub fn decoder_layers(&self) -> &[DecoderLayerParams] {
        &self.params.decoder
    }

    /// `[type] ([SEP] segment)* [SEP] answer`, with no separator when there
    /// are no extra segments.
    pub fn encode_input(&self, input: &GeneratorInput) -> Result<EncodedInput> {
        let mut ids = vec![Vocabulary::type_id(input.qtype)];
        for seg in &input.segments {
            ids.push(SEP_ID);
            ids.extend(self.vocab.encode(seg));
        }
        if !input.segments.is_empty() {
            ids.push(SEP_ID);
        }
        let answer_offset = ids.len();
        ids.extend(self.vocab.encode(&input.answer_tokens()));
        if ids.len() > self.config.max_positions {
            return Err(ModelError::InputTooLong {
                len: ids.len(),
                max: self.config.max_positions,
            });
        }
        let mut sentence_start = Vec::with_capacity(input.answer.sentences.len());
        let mut acc = answer_offset;
        for s in &input.answer.sentences {
            sentence_start.push(acc);
            acc += s.tokens.len();
        }
        let mut node_positions = Vec::with_capacity(input.graph.len());
        for node in &input.graph.nodes {
            let mut pos = Vec::with_capacity(node.token_refs.len());
            for r in &node.token_refs {
                let start = *sentence_start.get(r.sentence).ok_or_else(|| {
                    ModelError::InvalidArgument(format!("node {} refers to sentence {}", node.node_id, r.sentence))
                })?;
                pos.push(start + r.token);
            }
            node_positions.push(pos);
        }
        Ok(EncodedInput {
            ids,
            answer_offset,
            node_positions,
            merge_counts: input.graph.nodes.iter().map(|n| n.merge_count).collect(),
            neighbors: input.graph.neighbor_lists(),
        })
    }

    fn embed(&self, store: &ParamStore, tape: &mut Tape, ids: &[usize], drop: &mut Dropout) -> Result<Var> {
        if ids.len() > self.config.max_positions {
            return Err(ModelError::InputTooLong {
                len: ids.len(),
                max: self.config.max_positions,
            });
        }
        let table = tape.param(store, self.params.tokens);
        let tok = tape.gather_rows(table, ids)?;
        let pos_table = tape.param(store, self.params.positions);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.gather_rows(pos_table, &positions)?;
        let x = tape.add(tok, pos)?;
        drop.apply(tape, x)
    }

    /// Contextual states `H`, with `h_0` at the type token.
    pub fn encode(&self, store: &ParamStore, tape: &mut Tape, ids: &[usize], drop: &mut Dropout) -> Result<Var> {
        let mut x = self.embed(store, tape, ids, drop)?;
        for layer in &self.params.encoder {
            x = layer.forward(tape, store, x, drop)?;
        }
        Ok(x)
    }

    /// Node states after the GAT stack, focus probabilities and gated states.
    pub fn graph_states(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        h: Var,
        enc: &EncodedInput,
    ) -> Result<(Var, Var, Var)> {
        let v0 = init_node_reps(tape, h, &enc.node_positions, &enc.merge_counts)?;
        let v = run_gat(tape, store, v0, &enc.neighbors, &self.params.gat)?;
        let p = predict_focus(tape, store, v, &self.params.focus)?;
        let gated = gate_nodes(tape, v, p)?;
        Ok((v, p, gated))
    }

    fn focus_memory(&self, store: &ParamStore, tape: &mut Tape, words: &[String]) -> Result<Option<Var>> {
        if !self.config.focus_word_attention {
            return Ok(None);
        }
        if words.is_empty() {
            return Ok(Some(tape.constant(Tensor::zeros(0, self.config.d_model))?));
        }
        let table = tape.param(store, self.params.tokens);
        Ok(Some(tape.gather_rows(table, &self.vocab.encode(words))?))
    }

    /// Output logits for every position of `decoder_ids`.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_logits(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        decoder_ids: &[usize],
        h: Var,
        gated: Var,
        focus_memory: Option<Var>,
        drop: &mut Dropout,
    ) -> Result<Var> {
        let mut z = self.embed(store, tape, decoder_ids, drop)?;
        for layer in &self.params.decoder {
            let z_s = decoder_self_block(tape, store, layer, z, drop)?;
            z = decoder_layer(tape, store, layer, z_s, h, gated, focus_memory, drop)?;
        }
        let w = tape.param(store, self.params.out_w);
        let b = tape.param(store, self.params.out_b);
        Ok(tape.affine(z, w, b)?)
    }

    fn focus_words_for(&self, input: &GeneratorInput, probs: &[f64]) -> Vec<String> {
        match &input.focus_words {
            Some(w) => w.clone(),
            None => input.node_words(
                probs
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > FOCUS_THRESHOLD)
                    .map(|(i, _)| i),
            ),
        }
    }

    /// Teacher-forced forward pass: decoder input is `[BOS] target`.
    pub fn forward(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        input: &GeneratorInput,
        target: &[usize],
        drop: &mut Dropout,
    ) -> Result<ForwardVars> {
        let enc = self.encode_input(input)?;
        let h = self.encode(store, tape, &enc.ids, drop)?;
        let (node_reps, focus_probs, gated) = self.graph_states(store, tape, h, &enc)?;
        let probs: Vec<f64> = tape.value(focus_probs).data().to_vec();
        let words = self.focus_words_for(input, &probs);
        let memory = self.focus_memory(store, tape, &words)?;
        let mut dec = Vec::with_capacity(target.len() + 1);
        dec.push(BOS_ID);
        dec.extend_from_slice(target);
        let logits = self.decode_logits(store, tape, &dec, h, gated, memory, drop)?;
        Ok(ForwardVars {
            h,
            node_reps,
            focus_probs,
            gated,
            logits,
        })
    }

    /// Joint loss of one example against `store` (which may differ from
    /// `self.store`, for finite differences).
    #[allow(clippy::too_many_arguments)]
    pub fn loss_on(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        input: &GeneratorInput,
        focus_gold: &[bool],
        target: &[usize],
        bce_eps: f64,
        drop: &mut Dropout,
    ) -> Result<(LossParts, ForwardVars)> {
        let fwd = self.forward(store, tape, input, target, drop)?;
        let gold: Vec<f64> = focus_gold.iter().map(|&b| f64::from(u8::from(b))).collect();
        let mut targets: Vec<Option<usize>> = target.iter().map(|&t| Some(t)).collect();
        targets.push(Some(EOS_ID));
        let parts = joint_loss(
            tape,
            fwd.focus_probs,
            &gold,
            fwd.logits,
            &targets,
            Some(&self.output_mask),
            bce_eps,
        )?;
        Ok((parts, fwd))
    }

    /// Encoder, graph and focus computations for decoding.
    pub fn prepare(&self, input: &GeneratorInput) -> Result<PreparedInput> {
        let mut tape = Tape::new();
        let mut drop = Dropout::off();
        let enc = self.encode_input(input)?;
        let h = self.encode(&self.store, &mut tape, &enc.ids, &mut drop)?;
        let (_, p, gated) = self.graph_states(&self.store, &mut tape, h, &enc)?;
        let focus_probs = tape.value(p).data().to_vec();
        let focus_words = self.focus_words_for(input, &focus_probs);
        let focus_memory = self
            .focus_memory(&self.store, &mut tape, &focus_words)?
            .map(|v| tape.value(v).clone());
        Ok(PreparedInput {
            h: tape.value(h).clone(),
            gated: tape.value(gated).clone(),
            focus_memory,
            focus_probs,
            focus_words,
        })
    }

    /// Log-probabilities of the next token after `[BOS] generated`, with
    /// tokens outside the output vocabulary at `-inf`.
    pub fn next_log_probs(&self, prepared: &PreparedInput, generated: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut drop = Dropout::off();
        let h = tape.constant(prepared.h.clone())?;
        let gated = tape.constant(prepared.gated.clone())?;
        let memory = match &prepared.focus_memory {
            Some(m) => Some(tape.constant(m.clone())?),
            None => None,
        };
        let mut dec = Vec::with_capacity(generated.len() + 1);
        dec.push(BOS_ID);
        dec.extend_from_slice(generated);
        let logits = self.decode_logits(&self.store, &mut tape, &dec, h, gated, memory, &mut drop)?;
        let last = tape.value(logits).row(dec.len() - 1).to_vec();
        Ok(masked_log_softmax(&last, &self.output_mask))
    }

    /// Binds a prepared input for step-wise decoding.
    pub fn bind<'a>(&'a self, prepared: &'a PreparedInput) -> BoundGenerator<'a> {
        BoundGenerator {
            model: self,
            prepared,
        }
    }
}

pub(crate) fn masked_log_softmax(logits: &[f64], allowed: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let log_z = max
        + logits
            .iter()
            .zip(allowed)
            .filter(|(_, &a)| a)
            .map(|(&l, _)| (l - max).exp())
            .sum::<f64>()
            .ln();
    logits
        .iter()
        .zip(allowed)
        .map(|(&l, &a)| if a { l - log_z } else { f64::NEG_INFINITY })
        .collect()
}

/// Anything that scores the next token given the tokens generated so far.
pub trait StepModel {
    fn vocab_size(&self) -> usize;
    fn eos(&self) -> usize {
        EOS_ID
    }
    /// Longest output the model can score (decoders cap their limit here).
    fn max_len(&self) -> usize {
        usize::MAX
    }
    fn log_probs(&self, generated: &[usize]) -> Result<Vec<f64>>;
}

pub struct BoundGenerator<'a> {
    model: &'a Generator,
    prepared: &'a PreparedInput,
}

impl StepModel for BoundGenerator<'_> {
    fn vocab_size(&self) -> usize {
        self.model.vocab.len()
    }

    fn max_len(&self) -> usize {
        // the decoder input is [BOS] plus the generated tokens
        self.model.config.max_positions - 1
    }

    fn log_probs(&self, generated: &[usize]) -> Result<Vec<f64>> {
        self.model.next_log_probs(self.prepared, generated)
    }
}
