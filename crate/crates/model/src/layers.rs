//! Transformer blocks and the graph path (node initialization, GAT stack,
//! focus head, gating), written against an explicit parameter store so the
//! same code serves training, decoding and finite-difference checks.

use oqgen_core::semgraph::frequency_bits;
use oqgen_tensor::{
    gat_layer, glorot_uniform, multi_head_attention, AttentionParams, FeedForwardParams,
    GatLayerParams, LayerNormParams, Mask, ParamId, ParamStore, Tape, Tensor, Var,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};

/// Width of the merge-frequency feature appended to node representations.
pub const FREQ_BITS: usize = 4;

/// Inverted dropout; a no-op unless built with [`Dropout::train`].
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, rng: ChaCha8Rng) -> Self {
        Dropout {
            rate,
            rng: Some(rng),
        }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_mut().filter(|_| self.rate > 0.0) else {
            return Ok(x);
        };
        let [r, c] = tape.value(x).shape();
        let keep = 1.0 - self.rate;
        let data = (0..r * c)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = tape.constant(Tensor::from_vec(r, c, data)?)?;
        Ok(tape.mul(x, mask)?)
    }
}

/// `LN(x + drop(sublayer))`.
fn residual(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    sub: Var,
    ln: &LayerNormParams,
    drop: &mut Dropout,
) -> Result<Var> {
    let sub = drop.apply(tape, sub)?;
    let sum = tape.add(x, sub)?;
    Ok(ln.forward(tape, store, sum)?)
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderLayerParams {
    pub self_attn: AttentionParams,
    pub ln_attn: LayerNormParams,
    pub ffn: FeedForwardParams,
    pub ln_ffn: LayerNormParams,
}

impl EncoderLayerParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.d_model;
        Ok(EncoderLayerParams {
            self_attn: AttentionParams::register(store, &format!("{prefix}.self_attn"), d, cfg.heads, rng)?,
            ln_attn: LayerNormParams::register(store, &format!("{prefix}.ln_attn"), d)?,
            ffn: FeedForwardParams::register(store, &format!("{prefix}.ffn"), d, cfg.ffn_width, rng)?,
            ln_ffn: LayerNormParams::register(store, &format!("{prefix}.ln_ffn"), d)?,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        Ok(EncoderLayerParams {
            self_attn: AttentionParams::lookup(store, &format!("{prefix}.self_attn"), cfg.heads)?,
            ln_attn: LayerNormParams::lookup(store, &format!("{prefix}.ln_attn"))?,
            ffn: FeedForwardParams::lookup(store, &format!("{prefix}.ffn"))?,
            ln_ffn: LayerNormParams::lookup(store, &format!("{prefix}.ln_ffn"))?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        drop: &mut Dropout,
    ) -> Result<Var> {
        let a = multi_head_attention(tape, store, x, x, &self.self_attn, None)?;
        let h = residual(tape, store, x, a, &self.ln_attn, drop)?;
        let f = self.ffn.forward(tape, store, h)?;
        residual(tape, store, h, f, &self.ln_ffn, drop)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionBlock {
    pub attn: AttentionParams,
    pub ln: LayerNormParams,
}

impl AttentionBlock {
    fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(AttentionBlock {
            attn: AttentionParams::register(store, prefix, cfg.d_model, cfg.heads, rng)?,
            ln: LayerNormParams::register(store, &format!("{prefix}.ln"), cfg.d_model)?,
        })
    }

    fn lookup(store: &ParamStore, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        Ok(AttentionBlock {
            attn: AttentionParams::lookup(store, prefix, cfg.heads)?,
            ln: LayerNormParams::lookup(store, &format!("{prefix}.ln"))?,
        })
    }

    /// `LN(z + Attn(z, memory))`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        memory: Var,
        drop: &mut Dropout,
    ) -> Result<Var> {
        let a = multi_head_attention(tape, store, z, memory, &self.attn, None)?;
        residual(tape, store, z, a, &self.ln, drop)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderLayerParams {
    pub self_attn: AttentionBlock,
    pub text: AttentionBlock,
    pub node: AttentionBlock,
    pub focus_words: Option<AttentionBlock>,
    pub ffn: FeedForwardParams,
    pub ln_ffn: LayerNormParams,
}

impl DecoderLayerParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let self_attn = AttentionBlock::register(store, &format!("{prefix}.self_attn"), cfg, rng)?;
        let text = AttentionBlock::register(store, &format!("{prefix}.text_attn"), cfg, rng)?;
        let node = AttentionBlock::register(store, &format!("{prefix}.node_attn"), cfg, rng)?;
        let focus_words = if cfg.focus_word_attention {
            Some(AttentionBlock::register(store, &format!("{prefix}.focus_attn"), cfg, rng)?)
        } else {
            None
        };
        Ok(DecoderLayerParams {
            self_attn,
            text,
            node,
            focus_words,
            ffn: FeedForwardParams::register(store, &format!("{prefix}.ffn"), cfg.d_model, cfg.ffn_width, rng)?,
            ln_ffn: LayerNormParams::register(store, &format!("{prefix}.ln_ffn"), cfg.d_model)?,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        Ok(DecoderLayerParams {
            self_attn: AttentionBlock::lookup(store, &format!("{prefix}.self_attn"), cfg)?,
            text: AttentionBlock::lookup(store, &format!("{prefix}.text_attn"), cfg)?,
            node: AttentionBlock::lookup(store, &format!("{prefix}.node_attn"), cfg)?,
            focus_words: if cfg.focus_word_attention {
                Some(AttentionBlock::lookup(store, &format!("{prefix}.focus_attn"), cfg)?)
            } else {
                None
            },
            ffn: FeedForwardParams::lookup(store, &format!("{prefix}.ffn"))?,
            ln_ffn: LayerNormParams::lookup(store, &format!("{prefix}.ln_ffn"))?,
        })
    }
}

/// Causal self-attention sublayer producing `z_s = LN(z + SelfAttn(z))`.
pub fn decoder_self_block(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &DecoderLayerParams,
    z: Var,
    drop: &mut Dropout,
) -> Result<Var> {
    let n = tape.value(z).rows();
    let a = multi_head_attention(tape, store, z, z, &layer.self_attn.attn, Some(&Mask::causal(n)))?;
    residual(tape, store, z, a, &layer.self_attn.ln, drop)
}

/// Text cross-attention, node cross-attention, then the feed-forward block:
///
/// ```text
/// z_e = LN(z_s + Attn(z_s, H))
/// z_v = LN(z_e + Attn(z_e, V'))
/// z'  = LN(z_v + FFN(z_v))
/// ```
///
/// With focus-word attention configured, `LN(z_v + Attn(z_v, F))` is
/// inserted before the feed-forward block.
#[allow(clippy::too_many_arguments)]
pub fn decoder_layer(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &DecoderLayerParams,
    z_s: Var,
    h: Var,
    v_gated: Var,
    focus_memory: Option<Var>,
    drop: &mut Dropout,
) -> Result<Var> {
    let z_e = layer.text.forward(tape, store, z_s, h, drop)?;
    let mut z_v = layer.node.forward(tape, store, z_e, v_gated, drop)?;
    if let Some(fw) = &layer.focus_words {
        let memory = focus_memory.ok_or_else(|| {
            ModelError::MissingInput("focus-word memory for a focus-attention decoder".into())
        })?;
        z_v = fw.forward(tape, store, z_v, memory, drop)?;
    }
    let f = layer.ffn.forward(tape, store, z_v)?;
    residual(tape, store, z_v, f, &layer.ln_ffn, drop)
}

#[derive(Clone, Copy, Debug)]
pub struct FocusHeadParams {
    /// `in x hidden`, applied first.
    pub w2: ParamId,
    /// `hidden x 1`.
    pub w1: ParamId,
}

impl FocusHeadParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(FocusHeadParams {
            w2: store.insert(format!("{prefix}.w2"), glorot_uniform(width, hidden, rng))?,
            w1: store.insert(format!("{prefix}.w1"), glorot_uniform(hidden, 1, rng))?,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(FocusHeadParams {
            w2: store.id(&format!("{prefix}.w2"))?,
            w1: store.id(&format!("{prefix}.w1"))?,
        })
    }
}

/// Mean of each node's token states, followed by its four merge-frequency
/// bits: an `n x (d + 4)` matrix.
pub fn init_node_reps(
    tape: &mut Tape,
    h: Var,
    node_positions: &[Vec<usize>],
    merge_counts: &[usize],
) -> Result<Var> {
    if node_positions.len() != merge_counts.len() {
        return Err(ModelError::InvalidArgument(format!(
            "{} node position lists for {} merge counts",
            node_positions.len(),
            merge_counts.len()
        )));
    }
    let seq = tape.value(h).rows();
    let n = node_positions.len();
    let mut avg = Tensor::zeros(n, seq);
    let mut bits = Tensor::zeros(n, FREQ_BITS);
    for (i, positions) in node_positions.iter().enumerate() {
        if positions.is_empty() {
            return Err(ModelError::InvalidArgument(format!("node {i} has no tokens")));
        }
        for &p in positions {
            if p >= seq {
                return Err(ModelError::InvalidArgument(format!(
                    "node {i} refers to position {p} outside {seq} encoder states"
                )));
            }
            let w = avg.get(i, p) + 1.0 / positions.len() as f64;
            avg.set(i, p, w);
        }
        for (k, b) in frequency_bits(merge_counts[i])?.iter().enumerate() {
            bits.set(i, k, f64::from(*b));
        }
    }
    let avg = tape.constant(avg)?;
    let mean = tape.matmul(avg, h)?;
    let bits = tape.constant(bits)?;
    Ok(tape.concat_cols(&[mean, bits])?)
}

/// `v^(L)` from `v^(0)` through the stacked graph-attention layers.
pub fn run_gat(
    tape: &mut Tape,
    store: &ParamStore,
    v0: Var,
    neighbors: &[Vec<usize>],
    layers: &[GatLayerParams],
) -> Result<Var> {
    if layers.is_empty() {
        return Err(ModelError::InvalidConfig("no graph-attention layers".into()));
    }
    let mut v = v0;
    for layer in layers {
        v = gat_layer(tape, store, v, neighbors, layer)?;
    }
    Ok(v)
}

/// `p_i = σ(W₁ tanh(W₂ v_i))` as an `n x 1` column.
pub fn predict_focus(
    tape: &mut Tape,
    store: &ParamStore,
    v: Var,
    head: &FocusHeadParams,
) -> Result<Var> {
    let w2 = tape.param(store, head.w2);
    let w1 = tape.param(store, head.w1);
    let hidden = tape.matmul(v, w2)?;
    let hidden = tape.tanh(hidden)?;
    let logit = tape.matmul(hidden, w1)?;
    Ok(tape.sigmoid(logit)?)
}

/// `v'_i = p_i v_i`.
pub fn gate_nodes(tape: &mut Tape, v: Var, p: Var) -> Result<Var> {
    let (n, m) = (tape.value(v).rows(), tape.value(p).rows());
    if n != m || tape.value(p).cols() != 1 {
        return Err(ModelError::InvalidArgument(format!(
            "{m} focus probabilities for {n} nodes"
        )));
    }
    Ok(tape.mul_col(v, p)?)
}

/// Summed focus and generation losses and their parts.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub focus: Var,
    pub generation: Var,
}

/// Mean node binary cross-entropy plus mean token cross-entropy over the
/// positions with a target, each with weight one.
pub fn joint_loss(
    tape: &mut Tape,
    focus_probs: Var,
    focus_gold: &[f64],
    logits: Var,
    targets: &[Option<usize>],
    allowed: Option<&[bool]>,
    bce_eps: f64,
) -> Result<LossParts> {
    let focus = tape.binary_cross_entropy(focus_probs, focus_gold, bce_eps)?;
    let generation = tape.cross_entropy(logits, targets, allowed)?;
    let total = tape.add(focus, generation)?;
    Ok(LossParts {
        total,
        focus,
        generation,
    })
}
