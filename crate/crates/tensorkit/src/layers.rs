//! Parameterized layers built from tape primitives.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::params::{glorot_uniform, ParamId, ParamStore};
use crate::tape::{Mask, Tape, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const GAT_LEAKY_SLOPE: f64 = 0.2;

fn register_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<(ParamId, ParamId)> {
    let w = store.insert(format!("{prefix}.weight"), glorot_uniform(fan_in, fan_out, rng))?;
    let b = store.insert(format!("{prefix}.bias"), Tensor::zeros(1, fan_out))?;
    Ok((w, b))
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn register(store: &mut ParamStore, prefix: &str, width: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gain: store.insert(format!("{prefix}.gain"), Tensor::filled(1, width, 1.0))?,
            bias: store.insert(format!("{prefix}.bias"), Tensor::zeros(1, width))?,
            eps: LAYER_NORM_EPS,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(LayerNormParams {
            gain: store.id(&format!("{prefix}.gain"))?,
            bias: store.id(&format!("{prefix}.bias"))?,
            eps: LAYER_NORM_EPS,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, self.eps)
    }
}

/// Multi-head scaled dot-product attention weights.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub heads: usize,
    pub width: usize,
}

impl AttentionParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(TensorError::Invalid(format!(
                "width {width} is not divisible by {heads} heads"
            )));
        }
        let (wq, bq) = register_linear(store, &format!("{prefix}.query"), width, width, rng)?;
        let (wk, bk) = register_linear(store, &format!("{prefix}.key"), width, width, rng)?;
        let (wv, bv) = register_linear(store, &format!("{prefix}.value"), width, width, rng)?;
        let (wo, bo) = register_linear(store, &format!("{prefix}.output"), width, width, rng)?;
        Ok(AttentionParams {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            heads,
            width,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str, heads: usize) -> Result<Self> {
        let id = |s: &str| store.id(&format!("{prefix}.{s}"));
        let wq = id("query.weight")?;
        let width = store.get(wq).rows();
        Ok(AttentionParams {
            wq,
            bq: id("query.bias")?,
            wk: id("key.weight")?,
            bk: id("key.bias")?,
            wv: id("value.weight")?,
            bv: id("value.bias")?,
            wo: id("output.weight")?,
            bo: id("output.bias")?,
            heads,
            width,
        })
    }
}

/// `Attn(queries_from, keys_values_from)`: per-head softmax(QKᵀ/√(d/h))V,
/// concatenated and projected. Masked-out positions act as -inf; a query
/// row with every position masked (or no keys at all) gets a zero context
/// vector before the output projection.
pub fn multi_head_attention(
    tape: &mut Tape,
    store: &ParamStore,
    queries_from: Var,
    keys_values_from: Var,
    params: &AttentionParams,
    mask: Option<&Mask>,
) -> Result<Var> {
    let d = params.width;
    let [nq, wq] = tape.value(queries_from).shape();
    let [nk, wk] = tape.value(keys_values_from).shape();
    if wq != d || wk != d {
        return Err(TensorError::ShapeMismatch {
            op: "multi_head_attention",
            left: [nq, wq],
            right: [nk, wk],
        });
    }
    if let Some(m) = mask {
        if m.shape() != [nq, nk] {
            return Err(TensorError::ShapeMismatch {
                op: "attention mask",
                left: [nq, nk],
                right: m.shape(),
            });
        }
    }
    let wo = tape.param(store, params.wo);
    let bo = tape.param(store, params.bo);
    if nk == 0 {
        let zero = tape.constant(Tensor::zeros(nq, d))?;
        return tape.affine(zero, wo, bo);
    }

    let (w, b) = (tape.param(store, params.wq), tape.param(store, params.bq));
    let q = tape.affine(queries_from, w, b)?;
    let (w, b) = (tape.param(store, params.wk), tape.param(store, params.bk));
    let k = tape.affine(keys_values_from, w, b)?;
    let (w, b) = (tape.param(store, params.wv), tape.param(store, params.bv));
    let v = tape.affine(keys_values_from, w, b)?;

    let head_dim = d / params.heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut contexts = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale)?;
        let weights = tape.masked_softmax_rows(scores, mask)?;
        contexts.push(tape.matmul(weights, vh)?);
    }
    let context = if contexts.len() == 1 {
        contexts[0]
    } else {
        tape.concat_cols(&contexts)?
    };
    tape.affine(context, wo, bo)
}

/// Position-wise two-layer feed-forward block with GELU.
#[derive(Clone, Copy, Debug)]
pub struct FeedForwardParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForwardParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (w1, b1) = register_linear(store, &format!("{prefix}.in"), width, hidden, rng)?;
        let (w2, b2) = register_linear(store, &format!("{prefix}.out"), hidden, width, rng)?;
        Ok(FeedForwardParams { w1, b1, w2, b2 })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let id = |s: &str| store.id(&format!("{prefix}.{s}"));
        Ok(FeedForwardParams {
            w1: id("in.weight")?,
            b1: id("in.bias")?,
            w2: id("out.weight")?,
            b2: id("out.bias")?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(store, self.w1), tape.param(store, self.b1));
        let h = tape.affine(x, w, b)?;
        let h = tape.gelu(h)?;
        let (w, b) = (tape.param(store, self.w2), tape.param(store, self.b2));
        tape.affine(h, w, b)
    }
}

/// One single-head graph attention layer.
#[derive(Clone, Copy, Debug)]
pub struct GatLayerParams {
    /// `in_width x out_width` projection.
    pub weight: ParamId,
    /// `2 * out_width x 1` scoring vector applied to `[W v_i ‖ W v_j]`.
    pub attn: ParamId,
    pub leaky_slope: f64,
}

impl GatLayerParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_width: usize,
        out_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(GatLayerParams {
            weight: store.insert(format!("{prefix}.weight"), glorot_uniform(in_width, out_width, rng))?,
            attn: store.insert(format!("{prefix}.attn"), glorot_uniform(2 * out_width, 1, rng))?,
            leaky_slope: GAT_LEAKY_SLOPE,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(GatLayerParams {
            weight: store.id(&format!("{prefix}.weight"))?,
            attn: store.id(&format!("{prefix}.attn"))?,
            leaky_slope: GAT_LEAKY_SLOPE,
        })
    }
}

/// `v_i' = Σ_{j ∈ N_i} a_ij W v_j` with
/// `a_ij = softmax_j LeakyReLU(aᵀ[W v_i ‖ W v_j])` over the neighbor set.
pub fn gat_layer(
    tape: &mut Tape,
    store: &ParamStore,
    node_reps: Var,
    neighbors: &[Vec<usize>],
    params: &GatLayerParams,
) -> Result<Var> {
    gat_layer_with_attention(tape, store, node_reps, neighbors, params).map(|(out, _)| out)
}

/// [`gat_layer`] that also returns the `n x n` attention matrix.
pub fn gat_layer_with_attention(
    tape: &mut Tape,
    store: &ParamStore,
    node_reps: Var,
    neighbors: &[Vec<usize>],
    params: &GatLayerParams,
) -> Result<(Var, Var)> {
    let n = tape.value(node_reps).rows();
    if neighbors.len() != n {
        return Err(TensorError::Invalid(format!(
            "{} neighbor lists for {n} nodes",
            neighbors.len()
        )));
    }
    if let Some(i) = neighbors.iter().position(Vec::is_empty) {
        return Err(TensorError::EmptyNeighborhood(i));
    }
    let w = tape.param(store, params.weight);
    let a = tape.param(store, params.attn);
    let out_width = store.get(params.weight).cols();
    if store.get(params.attn).shape() != [2 * out_width, 1] {
        return Err(TensorError::ShapeMismatch {
            op: "gat attention vector",
            left: [2 * out_width, 1],
            right: store.get(params.attn).shape(),
        });
    }

    let z = tape.matmul(node_reps, w)?;
    let a_self = tape.slice_rows_of_param(a, 0, out_width)?;
    let a_neigh = tape.slice_rows_of_param(a, out_width, 2 * out_width)?;
    let s_self = tape.matmul(z, a_self)?; // n x 1
    let s_neigh = tape.matmul(z, a_neigh)?; // n x 1
    let ones_row = tape.constant(Tensor::filled(1, n, 1.0))?;
    let ones_col = tape.constant(Tensor::filled(n, 1, 1.0))?;
    let left = tape.matmul(s_self, ones_row)?; // e_ij gets s_self[i]
    let s_neigh_t = tape.transpose(s_neigh)?;
    let right = tape.matmul(ones_col, s_neigh_t)?; // e_ij gets s_neigh[j]
    let e = tape.add(left, right)?;
    let e = tape.leaky_relu(e, params.leaky_slope)?;
    let mask = Mask::from_neighbors(neighbors)?;
    let alpha = tape.masked_softmax_rows(e, Some(&mask))?;
    let out = tape.matmul(alpha, z)?;
    Ok((out, alpha))
}

impl Tape {
    /// Rows `start..end` of a column vector, via transpose and column slice.
    fn slice_rows_of_param(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.transpose(a)?;
        let s = self.slice_cols(t, start, end)?;
        self.transpose(s)
    }
}
