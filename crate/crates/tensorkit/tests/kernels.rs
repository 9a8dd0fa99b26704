// Oracles index explicitly to mirror the textbook formulas.
#![allow(clippy::needless_range_loop)]

use oqgen_tensor::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

fn softmax_oracle(xs: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Projects every output onto fixed random weights so gradients are non-trivial.
fn probe_loss(tape: &mut Tape, out: Var, probe: &Tensor) -> Var {
    let p = tape.constant(probe.clone()).unwrap();
    let prod = tape.mul(out, p).unwrap();
    tape.sum(prod).unwrap()
}

fn assert_gradients_match<F>(store: &ParamStore, mut loss_fn: F)
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store).unwrap();
    let grads = tape.backward(loss).unwrap();
    let numeric = finite_diff_gradient(
        |s| {
            let mut t = Tape::new();
            let l = loss_fn(&mut t, s)?;
            t.value(l).item()
        },
        store,
        1e-5,
    )
    .unwrap();
    for (id, name, _) in store.iter() {
        let analytic = grads.param_or_zeros(store, id);
        for (k, (&a, &n)) in analytic.data().iter().zip(numeric[id.0].data()).enumerate() {
            let err = relative_error(a, n, 1e-6);
            assert!(err < 1e-4, "{name}[{k}]: analytic {a} numeric {n} rel {err}");
        }
    }
}

#[test]
fn affine_identity_and_zero_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(3, 4, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone()).unwrap();
    let w = tape.constant(Tensor::identity(4)).unwrap();
    let b = tape.constant(Tensor::zeros(1, 4)).unwrap();
    let y = tape.affine(xv, w, b).unwrap();
    assert_eq!(tape.value(y), &x);

    let bias = random(1, 4, &mut rng);
    let z = tape.constant(Tensor::zeros(3, 4)).unwrap();
    let w = tape.constant(random(4, 4, &mut rng)).unwrap();
    let b = tape.constant(bias.clone()).unwrap();
    let y = tape.affine(z, w, b).unwrap();
    for r in 0..3 {
        assert_eq!(tape.value(y).row(r), bias.data());
    }
}

#[test]
fn affine_matches_naive_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(3, 4, &mut rng);
    let w = random(4, 5, &mut rng);
    let b = random(1, 5, &mut rng);
    let mut expected = naive_matmul(&x, &w);
    for r in 0..3 {
        for c in 0..5 {
            expected.set(r, c, expected.get(r, c) + b.get(0, c));
        }
    }
    let mut tape = Tape::new();
    let (xv, wv, bv) = (
        tape.leaf(x).unwrap(),
        tape.leaf(w).unwrap(),
        tape.leaf(b).unwrap(),
    );
    let y = tape.affine(xv, wv, bv).unwrap();
    assert!(tape.value(y).max_abs_diff(&expected) < 1e-12);
}

#[test]
fn affine_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(2, 3)).unwrap();
    let w = tape.leaf(Tensor::zeros(4, 2)).unwrap();
    let b = tape.leaf(Tensor::zeros(1, 2)).unwrap();
    let err = tape.affine(x, w, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
}

#[test]
fn softmax_cases() {
    let mut tape = Tape::new();
    let u = tape.leaf(Tensor::filled(1, 4, 0.3)).unwrap();
    let s = tape.softmax_rows(u).unwrap();
    for &v in tape.value(s).data() {
        assert!((v - 0.25).abs() < 1e-15);
    }

    let d = tape.leaf(Tensor::row_vector(vec![1e4, 0.0, 0.0])).unwrap();
    let s = tape.softmax_rows(d).unwrap();
    assert!((tape.value(s).get(0, 0) - 1.0).abs() < 1e-12);
    assert!(tape.value(s).get(0, 1) < 1e-300);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(1, 7, &mut rng);
    let expected = softmax_oracle(x.data());
    let xv = tape.leaf(x).unwrap();
    let s = tape.softmax_rows(xv).unwrap();
    for (a, b) in tape.value(s).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn layer_norm_cases() {
    let mut tape = Tape::new();
    let ones = tape.constant(Tensor::filled(1, 5, 1.0)).unwrap();
    let zeros = tape.constant(Tensor::zeros(1, 5)).unwrap();
    let c = tape.leaf(Tensor::filled(1, 5, 2.5)).unwrap();
    let y = tape.layer_norm(c, ones, zeros, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bias = random(1, 5, &mut rng);
    let x = tape.leaf(random(2, 5, &mut rng)).unwrap();
    let b = tape.constant(bias.clone()).unwrap();
    let y = tape.layer_norm(x, zeros, b, 1e-5).unwrap();
    for r in 0..2 {
        assert_eq!(tape.value(y).row(r), bias.data());
    }

    let x = tape.leaf(random(1, 16, &mut rng)).unwrap();
    let (g16, b16) = (ones_n(&mut tape, 16), zeros_n(&mut tape, 16));
    let y = tape.layer_norm(x, g16, b16, 0.0).unwrap();
    let row = tape.value(y).row(0);
    let mean = row.iter().sum::<f64>() / 16.0;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
    assert!(mean.abs() < 1e-10);
    assert!((var - 1.0).abs() < 1e-6);

    let bad = tape.constant(Tensor::zeros(1, 3)).unwrap();
    assert!(tape.layer_norm(x, bad, bad, 1e-5).is_err());
}

fn ones_n(tape: &mut Tape, n: usize) -> Var {
    tape.constant(Tensor::filled(1, n, 1.0)).unwrap()
}

fn zeros_n(tape: &mut Tape, n: usize) -> Var {
    tape.constant(Tensor::zeros(1, n)).unwrap()
}

/// Unbatched attention: loops over heads, queries and keys explicitly.
fn attention_oracle(store: &ParamStore, p: &AttentionParams, xq: &Tensor, xkv: &Tensor, mask: Option<&Mask>) -> Tensor {
    let proj = |x: &Tensor, w: ParamId, b: ParamId| {
        let mut out = naive_matmul(x, store.get(w));
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out.set(r, c, out.get(r, c) + store.get(b).get(0, c));
            }
        }
        out
    };
    let q = proj(xq, p.wq, p.bq);
    let k = proj(xkv, p.wk, p.bk);
    let v = proj(xkv, p.wv, p.bv);
    let hd = p.width / p.heads;
    let mut ctx = Tensor::zeros(xq.rows(), p.width);
    for h in 0..p.heads {
        for i in 0..xq.rows() {
            let mut scores = Vec::new();
            let mut cols = Vec::new();
            for j in 0..xkv.rows() {
                if mask.is_some_and(|m| !m.is_allowed(i, j)) {
                    continue;
                }
                let s: f64 = (0..hd).map(|c| q.get(i, h * hd + c) * k.get(j, h * hd + c)).sum();
                scores.push(s / (hd as f64).sqrt());
                cols.push(j);
            }
            if cols.is_empty() {
                continue;
            }
            let w = softmax_oracle(&scores);
            for c in 0..hd {
                let val: f64 = cols.iter().zip(&w).map(|(&j, a)| a * v.get(j, h * hd + c)).sum();
                ctx.set(i, h * hd + c, val);
            }
        }
    }
    proj(&ctx, p.wo, p.bo)
}

#[test]
fn attention_single_key_returns_projected_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let p = AttentionParams::register(&mut store, "attn", 4, 2, &mut rng).unwrap();
    let kv = random(1, 4, &mut rng);
    let expected = {
        let v = naive_matmul(&kv, store.get(p.wv));
        naive_matmul(&v, store.get(p.wo))
    };
    for seed in 0..3 {
        let mut r2 = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut tape = Tape::new();
        let q = tape.constant(random(3, 4, &mut r2)).unwrap();
        let k = tape.constant(kv.clone()).unwrap();
        let out = multi_head_attention(&mut tape, &store, q, k, &p, None).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                assert!((tape.value(out).get(r, c) - expected.get(0, c)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn attention_all_masked_row_is_zero_context() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let p = AttentionParams::register(&mut store, "attn", 4, 2, &mut rng).unwrap();
    store.get_mut(p.bo).data_mut().copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
    let mut tape = Tape::new();
    let q = tape.constant(random(2, 4, &mut rng)).unwrap();
    let k = tape.constant(random(3, 4, &mut rng)).unwrap();
    let mask = Mask::new(2, 3, vec![false, false, false, true, true, false]).unwrap();
    let out = multi_head_attention(&mut tape, &store, q, k, &p, Some(&mask)).unwrap();
    assert_eq!(tape.value(out).row(0), &[0.1, 0.2, 0.3, 0.4]);
    assert!(tape.value(out).is_finite());

    let bad = Mask::all(3, 3);
    assert!(multi_head_attention(&mut tape, &store, q, k, &p, Some(&bad)).is_err());
}

#[test]
fn attention_matches_per_head_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let p = AttentionParams::register(&mut store, "attn", 6, 2, &mut rng).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        let [r, c] = store.get(id).shape();
        *store.get_mut(id) = random(r, c, &mut rng);
    }
    let xq = random(4, 6, &mut rng);
    let xkv = random(5, 6, &mut rng);
    let mask = Mask::new(4, 5, (0..20).map(|k| k % 3 != 1).collect()).unwrap();
    for m in [None, Some(&mask)] {
        let expected = attention_oracle(&store, &p, &xq, &xkv, m);
        let mut tape = Tape::new();
        let q = tape.constant(xq.clone()).unwrap();
        let k = tape.constant(xkv.clone()).unwrap();
        let out = multi_head_attention(&mut tape, &store, q, k, &p, m).unwrap();
        assert!(tape.value(out).max_abs_diff(&expected) < 1e-10);
    }
}

/// Dense GAT reference: full n x n score matrix with -inf outside the neighborhoods.
fn gat_oracle(x: &Tensor, neighbors: &[Vec<usize>], w: &Tensor, a: &Tensor) -> Tensor {
    let z = naive_matmul(x, w);
    let n = x.rows();
    let f = w.cols();
    let mut out = Tensor::zeros(n, f);
    for i in 0..n {
        let mut e = vec![f64::NEG_INFINITY; n];
        for &j in &neighbors[i] {
            let mut s = 0.0;
            for c in 0..f {
                s += a.get(c, 0) * z.get(i, c) + a.get(f + c, 0) * z.get(j, c);
            }
            e[j] = if s > 0.0 { s } else { 0.2 * s };
        }
        let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = e.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for j in 0..n {
            let alpha = exps[j] / total;
            for c in 0..f {
                out.set(i, c, out.get(i, c) + alpha * z.get(j, c));
            }
        }
    }
    out
}

#[test]
fn gat_single_self_looped_node_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let p = GatLayerParams::register(&mut store, "gat", 3, 3, &mut rng).unwrap();
    *store.get_mut(p.weight) = Tensor::identity(3);
    let x = random(1, 3, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone()).unwrap();
    let out = gat_layer(&mut tape, &store, xv, &[vec![0]], &p).unwrap();
    assert!(tape.value(out).max_abs_diff(&x) < 1e-15);
}

#[test]
fn gat_symmetric_pair_attends_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let p = GatLayerParams::register(&mut store, "gat", 3, 2, &mut rng).unwrap();
    let row = random(1, 3, &mut rng);
    let x = Tensor::from_rows(&[row.data().to_vec(), row.data().to_vec()]).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x).unwrap();
    let (_, alpha) =
        gat_layer_with_attention(&mut tape, &store, xv, &[vec![0, 1], vec![0, 1]], &p).unwrap();
    for &v in tape.value(alpha).data() {
        assert!((v - 0.5).abs() < 1e-15);
    }
}

#[test]
fn gat_matches_dense_oracle_and_rows_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::new();
    let p = GatLayerParams::register(&mut store, "gat", 4, 3, &mut rng).unwrap();
    let x = random(5, 4, &mut rng);
    let neighbors = vec![vec![0, 1], vec![0, 1, 2], vec![1, 2, 4], vec![3, 4], vec![2, 3, 4]];
    let expected = gat_oracle(&x, &neighbors, store.get(p.weight), store.get(p.attn));
    let mut tape = Tape::new();
    let xv = tape.constant(x).unwrap();
    let (out, alpha) = gat_layer_with_attention(&mut tape, &store, xv, &neighbors, &p).unwrap();
    assert!(tape.value(out).max_abs_diff(&expected) < 1e-10);
    for r in 0..5 {
        let s: f64 = tape.value(alpha).row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        for c in 0..5 {
            if !neighbors[r].contains(&c) {
                assert_eq!(tape.value(alpha).get(r, c), 0.0);
            }
        }
    }
}

#[test]
fn gat_rejects_empty_neighborhood() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let p = GatLayerParams::register(&mut store, "gat", 2, 2, &mut rng).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(random(2, 2, &mut rng)).unwrap();
    let err = gat_layer(&mut tape, &store, xv, &[vec![0], vec![]], &p).unwrap_err();
    assert!(matches!(err, TensorError::EmptyNeighborhood(1)));
}

#[test]
fn backward_of_sum_is_ones_and_unused_param_is_zero() {
    let mut store = ParamStore::new();
    let used = store.insert("used", Tensor::filled(2, 3, 0.7)).unwrap();
    let unused = store.insert("unused", Tensor::filled(1, 2, 0.7)).unwrap();
    let mut tape = Tape::new();
    let x = tape.param(&store, used);
    let loss = tape.sum(x).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.param(used).unwrap(), &Tensor::filled(2, 3, 1.0));
    assert!(grads.param(unused).is_none());
    assert_eq!(grads.param_or_zeros(&store, unused), Tensor::zeros(1, 2));
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(2, 2)).unwrap();
    assert!(matches!(tape.backward(x), Err(TensorError::NonScalar([2, 2]))));
}

#[test]
fn non_finite_values_trip_an_error() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row_vector(vec![1e300, 1e300])).unwrap();
    let err = tape.mul(x, x).unwrap_err();
    assert!(matches!(err, TensorError::NonFinite { op: "mul" }));
}

#[test]
fn gradients_match_finite_differences_for_elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new();
    let a = store.insert("a", random(3, 4, &mut rng)).unwrap();
    let b = store.insert("b", random(4, 2, &mut rng)).unwrap();
    let s = store.insert("s", random(3, 1, &mut rng)).unwrap();
    let probe = random(3, 6, &mut rng);
    assert_gradients_match(&store, |tape, st| {
        let av = tape.param(st, a);
        let bv = tape.param(st, b);
        let sv = tape.param(st, s);
        let h = tape.matmul(av, bv)?;
        let t = tape.tanh(h)?;
        let g = tape.gelu(h)?;
        let sg = tape.sigmoid(g)?;
        let lr = tape.leaky_relu(t, 0.2)?;
        let cat = tape.concat_cols(&[lr, sg, t])?;
        let gated = tape.mul_col(cat, sv)?;
        let sm = tape.softmax_rows(gated)?;
        let sl = tape.slice_cols(sm, 1, 5)?;
        let gathered = tape.gather_rows(sl, &[2, 0, 2])?;
        let stacked = tape.concat_rows(&[gathered, sl])?;
        let st2 = tape.transpose(stacked)?;
        let scaled = tape.scale(st2, 1.7)?;
        let x = tape.slice_cols(scaled, 0, 3)?;
        let x = tape.transpose(x)?;
        let pad = tape.constant(Tensor::zeros(3, 2))?;
        let x = tape.concat_cols(&[x, pad])?;
        Ok(probe_loss(tape, x, &probe))
    });
}

#[test]
fn gradients_match_finite_differences_for_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let logits = store.insert("logits", random(4, 5, &mut rng)).unwrap();
    let z = store.insert("z", random(3, 1, &mut rng)).unwrap();
    let allowed = [true, true, false, true, true];
    assert_gradients_match(&store, |tape, st| {
        let l = tape.param(st, logits);
        let ce = tape.cross_entropy(l, &[Some(0), None, Some(3), Some(4)], Some(&allowed))?;
        let zv = tape.param(st, z);
        let p = tape.sigmoid(zv)?;
        let bce = tape.binary_cross_entropy(p, &[1.0, 0.0, 1.0], 1e-12)?;
        tape.add(ce, bce)
    });
}

#[test]
fn gradients_match_finite_differences_for_layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut store = ParamStore::new();
    let x = store.insert("x", random(3, 6, &mut rng)).unwrap();
    let ln = LayerNormParams::register(&mut store, "ln", 6).unwrap();
    *store.get_mut(ln.gain) = random(1, 6, &mut rng);
    *store.get_mut(ln.bias) = random(1, 6, &mut rng);
    let probe = random(3, 6, &mut rng);
    assert_gradients_match(&store, |tape, st| {
        let xv = tape.param(st, x);
        let y = ln.forward(tape, st, xv)?;
        Ok(probe_loss(tape, y, &probe))
    });
}

#[test]
fn gradients_match_finite_differences_for_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut store = ParamStore::new();
    let p = AttentionParams::register(&mut store, "attn", 4, 2, &mut rng).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        let [r, c] = store.get(id).shape();
        *store.get_mut(id) = random(r, c, &mut rng);
    }
    let q = store.insert("q", random(3, 4, &mut rng)).unwrap();
    let kv = store.insert("kv", random(3, 4, &mut rng)).unwrap();
    let probe = random(3, 4, &mut rng);
    let mask = Mask::causal(3);
    assert_gradients_match(&store, |tape, st| {
        let qv = tape.param(st, q);
        let kvv = tape.param(st, kv);
        let y = multi_head_attention(tape, st, qv, kvv, &p, Some(&mask))?;
        Ok(probe_loss(tape, y, &probe))
    });
}

#[test]
fn gradients_match_finite_differences_for_gat_stack() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut store = ParamStore::new();
    let l1 = GatLayerParams::register(&mut store, "gat.0", 5, 3, &mut rng).unwrap();
    let l2 = GatLayerParams::register(&mut store, "gat.1", 3, 3, &mut rng).unwrap();
    let x = store.insert("x", random(4, 5, &mut rng)).unwrap();
    let neighbors = vec![vec![0, 1], vec![0, 1, 2], vec![1, 2, 3], vec![2, 3]];
    let probe = random(4, 3, &mut rng);
    assert_gradients_match(&store, |tape, st| {
        let xv = tape.param(st, x);
        let h = gat_layer(tape, st, xv, &neighbors, &l1)?;
        let h = gat_layer(tape, st, h, &neighbors, &l2)?;
        Ok(probe_loss(tape, h, &probe))
    });
}

#[test]
fn gradients_match_finite_differences_for_composed_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut store = ParamStore::new();
    let attn = AttentionParams::register(&mut store, "self", 4, 2, &mut rng).unwrap();
    let ln1 = LayerNormParams::register(&mut store, "ln1", 4).unwrap();
    let ffn = FeedForwardParams::register(&mut store, "ffn", 4, 8, &mut rng).unwrap();
    let ln2 = LayerNormParams::register(&mut store, "ln2", 4).unwrap();
    let x = store.insert("x", random(3, 4, &mut rng)).unwrap();
    let probe = random(3, 4, &mut rng);
    assert_gradients_match(&store, |tape, st| {
        let xv = tape.param(st, x);
        let a = multi_head_attention(tape, st, xv, xv, &attn, None)?;
        let h = tape.add(xv, a)?;
        let h = ln1.forward(tape, st, h)?;
        let f = ffn.forward(tape, st, h)?;
        let h2 = tape.add(h, f)?;
        let y = ln2.forward(tape, st, h2)?;
        Ok(probe_loss(tape, y, &probe))
    });
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut store = ParamStore::new();
    let w = store.insert("w", Tensor::row_vector(vec![1.0, -2.0])).unwrap();
    let before = store.clone();
    let mut state = AdamState::new(&store, AdamConfig::default());
    let mut tape = Tape::new();
    let wv = tape.param(&store, w);
    let zero = tape.scale(wv, 0.0).unwrap();
    let loss = tape.sum(zero).unwrap();
    let grads = tape.backward(loss).unwrap();
    adam_step(&mut store, &grads, &mut state, 0.1).unwrap();
    assert_eq!(store, before);
    assert_eq!(state.step, 1);
}

fn quadratic_run() -> Vec<f64> {
    let mut store = ParamStore::new();
    let w = store.insert("w", Tensor::scalar(1.0)).unwrap();
    let config = AdamConfig {
        lr: 0.1,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&store, config);
    let mut trace = vec![1.0];
    for _ in 0..50 {
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let sq = tape.mul(wv, wv).unwrap();
        let grads = tape.backward(sq).unwrap();
        adam_step(&mut store, &grads, &mut state, config.lr).unwrap();
        trace.push(store.get(w).item().unwrap());
    }
    trace
}

#[test]
fn adam_descends_a_quadratic() {
    // scalar simulation of the same update rule
    let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    let mut oracle = vec![w];
    for t in 1..=50 {
        let g = 2.0 * w;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        w -= 0.1 * mh / (vh.sqrt() + 1e-8);
        oracle.push(w);
    }
    let trace = quadratic_run();
    for (a, b) in trace.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
    // momentum carries w past zero at step 12, so |w| shrinks strictly only
    // until then; afterwards each oscillation lobe peaks lower than the last
    for pair in trace[..12].windows(2) {
        assert!(pair[1].abs() < pair[0].abs(), "{pair:?}");
    }
    let mut lobe_peaks = Vec::new();
    let mut peak = 0.0f64;
    for pair in trace.windows(2) {
        peak = peak.max(pair[0].abs());
        if pair[0].signum() != pair[1].signum() {
            lobe_peaks.push(peak);
            peak = 0.0;
        }
    }
    assert!(lobe_peaks.len() >= 3);
    assert!(lobe_peaks.windows(2).all(|p| p[1] < p[0]), "{lobe_peaks:?}");
    assert!(trace[50].abs() < 0.01);
    assert_eq!(quadratic_run(), trace);
}

#[test]
fn adam_rejects_nan_gradient_by_name() {
    let mut store = ParamStore::new();
    let w = store.insert("encoder.weight", Tensor::scalar(0.5)).unwrap();
    let mut state = AdamState::new(&store, AdamConfig::default());
    let mut tape = Tape::new();
    let wv = tape.param(&store, w);
    let l = tape.sum(wv).unwrap();
    let mut grads = tape.backward(l).unwrap();
    grads.set_param(w, Tensor::scalar(f64::NAN));
    let err = adam_step(&mut store, &grads, &mut state, 0.1).unwrap_err();
    assert_eq!(err.to_string(), "non-finite gradient for parameter `encoder.weight`");
    assert_eq!(store.get(w).item().unwrap(), 0.5);
    assert_eq!(state.step, 0);
}

#[test]
fn finite_differences_on_known_functions() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::scalar(3.0)).unwrap();
    let g = finite_diff_gradient(|s| Ok(s.get(ParamId(0)).item()?.powi(2)), &store, 1e-5).unwrap();
    assert!((g[0].item().unwrap() - 6.0).abs() < 1e-6);

    let g = finite_diff_gradient(|_| Ok(4.2), &store, 1e-5).unwrap();
    assert_eq!(g[0].item().unwrap(), 0.0);

    // f(w) = wᵀ A w with symmetric A has gradient 2 A w
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let m = random(4, 4, &mut rng);
    let a = {
        let t = m.transpose();
        let mut s = m.clone();
        for r in 0..4 {
            for c in 0..4 {
                s.set(r, c, 0.5 * (m.get(r, c) + t.get(r, c)));
            }
        }
        s
    };
    let w = random(4, 1, &mut rng);
    let mut store = ParamStore::new();
    store.insert("w", w.clone()).unwrap();
    let g = finite_diff_gradient(
        |s| {
            let w = s.get(ParamId(0));
            naive_matmul(&w.transpose(), &naive_matmul(&a, w)).item()
        },
        &store,
        1e-5,
    )
    .unwrap();
    let analytic = naive_matmul(&a, &w).map(|v| 2.0 * v);
    assert!(g[0].max_abs_diff(&analytic) < 1e-6);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn masked_softmax_rows_sum_to_one(values in proptest::collection::vec(-50.0f64..50.0, 12), keep in proptest::collection::vec(any::<bool>(), 12)) {
            let x = Tensor::from_vec(3, 4, values).unwrap();
            let mask = Mask::new(3, 4, keep.clone()).unwrap();
            let y = masked_softmax_rows(&x, Some(&mask));
            for r in 0..3 {
                let any_allowed = keep[r * 4..(r + 1) * 4].iter().any(|&k| k);
                let s: f64 = y.row(r).iter().sum();
                if any_allowed {
                    prop_assert!((s - 1.0).abs() < 1e-9);
                } else {
                    prop_assert_eq!(s, 0.0);
                }
            }
        }

        #[test]
        fn kernels_are_deterministic(seed in 0u64..1000) {
            let run = || {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut store = ParamStore::new();
                let p = AttentionParams::register(&mut store, "a", 4, 2, &mut rng).unwrap();
                let x = random(3, 4, &mut rng);
                let mut tape = Tape::new();
                let xv = tape.leaf(x).unwrap();
                let y = multi_head_attention(&mut tape, &store, xv, xv, &p, None).unwrap();
                let l = tape.sum(y).unwrap();
                let g = tape.backward(l).unwrap();
                (tape.value(y).clone(), g.var(xv).unwrap().clone())
            };
            prop_assert_eq!(run(), run());
        }
    }
}
