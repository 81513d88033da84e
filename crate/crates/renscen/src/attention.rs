//! Scaled dot-product attention, its sparse-query variant, the
//! multi-head wrapper, and the encoder's distilling layer.
//!
//! The sparse variant ranks queries by a max-minus-mean sparsity
//! measurement against a random key subsample; only the top-ranked
//! queries attend, and the rest receive the value matrix's column mean.
//! Ranking and sampling are discrete choices made off-tape from current
//! values — gradients flow through the attention arithmetic, never
//! through the selection itself.

use rand::RngExt;

use crate::tensor::{Tape, TensorId};

/// Additive pre-softmax penalty that zeroes a weight without producing
/// NaN for fully-masked rows (never the case here: the diagonal is kept).
const MASK_NEG: f64 = -1e30;

/// Tape handles of one multi-head attention block's parameters.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    /// Per-head query/key projections, each `n_m x d_k`.
    pub wq: Vec<TensorId>,
    pub wk: Vec<TensorId>,
    /// Per-head value projections, each `n_m x d_v`.
    pub wv: Vec<TensorId>,
    /// Output projection, `(h * d_v) x n_m`.
    pub wo: TensorId,
}

/// Which attention the multi-head wrapper runs per head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttentionKind {
    Full,
    /// Full attention with the causal mask (decoder self-attention).
    FullCausal,
    /// Sparse-query attention with `u = U = ceil(c * ln l)`, clamped to
    /// the sequence lengths.
    ProbSparse { sample_c: f64 },
}

/// Canonical attention: `Softmax(Q Kᵀ / sqrt(d_k)) V`. With `causal`,
/// query row `t` attends only to key rows `0..=t` (requires square
/// score matrix).
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: TensorId,
    k: TensorId,
    v: TensorId,
    causal: bool,
) -> TensorId {
    let (l_q, d_k) = tape.dims(q);
    let (l_k, d_k2) = tape.dims(k);
    assert!(d_k > 0 && d_k == d_k2, "query/key widths must agree and be positive");
    assert_eq!(tape.dims(v).0, l_k, "key and value lengths must agree");
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt);
    let mut scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    if causal {
        assert_eq!(l_q, l_k, "causal mask needs aligned query and key positions");
        let mut mask = vec![0.0; l_q * l_k];
        for i in 0..l_q {
            for j in i + 1..l_k {
                mask[i * l_k + j] = MASK_NEG;
            }
        }
        let m = tape.constm(mask, l_q, l_k);
        scaled = tape.add(scaled, m);
    }
    let weights = tape.softmax_rows(scaled);
    tape.matmul(weights, v)
}

/// Sparsity measurement of one query against sampled keys:
/// `max_j(q·k_j/sqrt(d_k)) - mean_j(q·k_j/sqrt(d_k))`.
pub fn sparsity_measurement(q_row: &[f64], k_hat: &[f64], d_k: usize) -> f64 {
    assert_eq!(q_row.len(), d_k);
    assert!(!k_hat.is_empty() && k_hat.len().is_multiple_of(d_k), "sampled keys must be U x d_k");
    let scale = 1.0 / (d_k as f64).sqrt();
    let u = k_hat.len() / d_k;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for j in 0..u {
        let dot: f64 = (0..d_k).map(|i| q_row[i] * k_hat[j * d_k + i]).sum();
        let s = dot * scale;
        max = max.max(s);
        sum += s;
    }
    max - sum / u as f64
}

/// The discrete half of sparse attention: which keys were sampled and
/// which queries won the ranking.
#[derive(Debug, Clone)]
pub struct SparseSelection {
    /// Sampled key rows (distinct, ascending).
    pub sampled_keys: Vec<usize>,
    /// Top-u query rows, ranked by descending sparsity measurement.
    pub selected_idx: Vec<usize>,
}

/// Sample `u_keys` distinct key rows, measure every query against them,
/// and keep the `top_u` queries. Pure given the RNG; ties rank by index.
#[allow(clippy::too_many_arguments)]
pub fn select_sparse_queries<R: rand::Rng>(
    q_data: &[f64],
    l_q: usize,
    k_data: &[f64],
    l_k: usize,
    d_k: usize,
    u_keys: usize,
    top_u: usize,
    rng: &mut R,
) -> SparseSelection {
    assert!((1..=l_q).contains(&top_u), "top_u must be in 1..=l_Q, got {top_u} of {l_q}");
    assert!((1..=l_k).contains(&u_keys), "u_keys must be in 1..=l_K, got {u_keys} of {l_k}");
    // partial Fisher-Yates for a without-replacement sample
    let mut pool: Vec<usize> = (0..l_k).collect();
    for i in 0..u_keys {
        let j = rng.random_range(i..l_k);
        pool.swap(i, j);
    }
    let mut sampled_keys = pool[..u_keys].to_vec();
    sampled_keys.sort_unstable();
    let k_hat: Vec<f64> = sampled_keys
        .iter()
        .flat_map(|&r| k_data[r * d_k..(r + 1) * d_k].iter().copied())
        .collect();

    let mut ranked: Vec<(usize, f64)> = (0..l_q)
        .map(|i| {
            let m = sparsity_measurement(&q_data[i * d_k..(i + 1) * d_k], &k_hat, d_k);
            assert!(m.is_finite(), "sparsity measurement diverged for query {i}");
            (i, m)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    SparseSelection { sampled_keys, selected_idx: ranked[..top_u].iter().map(|r| r.0).collect() }
}

/// Sparse-query attention: the selected queries attend over all keys;
/// every other output row is the column mean of `V`.
pub fn probsparse_attention<R: rand::Rng>(
    tape: &mut Tape,
    q: TensorId,
    k: TensorId,
    v: TensorId,
    u_keys: usize,
    top_u: usize,
    rng: &mut R,
) -> TensorId {
    let (l_q, d_k) = tape.dims(q);
    let (l_k, _) = tape.dims(k);
    let d_v = tape.dims(v).1;
    let sel = select_sparse_queries(tape.data(q), l_q, tape.data(k), l_k, d_k, u_keys, top_u, rng);

    let q_hat = tape.gather_rows(q, &sel.selected_idx);
    let active = scaled_dot_attention(tape, q_hat, k, v, false);
    let placed = tape.scatter_rows(active, &sel.selected_idx, l_q);
    if top_u == l_q {
        return placed;
    }
    // lazy rows: column mean of V, masked off where active rows landed
    let col_sum = tape.sum_rows(v);
    let col_mean = tape.scale(col_sum, 1.0 / l_k as f64);
    let base = tape.broadcast_rows(col_mean, l_q);
    let mut lazy_mask = vec![1.0; l_q * d_v];
    for &i in &sel.selected_idx {
        lazy_mask[i * d_v..(i + 1) * d_v].fill(0.0);
    }
    let lazy = tape.mul_const(base, &lazy_mask);
    tape.add(placed, lazy)
}

/// Multi-head wrapper: per-head projections, head attention, column
/// concatenation, output projection. No biases anywhere.
pub fn multihead<R: rand::Rng>(
    tape: &mut Tape,
    x_q: TensorId,
    x_kv: TensorId,
    p: &AttentionParams,
    kind: AttentionKind,
    rng: &mut R,
) -> TensorId {
    let h = p.wq.len();
    assert!(h >= 1 && p.wk.len() == h && p.wv.len() == h, "head projection lists must align");
    let (l_q, _) = tape.dims(x_q);
    let (l_k, _) = tape.dims(x_kv);
    let mut heads = Vec::with_capacity(h);
    for i in 0..h {
        let q = tape.matmul(x_q, p.wq[i]);
        let k = tape.matmul(x_kv, p.wk[i]);
        let v = tape.matmul(x_kv, p.wv[i]);
        let out = match kind {
            AttentionKind::Full => scaled_dot_attention(tape, q, k, v, false),
            AttentionKind::FullCausal => scaled_dot_attention(tape, q, k, v, true),
            AttentionKind::ProbSparse { sample_c } => {
                let top_u = sparse_count(sample_c, l_q);
                let u_keys = sparse_count(sample_c, l_k);
                probsparse_attention(tape, q, k, v, u_keys, top_u, rng)
            }
        };
        heads.push(out);
    }
    let mut cat = heads[0];
    for &hd in &heads[1..] {
        cat = tape.concat_cols(cat, hd);
    }
    tape.matmul(cat, p.wo)
}

/// Sparse-attention budget for a length-`l` sequence:
/// `ceil(c * ln l)` clamped to `1..=l`.
pub fn sparse_count(c: f64, l: usize) -> usize {
    assert!(l >= 1 && c > 0.0);
    ((c * (l as f64).ln()).ceil() as usize).clamp(1, l)
}

/// Encoder distilling layer: temporal conv (kernel 3, same padding) +
/// LReLU + max-pool stride 2. `x` is `L x C` node-major; the result is
/// `(L/2) x c_out`.
pub fn distill_layer(
    tape: &mut Tape,
    x: TensorId,
    weight: TensorId,
    bias: TensorId,
    slope: f64,
) -> TensorId {
    let (l, _c) = tape.dims(x);
    assert!(l % 2 == 0, "distilling halves the sequence; length {l} is odd");
    let xt = tape.transpose(x); // C x L for the temporal conv
    let conv = tape.conv1d(xt, weight, bias, 3, 1, 1);
    let act = tape.lrelu(conv, slope);
    let pooled = tape.maxpool2(act);
    tape.transpose(pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seedstream::stream;
    use crate::tensor::gradcheck::seeded_matrix;

    fn leaf_from_seed(tape: &mut Tape, seed: u64, r: usize, c: usize) -> TensorId {
        let (data, _, _) = seeded_matrix(seed, r, c, 1.0);
        tape.leaf(data, r, c, true)
    }

    /// Plain-loop softmax(QKᵀ/√d)V for oracle checks.
    fn attention_oracle(q: &[f64], k: &[f64], v: &[f64], l_q: usize, l_k: usize, d_k: usize, d_v: usize) -> Vec<f64> {
        let mut out = vec![0.0; l_q * d_v];
        for i in 0..l_q {
            let scores: Vec<f64> = (0..l_k)
                .map(|j| {
                    (0..d_k).map(|t| q[i * d_k + t] * k[j * d_k + t]).sum::<f64>() / (d_k as f64).sqrt()
                })
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..l_k {
                for t in 0..d_v {
                    out[i * d_v + t] += exps[j] / z * v[j * d_v + t];
                }
            }
        }
        out
    }

    #[test]
    fn single_key_forces_its_value_row() {
        let mut tape = Tape::new();
        let q = leaf_from_seed(&mut tape, 1, 5, 3);
        let k = leaf_from_seed(&mut tape, 2, 1, 3);
        let v = tape.leaf(vec![2.0, -1.0], 1, 2, true);
        let out = scaled_dot_attention(&mut tape, q, k, v, false);
        for i in 0..5 {
            assert_eq!(tape.data(out)[i * 2..(i + 1) * 2], [2.0, -1.0]);
        }
    }

    #[test]
    fn zero_queries_average_the_values() {
        let mut tape = Tape::new();
        let q = tape.zeros(2, 3);
        let k = leaf_from_seed(&mut tape, 3, 4, 3);
        let v = leaf_from_seed(&mut tape, 4, 4, 2);
        let out = scaled_dot_attention(&mut tape, q, k, v, false);
        for i in 0..2 {
            for t in 0..2 {
                let mean: f64 = (0..4).map(|j| tape.data(v)[j * 2 + t]).sum::<f64>() / 4.0;
                assert!((tape.data(out)[i * 2 + t] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_case_matches_explicit_oracle() {
        let mut tape = Tape::new();
        let q = leaf_from_seed(&mut tape, 5, 4, 4);
        let k = leaf_from_seed(&mut tape, 6, 4, 4);
        let v = leaf_from_seed(&mut tape, 7, 4, 4);
        let out = scaled_dot_attention(&mut tape, q, k, v, false);
        let want = attention_oracle(tape.data(q), tape.data(k), tape.data(v), 4, 4, 4, 4);
        for (a, b) in tape.data(out).iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn weight_rows_are_distributions() {
        // with V = I the output rows are the weight rows themselves
        let mut tape = Tape::new();
        let q = leaf_from_seed(&mut tape, 8, 6, 3);
        let k = leaf_from_seed(&mut tape, 9, 6, 3);
        let eye: Vec<f64> = (0..36).map(|i| if i % 7 == 0 { 1.0 } else { 0.0 }).collect();
        let v = tape.leaf(eye, 6, 6, false);
        for causal in [false, true] {
            let out = scaled_dot_attention(&mut tape, q, k, v, causal);
            for i in 0..6 {
                let row = &tape.data(out)[i * 6..(i + 1) * 6];
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9, "row {i} sums to {sum}");
                assert!(row.iter().all(|&w| w >= 0.0));
                if causal {
                    assert!(row[i + 1..].iter().all(|&w| w == 0.0), "future weight in row {i}");
                }
            }
        }
    }

    #[test]
    fn causal_rows_have_no_gradient_from_future_values() {
        let mut tape = Tape::new();
        let q = leaf_from_seed(&mut tape, 10, 5, 3);
        let k = leaf_from_seed(&mut tape, 11, 5, 3);
        let v = leaf_from_seed(&mut tape, 12, 5, 2);
        let out = scaled_dot_attention(&mut tape, q, k, v, true);
        // loss = sum of output row 2 only
        let row = tape.slice_rows(out, 2, 3);
        let loss = tape.sum_all(row);
        tape.backward(loss);
        let g = tape.grad(v).unwrap();
        assert!(g[..3 * 2].iter().any(|&x| x != 0.0), "past rows should matter");
        assert!(g[3 * 2..].iter().all(|&x| x == 0.0), "future rows leaked into row 2");
    }

    #[test]
    fn sparsity_measurement_matches_oracle_and_degenerate_cases() {
        // identical scores => 0
        let q = [1.0, 0.0];
        let k_same = [3.0, 5.0, 3.0, 5.0]; // both keys dot to 3
        assert_eq!(sparsity_measurement(&q, &k_same, 2), 0.0);
        // zero query => 0
        assert_eq!(sparsity_measurement(&[0.0, 0.0], &k_same, 2), 0.0);
        // random case against a direct computation
        let (qr, _, _) = seeded_matrix(13, 1, 4, 1.0);
        let (kr, _, _) = seeded_matrix(14, 5, 4, 1.0);
        let dots: Vec<f64> = (0..5)
            .map(|j| (0..4).map(|t| qr[t] * kr[j * 4 + t]).sum::<f64>() / 2.0)
            .collect();
        let want = dots.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - dots.iter().sum::<f64>() / 5.0;
        assert!((sparsity_measurement(&qr, &kr, 4) - want).abs() < 1e-12);
    }

    #[test]
    fn sparsity_measurement_ignores_uniform_score_shifts() {
        let (q, _, _) = seeded_matrix(15, 1, 3, 1.0);
        let (k, _, _) = seeded_matrix(16, 4, 3, 1.0);
        let before = sparsity_measurement(&q, &k, 3);
        // shift every dot product by the same constant: k_j' = k_j + c·q/|q|²
        let qq: f64 = q.iter().map(|x| x * x).sum();
        let c = 2.7;
        let mut shifted = k.clone();
        for j in 0..4 {
            for t in 0..3 {
                shifted[j * 3 + t] += c * q[t] / qq;
            }
        }
        let after = sparsity_measurement(&q, &shifted, 3);
        assert!((before - after).abs() < 1e-9, "{before} vs {after}");
    }

    #[test]
    fn probsparse_with_all_queries_equals_full_attention() {
        let mut tape = Tape::new();
        let q = leaf_from_seed(&mut tape, 17, 8, 4);
        let k = leaf_from_seed(&mut tape, 18, 8, 4);
        let v = leaf_from_seed(&mut tape, 19, 8, 4);
        let full = scaled_dot_attention(&mut tape, q, k, v, false);
        let mut rng = stream(20, "test-attn", &[]);
        let sparse = probsparse_attention(&mut tape, q, k, v, 8, 8, &mut rng);
        for (a, b) in tape.data(sparse).iter().zip(tape.data(full)) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn single_query_is_always_selected() {
        let mut tape = Tape::new();
        let q = leaf_from_seed(&mut tape, 21, 1, 4);
        let k = leaf_from_seed(&mut tape, 22, 6, 4);
        let v = leaf_from_seed(&mut tape, 23, 6, 3);
        let full = scaled_dot_attention(&mut tape, q, k, v, false);
        let mut rng = stream(24, "test-attn", &[]);
        let sparse = probsparse_attention(&mut tape, q, k, v, 3, 1, &mut rng);
        for (a, b) in tape.data(sparse).iter().zip(tape.data(full)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn lazy_rows_take_the_value_mean_and_active_rows_full_attention() {
        let mut tape = Tape::new();
        let q = leaf_from_seed(&mut tape, 25, 8, 4);
        let k = leaf_from_seed(&mut tape, 26, 8, 4);
        let v = leaf_from_seed(&mut tape, 27, 8, 3);
        // U = l_K: the sample is all keys, so the ranking is the exact
        // measurement over the full key set
        let mut rng = stream(28, "test-attn", &[]);
        let out = probsparse_attention(&mut tape, q, k, v, 8, 2, &mut rng);

        // brute-force ranking oracle
        let (qd, kd, vd) = (tape.data(q).to_vec(), tape.data(k).to_vec(), tape.data(v).to_vec());
        let mut ranked: Vec<(usize, f64)> =
            (0..8).map(|i| (i, sparsity_measurement(&qd[i * 4..(i + 1) * 4], &kd, 4))).collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let selected: Vec<usize> = ranked[..2].iter().map(|r| r.0).collect();

        let full = attention_oracle(&qd, &kd, &vd, 8, 8, 4, 3);
        let mean: Vec<f64> = (0..3).map(|t| (0..8).map(|j| vd[j * 3 + t]).sum::<f64>() / 8.0).collect();
        for i in 0..8 {
            for t in 0..3 {
                let want = if selected.contains(&i) { full[i * 3 + t] } else { mean[t] };
                assert!((tape.data(out)[i * 3 + t] - want).abs() < 1e-10, "row {i}");
            }
        }
    }

    #[test]
    fn key_sampling_is_without_replacement_and_seeded() {
        let (qd, _, _) = seeded_matrix(29, 6, 3, 1.0);
        let (kd, _, _) = seeded_matrix(30, 10, 3, 1.0);
        let mut rng = stream(31, "test-attn", &[]);
        let a = select_sparse_queries(&qd, 6, &kd, 10, 3, 7, 3, &mut rng);
        assert_eq!(a.sampled_keys.len(), 7);
        let mut dedup = a.sampled_keys.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 7, "sampled keys repeat");
        assert!(a.sampled_keys.iter().all(|&i| i < 10));
        // same seed, same draw; different seed, (almost surely) different
        let mut rng2 = stream(31, "test-attn", &[]);
        let b = select_sparse_queries(&qd, 6, &kd, 10, 3, 7, 3, &mut rng2);
        assert_eq!(a.sampled_keys, b.sampled_keys);
        assert_eq!(a.selected_idx, b.selected_idx);
    }

    #[test]
    fn multihead_with_identity_projections_is_bare_attention() {
        let mut tape = Tape::new();
        let x = leaf_from_seed(&mut tape, 32, 5, 4);
        let eye: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
        let i4 = tape.leaf(eye, 4, 4, false);
        let p = AttentionParams { wq: vec![i4], wk: vec![i4], wv: vec![i4], wo: i4 };
        let mut rng = stream(33, "test-attn", &[]);
        let mh = multihead(&mut tape, x, x, &p, AttentionKind::Full, &mut rng);
        let bare = scaled_dot_attention(&mut tape, x, x, x, false);
        for (a, b) in tape.data(mh).iter().zip(tape.data(bare)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_projection_silences_the_block() {
        let mut tape = Tape::new();
        let x = leaf_from_seed(&mut tape, 34, 5, 4);
        let wq = leaf_from_seed(&mut tape, 35, 4, 2);
        let wk = leaf_from_seed(&mut tape, 36, 4, 2);
        let wv = leaf_from_seed(&mut tape, 37, 4, 2);
        let wo = tape.zeros(2, 4);
        let p = AttentionParams { wq: vec![wq], wk: vec![wk], wv: vec![wv], wo };
        let mut rng = stream(38, "test-attn", &[]);
        let mh = multihead(&mut tape, x, x, &p, AttentionKind::Full, &mut rng);
        assert!(tape.data(mh).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_heads_match_the_concat_oracle() {
        let mut tape = Tape::new();
        let xq = leaf_from_seed(&mut tape, 39, 5, 4);
        let xkv = leaf_from_seed(&mut tape, 40, 6, 4);
        let wq: Vec<TensorId> = (0..2).map(|i| leaf_from_seed(&mut tape, 41 + i, 4, 2)).collect();
        let wk: Vec<TensorId> = (0..2).map(|i| leaf_from_seed(&mut tape, 43 + i, 4, 2)).collect();
        let wv: Vec<TensorId> = (0..2).map(|i| leaf_from_seed(&mut tape, 45 + i, 4, 3)).collect();
        let wo = leaf_from_seed(&mut tape, 47, 6, 4);
        let p = AttentionParams { wq: wq.clone(), wk: wk.clone(), wv: wv.clone(), wo };
        let mut rng = stream(48, "test-attn", &[]);
        let mh = multihead(&mut tape, xq, xkv, &p, AttentionKind::Full, &mut rng);

        // oracle: heads computed one by one, concatenated, projected
        let mut heads = Vec::new();
        for i in 0..2 {
            let q = tape.matmul(xq, wq[i]);
            let k = tape.matmul(xkv, wk[i]);
            let v = tape.matmul(xkv, wv[i]);
            heads.push(scaled_dot_attention(&mut tape, q, k, v, false));
        }
        let cat = tape.concat_cols(heads[0], heads[1]);
        let want = tape.matmul(cat, p.wo);
        for (a, b) in tape.data(mh).iter().zip(tape.data(want)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_count_follows_the_log_budget() {
        assert_eq!(sparse_count(5.0, 48), 20); // ceil(5 ln 48)
        assert_eq!(sparse_count(5.0, 24), 16); // ceil(5 ln 24)
        assert_eq!(sparse_count(5.0, 1), 1); // clamped up
        assert_eq!(sparse_count(100.0, 8), 8); // clamped down
    }

    #[test]
    fn distill_halves_length_and_matches_composition() {
        let mut tape = Tape::new();
        let x = leaf_from_seed(&mut tape, 49, 8, 3);
        let weight = leaf_from_seed(&mut tape, 50, 2, 9); // c_out=2, c_in*k=9
        let bias = leaf_from_seed(&mut tape, 51, 2, 1);
        let y = distill_layer(&mut tape, x, weight, bias, 0.2);
        assert_eq!(tape.dims(y), (4, 2));

        // composition oracle from the same primitives, spelled out
        let xt = tape.transpose(x);
        let conv = tape.conv1d(xt, weight, bias, 3, 1, 1);
        let act = tape.lrelu(conv, 0.2);
        let pooled = tape.maxpool2(act);
        let want = tape.transpose(pooled);
        assert_eq!(tape.data(y), tape.data(want));
    }

    #[test]
    fn distill_keeps_constant_signals_constant() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![0.7; 8], 8, 1, false);
        // kernel summing to 1 with zero bias: interior output = input
        let weight = tape.leaf(vec![0.0, 1.0, 0.0], 1, 3, false);
        let bias = tape.leaf(vec![0.0], 1, 1, false);
        let y = distill_layer(&mut tape, x, weight, bias, 0.2);
        assert_eq!(tape.data(y), &[0.7; 4]);
    }

    #[test]
    #[should_panic(expected = "odd")]
    fn distill_rejects_odd_lengths() {
        let mut tape = Tape::new();
        let x = tape.zeros(7, 2);
        let weight = tape.zeros(2, 6);
        let bias = tape.zeros(2, 1);
        distill_layer(&mut tape, x, weight, bias, 0.2);
    }
}
