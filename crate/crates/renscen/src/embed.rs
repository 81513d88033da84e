//! Input embedding: projection of channel windows into model width plus
//! fixed positional and learnable calendar-stamp embeddings.
//!
//! Every encoder/decoder token is the elementwise sum of three terms:
//! a leaky-ReLU affine projection of that node's channel values, a fixed
//! sine-cosine positional vector over the node's position *within the
//! window*, and the sum of six stamp-table rows selected by the node's
//! calendar fields. The projections and tables are trainable; the
//! positional term is constant.

use crate::data::{Stamp, YEAR_BUCKETS};
use crate::tensor::{Tape, TensorId};

/// Row counts of the six stamp tables, in field order
/// (year, month, day, hour, minute, event).
pub const STAMP_TABLE_ROWS: [usize; 6] = [YEAR_BUCKETS, 12, 31, 24, 60, 2];

/// Tape handles of the embedding parameters for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingParams {
    /// Encoder projection, `enc_channels x n_m`, and its bias `1 x n_m`.
    pub w1: TensorId,
    pub b1: TensorId,
    /// Decoder projection, `dec_channels x n_m`, and its bias `1 x n_m`.
    pub w2: TensorId,
    pub b2: TensorId,
    /// Stamp tables, `rows x n_m` with rows per [`STAMP_TABLE_ROWS`].
    pub year: TensorId,
    pub month: TensorId,
    pub day: TensorId,
    pub hour: TensorId,
    pub minute: TensorId,
    pub event: TensorId,
    pub n_m: usize,
}

/// Fixed positional vector of a node at window position `t`: even
/// components `sin(t / 10000^(i/n_m))`, odd components
/// `cos(t / 10000^((i-1)/n_m))`.
pub fn positional_vector(t: usize, n_m: usize) -> Vec<f64> {
    assert!(n_m.is_multiple_of(2), "positional embedding needs an even width, got {n_m}");
    let mut v = Vec::with_capacity(n_m);
    for i in 0..n_m {
        let expo = (i - i % 2) as f64 / n_m as f64;
        let arg = t as f64 / 10000f64.powf(expo);
        v.push(if i % 2 == 0 { arg.sin() } else { arg.cos() });
    }
    v
}

/// Constant `n_t x n_m` matrix of positional vectors for positions
/// `0..n_t`.
pub fn positional_matrix(tape: &mut Tape, n_t: usize, n_m: usize) -> TensorId {
    let mut data = Vec::with_capacity(n_t * n_m);
    for t in 0..n_t {
        data.extend(positional_vector(t, n_m));
    }
    tape.constm(data, n_t, n_m)
}

fn check_stamp(s: &Stamp) {
    let fields = [s.year_off, s.month0, s.day0, s.hour, s.minute, s.event];
    for (f, (v, rows)) in fields.iter().zip(STAMP_TABLE_ROWS).enumerate() {
        assert!((*v as usize) < rows, "stamp field {f} value {v} outside its table of {rows} rows");
    }
}

/// Learned stamp embedding of every node: the sum of one row from each
/// calendar table, `stamps.len() x n_m`. Differentiable into the tables.
pub fn stamp_matrix(tape: &mut Tape, p: &EmbeddingParams, stamps: &[Stamp]) -> TensorId {
    assert!(!stamps.is_empty(), "stamp embedding of an empty window");
    stamps.iter().for_each(check_stamp);
    let idx = |f: fn(&Stamp) -> u8| stamps.iter().map(|s| f(s) as usize).collect::<Vec<_>>();
    let tables = [
        (p.year, idx(|s| s.year_off)),
        (p.month, idx(|s| s.month0)),
        (p.day, idx(|s| s.day0)),
        (p.hour, idx(|s| s.hour)),
        (p.minute, idx(|s| s.minute)),
        (p.event, idx(|s| s.event)),
    ];
    let mut acc: Option<TensorId> = None;
    for (table, rows) in tables {
        let picked = tape.gather_rows(table, &rows);
        acc = Some(match acc {
            None => picked,
            Some(a) => tape.add(a, picked),
        });
    }
    acc.expect("six tables")
}

/// Project a `channels x n_t` window into `n_t x n_m` token scalars:
/// `LReLU(X W + B)` with `X` the window transposed to node-major.
pub fn project_info(
    tape: &mut Tape,
    window: &[f64],
    channels: usize,
    n_t: usize,
    w: TensorId,
    b: TensorId,
    slope: f64,
) -> TensorId {
    assert_eq!(window.len(), channels * n_t, "window length mismatches channels x n_t");
    assert_eq!(tape.dims(w).0, channels, "projection rows must match channel count");
    assert_eq!(tape.dims(b), (1, tape.dims(w).1), "bias must be 1 x n_m");
    let x = tape.constm(window.to_vec(), channels, n_t);
    let xt = tape.transpose(x);
    let h = tape.matmul(xt, w);
    let bb = tape.broadcast_rows(b, n_t);
    let hb = tape.add(h, bb);
    tape.lrelu(hb, slope)
}

/// Assemble one model input: projected window + positional + stamp
/// embedding, `n_t x n_m`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_input(
    tape: &mut Tape,
    p: &EmbeddingParams,
    window: &[f64],
    channels: usize,
    stamps: &[Stamp],
    w: TensorId,
    b: TensorId,
    slope: f64,
) -> TensorId {
    let n_t = stamps.len();
    let u = project_info(tape, window, channels, n_t, w, b, slope);
    let pe = positional_matrix(tape, n_t, p.n_m);
    let se = stamp_matrix(tape, p, stamps);
    let upe = tape.add(u, pe);
    tape.add(upe, se)
}

/// Encoder input of a windowed sample, `n_t x n_m`.
pub fn assemble_encoder_input(
    tape: &mut Tape,
    p: &EmbeddingParams,
    enc_window: &[f64],
    enc_channels: usize,
    enc_stamps: &[Stamp],
    slope: f64,
) -> TensorId {
    assemble_input(tape, p, enc_window, enc_channels, enc_stamps, p.w1, p.b1, slope)
}

/// Decoder input of a windowed sample, `n_t x n_m`. The window is
/// expected pre-masked (zeros past the origin), as the pipeline cuts it.
pub fn assemble_decoder_input(
    tape: &mut Tape,
    p: &EmbeddingParams,
    dec_window: &[f64],
    dec_channels: usize,
    dec_stamps: &[Stamp],
    slope: f64,
) -> TensorId {
    assemble_input(tape, p, dec_window, dec_channels, dec_stamps, p.w2, p.b2, slope)
}

/// Critic input of a sample: the raw power trajectory transposed to
/// node-major `n_t x n_sites`. No embedding, no parameters.
pub fn discriminator_input(full_power: &[f64], n_sites: usize, n_t: usize) -> Vec<f64> {
    assert_eq!(full_power.len(), n_sites * n_t, "power window mismatches n_sites x n_t");
    let mut out = vec![0.0; n_t * n_sites];
    for s in 0..n_sites {
        for t in 0..n_t {
            out[t * n_sites + s] = full_power[s * n_t + t];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seedstream::stream;
    use crate::tensor::gradcheck::seeded_matrix;
    use rand::RngExt;

    fn blank_stamp() -> Stamp {
        Stamp { year_off: 0, month0: 0, day0: 0, hour: 0, minute: 0, event: 0 }
    }

    /// Params with every table/projection zeroed, for isolating terms.
    fn zero_params(tape: &mut Tape, c_enc: usize, c_dec: usize, n_m: usize) -> EmbeddingParams {
        let mut table = |rows: usize| tape.leaf(vec![0.0; rows * n_m], rows, n_m, true);
        EmbeddingParams {
            year: table(YEAR_BUCKETS),
            month: table(12),
            day: table(31),
            hour: table(24),
            minute: table(60),
            event: table(2),
            w1: tape.leaf(vec![0.0; c_enc * n_m], c_enc, n_m, true),
            b1: tape.leaf(vec![0.0; n_m], 1, n_m, true),
            w2: tape.leaf(vec![0.0; c_dec * n_m], c_dec, n_m, true),
            b2: tape.leaf(vec![0.0; n_m], 1, n_m, true),
            n_m,
        }
    }

    fn random_params(tape: &mut Tape, c_enc: usize, c_dec: usize, n_m: usize, seed: u64) -> EmbeddingParams {
        let mut k = seed;
        let mut mat = |rows: usize| {
            k += 1;
            let (data, _, _) = seeded_matrix(k, rows, n_m, 0.5);
            tape.leaf(data, rows, n_m, true)
        };
        EmbeddingParams {
            year: mat(YEAR_BUCKETS),
            month: mat(12),
            day: mat(31),
            hour: mat(24),
            minute: mat(60),
            event: mat(2),
            w1: mat(c_enc),
            b1: mat(1),
            w2: mat(c_dec),
            b2: mat(1),
            n_m,
        }
    }

    #[test]
    fn positional_vector_at_zero_alternates_zero_one() {
        let v = positional_vector(0, 8);
        assert_eq!(v, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn positional_vector_matches_direct_evaluation() {
        // sin(100 / 10000^(2/100)), evaluated independently at high
        // precision
        let v = positional_vector(100, 100);
        assert!((v[2] - 0.997126418595121).abs() < 1e-12, "got {}", v[2]);
        // the paired cosine reuses the even exponent
        assert!((v[3] - (100.0 / 10000f64.powf(0.02)).cos()).abs() < 1e-15);
    }

    #[test]
    fn positional_vector_stays_in_unit_interval() {
        for t in [0usize, 1, 7, 100, 9999] {
            assert!(positional_vector(t, 100).iter().all(|x| (-1.0..=1.0).contains(x)));
        }
    }

    #[test]
    #[should_panic(expected = "even width")]
    fn positional_vector_rejects_odd_width() {
        positional_vector(3, 7);
    }

    #[test]
    fn positional_vectors_are_distinct_over_the_horizon() {
        use std::collections::HashSet;
        let mut seen = HashSet::new();
        for t in (0..10_000).step_by(13) {
            let bits: Vec<u64> = positional_vector(t, 100).iter().map(|x| x.to_bits()).collect();
            assert!(seen.insert(bits), "positions collide at t={t}");
        }
    }

    #[test]
    fn stamp_matrix_is_zero_for_zero_tables() {
        let mut tape = Tape::new();
        let p = zero_params(&mut tape, 2, 3, 8);
        let se = stamp_matrix(&mut tape, &p, &[blank_stamp(), blank_stamp()]);
        assert_eq!(tape.dims(se), (2, 8));
        assert!(tape.data(se).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn stamp_matrix_matches_row_sum_oracle() {
        let mut tape = Tape::new();
        let p = random_params(&mut tape, 2, 3, 8, 41);
        let s = Stamp { year_off: 3, month0: 11, day0: 30, hour: 23, minute: 45, event: 1 };
        let se = stamp_matrix(&mut tape, &p, &[s]);
        let rows = [
            (p.year, 3usize),
            (p.month, 11),
            (p.day, 30),
            (p.hour, 23),
            (p.minute, 45),
            (p.event, 1),
        ];
        for j in 0..8 {
            let want: f64 = rows.iter().map(|&(t, r)| tape.data(t)[r * 8 + j]).sum();
            assert!((tape.data(se)[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn stamps_differing_in_minute_differ_by_table_row_delta() {
        let mut tape = Tape::new();
        let p = random_params(&mut tape, 2, 3, 8, 42);
        let mut a = blank_stamp();
        a.minute = 15;
        let mut b = blank_stamp();
        b.minute = 30;
        let sa = stamp_matrix(&mut tape, &p, &[a]);
        let sb = stamp_matrix(&mut tape, &p, &[b]);
        let table = tape.data(p.minute);
        for j in 0..8 {
            let delta = table[15 * 8 + j] - table[30 * 8 + j];
            assert!((tape.data(sa)[j] - tape.data(sb)[j] - delta).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "outside its table")]
    fn out_of_range_stamp_is_rejected() {
        let mut tape = Tape::new();
        let p = zero_params(&mut tape, 2, 3, 8);
        let mut bad = blank_stamp();
        bad.month0 = 12;
        stamp_matrix(&mut tape, &p, &[bad]);
    }

    #[test]
    fn stamp_gradients_land_on_the_picked_rows() {
        let mut tape = Tape::new();
        let p = random_params(&mut tape, 2, 3, 8, 43);
        let mut s2 = blank_stamp();
        s2.hour = 7;
        let se = stamp_matrix(&mut tape, &p, &[blank_stamp(), s2, s2]);
        let loss = tape.sum_all(se);
        tape.backward(loss);
        let g = tape.grad(p.hour).unwrap();
        // hour 0 picked once, hour 7 twice, all others never
        assert!(g[..8].iter().all(|&x| x == 1.0));
        assert!(g[7 * 8..8 * 8].iter().all(|&x| x == 2.0));
        assert!(g[8..7 * 8].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn projection_is_affine_then_lrelu() {
        let mut tape = Tape::new();
        // 2 channels x 3 nodes window, 2x4 weights
        let window = [1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        let (wdata, _, _) = seeded_matrix(7, 2, 4, 0.3);
        let (bdata, _, _) = seeded_matrix(8, 1, 4, 0.3);
        let w = tape.leaf(wdata.clone(), 2, 4, true);
        let b = tape.leaf(bdata.clone(), 1, 4, true);
        let u = project_info(&mut tape, &window, 2, 3, w, b, 0.2);
        assert_eq!(tape.dims(u), (3, 4));
        for t in 0..3 {
            for j in 0..4 {
                let pre = window[t] * wdata[j] + window[3 + t] * wdata[4 + j] + bdata[j];
                let want = if pre >= 0.0 { pre } else { 0.2 * pre };
                assert!((tape.data(u)[t * 4 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_projection_with_positive_bias_gives_constant_rows() {
        let mut tape = Tape::new();
        let w = tape.leaf(vec![0.0; 2 * 4], 2, 4, true);
        let b = tape.leaf(vec![0.5, 1.0, 1.5, 2.0], 1, 4, true);
        let u = project_info(&mut tape, &[3.0; 6], 2, 3, w, b, 0.2);
        for t in 0..3 {
            assert_eq!(tape.data(u)[t * 4..(t + 1) * 4], [0.5, 1.0, 1.5, 2.0]);
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)] // positional oracle
    fn assembly_reduces_to_positional_when_learnables_are_zero() {
        let mut tape = Tape::new();
        let p = zero_params(&mut tape, 2, 3, 8);
        let stamps = vec![blank_stamp(); 5];
        let enc = assemble_encoder_input(&mut tape, &p, &[0.7; 10], 2, &stamps, 0.2);
        for t in 0..5 {
            // W1 = 0 so the projection term is LReLU(0) = 0 regardless of
            // the window values
            let pe = positional_vector(t, 8);
            for j in 0..8 {
                assert!((tape.data(enc)[t * 8 + j] - pe[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn assembly_is_additive_in_the_info_term() {
        // two windows, same params: the difference of assembled inputs
        // equals the difference of projections, no PE/SE contamination
        let mut tape = Tape::new();
        let p = random_params(&mut tape, 2, 3, 8, 44);
        let mut s = blank_stamp();
        s.day0 = 17;
        let stamps = vec![s; 4];
        let wa: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let wb: Vec<f64> = (0..8).map(|i| i as f64 * -0.2).collect();
        let ea = assemble_encoder_input(&mut tape, &p, &wa, 2, &stamps, 0.2);
        let eb = assemble_encoder_input(&mut tape, &p, &wb, 2, &stamps, 0.2);
        let ua = project_info(&mut tape, &wa, 2, 4, p.w1, p.b1, 0.2);
        let ub = project_info(&mut tape, &wb, 2, 4, p.w1, p.b1, 0.2);
        for k in 0..32 {
            let lhs = tape.data(ea)[k] - tape.data(eb)[k];
            let rhs = tape.data(ua)[k] - tape.data(ub)[k];
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)] // positional oracle
    fn full_assembly_matches_three_term_oracle() {
        let mut tape = Tape::new();
        let p = random_params(&mut tape, 2, 3, 8, 45);
        let mut rng = stream(46, "embed-test", &[]);
        let window: Vec<f64> = (0..3 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let stamps: Vec<Stamp> = (0..4)
            .map(|i| Stamp { year_off: 1, month0: 5, day0: 8, hour: i as u8, minute: 0, event: 0 })
            .collect();
        let dec = assemble_decoder_input(&mut tape, &p, &window, 3, &stamps, 0.2);

        let u = project_info(&mut tape, &window, 3, 4, p.w2, p.b2, 0.2);
        let se = stamp_matrix(&mut tape, &p, &stamps);
        for t in 0..4 {
            let pe = positional_vector(t, 8);
            for j in 0..8 {
                let want = tape.data(u)[t * 8 + j] + pe[j] + tape.data(se)[t * 8 + j];
                assert!((tape.data(dec)[t * 8 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn discriminator_input_is_a_plain_transpose() {
        // 2 sites x 3 nodes -> 3 nodes x 2 sites
        let d = discriminator_input(&[1.0, 2.0, 3.0, 10.0, 20.0, 30.0], 2, 3);
        assert_eq!(d, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]);
    }

    #[test]
    fn embedding_parameters_receive_gradients() {
        let mut tape = Tape::new();
        let p = random_params(&mut tape, 2, 3, 8, 47);
        let stamps = vec![blank_stamp(); 4];
        let enc = assemble_encoder_input(&mut tape, &p, &[0.3; 8], 2, &stamps, 0.2);
        let loss = tape.sum_squares(enc);
        tape.backward(loss);
        for (name, id) in [("w1", p.w1), ("b1", p.b1), ("year", p.year), ("event", p.event)] {
            let g = tape.grad(id).unwrap();
            assert!(g.iter().any(|&x| x != 0.0), "no gradient reached {name}");
        }
        // decoder projection took no part in this pass
        assert!(tape.grad(p.w2).unwrap().iter().all(|&x| x == 0.0));
    }
}
