//! Convolutional critic: scores a power-trajectory window for
//! authenticity. A strided temporal conv stack feeds a dense head; a
//! mini-batch standard deviation channel in between lets the critic see
//! sample diversity, punishing collapsed generators.
//!
//! Scores are raw reals — the hinge losses downstream consume unbounded
//! critic values, so there is no output squashing.

use crate::config::ModelConfig;
use crate::params::{glorot, glorot_conv, init_stream, BoundParams, ParamRole, ParamStore};
use crate::tensor::{Tape, TensorId};

/// Variance floor under the square root, so a (practically impossible)
/// zero-variance batch cannot blow up the backward pass.
const VAR_EPS: f64 = 1e-12;

/// Sequence length after `layers` strided convolutions.
pub fn conv_stack_len(mut l: usize, layers: usize, kernel: usize, stride: usize) -> usize {
    let pad = (kernel - 1) / 2;
    for _ in 0..layers {
        assert!(l + 2 * pad >= kernel, "window too short for the conv stack");
        l = (l + 2 * pad - kernel) / stride + 1;
    }
    l
}

/// Register and initialize the critic's tensors: `disc_layers` convs
/// (kernel/stride from config) and the dense head. Nothing here is
/// dropout-eligible.
pub fn init_discriminator(cfg: &ModelConfig, seed: u64) -> ParamStore {
    cfg.validate().expect("invalid model config");
    let mut s = ParamStore::new();
    let mut c_in = cfg.n_sites;
    for l in 0..cfg.disc_layers {
        let name = format!("disc.conv.{l}.w");
        let data = glorot_conv(&mut init_stream(seed, &name), cfg.disc_channels, c_in, cfg.disc_kernel);
        s.add(&name, cfg.disc_channels, c_in * cfg.disc_kernel, ParamRole::Fixed, data);
        s.add(&format!("disc.conv.{l}.b"), cfg.disc_channels, 1, ParamRole::Fixed, vec![0.0; cfg.disc_channels]);
        c_in = cfg.disc_channels;
    }
    let l_out = conv_stack_len(cfg.n_t, cfg.disc_layers, cfg.disc_kernel, cfg.disc_stride);
    assert!(l_out >= 1, "conv stack consumed the whole window");
    let flat = l_out * (cfg.disc_channels + 1);
    let data = glorot(&mut init_stream(seed, "disc.head.w"), flat, 1);
    s.add("disc.head.w", flat, 1, ParamRole::Fixed, data);
    s.add("disc.head.b", 1, 1, ParamRole::Fixed, vec![0.0]);
    s
}

/// Append the mini-batch standard deviation channel to each member's
/// `L x C` feature map: the scalar mean over positions and channels of
/// the per-position, per-channel population std across the batch,
/// broadcast to a constant `L x 1` column. A singleton batch appends
/// exact zeros.
pub fn minibatch_stddev(tape: &mut Tape, feats: &[TensorId]) -> Vec<TensorId> {
    assert!(!feats.is_empty(), "empty batch");
    let (l, c) = tape.dims(feats[0]);
    for &f in feats {
        assert_eq!(tape.dims(f), (l, c), "batch members must share a shape");
    }
    let b = feats.len();
    if b == 1 {
        let zeros = tape.zeros(l, 1);
        return vec![tape.concat_cols(feats[0], zeros)];
    }
    let mut acc = feats[0];
    for &f in &feats[1..] {
        acc = tape.add(acc, f);
    }
    let mean = tape.scale(acc, 1.0 / b as f64);
    let mut var_acc = None;
    for &f in feats {
        let d = tape.sub(f, mean);
        let sq = tape.mul(d, d);
        var_acc = Some(match var_acc {
            None => sq,
            Some(a) => tape.add(a, sq),
        });
    }
    let var0 = tape.scale(var_acc.unwrap(), 1.0 / b as f64);
    let var = tape.add_scalar(var0, VAR_EPS);
    let sd = tape.sqrt(var);
    let pooled = tape.mean_all(sd);
    let chan = tape.broadcast_scalar(pooled, l, 1);
    feats.iter().map(|&f| tape.concat_cols(f, chan)).collect()
}

/// Score a batch of `n_t x n_sites` windows; one raw scalar per member.
/// Members share the mini-batch stddev channel, so the batch must be
/// scored together. Differentiable w.r.t. both windows and parameters.
pub fn discriminate_batch(
    tape: &mut Tape,
    cfg: &ModelConfig,
    bound: &BoundParams,
    windows: &[TensorId],
) -> Vec<TensorId> {
    let pad = (cfg.disc_kernel - 1) / 2;
    let mut feats = Vec::with_capacity(windows.len());
    for &w in windows {
        assert_eq!(
            tape.dims(w),
            (cfg.n_t, cfg.n_sites),
            "window mismatches the configured n_t x n_sites input"
        );
        let mut h = tape.transpose(w);
        for l in 0..cfg.disc_layers {
            let cw = bound.id(&format!("disc.conv.{l}.w"));
            let cb = bound.id(&format!("disc.conv.{l}.b"));
            let conv = tape.conv1d(h, cw, cb, cfg.disc_kernel, pad, cfg.disc_stride);
            h = tape.lrelu(conv, cfg.lrelu_slope);
        }
        feats.push(tape.transpose(h));
    }
    let with_sd = minibatch_stddev(tape, &feats);
    with_sd
        .iter()
        .map(|&f| {
            let (rows, cols) = tape.dims(f);
            let flat = tape.reshape(f, 1, rows * cols);
            let s = tape.matmul(flat, bound.id("disc.head.w"));
            tape.add(s, bound.id("disc.head.b"))
        })
        .collect()
}
