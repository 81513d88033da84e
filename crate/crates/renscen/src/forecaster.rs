//! The generative forecaster: an embedded encoder-decoder with
//! sparse-query attention and distilling in the encoder, causal self-
//! plus cross-attention in the decoder, latent style injection in the
//! decoder FFNs, and a site-mixing convolutional output block.
//!
//! Two sources of randomness are kept strictly apart. A [`DropoutMask`]
//! zeroes a fixed subset of encoder weights (the dropout-eligible set)
//! for the whole forward pass — resampling it probes model uncertainty.
//! A [`LatentDraw`] feeds the decoder's style injection — resampling it
//! probes the noise the data itself carries. With the mask absent and
//! `z` fixed, the forward pass is a pure function of its inputs.

use std::collections::{BTreeMap, HashMap};

use rand::RngExt;
use rand_distr::Distribution;

use crate::attention::{distill_layer, multihead, AttentionKind, AttentionParams};
use crate::config::ModelConfig;
use crate::data::window::WindowedSample;
use crate::embed::{
    assemble_decoder_input, assemble_encoder_input, discriminator_input, EmbeddingParams,
};
use crate::error::NumericError;
use crate::params::{glorot, glorot_conv, init_stream, uniform, BoundParams, ParamRole, ParamStore};
use crate::seedstream::{stream, subseed};
use crate::tensor::{Tape, TensorId};

const LN_EPS: f64 = 1e-5;
const ADAIN_EPS: f64 = 1e-5;
/// Untrained output sits mid-range instead of at the clip floor.
const HEAD_BIAS_INIT: f64 = 0.3;
/// Stamp tables start small so calendar effects are learned, not imposed.
const STAMP_INIT: f64 = 0.05;

/// One standard-normal latent vector and the stream seed that produced
/// it, so any draw can be replayed exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDraw {
    pub z: Vec<f64>,
    pub seed: u64,
}

impl LatentDraw {
    /// Draw `noise_idx`-th latent under a master seed. Indexing only by
    /// the noise counter keeps draws shared across scenario patterns.
    pub fn sample(d_z: usize, master: u64, noise_idx: u64) -> Self {
        Self::from_seed(d_z, subseed(master, "latent", &[noise_idx]))
    }

    /// Replay a draw from its recorded seed.
    pub fn from_seed(d_z: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let z = (0..d_z).map(|_| rand_distr::StandardNormal.sample(&mut rng)).collect();
        LatentDraw { z, seed }
    }
}

/// Binary keep/drop arrays for every dropout-eligible tensor, keyed by
/// parameter name. Kept entries are scaled by `1/(1-p)` at application
/// time, so the expected forward magnitude is mask-free.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    pub masks: BTreeMap<String, Vec<f64>>,
    pub p: f64,
    pub seed: u64,
}

impl DropoutMask {
    /// Fraction of zeroed entries across all masked tensors.
    pub fn zero_fraction(&self) -> f64 {
        let total: usize = self.masks.values().map(|m| m.len()).sum();
        let zeros: usize =
            self.masks.values().map(|m| m.iter().filter(|&&v| v == 0.0).count()).sum();
        zeros as f64 / total.max(1) as f64
    }
}

/// Sample one mask over the store's dropout-eligible tensors; each
/// entry drops independently with probability `p`.
pub fn sample_mask(store: &ParamStore, p: f64, seed: u64) -> Result<DropoutMask, String> {
    if !(0.0..1.0).contains(&p) {
        return Err(format!("dropout probability must be in [0,1), got {p}"));
    }
    let mut rng = stream(seed, "dropout", &[]);
    let mut masks = BTreeMap::new();
    for t in store.iter().filter(|t| t.role == ParamRole::DropoutEligible) {
        let m = (0..t.data.len()).map(|_| if rng.random_bool(p) { 0.0 } else { 1.0 }).collect();
        masks.insert(t.name.clone(), m);
    }
    Ok(DropoutMask { masks, p, seed })
}

/// Inverted-dropout application: elementwise `w * mask / (1-p)`.
/// Gradient reaches exactly the surviving entries.
pub fn apply_mask(tape: &mut Tape, w: TensorId, mask: &[f64], p: f64) -> TensorId {
    let keep = 1.0 - p;
    let scaled: Vec<f64> = mask.iter().map(|&m| m / keep).collect();
    tape.mul_const(w, &scaled)
}

/// Tape handles of one style-mapping network (latent to per-channel
/// scale and shift).
#[derive(Debug, Clone, Copy)]
pub struct StyleParams {
    pub w1: TensorId,
    pub b1: TensorId,
    /// Final affine, `hidden x 2C`; zero-initialized so training starts
    /// from scale 1, shift 0.
    pub w2: TensorId,
    pub b2: TensorId,
}

/// Map a latent vector to `(scale, shift)`, each `1 x C`. The raw scale
/// head is offset by +1 so a zeroed network is the identity style.
pub fn style_map(tape: &mut Tape, z: &[f64], s: &StyleParams, slope: f64) -> (TensorId, TensorId) {
    let zr = tape.constm(z.to_vec(), 1, z.len());
    let h0 = tape.matmul(zr, s.w1);
    let h1 = tape.add(h0, s.b1);
    let h = tape.lrelu(h1, slope);
    let o0 = tape.matmul(h, s.w2);
    let o = tape.add(o0, s.b2);
    let c2 = tape.dims(o).1;
    assert!(c2.is_multiple_of(2), "style output width must be even (scale ++ shift)");
    let raw = tape.slice_cols(o, 0, c2 / 2);
    let scale = tape.add_scalar(raw, 1.0);
    let shift = tape.slice_cols(o, c2 / 2, c2);
    (scale, shift)
}

/// Adaptive instance normalization: standardize `hidden` per channel
/// over positions, then apply the latent-derived affine.
pub fn adain_inject(
    tape: &mut Tape,
    hidden: TensorId,
    z: &[f64],
    s: &StyleParams,
    slope: f64,
) -> TensorId {
    let (l, c) = tape.dims(hidden);
    let (scale, shift) = style_map(tape, z, s, slope);
    assert_eq!(tape.dims(scale).1, c, "style width must match hidden channels");
    let norm = tape.instance_norm_cols(hidden, ADAIN_EPS);
    let sb = tape.broadcast_rows(scale, l);
    let scaled = tape.mul(norm, sb);
    let hb = tape.broadcast_rows(shift, l);
    tape.add(scaled, hb)
}

fn add_glorot(s: &mut ParamStore, seed: u64, name: &str, r: usize, c: usize, role: ParamRole) {
    let data = glorot(&mut init_stream(seed, name), r, c);
    s.add(name, r, c, role, data);
}

fn add_conv(s: &mut ParamStore, seed: u64, name: &str, c_out: usize, c_in: usize, k: usize) {
    let data = glorot_conv(&mut init_stream(seed, name), c_out, c_in, k);
    s.add(name, c_out, c_in * k, ParamRole::Fixed, data);
}

fn add_const(s: &mut ParamStore, name: &str, r: usize, c: usize, v: f64) {
    s.add(name, r, c, ParamRole::Fixed, vec![v; r * c]);
}

/// Register and initialize every forecaster tensor. Dropout-eligible:
/// encoder attention output projections and encoder FFN weights; all
/// biases, normalization affines, and decoder weights stay fixed.
pub fn init_forecaster(cfg: &ModelConfig, seed: u64) -> ParamStore {
    cfg.validate().expect("invalid model config");
    let c_enc = cfg.enc_channels.len();
    let c_dec = cfg.dec_channels.len();
    assert!(c_enc > 0 && c_dec > 0, "channel lists must be resolved before init");
    let (n_m, d, f) = (cfg.n_m, cfg.d_head(), cfg.ffn_mult * cfg.n_m);
    let mut s = ParamStore::new();

    add_glorot(&mut s, seed, "embed.enc.w", c_enc, n_m, ParamRole::Fixed);
    add_const(&mut s, "embed.enc.b", 1, n_m, 0.0);
    add_glorot(&mut s, seed, "embed.dec.w", c_dec, n_m, ParamRole::Fixed);
    add_const(&mut s, "embed.dec.b", 1, n_m, 0.0);
    for (name, rows) in crate::embed::STAMP_TABLE_ROWS
        .iter()
        .zip(["year", "month", "day", "hour", "minute", "event"])
        .map(|(&r, n)| (n, r))
    {
        let full = format!("embed.stamp.{name}");
        let data = uniform(&mut init_stream(seed, &full), rows * n_m, STAMP_INIT);
        s.add(&full, rows, n_m, ParamRole::Fixed, data);
    }

    for l in 0..cfg.n_e {
        for h in 0..cfg.heads {
            add_glorot(&mut s, seed, &format!("enc.{l}.attn.wq.{h}"), n_m, d, ParamRole::Fixed);
            add_glorot(&mut s, seed, &format!("enc.{l}.attn.wk.{h}"), n_m, d, ParamRole::Fixed);
            add_glorot(&mut s, seed, &format!("enc.{l}.attn.wv.{h}"), n_m, d, ParamRole::Fixed);
        }
        add_glorot(&mut s, seed, &format!("enc.{l}.attn.wo"), cfg.heads * d, n_m, ParamRole::DropoutEligible);
        add_const(&mut s, &format!("enc.{l}.ln1.g"), 1, n_m, 1.0);
        add_const(&mut s, &format!("enc.{l}.ln1.b"), 1, n_m, 0.0);
        add_glorot(&mut s, seed, &format!("enc.{l}.ffn.w1"), n_m, f, ParamRole::DropoutEligible);
        add_const(&mut s, &format!("enc.{l}.ffn.b1"), 1, f, 0.0);
        add_glorot(&mut s, seed, &format!("enc.{l}.ffn.w2"), f, n_m, ParamRole::DropoutEligible);
        add_const(&mut s, &format!("enc.{l}.ffn.b2"), 1, n_m, 0.0);
        add_const(&mut s, &format!("enc.{l}.ln2.g"), 1, n_m, 1.0);
        add_const(&mut s, &format!("enc.{l}.ln2.b"), 1, n_m, 0.0);
    }
    for l in 0..cfg.n_e.saturating_sub(1) {
        add_conv(&mut s, seed, &format!("distill.{l}.w"), n_m, n_m, 3);
        add_const(&mut s, &format!("distill.{l}.b"), n_m, 1, 0.0);
    }

    for l in 0..cfg.dec_layers {
        for part in ["self", "cross"] {
            for h in 0..cfg.heads {
                add_glorot(&mut s, seed, &format!("dec.{l}.{part}.wq.{h}"), n_m, d, ParamRole::Fixed);
                add_glorot(&mut s, seed, &format!("dec.{l}.{part}.wk.{h}"), n_m, d, ParamRole::Fixed);
                add_glorot(&mut s, seed, &format!("dec.{l}.{part}.wv.{h}"), n_m, d, ParamRole::Fixed);
            }
            add_glorot(&mut s, seed, &format!("dec.{l}.{part}.wo"), cfg.heads * d, n_m, ParamRole::Fixed);
        }
        for ln in ["ln1", "ln2", "ln3"] {
            add_const(&mut s, &format!("dec.{l}.{ln}.g"), 1, n_m, 1.0);
            add_const(&mut s, &format!("dec.{l}.{ln}.b"), 1, n_m, 0.0);
        }
        add_glorot(&mut s, seed, &format!("dec.{l}.ffn.w1"), n_m, f, ParamRole::Fixed);
        add_const(&mut s, &format!("dec.{l}.ffn.b1"), 1, f, 0.0);
        add_glorot(&mut s, seed, &format!("dec.{l}.ffn.w2"), f, n_m, ParamRole::Fixed);
        add_const(&mut s, &format!("dec.{l}.ffn.b2"), 1, n_m, 0.0);
        add_glorot(&mut s, seed, &format!("dec.{l}.style.w1"), cfg.d_z, cfg.style_hidden, ParamRole::Fixed);
        add_const(&mut s, &format!("dec.{l}.style.b1"), 1, cfg.style_hidden, 0.0);
        add_const(&mut s, &format!("dec.{l}.style.w2"), cfg.style_hidden, 2 * n_m, 0.0);
        add_const(&mut s, &format!("dec.{l}.style.b2"), 1, 2 * n_m, 0.0);
    }

    add_glorot(&mut s, seed, "out.head.w", n_m, cfg.n_sites, ParamRole::Fixed);
    add_const(&mut s, "out.head.b", 1, cfg.n_sites, HEAD_BIAS_INIT);
    add_conv(&mut s, seed, "out.spatial.w", cfg.n_sites, cfg.n_sites, cfg.spatial_kernel);
    add_const(&mut s, "out.spatial.b", cfg.n_sites, 1, 0.0);
    add_conv(&mut s, seed, "out.point.w", cfg.n_sites, cfg.n_sites, 1);
    add_const(&mut s, "out.point.b", cfg.n_sites, 1, 0.0);
    s
}

/// Resolve every parameter to the tensor a forward pass should use:
/// the bound leaf, wrapped in its scaled dropout mask where one applies.
fn effective_ids(
    tape: &mut Tape,
    store: &ParamStore,
    bound: &BoundParams,
    mask: Option<&DropoutMask>,
) -> HashMap<String, TensorId> {
    if let Some(m) = mask {
        for name in m.masks.keys() {
            assert_eq!(
                store.tensor(name).role,
                ParamRole::DropoutEligible,
                "mask covers fixed parameter {name}"
            );
        }
    }
    store
        .iter()
        .map(|t| {
            let id = bound.id(&t.name);
            let eff = match mask.and_then(|m| m.masks.get(&t.name)) {
                Some(bits) => apply_mask(tape, id, bits, mask.unwrap().p),
                None => id,
            };
            (t.name.clone(), eff)
        })
        .collect()
}

fn e(eff: &HashMap<String, TensorId>, name: &str) -> TensorId {
    *eff.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
}

fn attn_from(eff: &HashMap<String, TensorId>, prefix: &str, heads: usize) -> AttentionParams {
    AttentionParams {
        wq: (0..heads).map(|h| e(eff, &format!("{prefix}.wq.{h}"))).collect(),
        wk: (0..heads).map(|h| e(eff, &format!("{prefix}.wk.{h}"))).collect(),
        wv: (0..heads).map(|h| e(eff, &format!("{prefix}.wv.{h}"))).collect(),
        wo: e(eff, &format!("{prefix}.wo")),
    }
}

fn ffn(
    tape: &mut Tape,
    x: TensorId,
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
    slope: f64,
) -> TensorId {
    let rows = tape.dims(x).0;
    let h0 = tape.matmul(x, w1);
    let b1b = tape.broadcast_rows(b1, rows);
    let h1 = tape.add(h0, b1b);
    let h = tape.lrelu(h1, slope);
    let o0 = tape.matmul(h, w2);
    let b2b = tape.broadcast_rows(b2, rows);
    tape.add(o0, b2b)
}

fn encoder_layer<R: rand::Rng>(
    tape: &mut Tape,
    x: TensorId,
    eff: &HashMap<String, TensorId>,
    l: usize,
    cfg: &ModelConfig,
    rng: &mut R,
) -> TensorId {
    let ap = attn_from(eff, &format!("enc.{l}.attn"), cfg.heads);
    let kind = AttentionKind::ProbSparse { sample_c: cfg.sparse_c };
    let a = multihead(tape, x, x, &ap, kind, rng);
    let r1 = tape.add(x, a);
    let x1 = tape.layer_norm_rows(r1, e(eff, &format!("enc.{l}.ln1.g")), e(eff, &format!("enc.{l}.ln1.b")), LN_EPS);
    let f = ffn(
        tape,
        x1,
        e(eff, &format!("enc.{l}.ffn.w1")),
        e(eff, &format!("enc.{l}.ffn.b1")),
        e(eff, &format!("enc.{l}.ffn.w2")),
        e(eff, &format!("enc.{l}.ffn.b2")),
        cfg.lrelu_slope,
    );
    let r2 = tape.add(x1, f);
    tape.layer_norm_rows(r2, e(eff, &format!("enc.{l}.ln2.g")), e(eff, &format!("enc.{l}.ln2.b")), LN_EPS)
}

#[allow(clippy::too_many_arguments)]
fn decoder_layer<R: rand::Rng>(
    tape: &mut Tape,
    y: TensorId,
    enc_out: TensorId,
    eff: &HashMap<String, TensorId>,
    l: usize,
    cfg: &ModelConfig,
    z: &[f64],
    rng: &mut R,
) -> Result<TensorId, NumericError> {
    let sp = attn_from(eff, &format!("dec.{l}.self"), cfg.heads);
    let a = multihead(tape, y, y, &sp, AttentionKind::FullCausal, rng);
    let r1 = tape.add(y, a);
    let y1 = tape.layer_norm_rows(r1, e(eff, &format!("dec.{l}.ln1.g")), e(eff, &format!("dec.{l}.ln1.b")), LN_EPS);

    let cp = attn_from(eff, &format!("dec.{l}.cross"), cfg.heads);
    let c = multihead(tape, y1, enc_out, &cp, AttentionKind::Full, rng);
    let r2 = tape.add(y1, c);
    let y2 = tape.layer_norm_rows(r2, e(eff, &format!("dec.{l}.ln2.g")), e(eff, &format!("dec.{l}.ln2.b")), LN_EPS);

    let f = ffn(
        tape,
        y2,
        e(eff, &format!("dec.{l}.ffn.w1")),
        e(eff, &format!("dec.{l}.ffn.b1")),
        e(eff, &format!("dec.{l}.ffn.w2")),
        e(eff, &format!("dec.{l}.ffn.b2")),
        cfg.lrelu_slope,
    );
    let style = StyleParams {
        w1: e(eff, &format!("dec.{l}.style.w1")),
        b1: e(eff, &format!("dec.{l}.style.b1")),
        w2: e(eff, &format!("dec.{l}.style.w2")),
        b2: e(eff, &format!("dec.{l}.style.b2")),
    };
    let g = adain_inject(tape, f, z, &style, cfg.lrelu_slope);
    let r3 = tape.add(y2, g);
    let y3 = tape.layer_norm_rows(r3, e(eff, &format!("dec.{l}.ln3.g")), e(eff, &format!("dec.{l}.ln3.b")), LN_EPS);
    tape.check_finite(y3, &format!("decoder layer {l}"))?;
    Ok(y3)
}

/// Site-mixing residual stage of the output block: temporal conv over
/// each site with full cross-site channel mixing, LReLU, pointwise
/// conv, added back onto the per-site head output.
#[allow(clippy::too_many_arguments)]
pub fn spatial_mix(
    tape: &mut Tape,
    y: TensorId,
    w_sp: TensorId,
    b_sp: TensorId,
    w_pw: TensorId,
    b_pw: TensorId,
    kernel: usize,
    slope: f64,
) -> TensorId {
    let yt = tape.transpose(y);
    let c1 = tape.conv1d(yt, w_sp, b_sp, kernel, (kernel - 1) / 2, 1);
    let a1 = tape.lrelu(c1, slope);
    let c2 = tape.conv1d(a1, w_pw, b_pw, 1, 0, 1);
    let res = tape.add(yt, c2);
    tape.transpose(res)
}

fn output_block(
    tape: &mut Tape,
    dec_out: TensorId,
    eff: &HashMap<String, TensorId>,
    cfg: &ModelConfig,
) -> (TensorId, usize) {
    let rows = tape.dims(dec_out).0;
    let h0 = tape.matmul(dec_out, e(eff, "out.head.w"));
    let hb = tape.broadcast_rows(e(eff, "out.head.b"), rows);
    let y = tape.add(h0, hb);
    let mixed = spatial_mix(
        tape,
        y,
        e(eff, "out.spatial.w"),
        e(eff, "out.spatial.b"),
        e(eff, "out.point.w"),
        e(eff, "out.point.b"),
        cfg.spatial_kernel,
        cfg.lrelu_slope,
    );
    let lead_rows = tape.slice_rows(mixed, cfg.n_lag, cfg.n_t);
    tape.clip(lead_rows, 0.0, cfg.clip_max)
}

/// Everything a forward pass reports.
#[derive(Debug, Clone, Copy)]
pub struct ForecastOut {
    /// Lead-window forecast, `lead x n_sites`, clipped to `[0, clip_max]`.
    pub forecast: TensorId,
    /// How many output cells hit the clip.
    pub clip_events: usize,
    /// Encoder stack output, `(n_t / 2^(n_e-1)) x n_m`.
    pub enc_out: TensorId,
}

/// One-shot forecast of a sample's lead window. Deterministic given
/// (parameters, `z`, `mask`, the RNG's state); with `mask` absent,
/// dropout is disabled entirely.
#[allow(clippy::too_many_arguments)]
pub fn forecast_forward<R: rand::Rng>(
    tape: &mut Tape,
    cfg: &ModelConfig,
    store: &ParamStore,
    bound: &BoundParams,
    sample: &WindowedSample,
    z: &LatentDraw,
    mask: Option<&DropoutMask>,
    rng: &mut R,
) -> Result<ForecastOut, NumericError> {
    assert_eq!(z.z.len(), cfg.d_z, "latent width mismatches config");
    let eff = effective_ids(tape, store, bound, mask);
    let emb = EmbeddingParams {
        w1: e(&eff, "embed.enc.w"),
        b1: e(&eff, "embed.enc.b"),
        w2: e(&eff, "embed.dec.w"),
        b2: e(&eff, "embed.dec.b"),
        year: e(&eff, "embed.stamp.year"),
        month: e(&eff, "embed.stamp.month"),
        day: e(&eff, "embed.stamp.day"),
        hour: e(&eff, "embed.stamp.hour"),
        minute: e(&eff, "embed.stamp.minute"),
        event: e(&eff, "embed.stamp.event"),
        n_m: cfg.n_m,
    };
    let c_enc = store.tensor("embed.enc.w").rows;
    let c_dec = store.tensor("embed.dec.w").rows;

    let mut x = assemble_encoder_input(tape, &emb, &sample.enc, c_enc, &sample.enc_stamps, cfg.lrelu_slope);
    tape.check_finite(x, "encoder input embedding")?;
    for l in 0..cfg.n_e {
        x = encoder_layer(tape, x, &eff, l, cfg, rng);
        tape.check_finite(x, &format!("encoder layer {l}"))?;
        if l + 1 < cfg.n_e {
            let w = e(&eff, &format!("distill.{l}.w"));
            let b = e(&eff, &format!("distill.{l}.b"));
            x = distill_layer(tape, x, w, b, cfg.lrelu_slope);
        }
    }
    let enc_out = x;

    let mut y = assemble_decoder_input(tape, &emb, &sample.dec, c_dec, &sample.dec_stamps, cfg.lrelu_slope);
    tape.check_finite(y, "decoder input embedding")?;
    for l in 0..cfg.dec_layers {
        y = decoder_layer(tape, y, enc_out, &eff, l, cfg, &z.z, rng)?;
    }
    let (forecast, clip_events) = output_block(tape, y, &eff, cfg);
    tape.check_finite(forecast, "output block")?;
    Ok(ForecastOut { forecast, clip_events, enc_out })
}

/// Stitch the known prefix onto a forecast: the full `n_t x n_sites`
/// trajectory the critic judges.
pub fn completed_window(
    tape: &mut Tape,
    sample: &WindowedSample,
    n_sites: usize,
    n_lag: usize,
    forecast: TensorId,
) -> TensorId {
    let known = discriminator_input(&sample.known_power, n_sites, n_lag);
    let k = tape.constm(known, n_lag, n_sites);
    tape.concat_rows(k, forecast)
}
