//! Model, training, and tuning configuration with JSON round-tripping.
//!
//! Defaults reproduce the reference setup (full-scale day-ahead wind);
//! [`ModelConfig::desk`] shrinks widths and window lengths to something a
//! single core trains in minutes, for tests and demos.

use serde::{Deserialize, Serialize};

/// Which channels feed the forecaster, by paper-style case:
/// `A` combines point forecasts with numeric weather forecasts, `B` uses
/// the sites' own power histories, `C` uses weather forecasts only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum CasePreset {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
    #[value(name = "C", alias = "c")]
    C,
}

/// What the auxiliary-loss decay exponent counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecayUnit {
    /// Outer training epochs (one forecaster update each). Default.
    #[default]
    Epoch,
    /// Every optimizer step, discriminator steps included.
    Step,
}

/// Architecture hyperparameters. Channel name lists pin the feature
/// order, so a checkpoint refuses silently permuted inputs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Window length in nodes for encoder and decoder inputs.
    pub n_t: usize,
    /// Known (lagging) prefix of the decoder window; `n_t - n_lag` is the
    /// forecast lead.
    pub n_lag: usize,
    /// Model width (embedding and attention feature size).
    pub n_m: usize,
    /// Encoder layers; a distilling layer halves the sequence after each
    /// but the last.
    pub n_e: usize,
    /// Decoder layers (masked self-attention, cross-attention, FFN with
    /// latent style injection).
    pub dec_layers: usize,
    /// Attention heads. Per-head width is `n_m / heads` rounded down;
    /// the output projection maps the concatenation back to `n_m`.
    pub heads: usize,
    /// Latent noise dimensionality.
    pub d_z: usize,
    /// FFN hidden width as a multiple of `n_m`.
    pub ffn_mult: usize,
    /// Sampling factor `c` for sparse attention: `u = ceil(c * ln l)`.
    pub sparse_c: f64,
    /// Dropout probability on the eligible encoder weights.
    pub p_dropout: f64,
    /// Negative-side slope of all leaky ReLUs.
    pub lrelu_slope: f64,
    /// Number of generation sites forecast jointly.
    pub n_sites: usize,
    /// Encoder input channels, in column order.
    pub enc_channels: Vec<String>,
    /// Decoder input channels, in column order (power channels are masked
    /// over the lead window).
    pub dec_channels: Vec<String>,
    /// Upper clip bound on normalized outputs (lower bound is 0).
    pub clip_max: f64,
    /// Temporal kernel width of the cross-site output convolution.
    pub spatial_kernel: usize,
    /// Discriminator conv stack: channels, kernel, stride, layer count.
    pub disc_channels: usize,
    pub disc_kernel: usize,
    pub disc_stride: usize,
    pub disc_layers: usize,
    /// Hidden width of the latent-to-style mapping.
    pub style_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_t: 192,
            n_lag: 96,
            n_m: 100,
            n_e: 2,
            dec_layers: 2,
            heads: 8,
            d_z: 16,
            ffn_mult: 2,
            sparse_c: 5.0,
            p_dropout: 0.2,
            lrelu_slope: 0.2,
            n_sites: 1,
            enc_channels: Vec::new(),
            dec_channels: Vec::new(),
            clip_max: 1.05,
            spatial_kernel: 3,
            disc_channels: 16,
            disc_kernel: 5,
            disc_stride: 2,
            disc_layers: 3,
            style_hidden: 32,
        }
    }
}

impl ModelConfig {
    /// Desk-scale variant: hourly data, two-day windows, one-day lead.
    pub fn desk() -> Self {
        ModelConfig { n_t: 48, n_lag: 24, n_m: 32, heads: 4, ..Default::default() }
    }

    /// Forecast lead in nodes.
    pub fn lead(&self) -> usize {
        self.n_t - self.n_lag
    }

    /// Per-head attention width (`d_k = d_v`).
    pub fn d_head(&self) -> usize {
        self.n_m / self.heads
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_lag == 0 || self.n_lag >= self.n_t {
            return Err(format!("n_lag must be in 1..n_t, got {} of {}", self.n_lag, self.n_t));
        }
        if self.heads == 0 || self.heads > self.n_m {
            return Err(format!("heads ({}) must be in 1..=n_m ({})", self.heads, self.n_m));
        }
        if !self.n_m.is_multiple_of(2) {
            return Err(format!("n_m must be even for sine-cosine positions, got {}", self.n_m));
        }
        if self.n_e == 0 || self.dec_layers == 0 {
            return Err("need at least one encoder and one decoder layer".into());
        }
        if !self.n_t.is_multiple_of(1 << (self.n_e - 1)) {
            return Err(format!(
                "n_t ({}) must be divisible by 2^(n_e-1) for {} distilling stages",
                self.n_t,
                self.n_e - 1
            ));
        }
        if !(0.0..1.0).contains(&self.p_dropout) {
            return Err(format!("p_dropout must be in [0,1), got {}", self.p_dropout));
        }
        if self.n_sites == 0 {
            return Err("n_sites must be positive".into());
        }
        if self.spatial_kernel.is_multiple_of(2) {
            return Err("spatial_kernel must be odd (same-padding conv)".into());
        }
        if self.clip_max <= 0.0 {
            return Err("clip_max must be positive".into());
        }
        Ok(())
    }
}

/// Training-loop hyperparameters and loss weights.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Outer epochs; each runs `n_d` discriminator steps and one
    /// forecaster step.
    pub n_ep: usize,
    /// Adam learning rate for both networks.
    pub alpha: f64,
    /// Minibatch size.
    pub batch: usize,
    /// Discriminator steps per epoch.
    pub n_d: usize,
    /// Dropout-pattern draws per forecaster step.
    pub n_f: usize,
    /// Latent draws per forecaster step.
    pub n_n: usize,
    /// Weights of the variety, auxiliary, and adversarial terms.
    pub lambda_va: f64,
    pub lambda_au: f64,
    pub lambda_ad: f64,
    /// Gradient-penalty weight in the discriminator loss.
    pub lambda_gp: f64,
    /// Auxiliary-loss decay rate (`exp(-epsilon * n)`).
    pub epsilon: f64,
    pub decay_unit: DecayUnit,
    /// Penalize the squared gradient norm instead of the norm itself.
    pub r1_squared: bool,
    /// Penalize the gradient w.r.t. discriminator weights instead of the
    /// gradient w.r.t. the real input window.
    pub r1_on_params: bool,
    /// Global-norm gradient clip shared by both networks.
    pub grad_clip: f64,
    /// Checkpoint cadence in epochs (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
    /// Validation cadence in epochs (0 disables; best model tracking
    /// follows validation).
    pub validate_every: usize,
    /// Master seed for every stream in the run.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_ep: 5000,
            alpha: 0.0008,
            batch: 32,
            n_d: 2,
            n_f: 8,
            n_n: 2,
            lambda_va: 0.5,
            lambda_au: 0.5,
            lambda_ad: 1.0,
            lambda_gp: 3.0,
            epsilon: 0.05,
            decay_unit: DecayUnit::Epoch,
            r1_squared: false,
            r1_on_params: false,
            grad_clip: 10.0,
            checkpoint_every: 100,
            validate_every: 50,
            seed: 17,
        }
    }
}

impl TrainConfig {
    /// Desk-scale schedule matching [`ModelConfig::desk`].
    pub fn desk() -> Self {
        TrainConfig { n_ep: 300, batch: 16, ..Default::default() }
    }

    // negated comparisons so NaN fails validation rather than passing it
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), String> {
        if self.n_ep == 0 || self.batch == 0 || self.n_d == 0 {
            return Err("n_ep, batch, n_d must be positive".into());
        }
        if self.n_f == 0 || self.n_n == 0 {
            return Err("n_f and n_n must be positive".into());
        }
        if !(self.alpha > 0.0) || !(self.grad_clip > 0.0) {
            return Err("alpha and grad_clip must be positive".into());
        }
        if self.epsilon < 0.0 {
            return Err("epsilon must be non-negative".into());
        }
        for (name, v) in [
            ("lambda_va", self.lambda_va),
            ("lambda_au", self.lambda_au),
            ("lambda_ad", self.lambda_ad),
            ("lambda_gp", self.lambda_gp),
        ] {
            if !(v >= 0.0) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Inclusive numeric range for random search.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

/// Random-search space over the tunable training knobs. Window lengths
/// and model width are deliberately absent: they are fixed by the
/// problem, not searched.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningSpace {
    /// Log-uniform range for the learning rate.
    pub alpha: Range,
    /// Batch-size choices.
    pub batch: Vec<usize>,
    /// Integer ranges, sampled uniformly (inclusive).
    pub n_d: (usize, usize),
    pub n_f: (usize, usize),
    pub n_n: (usize, usize),
    /// Uniform range for the dropout probability.
    pub p_dropout: Range,
    /// Uniform range for the gradient-penalty weight.
    pub lambda_gp: Range,
    /// Number of sampled configurations.
    pub trials: usize,
    /// Epochs each trial trains before validation scoring.
    pub epochs_per_trial: usize,
}

impl Default for TuningSpace {
    fn default() -> Self {
        TuningSpace {
            alpha: Range { lo: 1e-4, hi: 3e-3 },
            batch: vec![8, 16, 32],
            n_d: (1, 3),
            n_f: (2, 8),
            n_n: (1, 3),
            p_dropout: Range { lo: 0.05, hi: 0.5 },
            lambda_gp: Range { lo: 1.0, hi: 4.0 },
            trials: 8,
            epochs_per_trial: 30,
        }
    }
}

/// Top-level config file: model + training + optional tuning space.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tuning: Option<TuningSpace>,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self, String> {
        let cfg: RunConfig = serde_json::from_str(s).map_err(|e| e.to_string())?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
