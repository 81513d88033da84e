//! Shared test fixtures: a model small enough to forward in
//! microseconds and synthetic windowed samples with plausible values.

use crate::config::ModelConfig;
use crate::data::window::WindowedSample;
use crate::data::Stamp;
use crate::tensor::gradcheck::seeded_matrix;

/// Two-site model with 16-node windows and an 8-node lead.
pub fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        n_t: 16,
        n_lag: 8,
        n_m: 8,
        n_e: 2,
        dec_layers: 2,
        heads: 2,
        d_z: 4,
        ffn_mult: 2,
        style_hidden: 8,
        n_sites: 2,
        disc_channels: 4,
        enc_channels: vec!["a:power".into(), "b:power".into(), "a:nwp".into()],
        dec_channels: vec!["a:power".into(), "b:power".into()],
        ..ModelConfig::default()
    }
}

/// Rolling calendar stamps, one per window column.
pub fn stamps(n: usize) -> Vec<Stamp> {
    (0..n)
        .map(|i| Stamp {
            year_off: 0,
            month0: (i % 12) as u8,
            day0: (i % 28) as u8,
            hour: (i % 24) as u8,
            minute: 0,
            event: (i % 2) as u8,
        })
        .collect()
}

/// A seeded sample with every field in [0, 1].
pub fn tiny_sample(cfg: &ModelConfig, seed: u64) -> WindowedSample {
    let lead = cfg.lead();
    let unit = |s, n| {
        let (mut v, _, _) = seeded_matrix(s, 1, n, 0.5);
        for x in v.iter_mut() {
            *x += 0.5;
        }
        v
    };
    WindowedSample {
        anchor: 0,
        origin_ts: chrono::DateTime::from_timestamp(0, 0).unwrap(),
        enc: unit(seed, cfg.enc_channels.len() * cfg.n_t),
        dec: unit(seed + 1, cfg.dec_channels.len() * cfg.n_t),
        target: unit(seed + 2, cfg.n_sites * lead),
        known_power: unit(seed + 3, cfg.n_sites * cfg.n_lag),
        full_power: unit(seed + 4, cfg.n_sites * cfg.n_t),
        enc_stamps: stamps(cfg.n_t),
        dec_stamps: stamps(cfg.n_t),
    }
}
