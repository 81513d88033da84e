//! Synthetic generation profiles with informative forecast channels.
//!
//! Each site gets four channels: observed `power`, a `pf` point forecast
//! (power plus heteroscedastic error), an `nwp` weather forecast of the
//! underlying driver, and `wx` actual weather observations. Drivers are
//! smooth multi-period oscillations with autoregressive disturbances, so
//! day-over-day persistence is a beatable but non-trivial baseline.

use chrono::{DateTime, TimeZone, Timelike, Utc};
use rand::RngExt;
use rand_distr::{Distribution, Normal};

use super::{ChannelKind, RawSeries, SchemaConfig};
use crate::seedstream::stream;

/// Kind of generation profile to synthesize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Wind,
    Pv,
}

/// Generation request for one synthetic dataset.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SynthSpec {
    pub profile: ProfileKind,
    pub days: usize,
    pub resolution_minutes: u32,
    pub sites: usize,
    pub capacity_mw: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { profile: ProfileKind::Wind, days: 120, resolution_minutes: 60, sites: 1, capacity_mw: 100.0, seed: 7 }
    }
}

fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap()
}

/// Cubic turbine curve: cut-in at 0.15, rated at 0.75 of driver range.
fn wind_power_curve(s: f64) -> f64 {
    let x = ((s - 0.15) / 0.6).clamp(0.0, 1.0);
    x * x * x
}

/// Generate the synthetic dataset and its matching schema sidecar.
pub fn synth_profile(spec: &SynthSpec) -> (Vec<RawSeries>, SchemaConfig) {
    assert!(spec.days > 0 && spec.sites > 0, "synth needs positive days and sites");
    assert!(spec.resolution_minutes > 0 && 1440 % spec.resolution_minutes == 0, "resolution must divide a day");
    let per_day = (1440 / spec.resolution_minutes) as usize;
    let n = spec.days * per_day;
    let start = default_start();
    let dt_hours = spec.resolution_minutes as f64 / 60.0;

    let mut all = Vec::with_capacity(spec.sites * 4);
    let mut capacities = std::collections::BTreeMap::new();
    for site in 0..spec.sites {
        let site_id = format!("site{site:02}");
        capacities.insert(site_id.clone(), spec.capacity_mw);
        let mut rng = stream(spec.seed, "synth", &[site as u64]);
        let noise = Normal::new(0.0, 1.0).unwrap();

        // driver series in [0,1]-ish units
        let mut driver = Vec::with_capacity(n);
        match spec.profile {
            ProfileKind::Wind => {
                let phase1 = rng.random_range(0.0..std::f64::consts::TAU);
                let phase2 = rng.random_range(0.0..std::f64::consts::TAU);
                let (mut e1, mut e2) = (0.0f64, 0.0f64);
                for t in 0..n {
                    let h = t as f64 * dt_hours;
                    let base = 0.45
                        + 0.24 * (std::f64::consts::TAU * h / 63.7 + phase1).sin()
                        + 0.17 * (std::f64::consts::TAU * h / 211.0 + phase2).sin();
                    let e = 0.85 * e1 - 0.12 * e2 + 0.075 * noise.sample(&mut rng);
                    e2 = e1;
                    e1 = e;
                    driver.push((base + e).clamp(0.0, 1.0));
                }
            }
            ProfileKind::Pv => {
                // cloudiness factor, AR(1) toward clear sky
                let mut m = 0.8f64;
                for t in 0..n {
                    let _ = t;
                    m = (0.82 * m + 0.18 + 0.12 * noise.sample(&mut rng)).clamp(0.15, 1.0);
                    driver.push(m);
                }
            }
        }

        let clear_sky = |node: usize| -> f64 {
            let ts = start + chrono::Duration::minutes(spec.resolution_minutes as i64 * node as i64);
            let hour = ts.hour() as f64 + ts.minute() as f64 / 60.0;
            let x = (hour - 6.0) / 12.0;
            if (0.0..=1.0).contains(&x) {
                (std::f64::consts::PI * x).sin()
            } else {
                0.0
            }
        };

        let power: Vec<f64> = (0..n)
            .map(|t| match spec.profile {
                ProfileKind::Wind => wind_power_curve(driver[t]),
                ProfileKind::Pv => clear_sky(t) * driver[t],
            })
            .collect();

        // point forecast: power plus level and proportional error, in MW
        let pf: Vec<f64> = (0..n)
            .map(|t| {
                let err = 0.06 * noise.sample(&mut rng) + 0.05 * power[t] * noise.sample(&mut rng);
                ((power[t] + err).clamp(0.0, 1.1)) * spec.capacity_mw
            })
            .collect();
        // weather forecast of the driver
        let nwp: Vec<f64> = (0..n).map(|t| (driver[t] + 0.05 * noise.sample(&mut rng)).clamp(-0.2, 1.2)).collect();
        // actual weather observations: the driver itself
        let wx = driver.clone();

        let mk = |channel: &str, kind: ChannelKind, values: Vec<f64>| RawSeries {
            site_id: site_id.clone(),
            channel: channel.to_string(),
            kind,
            start,
            step_min: spec.resolution_minutes,
            values,
            filled: vec![],
        };
        all.push(mk("power", ChannelKind::Power, power.iter().map(|p| p * spec.capacity_mw).collect()));
        all.push(mk("pf", ChannelKind::PointForecast, pf));
        all.push(mk("nwp", ChannelKind::Nwp, nwp));
        all.push(mk("wx", ChannelKind::Weather, wx));
    }

    let schema = SchemaConfig {
        resolution_minutes: spec.resolution_minutes,
        capacities_mw: capacities,
        holidays: vec!["2022-01-01".into(), "2022-12-25".into(), "2022-12-26".into()],
        channel_kinds: [
            ("power".to_string(), ChannelKind::Power),
            ("pf".to_string(), ChannelKind::PointForecast),
            ("nwp".to_string(), ChannelKind::Nwp),
            ("wx".to_string(), ChannelKind::Weather),
        ]
        .into(),
    };
    (all, schema)
}
