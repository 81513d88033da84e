//! Sliding-window sample extraction with forecast-origin masking.
//!
//! A sample spans `n_t + lead` consecutive nodes, where `lead = n_t -
//! n_lag`. The encoder window is the first `n_t` nodes — fully observed
//! history ending at the forecast origin. The decoder window is shifted
//! forward by `lead`: its first `n_lag` nodes overlap the tail of the
//! encoder window (the known prefix) and its last `lead` nodes are the
//! forecast target. Channels whose kind is an observation (power,
//! weather) are zero-masked past the origin in the decoder input, so a
//! sample carries no information about its own target except through
//! forecast-product channels.

use chrono::{DateTime, Utc};
use rand::RngExt;

use super::{ChannelKind, Dataset, Stamp, split_411_sizes, stamp_features};
use crate::config::CasePreset;
use crate::error::DataError;

/// One extracted window pair. Matrices are row-major with `n_t` columns;
/// the row order is pinned by the owning [`WindowSet`]'s channel lists.
#[derive(Debug, Clone)]
pub struct WindowedSample {
    /// Absolute node index of the encoder window's first column.
    pub anchor: usize,
    /// Timestamp of the first lead node (the forecast origin).
    pub origin_ts: DateTime<Utc>,
    /// Encoder input, `enc_channels x n_t`, all observed.
    pub enc: Vec<f64>,
    /// Decoder input, `dec_channels x n_t`, observations masked past the
    /// origin (columns `n_lag..`).
    pub dec: Vec<f64>,
    /// Actual normalized power over the lead nodes, `n_sites x lead`.
    pub target: Vec<f64>,
    /// Actual normalized power over the decoder's known prefix,
    /// `n_sites x n_lag`.
    pub known_power: Vec<f64>,
    /// Actual normalized power over the decoder window, `n_sites x n_t`
    /// (known prefix followed by the target).
    pub full_power: Vec<f64>,
    /// Calendar stamps of the encoder window's columns.
    pub enc_stamps: Vec<Stamp>,
    /// Calendar stamps of the decoder window's columns.
    pub dec_stamps: Vec<Stamp>,
}

impl WindowedSample {
    /// Persistence baseline: hold each site's last observed value flat
    /// over the lead. Returns `n_sites x lead`, row-major.
    pub fn persistence(&self, n_sites: usize, n_lag: usize, lead: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n_sites * lead);
        for s in 0..n_sites {
            let last = self.known_power[s * n_lag + n_lag - 1];
            out.extend(std::iter::repeat_n(last, lead));
        }
        out
    }
}

/// Chronological 4:1:1 split by sample count. Samples at the head of
/// validation/test whose targets overlap the previous split's last
/// target are dropped, so target windows never cross a split boundary.
#[derive(Debug, Clone, Default)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Samples dropped for target overlap across a boundary.
    pub dropped_overlap: usize,
    /// First node touched by a test-sample decoder window; critic real
    /// windows must end before it.
    pub dis_node_limit: usize,
}

/// All windows of a dataset plus the layout shared by every sample.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub n_t: usize,
    pub n_lag: usize,
    /// Sorted site ids, pinning the row order of power matrices.
    pub sites: Vec<String>,
    /// Installed capacity per site (MW), aligned with `sites`.
    pub capacities: Vec<f64>,
    /// Node spacing, minutes.
    pub step_min: u32,
    /// Encoder rows as `site:channel`, in matrix order.
    pub enc_channels: Vec<String>,
    /// Decoder rows as `site:channel`, in matrix order.
    pub dec_channels: Vec<String>,
    /// Decoder row holding each site's (masked) power, aligned with `sites`.
    pub dec_power_rows: Vec<usize>,
    /// Decoder row holding each site's point forecast, if present.
    pub pf_rows: Vec<Option<usize>>,
    pub samples: Vec<WindowedSample>,
    /// Full normalized power series per site (critic window pool).
    pub site_power: Vec<Vec<f64>>,
}

impl WindowSet {
    pub fn lead(&self) -> usize {
        self.n_t - self.n_lag
    }

    /// Draw one historical power window `n_sites x n_t` ending before
    /// `node_limit`, uniformly over admissible offsets.
    pub fn dis_window<R: rand::Rng>(&self, node_limit: usize, rng: &mut R) -> Vec<f64> {
        let limit = node_limit.min(self.site_power[0].len());
        assert!(limit >= self.n_t, "critic pool shorter than one window");
        let start = rng.random_range(0..=limit - self.n_t);
        let mut out = Vec::with_capacity(self.site_power.len() * self.n_t);
        for p in &self.site_power {
            out.extend_from_slice(&p[start..start + self.n_t]);
        }
        out
    }
}

fn enc_kinds(case: CasePreset) -> &'static [ChannelKind] {
    match case {
        CasePreset::A => &[ChannelKind::PointForecast, ChannelKind::Nwp, ChannelKind::Weather],
        CasePreset::B => &[ChannelKind::Power],
        CasePreset::C => &[ChannelKind::Nwp],
    }
}

const DEC_KINDS: [ChannelKind; 3] = [ChannelKind::Power, ChannelKind::PointForecast, ChannelKind::Nwp];

/// Indices into `ds.series` for the given kinds, ordered by
/// (kind position, channel, site). Power is required once per site;
/// other kinds contribute whatever series exist.
fn select_rows(ds: &Dataset, kinds: &[ChannelKind], require_all: bool) -> Result<Vec<usize>, DataError> {
    let mut rows = Vec::new();
    for &kind in kinds {
        let mut of_kind: Vec<usize> = (0..ds.series.len()).filter(|&i| ds.series[i].kind == kind).collect();
        of_kind.sort_by(|&a, &b| {
            let (sa, sb) = (&ds.series[a], &ds.series[b]);
            (&sa.channel, &sa.site_id).cmp(&(&sb.channel, &sb.site_id))
        });
        if kind == ChannelKind::Power {
            if of_kind.len() != ds.sites.len() {
                return Err(DataError::Invalid {
                    msg: format!("need exactly one power series per site, found {}", of_kind.len()),
                });
            }
        } else if require_all && of_kind.is_empty() {
            return Err(DataError::Invalid { msg: format!("case needs a {kind:?} channel, none ingested") });
        }
        rows.extend(of_kind);
    }
    Ok(rows)
}

/// Cut a `rows x n_t` window starting at `start`; observation channels
/// are zeroed from column `mask_from` on (`n_t` disables masking).
fn fill_window(ds: &Dataset, rows: &[usize], start: usize, n_t: usize, mask_from: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * n_t);
    for &r in rows {
        let s = &ds.series[r];
        let known = s.kind.known_over_lead();
        for c in 0..n_t {
            let v = s.values[start + c];
            out.push(if known || c < mask_from { v } else { 0.0 });
        }
    }
    out
}

/// Cut every stride-spaced sample from the dataset.
pub fn build_windows(
    ds: &Dataset,
    n_t: usize,
    n_lag: usize,
    stride: usize,
    case: CasePreset,
) -> Result<WindowSet, DataError> {
    if n_lag == 0 || n_lag >= n_t {
        return Err(DataError::Invalid { msg: format!("n_lag must be in 1..n_t, got {n_lag} of {n_t}") });
    }
    let lead = n_t - n_lag;
    if n_t + lead > ds.len {
        return Err(DataError::Invalid {
            msg: format!("dataset has {} nodes, one sample needs n_t + lead = {}", ds.len, n_t + lead),
        });
    }
    if stride == 0 {
        return Err(DataError::Invalid { msg: "stride must be positive".into() });
    }
    let enc_rows = select_rows(ds, enc_kinds(case), true)?;
    let dec_rows = select_rows(ds, &DEC_KINDS, false)?;
    let name = |r: &usize| format!("{}:{}", ds.series[*r].site_id, ds.series[*r].channel);
    let enc_channels: Vec<String> = enc_rows.iter().map(name).collect();
    let dec_channels: Vec<String> = dec_rows.iter().map(name).collect();

    let dec_power_rows: Vec<usize> = ds
        .sites
        .iter()
        .map(|site| {
            dec_rows
                .iter()
                .position(|&r| ds.series[r].kind == ChannelKind::Power && &ds.series[r].site_id == site)
                .expect("power row exists per site")
        })
        .collect();
    let pf_rows: Vec<Option<usize>> = ds
        .sites
        .iter()
        .map(|site| {
            dec_rows
                .iter()
                .position(|&r| ds.series[r].kind == ChannelKind::PointForecast && &ds.series[r].site_id == site)
        })
        .collect();

    let power = ds.power_by_site();
    let mut samples = Vec::new();
    let mut anchor = 0;
    while anchor + n_t + lead <= ds.len {
        let origin = anchor + n_t; // first unobserved node
        let dec_start = anchor + lead;
        let mut target = Vec::with_capacity(power.len() * lead);
        let mut known_power = Vec::with_capacity(power.len() * n_lag);
        let mut full_power = Vec::with_capacity(power.len() * n_t);
        for p in &power {
            full_power.extend_from_slice(&p.values[dec_start..dec_start + n_t]);
            known_power.extend_from_slice(&p.values[dec_start..origin]);
            target.extend_from_slice(&p.values[origin..origin + lead]);
        }
        let stamp_of = |node: usize| stamp_features(ds.timestamp_at(node), ds.base_year, &ds.calendar);
        samples.push(WindowedSample {
            anchor,
            origin_ts: ds.timestamp_at(origin),
            enc: fill_window(ds, &enc_rows, anchor, n_t, n_t),
            dec: fill_window(ds, &dec_rows, dec_start, n_t, n_lag),
            target,
            known_power,
            full_power,
            enc_stamps: (anchor..anchor + n_t).map(stamp_of).collect(),
            dec_stamps: (dec_start..dec_start + n_t).map(stamp_of).collect(),
        });
        anchor += stride;
    }

    Ok(WindowSet {
        n_t,
        n_lag,
        sites: ds.sites.clone(),
        capacities: ds.capacities.clone(),
        step_min: ds.step_min,
        enc_channels,
        dec_channels,
        dec_power_rows,
        pf_rows,
        samples,
        site_power: power.iter().map(|p| p.values.clone()).collect(),
    })
}

/// Split samples chronologically 4:1:1 by count, then drop samples at
/// the start of validation/test whose targets overlap the previous
/// split's last kept target.
pub fn split_411(ws: &WindowSet) -> Result<SplitIndices, DataError> {
    let n = ws.samples.len();
    if n < 6 {
        return Err(DataError::Invalid { msg: format!("need at least 6 samples to split 4:1:1, got {n}") });
    }
    let lead = ws.lead();
    let (tr, va, _te) = split_411_sizes(n);
    let mut out = SplitIndices { train: (0..tr).collect(), ..Default::default() };

    // targets are disjoint when anchors differ by at least the lead
    let mut last_anchor = ws.samples[tr - 1].anchor;
    for i in tr..tr + va {
        if ws.samples[i].anchor >= last_anchor + lead {
            out.val.push(i);
        } else {
            out.dropped_overlap += 1;
        }
    }
    if let Some(&last) = out.val.last() {
        last_anchor = ws.samples[last].anchor;
    }
    for i in tr + va..n {
        if ws.samples[i].anchor >= last_anchor + lead {
            out.test.push(i);
        } else {
            out.dropped_overlap += 1;
        }
    }

    // critic windows may touch train and validation history, never test
    out.dis_node_limit = match out.test.first() {
        Some(&i) => ws.samples[i].anchor + lead,
        None => ws.site_power[0].len(),
    };
    Ok(out)
}
