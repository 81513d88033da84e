//! Data pipeline: aligned multi-site series, capacity normalization,
//! calendar stamps, and chronological splitting.
//!
//! The pipeline deals in *nodes*: evenly spaced time points at the
//! dataset's declared resolution. All series of a dataset must share
//! start, step, and length — misalignment is rejected up front rather
//! than silently resampled.

pub mod csvio;
pub mod synth;
pub mod window;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike, Duration, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// What a channel measures, which decides its availability over the
/// forecast lead: `Power` and `Weather` are observations (unknown beyond
/// the forecast origin), `PointForecast` and `Nwp` are forecast products
/// (available over the lead window).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Power,
    PointForecast,
    Nwp,
    Weather,
}

impl ChannelKind {
    /// True if values past the forecast origin are known at forecast time.
    pub fn known_over_lead(self) -> bool {
        matches!(self, ChannelKind::PointForecast | ChannelKind::Nwp)
    }
}

/// One evenly sampled series of one channel at one site.
#[derive(Debug, Clone)]
pub struct RawSeries {
    pub site_id: String,
    pub channel: String,
    pub kind: ChannelKind,
    pub start: DateTime<Utc>,
    pub step_min: u32,
    pub values: Vec<f64>,
    /// Nodes that were forward-filled over short ingestion gaps.
    pub filled: Vec<usize>,
}

impl RawSeries {
    pub fn timestamp_at(&self, node: usize) -> DateTime<Utc> {
        self.start + Duration::minutes(self.step_min as i64 * node as i64)
    }
}

/// Sidecar describing a CSV file: resolution, per-site capacity,
/// holidays, and the kind of every channel name appearing in the file.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaConfig {
    pub resolution_minutes: u32,
    /// Installed capacity per site, MW.
    pub capacities_mw: BTreeMap<String, f64>,
    /// Holiday dates (`YYYY-MM-DD`), treated as event days.
    pub holidays: Vec<String>,
    pub channel_kinds: BTreeMap<String, ChannelKind>,
}

impl SchemaConfig {
    pub fn from_json(s: &str) -> Result<Self, DataError> {
        let cfg: SchemaConfig =
            serde_json::from_str(s).map_err(|e| DataError::Invalid { msg: format!("schema json: {e}") })?;
        if cfg.resolution_minutes == 0 {
            return Err(DataError::Invalid { msg: "schema: resolution_minutes must be positive".into() });
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn calendar(&self) -> Result<HolidayCalendar, DataError> {
        let mut dates = BTreeSet::new();
        for d in &self.holidays {
            let parsed = NaiveDate::parse_from_str(d, "%Y-%m-%d")
                .map_err(|e| DataError::Invalid { msg: format!("holiday {d:?}: {e}") })?;
            dates.insert(parsed);
        }
        Ok(HolidayCalendar { dates })
    }
}

/// Weekend/holiday lookup for the event stamp.
#[derive(Debug, Clone, Default)]
pub struct HolidayCalendar {
    dates: BTreeSet<NaiveDate>,
}

impl HolidayCalendar {
    pub fn is_event(&self, ts: DateTime<Utc>) -> bool {
        use chrono::Weekday;
        let wd = ts.weekday();
        wd == Weekday::Sat || wd == Weekday::Sun || self.dates.contains(&ts.date_naive())
    }
}

/// Calendar fields of one node, bucketed for embedding-table lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stamp {
    /// Years since the dataset start, clamped to the table size (8).
    pub year_off: u8,
    /// 0-based month (0..12).
    pub month0: u8,
    /// 0-based day of month (0..31).
    pub day0: u8,
    /// Hour of day (0..24).
    pub hour: u8,
    /// Minute of hour (0..60).
    pub minute: u8,
    /// 1 on weekends and configured holidays.
    pub event: u8,
}

pub const YEAR_BUCKETS: usize = 8;

/// Calendar stamp of a timestamp relative to `base_year`.
pub fn stamp_features(ts: DateTime<Utc>, base_year: i32, cal: &HolidayCalendar) -> Stamp {
    let year_off = (ts.year() - base_year).clamp(0, YEAR_BUCKETS as i32 - 1) as u8;
    Stamp {
        year_off,
        month0: (ts.month0()) as u8,
        day0: (ts.day0()) as u8,
        hour: ts.hour() as u8,
        minute: ts.minute() as u8,
        event: cal.is_event(ts) as u8,
    }
}

/// A normalized value that exceeded its site's capacity (kept, flagged).
#[derive(Debug, Clone)]
pub struct ExceedFlag {
    pub site_id: String,
    pub channel: String,
    pub node: usize,
    pub normalized: f64,
}

/// Aligned, capacity-normalized series collection ready for windowing.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub series: Vec<RawSeries>,
    /// Sorted unique site ids.
    pub sites: Vec<String>,
    /// Capacity per site, aligned with `sites`.
    pub capacities: Vec<f64>,
    pub start: DateTime<Utc>,
    pub step_min: u32,
    pub len: usize,
    pub base_year: i32,
    pub calendar: HolidayCalendar,
    /// Power values that exceeded capacity after normalization.
    pub exceedances: Vec<ExceedFlag>,
}

impl Dataset {
    /// Validate alignment, normalize power-scaled channels by capacity,
    /// and flag exceedances without clamping them.
    // negated comparisons so NaN fails validation rather than passing it
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn build(series: Vec<RawSeries>, schema: &SchemaConfig) -> Result<Self, DataError> {
        if series.is_empty() {
            return Err(DataError::Invalid { msg: "no series ingested".into() });
        }
        let (start, step, len) = (series[0].start, series[0].step_min, series[0].values.len());
        for s in &series {
            if s.start != start || s.step_min != step || s.values.len() != len {
                return Err(DataError::Misaligned {
                    msg: format!(
                        "series {}:{} spans {}..step {} len {}, expected {}..step {} len {}",
                        s.site_id,
                        s.channel,
                        s.start,
                        s.step_min,
                        s.values.len(),
                        start,
                        step,
                        len
                    ),
                });
            }
        }
        let mut sites: Vec<String> = series
            .iter()
            .filter(|s| s.kind == ChannelKind::Power)
            .map(|s| s.site_id.clone())
            .collect();
        sites.sort();
        sites.dedup();
        if sites.is_empty() {
            return Err(DataError::Invalid { msg: "no power channel in dataset".into() });
        }
        let mut capacities = Vec::with_capacity(sites.len());
        for site in &sites {
            let cap = schema
                .capacities_mw
                .get(site)
                .copied()
                .ok_or_else(|| DataError::Invalid { msg: format!("no capacity for site {site}") })?;
            if !(cap > 0.0) {
                return Err(DataError::Invalid { msg: format!("capacity for site {site} must be positive") });
            }
            capacities.push(cap);
        }

        let mut normalized = series;
        let mut exceedances = Vec::new();
        for s in &mut normalized {
            let scaled = matches!(s.kind, ChannelKind::Power | ChannelKind::PointForecast);
            if !scaled {
                continue;
            }
            let cap = match sites.iter().position(|x| x == &s.site_id) {
                Some(i) => capacities[i],
                None => {
                    return Err(DataError::Invalid {
                        msg: format!("series {}:{} has no power channel for its site", s.site_id, s.channel),
                    })
                }
            };
            for (node, v) in s.values.iter_mut().enumerate() {
                *v /= cap;
                if *v > 1.0 {
                    exceedances.push(ExceedFlag {
                        site_id: s.site_id.clone(),
                        channel: s.channel.clone(),
                        node,
                        normalized: *v,
                    });
                }
            }
        }

        Ok(Dataset {
            base_year: start.year(),
            calendar: schema.calendar()?,
            sites,
            capacities,
            start,
            step_min: step,
            len,
            series: normalized,
            exceedances,
        })
    }

    pub fn timestamp_at(&self, node: usize) -> DateTime<Utc> {
        self.start + Duration::minutes(self.step_min as i64 * node as i64)
    }

    /// The normalized power series of each site, in `sites` order.
    pub fn power_by_site(&self) -> Vec<&RawSeries> {
        self.sites
            .iter()
            .map(|site| {
                self.series
                    .iter()
                    .find(|s| s.kind == ChannelKind::Power && &s.site_id == site)
                    .expect("validated in build()")
            })
            .collect()
    }
}

/// Chronological split sizes for `n` samples: validation and test take
/// `n/6` each (integer division), training absorbs the remainder.
pub fn split_411_sizes(n: usize) -> (usize, usize, usize) {
    let val = n / 6;
    let test = n / 6;
    (n - val - test, val, test)
}
