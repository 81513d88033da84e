//! Long-format CSV ingest and writeback.
//!
//! Files carry `timestamp,site_id,channel,value` rows in UTC; the schema
//! sidecar declares resolution and channel kinds. Ingest groups rows into
//! series, enforcing strictly increasing timestamps on the declared grid.
//! Gaps of up to [`MAX_FILL_NODES`] missing nodes are forward-filled and
//! flagged on the series; longer gaps, duplicates, and resolution drift
//! are reported with the line number that broke the rule.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, Utc};

use super::{ChannelKind, RawSeries, SchemaConfig};
use crate::error::DataError;

const HEADER: [&str; 4] = ["timestamp", "site_id", "channel", "value"];

/// Longest gap (in missing nodes) that forward-filling papers over.
pub const MAX_FILL_NODES: usize = 4;

struct PartialSeries {
    kind: ChannelKind,
    start: DateTime<Utc>,
    last: DateTime<Utc>,
    last_line: u64,
    values: Vec<f64>,
    filled: Vec<usize>,
}

/// Parse a long-format CSV into per-`(site, channel)` series.
pub fn ingest_csv<R: Read>(reader: R, schema: &SchemaConfig) -> Result<Vec<RawSeries>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let got = rdr
            .headers()
            .map_err(|e| DataError::Parse { line: 1, msg: e.to_string() })?;
        if got.iter().collect::<Vec<_>>() != HEADER {
            return Err(DataError::Parse {
                line: 1,
                msg: format!("expected header {:?}, got {:?}", HEADER.join(","), got),
            });
        }
    }

    let step = Duration::minutes(schema.resolution_minutes as i64);
    let mut partial: BTreeMap<(String, String), PartialSeries> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            return Err(DataError::Parse { line, msg: format!("expected 4 fields, got {}", record.len()) });
        }
        let ts = DateTime::parse_from_rfc3339(&record[0])
            .map_err(|e| DataError::Parse { line, msg: format!("timestamp {:?}: {e}", &record[0]) })?
            .with_timezone(&Utc);
        let site = record[1].to_string();
        let channel = record[2].to_string();
        let value: f64 = record[3]
            .parse()
            .map_err(|e| DataError::Parse { line, msg: format!("value {:?}: {e}", &record[3]) })?;
        if !value.is_finite() {
            return Err(DataError::Parse { line, msg: format!("non-finite value {value}") });
        }
        let kind = *schema.channel_kinds.get(&channel).ok_or_else(|| DataError::Parse {
            line,
            msg: format!("channel {channel:?} not declared in schema channel_kinds"),
        })?;

        let key = (site.clone(), channel.clone());
        match partial.get_mut(&key) {
            None => {
                partial.insert(
                    key,
                    PartialSeries {
                        kind,
                        start: ts,
                        last: ts,
                        last_line: line,
                        values: vec![value],
                        filled: vec![],
                    },
                );
            }
            Some(p) => {
                let series = format!("{site}:{channel}");
                if ts <= p.last {
                    return Err(DataError::NonMonotone { series, line });
                }
                let gap = ts - p.last;
                if gap != step {
                    let found_min = (gap.num_minutes()).max(0) as u32;
                    if !found_min.is_multiple_of(schema.resolution_minutes) {
                        return Err(DataError::MixedResolution {
                            series,
                            declared: schema.resolution_minutes,
                            found: found_min,
                            line,
                        });
                    }
                    let missing = (found_min / schema.resolution_minutes) as usize - 1;
                    if missing > MAX_FILL_NODES {
                        return Err(DataError::Gap { series, expected: schema.resolution_minutes, line });
                    }
                    // forward-fill the hole with the last value, flagged
                    let hold = *p.values.last().expect("series has at least one value");
                    for _ in 0..missing {
                        p.filled.push(p.values.len());
                        p.values.push(hold);
                    }
                }
                p.last = ts;
                p.last_line = line;
                p.values.push(value);
            }
        }
    }

    if partial.is_empty() {
        return Err(DataError::Invalid { msg: "csv contains no data rows".into() });
    }
    Ok(partial
        .into_iter()
        .map(|((site_id, channel), p)| RawSeries {
            site_id,
            channel,
            kind: p.kind,
            start: p.start,
            step_min: schema.resolution_minutes,
            values: p.values,
            filled: p.filled,
        })
        .collect())
}

pub fn ingest_csv_path(path: &Path, schema: &SchemaConfig) -> Result<Vec<RawSeries>, DataError> {
    let f = std::fs::File::open(path).map_err(|e| DataError::Io { path: path.display().to_string(), source: e })?;
    ingest_csv(std::io::BufReader::new(f), schema)
}

/// Write series back to the long format: rows ordered by timestamp, then
/// site, then channel; values printed in shortest round-trip form so a
/// rewrite of an ingest is numerically identical.
pub fn write_csv<W: Write>(mut w: W, series: &[RawSeries]) -> Result<(), DataError> {
    let io_err = |e: std::io::Error| DataError::Io { path: "<writer>".into(), source: e };
    writeln!(w, "{}", HEADER.join(",")).map_err(io_err)?;
    let mut order: Vec<usize> = (0..series.len()).collect();
    order.sort_by(|&a, &b| {
        (&series[a].site_id, &series[a].channel).cmp(&(&series[b].site_id, &series[b].channel))
    });
    let len = series.first().map(|s| s.values.len()).unwrap_or(0);
    for node in 0..len {
        for &i in &order {
            let s = &series[i];
            if node < s.values.len() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    s.timestamp_at(node).format("%Y-%m-%dT%H:%M:%SZ"),
                    s.site_id,
                    s.channel,
                    s.values[node]
                )
                .map_err(io_err)?;
            }
        }
    }
    Ok(())
}

pub fn write_csv_path(path: &Path, series: &[RawSeries]) -> Result<(), DataError> {
    let f = std::fs::File::create(path).map_err(|e| DataError::Io { path: path.display().to_string(), source: e })?;
    write_csv(std::io::BufWriter::new(f), series)
}
