//! CSV ingestion.
//!
//! * `wide`: a timestamp column followed by one value column per entity
//!   (single channel).
//! * `long`: `timestamp,entity,channel,value` rows.
//!
//! Timestamps are integer seconds, RFC 3339, `YYYY-MM-DD HH:MM:SS` or
//! `YYYY-MM-DD`. Absent or empty cells become `0.0` and are counted.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvLayout {
    Wide,
    Long,
}

impl FromStr for CsvLayout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wide" => Ok(CsvLayout::Wide),
            "long" => Ok(CsvLayout::Long),
            other => Err(Error::config(
                "layout",
                format!("unknown CSV layout `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub layout: CsvLayout,
    pub rows: usize,
    pub steps: usize,
    pub entities: usize,
    pub channels: usize,
    pub missing_count: usize,
}

fn parse_timestamp(raw: &str) -> Result<i64> {
    let s = raw.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
        return Ok(dt.and_utc().timestamp());
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d
            .and_hms_opt(0, 0, 0)
            .expect("midnight")
            .and_utc()
            .timestamp());
    }
    Err(Error::Ingestion(format!("unparseable timestamp `{s}`")))
}

fn parse_value(raw: &str, at: &str) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() {
        return Ok(None);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Ingestion(format!("bad value `{s}` at {at}")))?;
    if !v.is_finite() {
        return Err(Error::Ingestion(format!("non-finite value at {at}")));
    }
    Ok(Some(v))
}

fn step_of(times: &[i64]) -> i64 {
    if times.len() >= 2 {
        times[1] - times[0]
    } else {
        0
    }
}

pub fn import_csv(path: impl AsRef<Path>, layout: CsvLayout) -> Result<(Dataset, ImportReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    match layout {
        CsvLayout::Wide => import_wide(&mut rdr),
        CsvLayout::Long => import_long(&mut rdr),
    }
}

fn import_wide<R: std::io::Read>(rdr: &mut csv::Reader<R>) -> Result<(Dataset, ImportReport)> {
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Ingestion(
            "wide layout needs a timestamp column and at least one entity column".into(),
        ));
    }
    let ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let n = ids.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut missing = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let ts = parse_timestamp(rec.get(0).unwrap_or(""))?;
        if let Some(&prev) = times.last() {
            if ts <= prev {
                return Err(Error::Ingestion(format!(
                    "timestamps not increasing: {ts} follows {prev}"
                )));
            }
        }
        times.push(ts);
        for (e, id) in ids.iter().enumerate() {
            let cell = rec.get(e + 1).unwrap_or("");
            match parse_value(cell, &format!("timestamp {ts}, entity {id}"))? {
                Some(v) => values.push(v),
                None => {
                    missing += 1;
                    values.push(0.0);
                }
            }
        }
    }
    if times.is_empty() {
        return Err(Error::Ingestion("CSV has no data rows".into()));
    }
    let steps = times.len();
    let report = ImportReport {
        layout: CsvLayout::Wide,
        rows: steps,
        steps,
        entities: n,
        channels: 1,
        missing_count: missing,
    };
    let ds = Dataset::new(
        values,
        steps,
        ids,
        vec!["value".into()],
        times[0],
        step_of(&times),
    )?;
    Ok((ds, report))
}

fn import_long<R: std::io::Read>(rdr: &mut csv::Reader<R>) -> Result<(Dataset, ImportReport)> {
    let mut times: Vec<i64> = Vec::new();
    let mut entities: Vec<String> = Vec::new();
    let mut channels: Vec<String> = Vec::new();
    let mut entity_ix: HashMap<String, usize> = HashMap::new();
    let mut channel_ix: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize, usize), f64> = HashMap::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        rows += 1;
        if rec.len() < 4 {
            return Err(Error::Ingestion(format!(
                "row {rows}: long layout needs timestamp,entity,channel,value"
            )));
        }
        let ts = parse_timestamp(&rec[0])?;
        match times.last() {
            Some(&prev) if ts < prev => {
                return Err(Error::Ingestion(format!(
                    "timestamps not monotone: {ts} follows {prev}"
                )))
            }
            Some(&prev) if ts == prev => {}
            _ => times.push(ts),
        }
        let t = times.len() - 1;
        let entity = rec[1].to_string();
        let e = *entity_ix.entry(entity.clone()).or_insert_with(|| {
            entities.push(entity.clone());
            entities.len() - 1
        });
        let channel = rec[2].to_string();
        let c = *channel_ix.entry(channel.clone()).or_insert_with(|| {
            channels.push(channel.clone());
            channels.len() - 1
        });
        let at = format!("timestamp {ts}, entity {entity}, channel {channel}");
        let v = parse_value(&rec[3], &at)?;
        if cells.contains_key(&(t, e, c)) {
            return Err(Error::Ingestion(format!(
                "duplicate row for timestamp {ts}, entity {entity}, channel {channel}"
            )));
        }
        if let Some(v) = v {
            cells.insert((t, e, c), v);
        }
    }
    if times.is_empty() {
        return Err(Error::Ingestion("CSV has no data rows".into()));
    }
    let (steps, n, cc) = (times.len(), entities.len(), channels.len());
    let mut values = vec![0.0; steps * n * cc];
    for (&(t, e, c), &v) in &cells {
        values[(t * n + e) * cc + c] = v;
    }
    let report = ImportReport {
        layout: CsvLayout::Long,
        rows,
        steps,
        entities: n,
        channels: cc,
        missing_count: steps * n * cc - cells.len(),
    };
    let ds = Dataset::new(values, steps, entities, channels, times[0], step_of(&times))?;
    Ok((ds, report))
}
