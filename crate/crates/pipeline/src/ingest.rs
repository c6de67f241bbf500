//! CSV telemetry and failure-log ingestion.

use std::io::Read;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use nominal_core::density::Dataset;
use nominal_core::detection::FailureLog;

/// Column-major table of numeric signals keyed by timestamp (unix seconds, UTC).
#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    pub timestamps: Vec<i64>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    /// Rows discarded because a requested value was missing.
    pub dropped_missing: usize,
}

impl Telemetry {
    pub fn new(timestamps: Vec<i64>, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() || columns.iter().any(|c| c.len() != timestamps.len()) {
            bail!("telemetry columns have inconsistent lengths");
        }
        Ok(Telemetry { timestamps, names, columns, dropped_missing: 0 })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| anyhow!("no column named {name:?}"))
    }

    pub fn select(&self, rows: &[usize]) -> Telemetry {
        Telemetry {
            timestamps: rows.iter().map(|r| self.timestamps[*r]).collect(),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| rows.iter().map(|r| c[*r]).collect()).collect(),
            dropped_missing: self.dropped_missing,
        }
    }

    /// One response column regressed on the named covariates.
    pub fn dataset(&self, target: &str, covariates: &[String]) -> Result<Dataset> {
        let y = self.column(target)?.to_vec();
        let cols: Vec<&[f64]> = covariates.iter().map(|c| self.column(c)).collect::<Result<_>>()?;
        let mut x = Vec::with_capacity(self.len() * cols.len());
        for i in 0..self.len() {
            x.extend(cols.iter().map(|c| c[i]));
        }
        Ok(Dataset::new(cols.len(), x, y, self.timestamps.clone())?)
    }

    pub fn write_csv(&self, path: &Path, timestamp_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        let mut header = vec![timestamp_column.to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![format_timestamp(self.timestamps[i])];
            rec.extend(self.columns.iter().map(|c| c[i].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// What to pull out of a telemetry file.
#[derive(Debug, Clone)]
pub struct TelemetrySchema {
    pub timestamp_column: String,
    /// Machine column and the value to keep.
    pub machine: Option<(String, String)>,
    pub signals: Vec<String>,
}

/// Parses ISO-8601 (with or without offset, `T` or space separated) and the
/// `m/d/Y h:m:s AM` layout some exports use. Naive times are taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M", "%m/%d/%Y %I:%M:%S %p", "%m/%d/%Y %H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().map(|d| d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp())
}

pub fn format_timestamp(ts: i64) -> String {
    DateTime::<Utc>::from_timestamp(ts, 0).map(|t| t.format("%Y-%m-%dT%H:%M:%SZ").to_string()).unwrap_or_else(|| ts.to_string())
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim(), "" | "NA" | "NaN" | "nan" | "null" | "NULL")
}

fn header_positions(headers: &csv::StringRecord, wanted: &[&str], source: &str) -> Result<Vec<usize>> {
    let missing: Vec<&str> = wanted.iter().copied().filter(|w| !headers.iter().any(|h| h.trim() == *w)).collect();
    if !missing.is_empty() {
        bail!("{source}: missing column(s) {}", missing.join(", "));
    }
    Ok(wanted.iter().map(|w| headers.iter().position(|h| h.trim() == *w).unwrap()).collect())
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

pub fn read_telemetry_from<R: Read>(reader: R, schema: &TelemetrySchema, source: &str) -> Result<Telemetry> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers().with_context(|| format!("{source}: reading header"))?.clone();
    let ts_pos = header_positions(&headers, &[schema.timestamp_column.as_str()], source)?[0];
    let machine_pos = match &schema.machine {
        Some((col, _)) => Some(header_positions(&headers, &[col.as_str()], source)?[0]),
        None => None,
    };
    let wanted: Vec<&str> = schema.signals.iter().map(String::as_str).collect();
    let sig_pos = header_positions(&headers, &wanted, source)?;

    let mut rows: Vec<(i64, Vec<f64>)> = Vec::new();
    let mut dropped = 0;
    for rec in rdr.records() {
        let rec = rec.with_context(|| format!("{source}: malformed record"))?;
        let line = line_of(&rec);
        if let (Some(p), Some((_, keep))) = (machine_pos, &schema.machine) {
            if rec[p].trim() != keep {
                continue;
            }
        }
        let ts = parse_timestamp(&rec[ts_pos])
            .ok_or_else(|| anyhow!("{source}:{line}: unparseable timestamp {:?}", &rec[ts_pos]))?;
        if sig_pos.iter().any(|p| is_missing(&rec[*p])) {
            dropped += 1;
            continue;
        }
        let mut vals = Vec::with_capacity(sig_pos.len());
        for (p, name) in sig_pos.iter().zip(&wanted) {
            let v: f64 = rec[*p]
                .trim()
                .parse()
                .map_err(|_| anyhow!("{source}:{line}: column {name}: not a number: {:?}", &rec[*p]))?;
            if !v.is_finite() {
                bail!("{source}:{line}: column {name}: non-finite value");
            }
            vals.push(v);
        }
        rows.push((ts, vals));
    }
    if rows.is_empty() {
        bail!("{source}: no usable rows");
    }
    // Stable: ties keep file order.
    rows.sort_by_key(|r| r.0);
    let mut columns = vec![Vec::with_capacity(rows.len()); sig_pos.len()];
    let mut timestamps = Vec::with_capacity(rows.len());
    for (ts, vals) in rows {
        timestamps.push(ts);
        for (c, v) in columns.iter_mut().zip(vals) {
            c.push(v);
        }
    }
    Ok(Telemetry { timestamps, names: schema.signals.clone(), columns, dropped_missing: dropped })
}

pub fn read_telemetry(path: &Path, schema: &TelemetrySchema) -> Result<Telemetry> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_telemetry_from(f, schema, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureRecord {
    pub timestamp: i64,
    pub machine: Option<String>,
    pub component: Option<String>,
}

/// Failure log with columns `datetime`, optionally the machine column and `failure` (component).
pub fn read_failures_from<R: Read>(reader: R, timestamp_column: &str, machine: Option<(&str, &str)>, source: &str) -> Result<Vec<FailureRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().with_context(|| format!("{source}: reading header"))?.clone();
    let ts_pos = header_positions(&headers, &[timestamp_column], source)?[0];
    let machine_pos = headers.iter().position(|h| Some(h.trim()) == machine.map(|m| m.0));
    if let (Some((col, _)), None) = (machine, machine_pos) {
        bail!("{source}: missing column(s) {col}");
    }
    let component_pos = headers.iter().position(|h| matches!(h.trim(), "failure" | "component"));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.with_context(|| format!("{source}: malformed record"))?;
        let line = line_of(&rec);
        let m = machine_pos.map(|p| rec[p].trim().to_string());
        if let (Some(m), Some((_, keep))) = (&m, machine) {
            if m != keep {
                continue;
            }
        }
        let timestamp =
            parse_timestamp(&rec[ts_pos]).ok_or_else(|| anyhow!("{source}:{line}: unparseable timestamp {:?}", &rec[ts_pos]))?;
        out.push(FailureRecord { timestamp, machine: m, component: component_pos.map(|p| rec[p].trim().to_string()) });
    }
    out.sort_by_key(|r| r.timestamp);
    Ok(out)
}

pub fn read_failures(path: &Path, timestamp_column: &str, machine: Option<(&str, &str)>) -> Result<Vec<FailureRecord>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_failures_from(f, timestamp_column, machine, &path.display().to_string())
}

/// Several components failing at once are one event.
pub fn failure_log(records: &[FailureRecord]) -> Result<FailureLog> {
    let ts: Vec<i64> = records.iter().map(|r| r.timestamp).collect();
    Ok(FailureLog::from_instants(&ts)?)
}

pub fn write_failures(path: &Path, records: &[FailureRecord], timestamp_column: &str, machine_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([timestamp_column, machine_column, "failure"])?;
    for r in records {
        w.write_record([
            format_timestamp(r.timestamp),
            r.machine.clone().unwrap_or_default(),
            r.component.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
