//! Alarms, pooling across indices and validity-window detection metrics.
//!
//! Alarms work at sample granularity; metrics are tallied per calendar day
//! (UTC, `timestamp.div_euclid(86400)`). For a failure starting on day `d`
//! and a validity length `w`, days `d − w ..= d − 1` form its validity
//! window. A failure is detected (TP) when an alarm is active at any
//! observation inside that window. Every other observed day that is not a
//! failure day is a negative day: FP when an alarm is active at one of its
//! observations, TN otherwise.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::anomaly::AnomalyScoreSeries;
use crate::error::invalid;
use crate::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// UTC calendar day of a unix timestamp in seconds.
#[inline]
pub fn day_of(ts: i64) -> i64 {
    ts.div_euclid(SECONDS_PER_DAY)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlarmPolicy {
    pub threshold: f64,
    pub patience: usize,
}

impl AlarmPolicy {
    pub fn new(threshold: f64, patience: usize) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(invalid("threshold must be in (0, 1)"));
        }
        if patience == 0 {
            return Err(invalid("patience must be at least 1"));
        }
        Ok(AlarmPolicy { threshold, patience })
    }
}

/// An active alarm: from the onset sample through the last sample of the
/// above-threshold run (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Alarm {
    pub onset_index: usize,
    pub last_index: usize,
    pub start_time: i64,
    pub end_time: i64,
}

impl Alarm {
    pub fn is_active_at(&self, ts: i64) -> bool {
        ts >= self.start_time && ts <= self.end_time
    }
}

/// Alarms over a generic exceedance indicator.
pub fn alarms_where<F: Fn(f64) -> bool>(timestamps: &[i64], values: &[f64], patience: usize, exceeds: F) -> Vec<Alarm> {
    let mut alarms = Vec::new();
    let mut run = 0usize;
    let mut open: Option<Alarm> = None;
    for (i, (&t, &v)) in timestamps.iter().zip(values).enumerate() {
        if exceeds(v) {
            run += 1;
            match open.as_mut() {
                Some(a) => {
                    a.last_index = i;
                    a.end_time = t;
                }
                None if run >= patience => {
                    open = Some(Alarm { onset_index: i, last_index: i, start_time: t, end_time: t });
                }
                None => {}
            }
        } else {
            run = 0;
            if let Some(a) = open.take() {
                alarms.push(a);
            }
        }
    }
    if let Some(a) = open {
        alarms.push(a);
    }
    alarms
}

/// Opens an alarm at the `patience`-th consecutive score `≥ τ`; it stays
/// active until the first score below `τ`.
pub fn raise_alarms(series: &AnomalyScoreSeries, policy: &AlarmPolicy) -> Vec<Alarm> {
    let tau = policy.threshold;
    alarms_where(&series.timestamps, &series.values, policy.patience, |v| v >= tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PoolingPolicy {
    pub quorum: usize,
    pub half_level: bool,
}

impl PoolingPolicy {
    pub fn new(quorum: usize, half_level: bool) -> Result<Self> {
        if quorum == 0 {
            return Err(invalid("quorum must be at least 1"));
        }
        Ok(PoolingPolicy { quorum, half_level })
    }
}

/// Consensus score per timestamp, values in `{0, 0.5, 1}`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PooledSeries {
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
}

/// Pools time-aligned score series, each against its own threshold.
pub fn pool(series: &[AnomalyScoreSeries], policy: &PoolingPolicy) -> Result<PooledSeries> {
    let first = series.first().ok_or(Error::Empty("series"))?;
    for s in &series[1..] {
        if s.timestamps != first.timestamps {
            return Err(Error::Misaligned(format!(
                "series of length {} and {} do not share timestamps",
                first.len(),
                s.len()
            )));
        }
    }
    let values = (0..first.len())
        .map(|t| {
            let count = series.iter().filter(|s| s.values[t] >= s.threshold).count();
            if count >= policy.quorum {
                1.0
            } else if policy.half_level && count == 1 {
                0.5
            } else {
                0.0
            }
        })
        .collect();
    Ok(PooledSeries { timestamps: first.timestamps.clone(), values })
}

/// Alarms on a pooled series count consecutive full-consensus samples.
pub fn pooled_alarms(pooled: &PooledSeries, patience: usize) -> Vec<Alarm> {
    alarms_where(&pooled.timestamps, &pooled.values, patience.max(1), |v| v >= 1.0)
}

/// Interval during which the machine was failed, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FailureWindow {
    pub start: i64,
    pub end: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FailureLog {
    failures: Vec<FailureWindow>,
}

impl FailureLog {
    /// Sorts by start and merges overlapping windows.
    pub fn new(mut failures: Vec<FailureWindow>) -> Result<Self> {
        if failures.iter().any(|f| f.end < f.start) {
            return Err(invalid("failure window ends before it starts"));
        }
        failures.sort_by_key(|f| (f.start, f.end));
        let mut merged: Vec<FailureWindow> = Vec::with_capacity(failures.len());
        for f in failures {
            match merged.last_mut() {
                Some(last) if f.start <= last.end => last.end = last.end.max(f.end),
                _ => merged.push(f),
            }
        }
        Ok(FailureLog { failures: merged })
    }

    /// Point failures at the given timestamps.
    pub fn from_instants(ts: &[i64]) -> Result<Self> {
        FailureLog::new(ts.iter().map(|&t| FailureWindow { start: t, end: t }).collect())
    }

    pub fn failures(&self) -> &[FailureWindow] {
        &self.failures
    }

    pub fn len(&self) -> usize {
        self.failures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.failures.is_empty()
    }

    fn failure_days(&self) -> BTreeSet<i64> {
        self.failures.iter().flat_map(|f| day_of(f.start)..=day_of(f.end)).collect()
    }
}

/// Counts and rates for one validity length.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectionRow {
    pub w: i64,
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
    /// Observations on the day exactly `w` days before a failure, summed over failures.
    pub samples_in_range: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectionReport {
    pub rows: Vec<DetectionRow>,
}

/// `(precision, recall, f1)`; empty denominators give 0.
pub fn rates(tp: usize, fn_: usize, fp: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let p = ratio(tp, fp);
    let r = ratio(tp, fn_);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Detection counts for every validity length in `w_days`.
pub fn evaluate(alarms: &[Alarm], failures: &FailureLog, w_days: &[i64], observed: &[i64]) -> Result<DetectionReport> {
    if w_days.iter().any(|w| *w <= 0) {
        return Err(invalid("validity window lengths must be positive"));
    }
    let active: Vec<bool> = observed.iter().map(|&t| alarms.iter().any(|a| a.is_active_at(t))).collect();
    let failure_days = failures.failure_days();
    let start_days: Vec<i64> = failures.failures().iter().map(|f| day_of(f.start)).collect();
    let mut rows = Vec::with_capacity(w_days.len());
    for &w in w_days {
        let in_validity = |d: i64| start_days.iter().any(|&s| d >= s - w && d < s);
        let tp = start_days
            .iter()
            .filter(|&&s| observed.iter().zip(&active).any(|(&t, &on)| on && (s - w..s).contains(&day_of(t))))
            .count();
        let fn_ = start_days.len() - tp;
        // day -> alarm seen on that day
        let mut negative_days: alloc::collections::BTreeMap<i64, bool> = alloc::collections::BTreeMap::new();
        for (&t, &on) in observed.iter().zip(&active) {
            let d = day_of(t);
            if in_validity(d) || failure_days.contains(&d) {
                continue;
            }
            *negative_days.entry(d).or_insert(false) |= on;
        }
        let fp = negative_days.values().filter(|v| **v).count();
        let tn = negative_days.len() - fp;
        let samples_in_range = start_days
            .iter()
            .map(|&s| observed.iter().filter(|&&t| day_of(t) == s - w).count())
            .sum();
        let (precision, recall, f1) = rates(tp, fn_, fp);
        rows.push(DetectionRow { w, tp, fn_, fp, tn, samples_in_range, precision, recall, f1 });
    }
    Ok(DetectionReport { rows })
}

/// Several consecutive validity lengths with identical rates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupedRow {
    pub w_max: i64,
    pub w_min: i64,
    pub samples_in_range: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl GroupedRow {
    /// `"4-1"` for a merged run, `"3"` for a single length.
    pub fn label(&self) -> String {
        if self.w_max == self.w_min {
            format!("{}", self.w_max)
        } else {
            format!("{}-{}", self.w_max, self.w_min)
        }
    }
}

/// Merges runs of consecutive `w` (largest first) sharing precision,
/// recall and F1. Lengths without any observation are left out.
pub fn group_constant_ranges(report: &DetectionReport) -> Vec<GroupedRow> {
    let mut rows: Vec<&DetectionRow> = report.rows.iter().filter(|r| r.samples_in_range > 0).collect();
    rows.sort_by_key(|r| core::cmp::Reverse(r.w));
    let mut out: Vec<GroupedRow> = Vec::new();
    for r in rows {
        if let Some(last) = out.last_mut() {
            if last.w_min == r.w + 1 && last.precision == r.precision && last.recall == r.recall && last.f1 == r.f1 {
                last.w_min = r.w;
                last.samples_in_range += r.samples_in_range;
                continue;
            }
        }
        out.push(GroupedRow {
            w_max: r.w,
            w_min: r.w,
            samples_in_range: r.samples_in_range,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        });
    }
    out
}

/// Delimited table: days to event, samples in range, then percentages.
pub fn format_table(rows: &[GroupedRow], sep: char) -> String {
    let mut s = format!("Days to Event{sep}Samples in Range{sep}Prec.{sep}Rec.{sep}F1\n");
    for r in rows {
        s.push_str(&format!(
            "{}{sep}{}{sep}{:.2}{sep}{:.2}{sep}{:.2}\n",
            r.label(),
            r.samples_in_range,
            100.0 * r.precision,
            100.0 * r.recall,
            100.0 * r.f1
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn series(values: &[f64]) -> AnomalyScoreSeries {
        AnomalyScoreSeries::new((0..values.len() as i64).collect(), values.to_vec(), 0.975).unwrap()
    }

    #[test]
    fn no_exceedance_no_alarm() {
        let s = series(&[0.1, 0.5, 0.97]);
        assert!(raise_alarms(&s, &AlarmPolicy::new(0.975, 1).unwrap()).is_empty());
    }

    #[test]
    fn patience_one_matches_runs() {
        let s = series(&[0.99, 0.99, 0.1, 0.98, 0.2, 0.99]);
        let a = raise_alarms(&s, &AlarmPolicy::new(0.975, 1).unwrap());
        let spans: Vec<(usize, usize)> = a.iter().map(|a| (a.onset_index, a.last_index)).collect();
        assert_eq!(spans, vec![(0, 1), (3, 3), (5, 5)]);
    }

    #[test]
    fn nine_of_ten_patience() {
        let mut v = vec![0.99; 9];
        v.push(0.1);
        let p = AlarmPolicy::new(0.975, 10).unwrap();
        assert!(raise_alarms(&series(&v), &p).is_empty());
        v[9] = 0.99;
        v.push(0.99);
        let a = raise_alarms(&series(&v), &p);
        assert_eq!(a.len(), 1);
        assert_eq!((a[0].onset_index, a[0].last_index), (9, 10));
    }

    #[test]
    fn pooling_levels() {
        let a = series(&[0.99, 0.99, 0.1]);
        let b = series(&[0.1, 0.99, 0.1]);
        let any = pool(&[a.clone(), b.clone()], &PoolingPolicy::new(1, false).unwrap()).unwrap();
        assert_eq!(any.values, vec![1.0, 1.0, 0.0]);
        let two = pool(&[a.clone(), b], &PoolingPolicy::new(2, true).unwrap()).unwrap();
        assert_eq!(two.values, vec![0.5, 1.0, 0.0]);
        let shifted = AnomalyScoreSeries::new(vec![1, 2, 3], vec![0.0; 3], 0.975).unwrap();
        assert!(matches!(pool(&[a, shifted], &PoolingPolicy::new(1, false).unwrap()), Err(Error::Misaligned(_))));
    }

    #[test]
    fn pooled_half_level_does_not_count_towards_patience() {
        let p = PooledSeries { timestamps: vec![0, 1, 2, 3], values: vec![1.0, 0.5, 1.0, 1.0] };
        let a = pooled_alarms(&p, 2);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].onset_index, 3);
    }

    #[test]
    fn rates_conventions() {
        assert_eq!(rates(0, 2, 0), (0.0, 0.0, 0.0));
        let (p, r, f) = rates(1, 1, 5);
        assert!((p - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(r, 0.5);
        assert!((f - 0.25).abs() < 1e-15);
    }

    #[test]
    fn failure_log_merges_overlaps() {
        let log = FailureLog::new(vec![FailureWindow { start: 50, end: 80 }, FailureWindow { start: 10, end: 60 }]).unwrap();
        assert_eq!(log.failures(), &[FailureWindow { start: 10, end: 80 }]);
    }

    #[test]
    fn grouping_merges_constant_runs() {
        let row = |w, p| DetectionRow { w, tp: 1, fn_: 0, fp: 0, tn: 1, samples_in_range: 10, precision: p, recall: 1.0, f1: 1.0 };
        let rep = DetectionReport { rows: vec![row(1, 1.0), row(2, 1.0), row(3, 0.5), row(4, 0.5)] };
        let g = group_constant_ranges(&rep);
        let labels: Vec<String> = g.iter().map(|r| r.label()).collect();
        assert_eq!(labels, vec!["4-3", "2-1"]);
        assert_eq!(g[0].samples_in_range, 20);
        let alt = DetectionReport { rows: vec![row(1, 1.0), row(2, 0.5), row(3, 1.0)] };
        assert_eq!(group_constant_ranges(&alt).len(), 3);
        let table = format_table(&g, ',');
        assert!(table.contains("4-3,20,50.00,100.00,100.00"));
    }

    #[test]
    fn evaluate_rejects_nonpositive_w() {
        assert!(evaluate(&[], &FailureLog::default(), &[0], &[]).is_err());
    }
}
