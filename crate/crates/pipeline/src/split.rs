//! Train / validation / test construction around the failure log.

use anyhow::{bail, Result};
use nominal_core::detection::FailureLog;

use crate::config::SplitSpec;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    /// Rows of each merged pre-failure span, in time order.
    pub test_segments: Vec<Vec<usize>>,
}

impl Splits {
    pub fn test(&self) -> Vec<usize> {
        self.test_segments.concat()
    }
}

/// Union of `(start − margin, end]` spans, sorted and merged.
pub fn test_spans(failures: &FailureLog, margin: i64) -> Vec<(i64, i64)> {
    let mut spans: Vec<(i64, i64)> = Vec::new();
    for f in failures.failures() {
        let (lo, hi) = (f.start - margin, f.end);
        match spans.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => spans.push((lo, hi)),
        }
    }
    spans
}

fn near_failure(t: i64, failures: &FailureLog, margin: i64) -> bool {
    failures.failures().iter().any(|f| t > f.start - margin && t < f.end + margin)
}

/// `timestamps` must be sorted. Indices returned refer to it.
pub fn build_splits(timestamps: &[i64], failures: &FailureLog, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if timestamps.windows(2).any(|p| p[0] > p[1]) {
        bail!("timestamps must be sorted before splitting");
    }
    let margin = spec.margin_seconds();
    let pool: Vec<usize> = (0..timestamps.len()).filter(|i| !near_failure(timestamps[*i], failures, margin)).collect();

    let step = 1.0 / spec.fraction;
    let kept: Vec<usize> = (0..)
        .map(|i: usize| (i as f64 * step + 1e-9).floor() as usize)
        .take_while(|j| *j < pool.len())
        .map(|j| pool[j])
        .collect();

    let need = spec.train_size + spec.validation_size;
    if kept.len() < need {
        bail!("fault-free pool has {} rows after subsampling, {} needed", kept.len(), need);
    }
    let train = kept[..spec.train_size].to_vec();
    let validation = kept[spec.train_size..need].to_vec();
    let after = timestamps[*validation.last().or(train.last()).unwrap()];

    let test_segments = test_spans(failures, margin)
        .into_iter()
        .map(|(lo, hi)| (0..timestamps.len()).filter(|i| timestamps[*i] > lo.max(after) && timestamps[*i] <= hi).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect();
    Ok(Splits { train, validation, test_segments })
}
