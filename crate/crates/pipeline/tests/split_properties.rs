use nominal_core::detection::{FailureLog, FailureWindow};
use nominal_pipeline::config::SplitSpec;
use nominal_pipeline::split::{build_splits, test_spans};
use proptest::prelude::*;

const DAY: i64 = 86_400;

fn inputs() -> impl Strategy<Value = (Vec<i64>, Vec<(i64, i64)>, f64)> {
    (
        prop::collection::vec(600i64..7200, 400..1500),
        prop::collection::vec((5i64..60, 0i64..(2 * DAY)), 0..4),
        prop::sample::select(vec![0.1, 0.25, 0.5, 1.0]),
    )
        .prop_map(|(gaps, fails, fraction)| {
            let ts: Vec<i64> = gaps
                .iter()
                .scan(0i64, |t, g| {
                    *t += g;
                    Some(*t)
                })
                .collect();
            let fails = fails.into_iter().map(|(day, len)| (day * DAY, day * DAY + len)).collect();
            (ts, fails, fraction)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn splits_respect_margins_and_order((ts, fails, fraction) in inputs()) {
        let log = FailureLog::new(fails.iter().map(|&(start, end)| FailureWindow { start, end }).collect()).unwrap();
        let spec = SplitSpec { margin_days: 2.0, fraction, train_size: 20, validation_size: 10 };
        let margin = spec.margin_seconds();
        let s = match build_splits(&ts, &log, &spec) {
            Ok(s) => s,
            Err(e) => {
                prop_assert!(e.to_string().contains("fault-free pool"), "{}", e);
                prop_assume!(false);
                unreachable!()
            }
        };

        prop_assert_eq!(s.train.len(), 20);
        prop_assert_eq!(s.validation.len(), 10);
        let fit_rows: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
        prop_assert!(fit_rows.windows(2).all(|p| p[0] < p[1]));
        for &i in &fit_rows {
            let t = ts[i];
            prop_assert!(log.failures().iter().all(|f| t <= f.start - margin || t >= f.end + margin));
        }

        let spans = test_spans(&log, margin);
        let after = ts[*s.validation.last().unwrap()];
        prop_assert!(s.test_segments.len() <= spans.len());
        for seg in &s.test_segments {
            prop_assert!(!seg.is_empty());
            prop_assert!(seg.windows(2).all(|p| p[0] < p[1]));
            for &i in seg {
                prop_assert!(ts[i] > after);
                prop_assert!(spans.iter().any(|&(lo, hi)| ts[i] > lo && ts[i] <= hi));
            }
        }
        let test = s.test();
        prop_assert!(test.iter().all(|i| !fit_rows.contains(i)));
    }

    #[test]
    fn spans_are_disjoint_and_sorted(fails in prop::collection::vec((0i64..100, 0i64..DAY), 0..8), margin_days in 0i64..10) {
        let log = FailureLog::new(fails.iter().map(|&(d, len)| FailureWindow { start: d * DAY, end: d * DAY + len }).collect()).unwrap();
        let spans = test_spans(&log, margin_days * DAY);
        prop_assert!(spans.windows(2).all(|p| p[0].1 < p[1].0));
        for f in log.failures() {
            prop_assert!(spans.iter().any(|&(lo, hi)| lo <= f.start - margin_days * DAY && hi >= f.end));
        }
    }
}
