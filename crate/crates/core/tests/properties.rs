use nominal_core::anomaly::{as_from_pits, exp_weights, fold_score, WeightedUniformSumDist};
use nominal_core::density::{
    fuse_with, BehaviorGateParams, Dataset, ExpertParams, MixingGateParams, ModelParams,
};
use nominal_core::detection::{day_of, evaluate, raise_alarms, FailureLog, FailureWindow, AlarmPolicy, SECONDS_PER_DAY};
use nominal_core::explain::GateGeometry;
use nominal_core::anomaly::AnomalyScoreSeries;
use nominal_core::linalg::{dot, Matrix};
use nominal_core::posterior::{cic, lppd, PosteriorSample};
use nominal_core::selection::{chebyshev_lb, pareto_set, select_best, Trial};
use proptest::prelude::*;
use std::collections::BTreeSet;

fn params_strategy() -> impl Strategy<Value = ModelParams> {
    (1usize..4, 0usize..3).prop_flat_map(|(m, n)| {
        let experts = prop::collection::vec(
            (-3.0f64..3.0, prop::collection::vec(-2.0f64..2.0, n), 0.1f64..2.0),
            m,
        );
        let gate = prop::collection::vec(-2.0f64..2.0, (m - 1) * (n + 1));
        let behavior = prop::collection::vec(-2.0f64..2.0, n + 1);
        (experts, gate, behavior).prop_map(move |(ex, g, b)| {
            let experts = ex.into_iter().map(|(i, s, sd)| ExpertParams::new(i, s, sd).unwrap()).collect();
            let free: Vec<Vec<f64>> = g.chunks(n + 1).map(|c| c.to_vec()).collect();
            let mixing = MixingGateParams::from_free_rows(&free, n + 1).unwrap();
            ModelParams::new(experts, mixing, BehaviorGateParams { coeffs: b }).unwrap()
        })
    })
}

fn simplex(m: usize, raw: &[f64]) -> Vec<f64> {
    let v: Vec<f64> = raw.iter().take(m).map(|r| r + 0.01).collect();
    let t: f64 = v.iter().sum();
    v.iter().map(|x| x / t).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn fusion_limits(p in params_strategy(), raw in prop::collection::vec(0.0f64..1.0, 3)) {
        let alpha = simplex(p.n_experts(), &raw);
        let same = fuse_with(&p, &alpha, 1.0);
        for (a, b) in same.iter().zip(&p.experts) {
            prop_assert_eq!(a.intercept.to_bits(), b.intercept.to_bits());
            prop_assert_eq!(&a.slopes, &b.slopes);
            prop_assert_eq!(a.noise_sd.to_bits(), b.noise_sd.to_bits());
        }
        let blended = fuse_with(&p, &alpha, 0.0);
        for e in &blended[1..] {
            prop_assert!((e.intercept - blended[0].intercept).abs() < 1e-14);
            prop_assert!((e.noise_sd - blended[0].noise_sd).abs() < 1e-14);
            for (a, b) in e.slopes.iter().zip(&blended[0].slopes) {
                prop_assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn density_integrates_to_one(p in params_strategy(), xs in prop::collection::vec(-2.0f64..2.0, 2)) {
        let x = &xs[..p.n_covariates()];
        let c = p.conditional(x).unwrap();
        let (lo, hi) = c.bracket();
        let steps = 20_000;
        let h = (hi - lo) / steps as f64;
        let mut total = 0.5 * (c.pdf(lo) + c.pdf(hi));
        for i in 1..steps {
            total += c.pdf(lo + i as f64 * h);
        }
        prop_assert!((total * h - 1.0).abs() < 1e-6);
        // CDF agrees with the integral at the mean.
        let mid = c.mean();
        let steps = 20_000;
        let h = (mid - lo) / steps as f64;
        let mut part = 0.5 * (c.pdf(lo) + c.pdf(mid));
        for i in 1..steps {
            part += c.pdf(lo + i as f64 * h);
        }
        prop_assert!((part * h - c.cdf(mid)).abs() < 1e-6);
    }

    #[test]
    fn cantelli_bounds(a in -10.0f64..10.0, d in 0.0f64..10.0, sa in 0.0f64..3.0, sb in 0.0f64..3.0, extra in 0.01f64..5.0) {
        let lb = chebyshev_lb(a, sa, a + d, sb);
        prop_assert!((0.0..=1.0).contains(&lb));
        prop_assert!(chebyshev_lb(a, sa, a + d + extra, sb) >= lb);
        prop_assert_eq!(chebyshev_lb(a + d, sa, a, sb), 0.0);
    }

    #[test]
    fn selection_is_permutation_invariant(
        raw in prop::collection::vec((-100.0f64..0.0, 0.0f64..5.0, 0.0f64..50.0), 1..12),
        seed in any::<u64>(),
    ) {
        let trials: Vec<Trial> = raw.iter().enumerate()
            .map(|(id, (m, se, c))| Trial { id, metric: *m, metric_se: *se, coverage_cost: *c })
            .collect();
        let best = select_best(&trials, 0.5).unwrap().id;
        let front: Vec<usize> = pareto_set(&trials).iter().map(|t| t.id).collect();
        prop_assert!(front.contains(&best));
        let mut shuffled = trials.clone();
        let mut state = seed;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(select_best(&shuffled, 0.5).unwrap().id, best);
    }

    #[test]
    fn alarms_are_disjoint_and_patient(values in prop::collection::vec(0.0f64..1.0, 1..200), patience in 1usize..6) {
        let values: Vec<f64> = values.iter().map(|v| if *v > 0.6 { 0.99 } else { *v * 0.9 }).collect();
        let s = AnomalyScoreSeries::new((0..values.len() as i64).collect(), values.clone(), 0.975).unwrap();
        let alarms = raise_alarms(&s, &AlarmPolicy::new(0.975, patience).unwrap());
        for pair in alarms.windows(2) {
            prop_assert!(pair[0].last_index < pair[1].onset_index);
        }
        for a in &alarms {
            prop_assert!(a.onset_index + 1 >= patience);
            for v in &values[a.onset_index + 1 - patience..=a.last_index] {
                prop_assert!(*v >= 0.975);
            }
            prop_assert!(a.last_index + 1 == values.len() || values[a.last_index + 1] < 0.975);
        }
    }

    #[test]
    fn detection_tallies(
        present in prop::collection::vec(any::<bool>(), 30),
        active in prop::collection::vec(any::<bool>(), 30),
        fail_days in prop::collection::btree_set(5i64..30, 0..4),
    ) {
        let observed: Vec<i64> = (0..30).filter(|d| present[*d as usize]).map(|d| d * SECONDS_PER_DAY + 3600).collect();
        let scores: Vec<f64> = observed.iter().map(|t| if active[day_of(*t) as usize] { 0.99 } else { 0.1 }).collect();
        let s = AnomalyScoreSeries::new(observed.clone(), scores, 0.975).unwrap();
        let alarms = raise_alarms(&s, &AlarmPolicy::new(0.975, 1).unwrap());
        let failures = FailureLog::new(fail_days.iter().map(|d| FailureWindow { start: d * SECONDS_PER_DAY, end: d * SECONDS_PER_DAY + 60 }).collect()).unwrap();
        let ws: Vec<i64> = (1..6).collect();
        let report = evaluate(&alarms, &failures, &ws, &observed).unwrap();
        let mut prev_tp = 0;
        for row in &report.rows {
            prop_assert_eq!(row.tp + row.fn_, failures.len());
            let outside: BTreeSet<i64> = observed.iter().map(|t| day_of(*t))
                .filter(|d| !fail_days.contains(d) && !fail_days.iter().any(|f| *d >= f - row.w && *d < *f))
                .collect();
            prop_assert_eq!(row.fp + row.tn, outside.len());
            prop_assert!(row.tp >= prev_tp);
            prev_tp = row.tp;
            for v in [row.precision, row.recall, row.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if row.precision + row.recall > 0.0 {
                let h = 2.0 * row.precision * row.recall / (row.precision + row.recall);
                prop_assert!((row.f1 - h).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gate_directions_orthogonal(rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 5), 1..4), bs in prop::collection::vec(-1.0f64..1.0, 4)) {
        let m = rows.len() + 1;
        let mut all: Vec<Vec<f64>> = rows.iter().zip(&bs).map(|(r, b)| {
            let mut row = vec![*b];
            row.extend(r);
            row
        }).collect();
        all.push(vec![0.0; 6]);
        let gate = Matrix::from_rows(&all).unwrap();
        let Ok(geo) = GateGeometry::from_gate_matrix(&gate, &[0.0; 5]) else { return Ok(()); };
        for i in 0..m - 1 {
            for j in 0..m - 1 {
                if i != j {
                    let scale = dot(&rows[j], &rows[j]).sqrt() * dot(&geo.a_star[i], &geo.a_star[i]).sqrt().max(1.0);
                    prop_assert!(dot(&geo.a_star[i], &rows[j]).abs() < 1e-10 * scale.max(1.0));
                }
            }
        }
        let space = geo.score_space().unwrap();
        let v: Vec<f64> = (0..m - 1).map(|i| i as f64 - 1.3).collect();
        let x = space.embed(&v).unwrap();
        let back = space.coordinates(&x).unwrap();
        for (a, b) in back.iter().zip(&v) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn lppd_permutation_invariant(p in params_strategy(), ys in prop::collection::vec(-3.0f64..3.0, 2..12), shift in 0.0f64..0.5) {
        let n = p.n_covariates();
        let len = ys.len();
        let covs: Vec<f64> = (0..len * n).map(|i| (i as f64 * 0.37).sin()).collect();
        let data = Dataset::new(n, covs.clone(), ys.clone(), vec![0; len]).unwrap();
        let mut q = p.clone();
        q.experts[0].intercept += shift;
        let a = PosteriorSample::new(vec![p.clone(), q.clone()], 1.0, 1, 0).unwrap();
        let b = PosteriorSample::new(vec![q, p], 1.0, 1, 0).unwrap();
        let order: Vec<usize> = (0..len).rev().collect();
        let rev = data.select(&order).unwrap();
        let base = lppd(&a, &data).unwrap();
        prop_assert!((lppd(&b, &data).unwrap() - base).abs() < 1e-10);
        prop_assert!((lppd(&a, &rev).unwrap() - base).abs() < 1e-10);
        let (c1, _) = cic(&a, &data, 0.5).unwrap();
        let (c2, _) = cic(&a, &data, 0.9).unwrap();
        prop_assert!(c2 >= c1);
    }

    #[test]
    fn score_symmetric_under_reflection(pits in prop::collection::vec(0.001f64..0.999, 6)) {
        let w = exp_weights(6, 0.5).unwrap();
        let d = WeightedUniformSumDist::new(&w).unwrap();
        let a = as_from_pits(&pits, &d).unwrap();
        let flipped: Vec<f64> = pits.iter().map(|u| 1.0 - u).collect();
        prop_assert!((as_from_pits(&flipped, &d).unwrap() - a).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(fold_score(d.cdf(0.5)).abs() < 1e-12);
    }
}
