use nominal_core::calibration::ks_uniform;
use nominal_core::density::{Dataset, ModelParams, PriorSpec};
use nominal_core::posterior::{cic, lppd, psis_loo, sample_posterior, PosteriorSample, SamplerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn line_data(n: usize, seed: u64) -> Dataset {
    let truth = ModelParams::single_expert(2.0, vec![3.0], 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let ys = xs.iter().map(|x| truth.sample_response(&[*x], &mut rng).unwrap()).collect();
    Dataset::new(1, xs, ys, (0..n as i64).collect()).unwrap()
}

fn fit(data: &Dataset, seed: u64, per_chain: usize) -> PosteriorSample {
    let cfg = SamplerConfig { chains: 4, iterations: per_chain, burn_in: 1000, seed, ..SamplerConfig::default() };
    sample_posterior(data, &PriorSpec::default(), 1, &cfg).unwrap()
}

#[test]
fn recovers_line_and_calibrates() {
    let train = line_data(500, 1);
    let sample = fit(&train, 9, 1000);
    assert_eq!(sample.len(), 4000);
    assert!(sample.acceptance_rate > 0.1 && sample.acceptance_rate < 0.5, "{}", sample.acceptance_rate);
    let (mean, sd) = sample.summary();
    for (j, truth) in [2.0, 3.0, 0.5].iter().enumerate() {
        assert!((mean[j] - truth).abs() < 3.0 * sd[j], "param {j}: {} ± {}", mean[j], sd[j]);
    }

    // Posterior-predictive PIT of held-out points.
    let test = line_data(2000, 2);
    let pits: Vec<f64> = (0..test.len())
        .map(|i| {
            let x = test.x(i);
            sample.draws().iter().map(|p| p.conditional(x).unwrap().cdf(test.y(i))).sum::<f64>() / sample.len() as f64
        })
        .collect();
    assert!(ks_uniform(&pits).unwrap().passes(0.01));

    let (c, _) = cic(&sample, &train, 0.95).unwrap();
    assert!((0.92..=0.98).contains(&c), "{c}");
    let loo = psis_loo(&sample, &train).unwrap();
    assert!(loo.estimate <= lppd(&sample, &train).unwrap());
    assert!(loo.max_k() < 0.7);
}

#[test]
fn psis_matches_exact_refits() {
    let data = line_data(20, 3);
    let sample = fit(&data, 4, 500);
    let loo = psis_loo(&sample, &data).unwrap();
    let mut exact = 0.0;
    for i in 0..20 {
        let keep: Vec<usize> = (0..20).filter(|j| *j != i).collect();
        let rest = data.select(&keep).unwrap();
        let refit = fit(&rest, 100 + i as u64, 500);
        let point = data.select(&[i]).unwrap();
        exact += lppd(&refit, &point).unwrap();
    }
    assert!((loo.estimate - exact).abs() < 2.0 * loo.se, "{} vs {exact} (se {})", loo.estimate, loo.se);
}

#[test]
fn mixture_fit_is_calibrated() {
    use nominal_core::density::{BehaviorGateParams, ExpertParams, MixingGateParams};
    let truth = ModelParams::new(
        vec![ExpertParams::new(1.0, vec![2.0], 0.3).unwrap(), ExpertParams::new(-1.0, vec![-0.5], 0.4).unwrap()],
        MixingGateParams::from_free_rows(&[vec![0.0, 4.0]], 2).unwrap(),
        BehaviorGateParams { coeffs: vec![2.0, 0.0] },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let xs: Vec<f64> = (0..400).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| truth.sample_response(&[*x], &mut rng).unwrap()).collect();
    let data = Dataset::new(1, xs, ys, (0..400).collect()).unwrap();
    let cfg = SamplerConfig { chains: 4, iterations: 1000, burn_in: 2000, seed: 5, ..SamplerConfig::default() };
    let two = sample_posterior(&data, &PriorSpec::default(), 2, &cfg).unwrap();
    let one = sample_posterior(&data, &PriorSpec::default(), 1, &cfg).unwrap();
    let (c, _) = cic(&two, &data, 0.95).unwrap();
    assert!((0.92..=0.98).contains(&c), "{c}");
    let loo2 = psis_loo(&two, &data).unwrap();
    let loo1 = psis_loo(&one, &data).unwrap();
    assert!(loo2.estimate > loo1.estimate + 2.0 * loo1.se, "{} vs {}", loo2.estimate, loo1.estimate);
    assert!(two.draws().iter().all(|d| d.mixing.matrix().row(1).iter().all(|v| *v == 0.0)));
}
