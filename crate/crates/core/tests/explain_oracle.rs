use nalgebra::DMatrix;
use nominal_core::density::{BehaviorGateParams, ExpertParams, MixingGateParams, ModelParams};
use nominal_core::explain::{gate_geometry, gate_logits, reduce_svd, reduced_space, render_map, GateGeometry};
use nominal_core::linalg::{dot, Matrix};
use nominal_core::posterior::PosteriorSample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_row_major(r, c, (0..r * c).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
}

fn with_reference(a0: &Matrix, b: &[f64]) -> Matrix {
    let mut rows: Vec<Vec<f64>> = (0..a0.rows())
        .map(|i| {
            let mut r = vec![b[i]];
            r.extend_from_slice(a0.row(i));
            r
        })
        .collect();
    rows.push(vec![0.0; a0.cols() + 1]);
    Matrix::from_rows(&rows).unwrap()
}

#[test]
fn directions_match_gram_schmidt() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let a0 = random_matrix(&mut rng, 2, 5);
        let geo = GateGeometry::from_gate_matrix(&with_reference(&a0, &[0.0, 0.0]), &[0.0; 5]).unwrap();
        let (a1, a2) = (a0.row(0), a0.row(1));
        let c = dot(a1, a2);
        let gs1: Vec<f64> = a1.iter().zip(a2).map(|(x, y)| x - c / dot(a2, a2) * y).collect();
        let gs2: Vec<f64> = a2.iter().zip(a1).map(|(x, y)| x - c / dot(a1, a1) * y).collect();
        for j in 0..5 {
            assert!((geo.a_star[0][j] - gs1[j]).abs() < 1e-12);
            assert!((geo.a_star[1][j] - gs2[j]).abs() < 1e-12);
        }
        assert!(dot(&geo.a_star[0], a2).abs() < 1e-10);
        assert!(dot(&geo.a_star[1], a1).abs() < 1e-10);
    }
}

#[test]
fn svd_reduction_is_eckart_young_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let a0 = random_matrix(&mut rng, 4, 10);
        let reduced = reduce_svd(&a0).unwrap();
        let err = a0.sub(&reduced.lift()).unwrap().frobenius_norm();
        let dense = DMatrix::from_row_slice(4, 10, a0.as_slice());
        let mut sv: Vec<f64> = dense.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let optimum = sv[2..].iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!((err - optimum).abs() < 1e-9, "{err} vs {optimum}");
    }
}

#[test]
fn rank_two_input_keeps_row_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let basis = random_matrix(&mut rng, 2, 6);
    let mix = random_matrix(&mut rng, 4, 2);
    let a0 = mix.matmul(&basis).unwrap();
    let reduced = reduce_svd(&a0).unwrap();
    assert!(a0.sub(&reduced.lift()).unwrap().frobenius_norm() < 1e-10);
    // Every original row lies in the span of the reduced rows.
    let p = reduced.reduced.pinv(1e-12);
    for i in 0..4 {
        let r = a0.row(i);
        let proj = p.matvec(&reduced.reduced.matvec(r).unwrap()).unwrap();
        assert!(r.iter().zip(&proj).all(|(a, b)| (a - b).abs() < 1e-10));
    }
    let geo = GateGeometry::from_gate_matrix(&with_reference(&a0, &[0.0; 4]), &[0.0; 6]);
    assert!(geo.is_err());
}

#[test]
fn reduced_space_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a0 = random_matrix(&mut rng, 4, 8);
    let b = [0.3, -0.1, 0.7, 0.2];
    let geo = GateGeometry::from_gate_matrix(&with_reference(&a0, &b), &[0.1; 8]).unwrap();
    let space = reduced_space(&geo).unwrap();
    let x = space.embed(&[1.0, -2.0]).unwrap();
    let v = space.coordinates(&x).unwrap();
    assert!((v[0] - 1.0).abs() < 1e-9 && (v[1] + 2.0).abs() < 1e-9);
}

fn three_expert_model(rng: &mut ChaCha8Rng, n: usize) -> ModelParams {
    let experts = (0..3)
        .map(|i| ExpertParams::new(i as f64, (0..n).map(|_| rng.random::<f64>()).collect(), 0.5).unwrap())
        .collect();
    let free: Vec<Vec<f64>> = (0..2).map(|_| (0..=n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
    ModelParams::new(experts, MixingGateParams::from_free_rows(&free, n + 1).unwrap(), BehaviorGateParams { coeffs: vec![0.0; n + 1] })
        .unwrap()
}

#[test]
fn moving_along_direction_raises_only_that_logit() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = three_expert_model(&mut rng, 4);
    let sample = PosteriorSample::point(p.clone());
    let geo = gate_geometry(&sample, &[0.0; 4]).unwrap();
    let x0 = [0.2, -0.4, 0.1, 0.3];
    let base = gate_logits(&p, &x0);
    for i in 0..2 {
        let mut prev_act = f64::NEG_INFINITY;
        for step in 0..10 {
            let t = step as f64 * 0.3;
            let x: Vec<f64> = x0.iter().zip(&geo.a_star[i]).map(|(a, d)| a + t * d).collect();
            let l = gate_logits(&p, &x);
            for j in 0..3 {
                if j != i {
                    assert!((l[j] - base[j]).abs() < 1e-10);
                }
            }
            let act = p.conditional(&x).unwrap().weights[i];
            assert!(act > prev_act);
            prev_act = act;
        }
    }
}

#[test]
fn map_summaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = three_expert_model(&mut rng, 3);
    let sample = PosteriorSample::point(p);
    let geo = gate_geometry(&sample, &[0.0; 3]).unwrap();
    let space = geo.score_space().unwrap();
    let grid = nominal_core::explain::score_grid(2, -4.0, 4.0, 5);
    let map = render_map(&space, &grid, &sample).unwrap();
    assert_eq!(map.embedded.len(), 25);
    assert_eq!(map.arrows.len(), 3);
    for a in &map.activations {
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(map.sd.iter().all(|s| *s > 0.0));

    // A flat model gives a flat mean surface.
    let flat = ModelParams::new(
        (0..3).map(|_| ExpertParams::new(1.5, vec![0.0; 3], 0.2).unwrap()).collect(),
        sample.draws()[0].mixing.clone(),
        BehaviorGateParams { coeffs: vec![0.0; 4] },
    )
    .unwrap();
    let map = render_map(&space, &grid, &PosteriorSample::point(flat)).unwrap();
    assert!(map.mean.iter().all(|m| (m - 1.5).abs() < 1e-12));
}
