use chartforge_eval::{
    frechet_distance, mean_fid, monotonicity_score, ranking_accuracy, spearman, sweep, FeatureConfig, FeatureNet, GaussianStats,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spd2(a: f64, b: f64, c: f64) -> DMatrix<f64> {
    // L Lᵀ with a positive diagonal, plus a ridge.
    let l = DMatrix::from_row_slice(2, 2, &[a, 0.0, b, c]);
    &l * l.transpose() + DMatrix::identity(2, 2) * 0.05
}

/// Closed form for 2x2: tr sqrt(M) = sqrt(tr M + 2 sqrt(det M)) when M has positive eigenvalues.
fn fid2_oracle(m1: &[f64; 2], s1: &DMatrix<f64>, m2: &[f64; 2], s2: &DMatrix<f64>) -> f64 {
    let p = s1 * s2;
    let tr_sqrt = (p.trace() + 2.0 * p.determinant().sqrt()).sqrt();
    let dm = (m1[0] - m2[0]).powi(2) + (m1[1] - m2[1]).powi(2);
    dm + s1.trace() + s2.trace() - 2.0 * tr_sqrt
}

proptest! {
    #[test]
    fn frechet_matches_two_dimensional_closed_form(
        a in 0.1f64..2.0, b in -1.0f64..1.0, c in 0.1f64..2.0,
        d in 0.1f64..2.0, e in -1.0f64..1.0, f in 0.1f64..2.0,
        mx in -2.0f64..2.0, my in -2.0f64..2.0,
    ) {
        let (s1, s2) = (spd2(a, b, c), spd2(d, e, f));
        let g1 = GaussianStats::new(DVector::from_vec(vec![0.0, 0.0]), s1.clone()).unwrap();
        let g2 = GaussianStats::new(DVector::from_vec(vec![mx, my]), s2.clone()).unwrap();
        let expected = fid2_oracle(&[0.0, 0.0], &s1, &[mx, my], &s2);
        let got = frechet_distance(&g1, &g2).unwrap();
        prop_assert!((got - expected).abs() < 1e-8 * (1.0 + expected), "{got} vs {expected}");
        let back = frechet_distance(&g2, &g1).unwrap();
        prop_assert!((got - back).abs() < 1e-9 * (1.0 + got));
        prop_assert!(got >= 0.0);
        prop_assert!(frechet_distance(&g1, &g1).unwrap().abs() < 1e-9);
    }
}

#[test]
fn diagonal_covariances_reduce_to_per_axis_sums() {
    let a = GaussianStats::new(DVector::from_vec(vec![1.0, 0.0, 2.0]), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 9.0]))).unwrap();
    let b = GaussianStats::new(DVector::from_vec(vec![0.0, 0.0, 0.0]), DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 1.0]))).unwrap();
    // |Δμ|² + Σ (√a − √b)² = 5 + (1 + 1 + 4)
    assert!((frechet_distance(&a, &b).unwrap() - 11.0).abs() < 1e-10);
}

fn random_charts(b: usize, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..b * 3 * n * n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn small_net() -> FeatureNet {
    FeatureNet::new(&FeatureConfig { widths: [4, 8], feature_dim: 6, ..FeatureConfig::default() })
}

#[test]
fn mean_fid_of_a_set_with_itself_vanishes() {
    let net = small_net();
    let (charts, n) = (2, 8);
    let x = random_charts(12 * charts, n, 1);
    let (mean, per_chart) = mean_fid(&net, &x, &x, charts, n).unwrap();
    assert!(mean < 1e-6, "{mean}");
    assert_eq!(per_chart.len(), charts);
    let y: Vec<f64> = x.iter().map(|v| v * 1.5 + 0.3).collect();
    assert!(mean_fid(&net, &x, &y, charts, n).unwrap().0 > 1e-6);
}

#[test]
fn too_few_samples_are_singular() {
    let net = small_net();
    let x = random_charts(4, 8, 2);
    assert_eq!(mean_fid(&net, &x, &x, 1, 8).unwrap_err().code(), "SingularStatsError");
}

#[test]
fn feature_length_does_not_depend_on_resolution() {
    let net = small_net();
    for n in [8, 16] {
        assert_eq!(net.features(&random_charts(3, n, n as u64), n).unwrap().len(), 3 * 6);
    }
}

#[test]
fn feature_net_is_deterministic_per_seed() {
    let x = random_charts(2, 8, 3);
    let cfg = FeatureConfig { widths: [4, 8], feature_dim: 6, ..FeatureConfig::default() };
    assert_eq!(FeatureNet::new(&cfg).features(&x, 8).unwrap(), FeatureNet::new(&cfg).features(&x, 8).unwrap());
    let other = FeatureConfig { seed: 1, ..cfg };
    assert_ne!(FeatureNet::new(&cfg).features(&x, 8).unwrap(), FeatureNet::new(&other).features(&x, 8).unwrap());
}

#[test]
fn ranking_accuracy_cases() {
    assert_eq!(ranking_accuracy(&[2.0, 0.0], &[1.0, 1.0], &[1, 0]).unwrap(), 1.0);
    assert_eq!(ranking_accuracy(&[2.0, 0.0], &[1.0, 1.0], &[0, 1]).unwrap(), 0.0);
    assert_eq!(ranking_accuracy(&[1.0, 1.0], &[1.0, 1.0], &[1, 0]).unwrap(), 0.0);
    assert_eq!(ranking_accuracy(&[1.0], &[1.0, 2.0], &[1]).unwrap_err().code(), "ShapeError");
}

#[test]
fn swapping_pairs_and_flipping_labels_preserves_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s1: Vec<f64> = (0..100).map(|_| rng.random()).collect();
    let s2: Vec<f64> = (0..100).map(|_| rng.random()).collect();
    let y: Vec<u8> = (0..100).map(|_| rng.random_range(0..2)).collect();
    let flipped: Vec<u8> = y.iter().map(|v| 1 - v).collect();
    let a = ranking_accuracy(&s1, &s2, &y).unwrap();
    assert_eq!(a, ranking_accuracy(&s2, &s1, &flipped).unwrap());
    assert_eq!(a + ranking_accuracy(&s1, &s2, &flipped).unwrap(), 1.0);
}

#[test]
fn monotonicity_cases() {
    let r = sweep(9);
    let constant = monotonicity_score(4, &r, |_, _| Ok(2.0)).unwrap();
    assert_eq!(constant, 0.0);
    let rising = monotonicity_score(4, &r, |z, r| Ok(r * (z + 1) as f64)).unwrap();
    assert!((rising - 1.0).abs() < 1e-12);
    let reversed: Vec<f64> = r.iter().rev().copied().collect();
    let probe = |z: usize, r: f64| Ok((r * 3.0 + z as f64).sin());
    let fwd = monotonicity_score(3, &r, probe).unwrap();
    let back = monotonicity_score(3, &r, |z, x| Ok(-(probe(z, x)?))).unwrap();
    assert!((fwd + back).abs() < 1e-12);
    let on_reversed = monotonicity_score(3, &reversed, probe).unwrap();
    assert!((fwd - on_reversed).abs() < 1e-12);
    let warped = monotonicity_score(3, &r, |z, x| Ok(probe(z, x)?.exp() * 5.0 + 1.0)).unwrap();
    assert!((fwd - warped).abs() < 1e-12);
}

#[test]
fn spearman_is_rank_based() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert!((spearman(&x, &[1.0, 8.0, 27.0, 64.0]) - 1.0).abs() < 1e-12);
    assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
}
