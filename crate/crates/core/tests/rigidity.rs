use chartforge_core::mesh::{check_st_rigidity, LandmarkStructure, SurfaceType};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn structure(count: usize, groups: Vec<Vec<usize>>) -> LandmarkStructure {
    LandmarkStructure { surface_type: SurfaceType::SphereLike, landmarks: (0..count).collect(), groups }
}

/// Kernel dimension by Gaussian elimination with full pivoting, on chart
/// values drawn independently of the library's own generic draw.
fn elimination_kernel_dim(groups: &[Vec<usize>], seed: u64) -> usize {
    let mut landmarks: Vec<usize> = groups.concat();
    landmarks.sort_unstable();
    landmarks.dedup();
    let col = |l: usize| landmarks.iter().position(|&x| x == l).unwrap();
    let charts = groups.len();
    let unknowns = 4 * charts + 3 * landmarks.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<[f64; 3]> = landmarks.iter().map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, g) in groups.iter().enumerate() {
        // Chart values are the truth seen through this chart's own gauge.
        let s: f64 = rng.random_range(0.5..2.0);
        let t: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        for &l in g {
            for d in 0..3 {
                let mut r = vec![0.0; unknowns];
                r[4 * k] = (truth[col(l)][d] - t[d]) / s;
                r[4 * k + 1 + d] = 1.0;
                r[4 * charts + 3 * col(l) + d] = -1.0;
                rows.push(r);
            }
        }
    }
    let mut rank = 0;
    let mut used_cols = vec![false; unknowns];
    let mut live = rows;
    while !live.is_empty() {
        let (mut br, mut bc, mut bv) = (0, 0, 0.0f64);
        for (ri, r) in live.iter().enumerate() {
            for (ci, &v) in r.iter().enumerate() {
                if !used_cols[ci] && v.abs() > bv {
                    (br, bc, bv) = (ri, ci, v.abs());
                }
            }
        }
        if bv < 1e-9 {
            break;
        }
        let pivot = live.swap_remove(br);
        used_cols[bc] = true;
        for r in &mut live {
            let f = r[bc] / pivot[bc];
            r.iter_mut().zip(&pivot).for_each(|(x, p)| *x -= f * p);
        }
        rank += 1;
    }
    unknowns - rank
}

fn elimination_rigid(groups: &[Vec<usize>]) -> bool {
    !groups.is_empty() && elimination_kernel_dim(groups, 77) == 4
}

/// Sixteen triplets over twenty-one landmarks: a ten-triplet chain plus three
/// pairs of triplets, each pair tied to the chain by one landmark per triplet.
fn sixteen_over_twenty_one() -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = (0..10).map(|k| vec![k, k + 1, k + 2]).collect();
    for (a, b, x) in [(0, 5, 12), (2, 8, 15), (4, 11, 18)] {
        groups.push(vec![a, x, x + 1]);
        groups.push(vec![b, x + 1, x + 2]);
    }
    groups
}

#[test]
fn human_scale_structure_is_rigid() {
    let groups = sixteen_over_twenty_one();
    assert_eq!(groups.len(), 16);
    let mut used: Vec<usize> = groups.concat();
    used.sort_unstable();
    used.dedup();
    assert_eq!(used.len(), 21);
    assert!(elimination_rigid(&groups));
    assert!(check_st_rigidity(&structure(21, groups.clone())));

    // Cut one pair's second tie to the chain: that pair keeps a free scale.
    let mut loose = groups;
    loose[11] = vec![13, 14, 21];
    assert!(!elimination_rigid(&loose));
    assert!(!check_st_rigidity(&structure(22, loose)));
}

#[test]
fn two_shared_landmarks_per_adjacency_caps_distinct_landmarks() {
    // Every triplet after the first adds at most one new landmark when it
    // shares two with an earlier one: 16 triplets reach at most 18.
    let chain: Vec<Vec<usize>> = (0..16).map(|k| vec![k, k + 1, k + 2]).collect();
    assert!(check_st_rigidity(&structure(18, chain)));
}

proptest! {
    #[test]
    fn dense_rank_agrees_with_elimination(groups in prop::collection::vec(prop::collection::hash_set(0usize..7, 3), 1..6)) {
        let groups: Vec<Vec<usize>> = groups.into_iter().map(|g| g.into_iter().collect()).collect();
        prop_assert_eq!(check_st_rigidity(&structure(7, groups.clone())), elimination_rigid(&groups));
    }
}
