use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LandmarkStructure;

/// Dimension of the null space of the per-chart scale/translation system
/// built on generic, mutually consistent chart values.
///
/// Unknowns are one scale and one translation per chart plus a consensus
/// position per landmark; each (chart, landmark) membership contributes the
/// three equations `s_k * c_kp + t_k - v_p = 0`. Global similarity (one scale
/// plus three translations) always lies in the kernel.
pub fn rigidity_kernel_dim(landmarks: &LandmarkStructure) -> usize {
    let mut column_of: BTreeMap<usize, usize> = BTreeMap::new();
    for g in &landmarks.groups {
        for &l in g {
            let next = column_of.len();
            column_of.entry(l).or_insert(next);
        }
    }
    let charts = landmarks.groups.len();
    let unknowns = 4 * charts + 3 * column_of.len();
    let rows: usize = landmarks.groups.iter().map(|g| 3 * g.len()).sum();

    // Fixed seed: the rank is generic, so any draw outside a measure-zero set works.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_2019);
    let truth: Vec<[f64; 3]> = (0..column_of.len())
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();

    let mut a = DMatrix::<f64>::zeros(rows, unknowns);
    let mut row = 0;
    for (k, g) in landmarks.groups.iter().enumerate() {
        let s: f64 = rng.random_range(0.5..2.0);
        let t = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        for &l in g {
            let p = column_of[&l];
            for d in 0..3 {
                let c = (truth[p][d] - t[d]) / s;
                a[(row, 4 * k)] = c;
                a[(row, 4 * k + 1 + d)] = 1.0;
                a[(row, 4 * charts + 3 * p + d)] = -1.0;
                row += 1;
            }
        }
    }
    let sv = a.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&x| x > max * 1e-9).count();
    unknowns - rank
}

/// True when per-chart scale and translation are recoverable up to one
/// global similarity, i.e. the kernel is exactly four dimensional.
pub fn check_st_rigidity(landmarks: &LandmarkStructure) -> bool {
    !landmarks.groups.is_empty() && rigidity_kernel_dim(landmarks) == 4
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::SurfaceType;

    fn sphere(landmarks: usize, groups: Vec<Vec<usize>>) -> LandmarkStructure {
        LandmarkStructure {
            surface_type: SurfaceType::SphereLike,
            landmarks: (0..landmarks).collect(),
            groups,
        }
    }

    #[test]
    fn single_chart_is_rigid() {
        assert!(check_st_rigidity(&sphere(3, vec![vec![0, 1, 2]])));
    }

    #[test]
    fn disjoint_charts_are_not() {
        let l = sphere(6, vec![vec![0, 1, 2], vec![3, 4, 5]]);
        assert_eq!(rigidity_kernel_dim(&l), 8);
        assert!(!check_st_rigidity(&l));
    }

    #[test]
    fn one_shared_landmark_leaves_a_relative_scale() {
        let l = sphere(5, vec![vec![0, 1, 2], vec![2, 3, 4]]);
        assert_eq!(rigidity_kernel_dim(&l), 5);
    }

    #[test]
    fn two_shared_landmarks_pin_the_pair() {
        assert!(check_st_rigidity(&sphere(4, vec![vec![0, 1, 2], vec![1, 2, 3]])));
    }

    #[test]
    fn empty_structure_is_not_rigid() {
        assert!(!check_st_rigidity(&sphere(0, vec![])));
    }
}
