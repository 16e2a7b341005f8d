use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{MultiChartTensor, NormalizationMeta, CHANNELS};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{check_st_rigidity, LandmarkStructure};
use crate::torus::ChartAtlas;

/// Fixes the global similarity left free by landmark consistency: chart
/// `ref_chart` is mapped by `x * scale + mean`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gauge {
    pub ref_chart: usize,
    pub scale: f64,
    pub mean: [f64; 3],
}

impl Gauge {
    /// Chart 0 kept in normalized units.
    pub fn unit() -> Self {
        Self { ref_chart: 0, scale: 1.0, mean: [0.0; 3] }
    }

    pub fn from_meta(meta: &NormalizationMeta, ref_chart: usize) -> Self {
        let c = meta.charts[ref_chart];
        Self { ref_chart, scale: c.scale, mean: c.mean }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StSolution {
    pub scale: Vec<f64>,
    pub shift: Vec<[f64; 3]>,
    /// Consensus position per landmark list entry.
    pub consensus: Vec<Vec3>,
    /// Root of the summed squared landmark disagreement.
    pub residual: f64,
}

/// Chart values at every landmark's primary grid node, indexed `[chart][slot]`.
pub fn landmark_values(tensor: &MultiChartTensor, atlas: &ChartAtlas) -> Vec<Vec<Vec3>> {
    atlas
        .charts
        .iter()
        .enumerate()
        .map(|(k, chart)| {
            chart
                .cones
                .iter()
                .map(|cone| {
                    let [i, j] = cone.node;
                    std::array::from_fn(|c| tensor.data[tensor.index(k, c, i, j)])
                })
                .collect()
        })
        .collect()
}

/// Least-squares fit of `s_k * c_kp + t_k = v_p` over all chart/landmark
/// memberships, with the reference chart's `(s, t)` fixed by the gauge.
pub fn solve_scale_translation(
    landmarks: &LandmarkStructure,
    values: &[Vec<Vec3>],
    gauge: &Gauge,
) -> Result<StSolution> {
    let charts = landmarks.groups.len();
    if values.len() != charts || gauge.ref_chart >= charts {
        return Err(Error::Shape(format!(
            "{} chart value sets for {charts} groups (reference chart {})",
            values.len(),
            gauge.ref_chart
        )));
    }
    let free_chart = |k: usize| if k < gauge.ref_chart { k } else { k - 1 };
    let landmark_base = 4 * (charts - 1);
    let unknowns = landmark_base + CHANNELS * landmarks.landmarks.len();
    let rows: usize = landmarks.groups.iter().map(|g| CHANNELS * g.len()).sum();
    let mut a = DMatrix::<f64>::zeros(rows, unknowns);
    let mut b = DVector::<f64>::zeros(rows);
    let mut used = vec![false; landmarks.landmarks.len()];
    let mut row = 0;
    for (k, g) in landmarks.groups.iter().enumerate() {
        if values[k].len() != g.len() {
            return Err(Error::Shape(format!("chart {k} has {} landmark values", values[k].len())));
        }
        for (slot, &p) in g.iter().enumerate() {
            used[p] = true;
            for d in 0..CHANNELS {
                let c = values[k][slot][d];
                if k == gauge.ref_chart {
                    b[row] = -(gauge.scale * c + gauge.mean[d]);
                } else {
                    let col = 4 * free_chart(k);
                    a[(row, col)] = c;
                    a[(row, col + 1 + d)] = 1.0;
                }
                a[(row, landmark_base + CHANNELS * p + d)] = -1.0;
                row += 1;
            }
        }
    }
    // Landmarks in no group do not enter the fit; pin them to zero.
    let mut h = a.transpose() * &a;
    for (p, &u) in used.iter().enumerate() {
        if !u {
            for d in 0..CHANNELS {
                h[(landmark_base + CHANNELS * p + d, landmark_base + CHANNELS * p + d)] = 1.0;
            }
        }
    }
    let g = a.transpose() * &b;
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::Rank("scale/translation normal equations are singular".into()))?;
    let x = chol.solve(&g);
    let residual = (&a * &x - &b).norm();

    let mut scale = vec![gauge.scale; charts];
    let mut shift = vec![gauge.mean; charts];
    for k in (0..charts).filter(|&k| k != gauge.ref_chart) {
        let col = 4 * free_chart(k);
        scale[k] = x[col];
        shift[k] = [x[col + 1], x[col + 2], x[col + 3]];
    }
    let consensus = (0..landmarks.landmarks.len())
        .map(|p| std::array::from_fn(|d| x[landmark_base + CHANNELS * p + d]))
        .collect();
    Ok(StSolution { scale, shift, consensus, residual })
}

/// Denormalize a tensor whose per-chart statistics were discarded, using only
/// the agreement of charts at shared landmarks plus the gauge.
pub fn recover_scale_translation(
    tensor: &MultiChartTensor,
    atlas: &ChartAtlas,
    gauge: &Gauge,
) -> Result<MultiChartTensor> {
    if !check_st_rigidity(&atlas.landmarks) {
        return Err(Error::Rank("landmark structure is not scale-translation rigid".into()));
    }
    if tensor.chart_count != atlas.chart_count() || tensor.n != atlas.n {
        return Err(Error::Shape("tensor does not match the atlas layout".into()));
    }
    let sol = solve_scale_translation(&atlas.landmarks, &landmark_values(tensor, atlas), gauge)?;
    let meta = NormalizationMeta {
        charts: sol
            .scale
            .iter()
            .zip(&sol.shift)
            .map(|(&scale, &mean)| super::ChartNorm { mean, scale })
            .collect(),
    };
    let mut plain = tensor.clone();
    plain.meta = None;
    plain.denormalize(&meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chartset::encode_mesh;
    use crate::mesh::{fixtures, SurfaceType};
    use crate::torus::WeightScheme;

    fn structure(mesh: &crate::mesh::TriangleMesh) -> LandmarkStructure {
        let axes: [[f64; 3]; 5] = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [-1.0, 0.0, 0.0],
            [0.0, -1.0, 0.0],
        ];
        LandmarkStructure {
            surface_type: SurfaceType::SphereLike,
            landmarks: axes.iter().map(|&a| fixtures::nearest_vertex(mesh, a)).collect(),
            groups: vec![vec![0, 1, 2], vec![1, 3, 2], vec![3, 4, 2]],
        }
    }

    #[test]
    fn normalized_tensor_recovers_ground_truth() {
        let mesh = fixtures::icosphere(2);
        // Anisotropic, off-center shape so charts have distinct statistics.
        let verts: Vec<Vec3> = mesh
            .vertices()
            .iter()
            .map(|p| [1.7 * p[0] + 0.3, 0.8 * p[1] - 2.0, 1.2 * p[2] + 0.5])
            .collect();
        let atlas = ChartAtlas::build(&mesh, &structure(&mesh), 16, WeightScheme::Uniform).unwrap();
        let truth = encode_mesh(&atlas, &verts).unwrap();
        let (norm, meta) = truth.normalize().unwrap();
        let rec = recover_scale_translation(&norm, &atlas, &Gauge::from_meta(&meta, 0)).unwrap();
        let err = rec.data.iter().zip(&truth.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn single_chart_unit_gauge_is_identity() {
        let l = LandmarkStructure {
            surface_type: SurfaceType::SphereLike,
            landmarks: vec![0, 1, 2],
            groups: vec![vec![0, 1, 2]],
        };
        let values = vec![vec![[0.1, 0.2, 0.3], [1.0, 0.0, -1.0], [0.5, 0.5, 0.5]]];
        let sol = solve_scale_translation(&l, &values, &Gauge::unit()).unwrap();
        assert_eq!(sol.scale, vec![1.0]);
        assert_eq!(sol.shift, vec![[0.0; 3]]);
        for (v, c) in sol.consensus.iter().zip(&values[0]) {
            for d in 0..3 {
                assert!((v[d] - c[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn agreeing_charts_keep_the_gauge_scale() {
        let l = LandmarkStructure {
            surface_type: SurfaceType::SphereLike,
            landmarks: vec![0, 1, 2, 3],
            groups: vec![vec![0, 1, 2], vec![1, 2, 3]],
        };
        let p: [Vec3; 4] = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]];
        let values = vec![vec![p[0], p[1], p[2]], vec![p[1], p[2], p[3]]];
        let sol = solve_scale_translation(&l, &values, &Gauge::unit()).unwrap();
        assert!((sol.scale[1] - 1.0).abs() < 1e-12);
        assert!(sol.shift[1].iter().all(|t| t.abs() < 1e-12));
        assert!(sol.residual < 1e-12);
    }

    #[test]
    fn disjoint_groups_are_rank_deficient() {
        let mesh = fixtures::icosphere(2);
        let mut l = structure(&mesh);
        l.landmarks.push(fixtures::nearest_vertex(&mesh, [0.0, 0.0, -1.0]));
        l.groups = vec![vec![0, 1, 2], vec![3, 4, 5]];
        let values = vec![vec![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]; 2];
        let err = solve_scale_translation(&l, &values, &Gauge::unit()).unwrap_err();
        assert_eq!(err.code(), "RankError");
    }
}
