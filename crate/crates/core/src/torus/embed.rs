use std::collections::BTreeMap;

use faer::sparse::{SparseColMat, Triplet};
use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec2, Vec3};
use crate::mesh::FourCover;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    #[default]
    Uniform,
    /// Cotangent weights clamped below at [`COTANGENT_FLOOR`].
    Cotangent,
}

pub const COTANGENT_FLOOR: f64 = 1e-6;

/// Piecewise-linear map of a four-cover onto the flat torus.
///
/// `uv` holds one point of `[0, 1)^2` per cover vertex. The unwrapped position
/// of corner `k` of face `f` is `uv[faces[f][k]] + face_shift[f][k]`; these
/// integer shifts are the translation tags of the embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusEmbedding {
    pub uv: Vec<Vec2>,
    pub faces: Vec<[usize; 3]>,
    pub face_shift: Vec<[[i64; 2]; 3]>,
    pub cone_points: Vec<usize>,
    pub cone_uv: Vec<Vec2>,
}

impl TorusEmbedding {
    pub fn unwrapped_face(&self, f: usize) -> [Vec2; 3] {
        let face = self.faces[f];
        let shift = self.face_shift[f];
        std::array::from_fn(|k| {
            let p = self.uv[face[k]];
            [p[0] + shift[k][0] as f64, p[1] + shift[k][1] as f64]
        })
    }

    pub fn signed_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.unwrapped_face(f);
        geom::signed_area_2d(a, b, c)
    }

    /// Number of unwrapped triangles with non-positive orientation.
    pub fn flipped_count(&self) -> usize {
        (0..self.faces.len()).filter(|&f| self.signed_area(f) <= 0.0).count()
    }

    /// Max-norm of the weighted Laplacian of the unwrapped coordinates over
    /// non-cone vertices, normalized by each vertex's total weight.
    pub fn harmonic_residual(&self, cover: &FourCover, scheme: WeightScheme) -> f64 {
        let n = self.uv.len();
        let mut acc = vec![[0.0f64; 2]; n];
        let mut total = vec![0.0f64; n];
        for (i, j, t, w) in edge_weights(&self.faces, &self.face_shift, &cover.positions, scheme) {
            for d in 0..2 {
                let diff = self.uv[j][d] + t[d] as f64 - self.uv[i][d];
                acc[i][d] += w * diff;
                acc[j][d] -= w * diff;
            }
            total[i] += w;
            total[j] += w;
        }
        let mut is_cone = vec![false; n];
        for &c in &self.cone_points {
            is_cone[c] = true;
        }
        (0..n)
            .filter(|&v| !is_cone[v])
            .map(|v| acc[v][0].abs().max(acc[v][1].abs()) / total[v])
            .fold(0.0, f64::max)
    }
}

/// Weighted edges `(i, j, t, w)`, each undirected edge once: seen from `i`,
/// vertex `j` sits at its representative plus the lattice shift `t`.
fn edge_weights(
    faces: &[[usize; 3]],
    shifts: &[[[i64; 2]; 3]],
    positions: &[Vec3],
    scheme: WeightScheme,
) -> Vec<(usize, usize, [i64; 2], f64)> {
    let mut map: BTreeMap<(usize, usize, [i64; 2]), f64> = BTreeMap::new();
    for (f, s) in faces.iter().zip(shifts) {
        for k in 0..3 {
            let (a, b) = ((k + 1) % 3, (k + 2) % 3);
            let (i, j) = (f[a], f[b]);
            let t = [s[b][0] - s[a][0], s[b][1] - s[a][1]];
            let key = if (i, t) <= (j, [-t[0], -t[1]]) {
                (i, j, t)
            } else {
                (j, i, [-t[0], -t[1]])
            };
            let w = match scheme {
                WeightScheme::Uniform => 0.0,
                WeightScheme::Cotangent => {
                    let p = f.map(|v| positions[v]);
                    0.5 * geom::cotangent(p[k], p[a], p[b])
                }
            };
            *map.entry(key).or_insert(0.0) += w;
        }
    }
    map.into_iter()
        .map(|((i, j, t), w)| {
            let w = match scheme {
                WeightScheme::Uniform => 1.0,
                WeightScheme::Cotangent => w.max(COTANGENT_FLOOR),
            };
            (i, j, t, w)
        })
        .collect()
}

/// Tutte embedding of `cover` into the flat torus with its cones pinned.
///
/// Every non-cone vertex is placed at the weighted average of its neighbors'
/// unwrapped positions; the two coordinates decouple and are solved with one
/// sparse Cholesky factorization.
pub fn embed_tutte(cover: &FourCover, scheme: WeightScheme) -> Result<TorusEmbedding> {
    let n = cover.vertex_count();
    let mut pinned: Vec<Option<Vec2>> = vec![None; n];
    for (&c, &uv) in cover.cone_points.iter().zip(&cover.cone_uv) {
        pinned[c] = Some(uv);
    }
    if pinned.iter().all(Option::is_none) {
        return Err(Error::Solve("no cone points to pin".into()));
    }
    let mut unknown = vec![usize::MAX; n];
    let mut free = Vec::new();
    for v in 0..n {
        if pinned[v].is_none() {
            unknown[v] = free.len();
            free.push(v);
        }
    }
    let m = free.len();

    let edges = edge_weights(&cover.faces, &cover.corner_shift, &cover.positions, scheme);
    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rhs = Mat::<f64>::zeros(m, 2);
    // Row i: sum_j w (U_i - U_j) = sum_j w t_ij.
    let mut add_half = |i: usize, j: usize, t: [f64; 2], w: f64, entries: &mut BTreeMap<(usize, usize), f64>| {
        let ri = unknown[i];
        if ri == usize::MAX {
            return;
        }
        *entries.entry((ri, ri)).or_insert(0.0) += w;
        match pinned[j] {
            Some(p) => {
                rhs[(ri, 0)] += w * (t[0] + p[0]);
                rhs[(ri, 1)] += w * (t[1] + p[1]);
            }
            None => {
                *entries.entry((ri, unknown[j])).or_insert(0.0) -= w;
                rhs[(ri, 0)] += w * t[0];
                rhs[(ri, 1)] += w * t[1];
            }
        }
    };
    for &(i, j, t, w) in &edges {
        if i == j {
            return Err(Error::Solve(format!("self-loop at cover vertex {i}")));
        }
        let tf = [t[0] as f64, t[1] as f64];
        add_half(i, j, tf, w, &mut entries);
        add_half(j, i, [-tf[0], -tf[1]], w, &mut entries);
    }

    let solution = if m == 0 {
        Mat::<f64>::zeros(0, 2)
    } else {
        let triplets: Vec<Triplet<usize, usize, f64>> =
            entries.iter().map(|(&(r, c), &v)| Triplet::new(r, c, v)).collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(m, m, &triplets)
            .map_err(|e| Error::Solve(format!("assembling Laplacian: {e:?}")))?;
        let llt = a
            .as_ref()
            .sp_cholesky(faer::Side::Lower)
            .map_err(|e| Error::Solve(format!("Laplacian is not positive definite: {e:?}")))?;
        llt.solve(&rhs)
    };

    let mut unwrapped = vec![[0.0; 2]; n];
    for v in 0..n {
        unwrapped[v] = match pinned[v] {
            Some(p) => p,
            None => [solution[(unknown[v], 0)], solution[(unknown[v], 1)]],
        };
        if !(unwrapped[v][0].is_finite() && unwrapped[v][1].is_finite()) {
            return Err(Error::Solve(format!("non-finite coordinate at vertex {v}")));
        }
    }
    Ok(wrap(cover, unwrapped))
}

/// Wrap unwrapped representative coordinates into `[0, 1)^2`, folding the
/// integer parts into the per-corner shifts.
fn wrap(cover: &FourCover, unwrapped: Vec<Vec2>) -> TorusEmbedding {
    let floor: Vec<[i64; 2]> = unwrapped
        .iter()
        .map(|p| [p[0].floor() as i64, p[1].floor() as i64])
        .collect();
    let uv = unwrapped
        .iter()
        .zip(&floor)
        .map(|(p, f)| {
            let w = [p[0] - f[0] as f64, p[1] - f[1] as f64];
            // Guard against 1.0 produced by rounding of tiny negatives.
            [if w[0] >= 1.0 { 0.0 } else { w[0] }, if w[1] >= 1.0 { 0.0 } else { w[1] }]
        })
        .collect::<Vec<_>>();
    let face_shift = cover
        .faces
        .iter()
        .zip(&cover.corner_shift)
        .map(|(f, s)| {
            std::array::from_fn(|k| {
                let v = f[k];
                let extra = [
                    (unwrapped[v][0] - uv[v][0]).round() as i64,
                    (unwrapped[v][1] - uv[v][1]).round() as i64,
                ];
                [s[k][0] + extra[0], s[k][1] + extra[1]]
            })
        })
        .collect();
    let cone_uv = cover.cone_points.iter().map(|&c| uv[c]).collect();
    TorusEmbedding {
        uv,
        faces: cover.faces.clone(),
        face_shift,
        cone_points: cover.cone_points.clone(),
        cone_uv,
    }
}

/// Embed and enforce the injectivity invariant.
pub fn embed_checked(cover: &FourCover, scheme: WeightScheme) -> Result<TorusEmbedding> {
    let e = embed_tutte(cover, scheme)?;
    let flipped = e.flipped_count();
    if flipped > 0 {
        return Err(Error::Foldover(flipped));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_four_cover, cut_along_path, fixtures, CoverKind, CutSurface};
    use nalgebra::{DMatrix, DVector};

    fn sphere_cover(level: u32) -> FourCover {
        let mesh = fixtures::icosphere(level);
        let t = [
            fixtures::nearest_vertex(&mesh, [0.0, 0.0, 1.0]),
            fixtures::nearest_vertex(&mesh, [1.0, 0.0, 0.0]),
            fixtures::nearest_vertex(&mesh, [0.0, 1.0, 0.0]),
        ];
        build_four_cover(&cut_along_path(&mesh, t).unwrap(), CoverKind::Rotation).unwrap()
    }

    fn total_area(e: &TorusEmbedding) -> f64 {
        (0..e.faces.len()).map(|f| e.signed_area(f)).sum()
    }

    #[test]
    fn icosphere_embedding_is_injective_and_harmonic() {
        let cover = sphere_cover(3);
        for scheme in [WeightScheme::Uniform, WeightScheme::Cotangent] {
            let e = embed_tutte(&cover, scheme).unwrap();
            assert_eq!(e.flipped_count(), 0, "{scheme:?}");
            assert!(e.harmonic_residual(&cover, scheme) < 1e-8);
            // Positive triangles tiling the torus once have total area 1.
            assert!((total_area(&e) - 1.0).abs() < 1e-9);
            assert!(e.uv.iter().all(|p| (0.0..1.0).contains(&p[0]) && (0.0..1.0).contains(&p[1])));
        }
    }

    #[test]
    fn cones_stay_pinned() {
        let cover = sphere_cover(2);
        let e = embed_tutte(&cover, WeightScheme::Uniform).unwrap();
        let mut got: Vec<Vec2> = e.cone_uv.clone();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, vec![[0.0, 0.0], [0.0, 0.5], [0.5, 0.0], [0.5, 0.5]]);
    }

    #[test]
    fn tetrahedron_matches_dense_solve() {
        let mesh = fixtures::tetrahedron();
        let cover = build_four_cover(&cut_along_path(&mesh, [0, 1, 2]).unwrap(), CoverKind::Rotation).unwrap();
        let e = embed_tutte(&cover, WeightScheme::Uniform).unwrap();

        // Dense oracle: full torus Laplacian with pinned rows replaced by identity.
        let n = cover.vertex_count();
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut b = [DVector::<f64>::zeros(n), DVector::<f64>::zeros(n)];
        let mut seen = std::collections::HashSet::new();
        for (f, s) in cover.faces.iter().zip(&cover.corner_shift) {
            for k in 0..3 {
                let (i, j) = (f[k], f[(k + 1) % 3]);
                let t = [s[(k + 1) % 3][0] - s[k][0], s[(k + 1) % 3][1] - s[k][1]];
                let canon = if (i, t) <= (j, [-t[0], -t[1]]) { (i, j, t) } else { (j, i, [-t[0], -t[1]]) };
                if !seen.insert(canon) {
                    continue;
                }
                a[(i, i)] += 1.0;
                a[(j, j)] += 1.0;
                a[(i, j)] -= 1.0;
                a[(j, i)] -= 1.0;
                for d in 0..2 {
                    b[d][i] += t[d] as f64;
                    b[d][j] -= t[d] as f64;
                }
            }
        }
        for (&c, uv) in cover.cone_points.iter().zip(&cover.cone_uv) {
            a.row_mut(c).fill(0.0);
            a[(c, c)] = 1.0;
            b[0][c] = uv[0];
            b[1][c] = uv[1];
        }
        let lu = a.lu();
        for d in 0..2 {
            let x = lu.solve(&b[d]).unwrap();
            for v in 0..n {
                let wrapped = x[v] - x[v].floor();
                let diff = (wrapped - e.uv[v][d]).abs();
                assert!(diff < 1e-10 || (1.0 - diff) < 1e-10, "vertex {v}: {wrapped} vs {}", e.uv[v][d]);
            }
        }
    }

    #[test]
    fn disk_cover_embeds_without_folds() {
        let mesh = fixtures::spherical_cap(2, -0.2);
        let boundary = crate::mesh::cut::boundary_loop(&mesh).unwrap();
        let q = boundary.len() / 4;
        let quad = [boundary[0], boundary[q], boundary[2 * q], boundary[3 * q]];
        let cut = CutSurface::from_disk(&mesh, quad).unwrap();
        let cover = build_four_cover(&cut, CoverKind::Reflection).unwrap();
        let e = embed_checked(&cover, WeightScheme::Uniform).unwrap();
        assert!(e.harmonic_residual(&cover, WeightScheme::Uniform) < 1e-8);
        assert!((total_area(&e) - 1.0).abs() < 1e-9);
    }
}
