//! Procedural meshes used as test fixtures and as templates.

use std::collections::HashMap;

use super::TriangleMesh;
use crate::geom::{self, Vec3};

/// Regular tetrahedron with outward-facing winding.
pub fn tetrahedron() -> TriangleMesh {
    let v = vec![
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ];
    let f = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    TriangleMesh::new(v, f).expect("tetrahedron fixture")
}

/// Unit icosphere after `level` loop subdivisions, rotated so that one of the
/// original icosahedron vertices sits at the north pole `(0, 0, 1)`.
///
/// Level 3 has 642 vertices and 1280 faces.
pub fn icosphere(level: u32) -> TriangleMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw: [Vec3; 12] = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    // Rotate about x so that vertex 5 maps to +z.
    let theta = (1.0f64).atan2(phi);
    let (s, c) = theta.sin_cos();
    let mut vertices: Vec<Vec3> = raw
        .iter()
        .map(|p| {
            let q = geom::normalize(*p);
            [q[0], q[1] * c - q[2] * s, q[1] * s + q[2] * c]
        })
        .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = geom::normalize(geom::scale(geom::add(vertices[a], vertices[b]), 0.5));
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        faces = next;
    }
    TriangleMesh::new(vertices, faces).expect("icosphere fixture")
}

/// Ring torus sampled on a `nu x nv` grid (genus one, `nu * nv` vertices).
pub fn torus(nu: usize, nv: usize, major: f64, minor: f64) -> TriangleMesh {
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = std::f64::consts::TAU * i as f64 / nu as f64;
        for j in 0..nv {
            let v = std::f64::consts::TAU * j as f64 / nv as f64;
            let r = major + minor * v.cos();
            vertices.push([r * u.cos(), r * u.sin(), minor * v.sin()]);
        }
    }
    let idx = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriangleMesh::new(vertices, faces).expect("torus fixture")
}

/// Planar `k x k` grid of unit squares in the `z = 0` plane, split into
/// triangles; a disk with `4k` boundary vertices.
pub fn grid_disk(k: usize) -> TriangleMesh {
    let side = k + 1;
    let mut vertices = Vec::with_capacity(side * side);
    for j in 0..side {
        for i in 0..side {
            vertices.push([i as f64 / k as f64, j as f64 / k as f64, 0.0]);
        }
    }
    let mut faces = Vec::with_capacity(2 * k * k);
    for j in 0..k {
        for i in 0..k {
            let a = j * side + i;
            let (b, c, d) = (a + 1, a + side + 1, a + side);
            // Alternate the diagonal so the triangulation has no preferred direction.
            if (i + j) % 2 == 0 {
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            } else {
                faces.push([a, b, d]);
                faces.push([b, c, d]);
            }
        }
    }
    TriangleMesh::new(vertices, faces).expect("grid disk fixture")
}

/// Icosphere with every face whose centroid lies below `z = cut` removed;
/// a curved disk for `cut` in `(-1, 1)`.
pub fn spherical_cap(level: u32, cut: f64) -> TriangleMesh {
    let sphere = icosphere(level);
    let keep: Vec<[usize; 3]> = sphere
        .faces()
        .iter()
        .copied()
        .filter(|f| {
            let z: f64 = f.iter().map(|&v| sphere.vertices()[v][2]).sum::<f64>() / 3.0;
            z > cut
        })
        .collect();
    let mut remap = vec![usize::MAX; sphere.vertex_count()];
    let mut vertices = Vec::new();
    let faces = keep
        .iter()
        .map(|f| {
            f.map(|v| {
                if remap[v] == usize::MAX {
                    remap[v] = vertices.len();
                    vertices.push(sphere.vertices()[v]);
                }
                remap[v]
            })
        })
        .collect();
    TriangleMesh::new(vertices, faces).expect("cap fixture")
}

/// Index of the vertex closest to `target`; ties go to the smaller index.
pub fn nearest_vertex(mesh: &TriangleMesh, target: Vec3) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, v) in mesh.vertices().iter().enumerate() {
        let d = geom::distance(*v, target);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}
