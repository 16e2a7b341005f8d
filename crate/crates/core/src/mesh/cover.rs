use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{CutSurface, TriangleMesh};
use crate::error::{Error, Result};
use crate::geom::{Vec2, Vec3};

/// Symmetry type of the cover's deck group.
///
/// `Rotation` is the order-4 rotation group of a cut sphere (cones of order
/// 4, 2, 4); `Reflection` is the Klein four-group of mirror images used for a
/// disk with four boundary corners.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverKind {
    Rotation,
    Reflection,
}

impl CoverKind {
    /// Affine part of copy `k`, as an integer 2x2 matrix acting on the square `[0, 1/2]^2`.
    pub(crate) fn copy_matrix(self, k: usize) -> [[i64; 2]; 2] {
        match self {
            CoverKind::Rotation => {
                let mut m = [[1, 0], [0, 1]];
                for _ in 0..k {
                    // (x, y) -> (-y, x)
                    m = [[-m[1][0], -m[1][1]], [m[0][0], m[0][1]]];
                }
                m
            }
            CoverKind::Reflection => {
                let sx = if k & 1 == 1 { -1 } else { 1 };
                let sy = if k & 2 == 2 { -1 } else { 1 };
                [[sx, 0], [0, sy]]
            }
        }
    }

    fn compose(self, g: usize, k: usize) -> usize {
        match self {
            CoverKind::Rotation => (g + k) % 4,
            CoverKind::Reflection => g ^ k,
        }
    }
}

/// Four copies of a cut surface stitched into a torus.
///
/// Each cover vertex has a representative copy; the unwrapped position of a
/// face corner is the representative's position plus the integer lattice
/// shift stored in `corner_shift`. Edges are identified by their endpoints
/// together with that shift, so the cover may carry several edges between
/// the same pair of vertices.
#[derive(Clone, Debug)]
pub struct FourCover {
    pub kind: CoverKind,
    pub positions: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub corner_shift: Vec<[[i64; 2]; 3]>,
    /// Cover vertex -> base vertex (the projection onto the original surface).
    pub projection: Vec<usize>,
    /// Base vertex -> its cover vertex in copy 0.
    pub base_representative: Vec<usize>,
    /// Copy index and source base face of every cover face.
    pub face_copy: Vec<u8>,
    pub face_source: Vec<usize>,
    pub cone_points: Vec<usize>,
    /// Pinned torus coordinates of `cone_points`.
    pub cone_uv: Vec<Vec2>,
    /// Slot of each cone point within its landmark group.
    pub cone_slot: Vec<usize>,
    /// Deck transformations as cover-vertex permutations, identity first.
    pub deck: Vec<Vec<usize>>,
}

/// Stitch four copies of `cut` into a torus and record its deck group.
pub fn build_four_cover(cut: &CutSurface, kind: CoverKind) -> Result<FourCover> {
    let disk = &cut.mesh;
    let nd = disk.vertex_count();
    let base_count = cut.provenance.iter().max().map_or(0, |m| m + 1);

    // Place boundary vertices along the square's sides by index, so twins on
    // glued sides land on congruent points of the torus.
    let corners_uv: [Vec2; 4] = [[0.0, 0.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]];
    let b = cut.boundary.len();
    let mut placed: Vec<Option<Vec2>> = vec![None; nd];
    for side in 0..4 {
        let start = cut.corners[side];
        let end = if side == 3 { b } else { cut.corners[side + 1] };
        let len = end - start;
        if len == 0 {
            return Err(Error::Stitch(format!("side {side} of the square is empty")));
        }
        let (p, q) = (corners_uv[side], corners_uv[(side + 1) % 4]);
        for step in 0..len {
            let t = step as f64 / len as f64;
            let d = cut.boundary[start + step];
            placed[d] = Some([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }

    const QUANT: f64 = (1u64 << 24) as f64;
    let key_of = |uv: Vec2| -> (i64, i64) {
        let wrap = |x: f64| ((x - x.floor()) * QUANT).round() as i64 % (1 << 24);
        (wrap(uv[0]), wrap(uv[1]))
    };
    let apply = |k: usize, uv: Vec2| -> Vec2 {
        let m = kind.copy_matrix(k);
        [
            m[0][0] as f64 * uv[0] + m[0][1] as f64 * uv[1],
            m[1][0] as f64 * uv[0] + m[1][1] as f64 * uv[1],
        ]
    };

    // class[k][d] = cover vertex, shift[k][d] = lattice offset from its representative.
    let mut class = vec![vec![usize::MAX; nd]; 4];
    let mut shift = vec![vec![[0i64; 2]; nd]; 4];
    let mut rep_uv: Vec<Option<Vec2>> = Vec::new();
    let mut projection = Vec::new();
    let mut by_key: HashMap<(i64, i64), usize> = HashMap::new();
    for k in 0..4 {
        for d in 0..nd {
            let base = cut.provenance[d];
            let Some(q) = placed[d] else {
                class[k][d] = projection.len();
                projection.push(base);
                rep_uv.push(None);
                continue;
            };
            let uv = apply(k, q);
            match by_key.get(&key_of(uv)) {
                Some(&c) => {
                    if projection[c] != base {
                        return Err(Error::Stitch(format!(
                            "boundary vertices of base {} and {base} meet at the same torus point",
                            projection[c]
                        )));
                    }
                    let r = rep_uv[c].expect("boundary class has a placed representative");
                    class[k][d] = c;
                    shift[k][d] = [(uv[0] - r[0]).round() as i64, (uv[1] - r[1]).round() as i64];
                }
                None => {
                    let c = projection.len();
                    by_key.insert(key_of(uv), c);
                    projection.push(base);
                    rep_uv.push(Some(uv));
                    class[k][d] = c;
                }
            }
        }
    }

    let mut faces = Vec::with_capacity(4 * disk.face_count());
    let mut corner_shift = Vec::with_capacity(4 * disk.face_count());
    let mut face_copy = Vec::with_capacity(4 * disk.face_count());
    let mut face_source = Vec::with_capacity(4 * disk.face_count());
    for k in 0..4 {
        let m = kind.copy_matrix(k);
        let flip = m[0][0] * m[1][1] - m[0][1] * m[1][0] < 0;
        for (fi, f) in disk.faces().iter().enumerate() {
            let order = if flip { [0, 2, 1] } else { [0, 1, 2] };
            faces.push(order.map(|o| class[k][f[o]]));
            corner_shift.push(order.map(|o| shift[k][f[o]]));
            face_copy.push(k as u8);
            face_source.push(fi);
        }
    }

    // Deck group: copy g acts on classes by relabeling copies.
    let count = projection.len();
    let mut deck = Vec::with_capacity(4);
    for g in 0..4 {
        let mut perm = vec![usize::MAX; count];
        for k in 0..4 {
            let target = kind.compose(g, k);
            for d in 0..nd {
                let (from, to) = (class[k][d], class[target][d]);
                if perm[from] == usize::MAX {
                    perm[from] = to;
                } else if perm[from] != to {
                    return Err(Error::Stitch(format!(
                        "deck transformation {g} is not well defined on cover vertex {from}"
                    )));
                }
            }
        }
        deck.push(perm);
    }

    // Cone points: every copy of every square corner.
    let mut cones: BTreeMap<usize, (Vec2, usize)> = BTreeMap::new();
    for (slot_pos, &corner) in cut.corners.iter().enumerate() {
        let d = cut.boundary[corner];
        let slot = match kind {
            // p1, p2, p3, p2' -> group slots 0, 1, 2, 1
            CoverKind::Rotation => [0, 1, 2, 1][slot_pos],
            CoverKind::Reflection => slot_pos,
        };
        for k in 0..4 {
            let c = class[k][d];
            cones
                .entry(c)
                .or_insert_with(|| (rep_uv[c].expect("corner is placed"), slot));
        }
    }
    let cone_points: Vec<usize> = cones.keys().copied().collect();
    let cone_uv = cones.values().map(|v| v.0).collect();
    let cone_slot = cones.values().map(|v| v.1).collect();

    let mut base_representative = vec![usize::MAX; base_count];
    for d in (0..nd).rev() {
        base_representative[cut.provenance[d]] = class[0][d];
    }
    // Prefer the original (lowest-index) disk vertex of each base vertex.
    for d in 0..nd.min(base_count) {
        if cut.provenance[d] == d {
            base_representative[d] = class[0][d];
        }
    }

    let positions = (0..count).map(|c| disk.vertices()[first_disk_vertex(&class, c)]).collect();

    let cover = FourCover {
        kind,
        positions,
        faces,
        corner_shift,
        projection,
        base_representative,
        face_copy,
        face_source,
        cone_points,
        cone_uv,
        cone_slot,
        deck,
    };
    let chi = cover.euler_characteristic();
    if chi != 0 {
        return Err(Error::Stitch(format!(
            "stitched cover has Euler characteristic {chi}, expected 0"
        )));
    }
    Ok(cover)
}

fn first_disk_vertex(class: &[Vec<usize>], c: usize) -> usize {
    class
        .iter()
        .find_map(|row| row.iter().position(|&x| x == c))
        .expect("every class has a member")
}

impl FourCover {
    pub fn vertex_count(&self) -> usize {
        self.projection.len()
    }

    /// Edges keyed by endpoints and relative lattice shift.
    pub fn edges(&self) -> Vec<(usize, usize, [i64; 2])> {
        let mut set = HashSet::new();
        for (f, s) in self.faces.iter().zip(&self.corner_shift) {
            for k in 0..3 {
                let (i, j) = (f[k], f[(k + 1) % 3]);
                let t = [s[(k + 1) % 3][0] - s[k][0], s[(k + 1) % 3][1] - s[k][1]];
                let key = if (i, t) <= (j, [-t[0], -t[1]]) {
                    (i, j, t)
                } else {
                    (j, i, [-t[0], -t[1]])
                };
                set.insert(key);
            }
        }
        let mut v: Vec<_> = set.into_iter().collect();
        v.sort_unstable();
        v
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edges().len() as i64 + self.faces.len() as i64
    }

    /// The cover as a plain mesh, when it has no repeated vertex pairs.
    pub fn to_mesh(&self) -> Result<TriangleMesh> {
        TriangleMesh::new(self.positions.clone(), self.faces.clone())
    }
}
