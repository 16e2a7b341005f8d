use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use ordered_float::OrderedFloat;

use super::{validate_topology, TriangleMesh};
use crate::error::{Error, Result};
use crate::geom;

/// A topological disk together with how its boundary maps to the corners of
/// the fundamental square.
#[derive(Clone, Debug)]
pub struct CutSurface {
    pub mesh: TriangleMesh,
    /// Disk vertex -> vertex of the uncut surface.
    pub provenance: Vec<usize>,
    /// Boundary loop in winding order, starting at the first corner.
    pub boundary: Vec<usize>,
    /// Positions in `boundary` of the four square corners, increasing.
    pub corners: [usize; 4],
}

/// Dijkstra over the edge graph with Euclidean weights. Ties resolve toward
/// the smaller predecessor index so results are reproducible.
pub fn shortest_path(
    mesh: &TriangleMesh,
    neighbors: &[Vec<usize>],
    from: usize,
    to: usize,
    blocked: &[bool],
) -> Option<Vec<usize>> {
    let n = mesh.vertex_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[from] = 0.0;
    heap.push(Reverse((OrderedFloat(0.0), from)));
    while let Some(Reverse((OrderedFloat(d), u))) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        if u == to {
            break;
        }
        for &w in &neighbors[u] {
            if blocked[w] || done[w] {
                continue;
            }
            let nd = d + geom::distance(mesh.vertices()[u], mesh.vertices()[w]);
            if nd < dist[w] || (nd == dist[w] && u < pred[w]) {
                dist[w] = nd;
                pred[w] = u;
                heap.push(Reverse((OrderedFloat(nd), w)));
            }
        }
    }
    if !dist[to].is_finite() {
        return None;
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = pred[cur];
        path.push(cur);
    }
    path.reverse();
    Some(path)
}

/// Cut a closed genus-zero surface along the shortest edge path
/// `p1 -> p2 -> p3`, producing a disk whose boundary runs
/// `p1 -> p2 -> p3 -> p2' -> p1`.
///
/// The first leg avoids `p3`; the second leg avoids every vertex of the first
/// leg except `p2`, which keeps the cut simple.
pub fn cut_along_path(mesh: &TriangleMesh, triplet: [usize; 3]) -> Result<CutSurface> {
    let [p1, p2, p3] = triplet;
    if p1 == p2 || p2 == p3 || p1 == p3 {
        return Err(Error::Path(format!("landmarks {triplet:?} are not distinct")));
    }
    if triplet.iter().any(|&p| p >= mesh.vertex_count()) {
        return Err(Error::Path(format!("landmarks {triplet:?} out of range")));
    }
    let report = validate_topology(mesh);
    if !report.is_closed_sphere() {
        return Err(Error::Topology(format!(
            "cutting needs a closed genus-zero surface, got {report:?}"
        )));
    }

    let neighbors = mesh.vertex_neighbors();
    let n = mesh.vertex_count();
    let mut blocked = vec![false; n];
    blocked[p3] = true;
    let leg1 = shortest_path(mesh, &neighbors, p1, p2, &blocked)
        .ok_or_else(|| Error::Path(format!("no path {p1} -> {p2} avoiding {p3}")))?;
    blocked[p3] = false;
    for &v in &leg1[..leg1.len() - 1] {
        blocked[v] = true;
    }
    let leg2 = shortest_path(mesh, &neighbors, p2, p3, &blocked)
        .ok_or_else(|| Error::Path(format!("no path {p2} -> {p3} avoiding the first leg")))?;
    let mut path = leg1.clone();
    path.extend_from_slice(&leg2[1..]);
    let split = leg1.len() - 1;
    let m = path.len() - 1;

    // Fan lookup: for vertex v, map a -> (face, b) over faces (v, a, b).
    let mut fan: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    for (fi, f) in mesh.faces().iter().enumerate() {
        for k in 0..3 {
            fan.insert((f[k], f[(k + 1) % 3]), (fi, f[(k + 2) % 3]));
        }
    }

    let mut faces = mesh.faces().to_vec();
    let mut vertices = mesh.vertices().to_vec();
    let mut provenance: Vec<usize> = (0..n).collect();
    for i in 1..m {
        let (prev, v, next) = (path[i - 1], path[i], path[i + 1]);
        // Faces swept counter-clockwise from `next` to `prev` lie left of the path.
        let mut left = HashSet::new();
        let mut a = next;
        loop {
            let &(fi, b) = fan
                .get(&(v, a))
                .ok_or_else(|| Error::Topology(format!("open fan at vertex {v}")))?;
            left.insert(fi);
            if b == prev {
                break;
            }
            a = b;
            if left.len() > faces.len() {
                return Err(Error::Topology(format!("fan walk did not close at {v}")));
            }
        }
        let dup = vertices.len();
        vertices.push(mesh.vertices()[v]);
        provenance.push(v);
        for (fi, f) in faces.iter_mut().enumerate() {
            if !left.contains(&fi) {
                for slot in f.iter_mut() {
                    if *slot == v {
                        *slot = dup;
                    }
                }
            }
        }
    }

    let disk = TriangleMesh::new(vertices, faces)?;
    let report = validate_topology(&disk);
    if !report.is_disk() {
        return Err(Error::Path(format!("cut did not produce a disk: {report:?}")));
    }
    let boundary = boundary_loop_from(&disk, p1)?;
    if boundary.len() != 2 * m || boundary[split] != p2 || boundary[m] != p3 {
        return Err(Error::Path(
            "cut boundary does not follow p1 -> p2 -> p3; check face winding".into(),
        ));
    }
    Ok(CutSurface {
        mesh: disk,
        provenance,
        boundary,
        corners: [0, split, m, 2 * m - split],
    })
}

impl CutSurface {
    /// Wrap a native disk whose four boundary landmarks become the square's corners.
    pub fn from_disk(mesh: &TriangleMesh, quad: [usize; 4]) -> Result<Self> {
        let report = validate_topology(mesh);
        if !report.is_disk() {
            return Err(Error::Topology(format!(
                "expected a single-boundary disk, got {report:?}"
            )));
        }
        let boundary = boundary_loop_from(mesh, quad[0])?;
        let pos = |v: usize| boundary.iter().position(|&b| b == v);
        let mut corners = [0usize; 4];
        for (k, &q) in quad.iter().enumerate() {
            corners[k] = pos(q).ok_or_else(|| {
                Error::Stitch(format!("quadruplet vertex {q} is not on the boundary"))
            })?;
        }
        if !corners.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Stitch(format!(
                "quadruplet {quad:?} does not follow the boundary winding order"
            )));
        }
        Ok(Self {
            mesh: mesh.clone(),
            provenance: (0..mesh.vertex_count()).collect(),
            boundary,
            corners,
        })
    }
}

/// The single boundary loop of a disk in winding order, starting at its
/// smallest vertex index.
pub(crate) fn boundary_loop(mesh: &TriangleMesh) -> Result<Vec<usize>> {
    let next = boundary_successors(mesh);
    let start = *next
        .keys()
        .min()
        .ok_or_else(|| Error::Topology("mesh has no boundary".into()))?;
    let loop_ = boundary_loop_from(mesh, start)?;
    if loop_.len() != next.len() {
        return Err(Error::Topology("mesh has more than one boundary loop".into()));
    }
    Ok(loop_)
}

fn boundary_successors(mesh: &TriangleMesh) -> HashMap<usize, usize> {
    let mut directed = HashSet::new();
    for f in mesh.faces() {
        for k in 0..3 {
            directed.insert((f[k], f[(k + 1) % 3]));
        }
    }
    directed
        .iter()
        .filter(|(a, b)| !directed.contains(&(*b, *a)))
        .copied()
        .collect()
}

fn boundary_loop_from(mesh: &TriangleMesh, start: usize) -> Result<Vec<usize>> {
    let next = boundary_successors(mesh);
    if !next.contains_key(&start) {
        return Err(Error::Topology(format!("vertex {start} is not on the boundary")));
    }
    let mut out = vec![start];
    let mut cur = next[&start];
    while cur != start {
        out.push(cur);
        cur = *next
            .get(&cur)
            .ok_or_else(|| Error::Topology("boundary loop is open".into()))?;
        if out.len() > next.len() {
            return Err(Error::Topology("boundary is not a simple loop".into()));
        }
    }
    Ok(out)
}
