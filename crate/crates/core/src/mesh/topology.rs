use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::TriangleMesh;

/// Summary of a mesh's topology. Failures are reported, not raised.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub euler_characteristic: i64,
    pub components: usize,
    pub genus: i64,
    pub boundary_loops: usize,
    pub is_manifold: bool,
}

impl TopologyReport {
    pub fn is_closed_sphere(&self) -> bool {
        self.is_manifold && self.components == 1 && self.genus == 0 && self.boundary_loops == 0
    }

    pub fn is_disk(&self) -> bool {
        self.is_manifold && self.components == 1 && self.genus == 0 && self.boundary_loops == 1
    }
}

pub fn validate_topology(mesh: &TriangleMesh) -> TopologyReport {
    let v = mesh.vertex_count();
    let f = mesh.face_count();
    let edges = mesh.edges();
    let e = edges.len();
    let chi = v as i64 - e as i64 + f as i64;

    let mut directed: HashSet<(usize, usize)> = HashSet::with_capacity(3 * f);
    for face in mesh.faces() {
        for k in 0..3 {
            directed.insert((face[k], face[(k + 1) % 3]));
        }
    }

    // Boundary half-edges are those whose twin is missing.
    let mut boundary_next: HashMap<usize, Vec<usize>> = HashMap::new();
    for &(a, b) in &directed {
        if !directed.contains(&(b, a)) {
            boundary_next.entry(a).or_default().push(b);
        }
    }
    let mut is_manifold = boundary_next.values().all(|n| n.len() == 1);

    let mut boundary_loops = 0;
    if is_manifold {
        let mut seen: HashSet<usize> = HashSet::new();
        let mut starts: Vec<usize> = boundary_next.keys().copied().collect();
        starts.sort_unstable();
        for start in starts {
            if seen.contains(&start) {
                continue;
            }
            boundary_loops += 1;
            let mut cur = start;
            while seen.insert(cur) {
                cur = boundary_next[&cur][0];
            }
        }
    }

    is_manifold &= vertex_links_are_single_fans(mesh);

    let components = count_components(mesh);
    let used: HashSet<usize> = mesh.faces().iter().flatten().copied().collect();
    let isolated = v - used.len();
    let genus = (2 * (components + isolated) as i64 - chi - boundary_loops as i64) / 2;

    TopologyReport {
        vertices: v,
        edges: e,
        faces: f,
        euler_characteristic: chi,
        components: components + isolated,
        genus,
        boundary_loops,
        is_manifold,
    }
}

/// Each vertex's link (the chain of opposite edges) must be one cycle or one path.
fn vertex_links_are_single_fans(mesh: &TriangleMesh) -> bool {
    let mut link: Vec<Vec<(usize, usize)>> = vec![Vec::new(); mesh.vertex_count()];
    for face in mesh.faces() {
        for k in 0..3 {
            link[face[k]].push((face[(k + 1) % 3], face[(k + 2) % 3]));
        }
    }
    link.iter().all(|edges| {
        if edges.is_empty() {
            return true;
        }
        let next: HashMap<usize, usize> = edges.iter().copied().collect();
        let targets: HashSet<usize> = edges.iter().map(|e| e.1).collect();
        // Walk from a chain start if there is one, else from any vertex of the cycle.
        let start = edges
            .iter()
            .map(|e| e.0)
            .find(|a| !targets.contains(a))
            .unwrap_or(edges[0].0);
        let mut visited = 0;
        let mut cur = start;
        while let Some(&n) = next.get(&cur) {
            visited += 1;
            cur = n;
            if cur == start || visited > edges.len() {
                break;
            }
        }
        visited == edges.len()
    })
}

fn count_components(mesh: &TriangleMesh) -> usize {
    let n = mesh.vertex_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for f in mesh.faces() {
        for k in 0..2 {
            let a = find(&mut parent, f[k]);
            let b = find(&mut parent, f[k + 1]);
            if a != b {
                parent[a] = b;
            }
        }
    }
    let used: HashSet<usize> = mesh.faces().iter().flatten().copied().collect();
    let roots: HashSet<usize> = used.into_iter().map(|v| find(&mut parent, v)).collect();
    roots.len()
}
