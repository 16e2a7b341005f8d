//! Indexed triangle meshes and the surface operations needed to build toric
//! covers: OBJ I/O, topology reports, landmark structures, path cutting and
//! four-cover stitching.

mod cover;
pub(crate) mod cut;
pub mod fixtures;
mod landmarks;
mod obj;
mod rigidity;
mod topology;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

pub use cover::{build_four_cover, CoverKind, FourCover};
pub use cut::{cut_along_path, shortest_path, CutSurface};
pub use landmarks::{LandmarkStructure, SurfaceType};
pub use obj::{load_obj, parse_obj, save_obj, write_obj};
pub use rigidity::{check_st_rigidity, rigidity_kernel_dim};
pub use topology::{validate_topology, TopologyReport};

/// Indexed triangle surface with optional per-vertex part labels.
///
/// Construction validates index bounds, rejects degenerate faces, and checks
/// that every edge borders at most two faces with consistent winding.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    labels: Option<Vec<u8>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        check_connectivity(vertices.len(), &faces)?;
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Topology("non-finite vertex coordinate".into()));
        }
        Ok(Self {
            vertices,
            faces,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.vertices.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} vertices",
                labels.len(),
                self.vertices.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Same connectivity, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Shape(format!(
                "{} positions for a mesh with {} vertices",
                vertices.len(),
                self.vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
            labels: self.labels.clone(),
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        geom::triangle_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Sorted list of undirected edges `(lo, hi)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| {
                (0..3).map(move |k| {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    (a.min(b), a.max(b))
                })
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Neighbor lists (sorted, unique) for every vertex.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Faces incident to each vertex.
    pub fn vertex_faces(&self) -> Vec<Vec<usize>> {
        let mut vf = vec![Vec::new(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                vf[v].push(fi);
            }
        }
        vf
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        geom::distance(lo, hi)
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.vertices.len().max(1) as f64;
        let s = self
            .vertices
            .iter()
            .fold([0.0; 3], |acc, &v| geom::add(acc, v));
        geom::scale(s, 1.0 / n)
    }
}

fn check_connectivity(vertex_count: usize, faces: &[[usize; 3]]) -> Result<()> {
    let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3);
    let mut undirected: HashMap<(usize, usize), u32> = HashMap::with_capacity(faces.len() * 3);
    for (fi, f) in faces.iter().enumerate() {
        for &v in f {
            if v >= vertex_count {
                return Err(Error::Topology(format!(
                    "face {fi} references vertex {v} but the mesh has {vertex_count}"
                )));
            }
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(Error::Topology(format!("face {fi} is degenerate: {f:?}")));
        }
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            if let Some(prev) = directed.insert((a, b), fi) {
                return Err(Error::Topology(format!(
                    "edge ({a}, {b}) has the same direction in faces {prev} and {fi}"
                )));
            }
            let count = undirected.entry((a.min(b), a.max(b))).or_insert(0);
            *count += 1;
            if *count > 2 {
                return Err(Error::Topology(format!(
                    "edge ({a}, {b}) borders more than two faces"
                )));
            }
        }
    }
    Ok(())
}
