use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_st_rigidity, TriangleMesh};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurfaceType {
    #[serde(rename = "sphere")]
    SphereLike,
    #[serde(rename = "disk")]
    DiskLike,
}

/// Landmark vertices and the chart groups built on them.
///
/// `groups` index into `landmarks`: a sphere-like surface uses triplets
/// `(p1, p2, p3)` describing the cut path `p1 -> p2 -> p3`; a disk-like
/// surface uses one quadruplet of boundary landmarks in boundary order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkStructure {
    pub surface_type: SurfaceType,
    pub landmarks: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

impl LandmarkStructure {
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Mesh vertex indices of the landmarks in group `k`.
    pub fn group_vertices(&self, k: usize) -> Vec<usize> {
        self.groups[k].iter().map(|&l| self.landmarks[l]).collect()
    }

    /// Structural checks that do not need a mesh.
    pub fn check_structure(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Config("landmark structure has no groups".into()));
        }
        let distinct: HashSet<usize> = self.landmarks.iter().copied().collect();
        if distinct.len() != self.landmarks.len() {
            return Err(Error::Config("duplicate landmark vertex".into()));
        }
        let size = match self.surface_type {
            SurfaceType::SphereLike => 3,
            SurfaceType::DiskLike => 4,
        };
        if self.surface_type == SurfaceType::DiskLike && self.groups.len() != 1 {
            return Err(Error::Config("disk-like surfaces take exactly one quadruplet".into()));
        }
        for (k, g) in self.groups.iter().enumerate() {
            if g.len() != size {
                return Err(Error::Config(format!(
                    "group {k} has {} landmarks, expected {size}",
                    g.len()
                )));
            }
            let set: HashSet<usize> = g.iter().copied().collect();
            if set.len() != g.len() {
                return Err(Error::Config(format!("group {k} repeats a landmark")));
            }
            if let Some(&bad) = g.iter().find(|&&l| l >= self.landmarks.len()) {
                return Err(Error::Config(format!("group {k} references landmark {bad}")));
            }
        }
        if !check_st_rigidity(self) {
            return Err(Error::Rank(
                "chart scale and translation are not recoverable from shared landmarks".into(),
            ));
        }
        Ok(())
    }

    /// Full validation against a mesh.
    pub fn validate(&self, mesh: &TriangleMesh) -> Result<()> {
        self.check_structure()?;
        if let Some(&bad) = self.landmarks.iter().find(|&&v| v >= mesh.vertex_count()) {
            return Err(Error::Config(format!("landmark vertex {bad} out of range")));
        }
        if self.surface_type == SurfaceType::DiskLike {
            let boundary = super::cut::boundary_loop(mesh)?;
            let on_loop: HashSet<usize> = boundary.iter().copied().collect();
            if let Some(&bad) = self.group_vertices(0).iter().find(|v| !on_loop.contains(v)) {
                return Err(Error::Config(format!("quadruplet vertex {bad} is not on the boundary")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("landmarks serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_schema_round_trip() {
        let text = r#"{"surface_type": "sphere", "landmarks": [0, 5, 9], "groups": [[0, 1, 2]]}"#;
        let l = LandmarkStructure::from_json(text).unwrap();
        assert_eq!(l.surface_type, SurfaceType::SphereLike);
        assert_eq!(l.group_vertices(0), vec![0, 5, 9]);
        let again = LandmarkStructure::from_json(&l.to_json()).unwrap();
        assert_eq!(again, l);
        let disk = r#"{"surface_type": "disk", "landmarks": [1, 2, 3, 4], "groups": [[0, 1, 2, 3]]}"#;
        assert_eq!(
            LandmarkStructure::from_json(disk).unwrap().surface_type,
            SurfaceType::DiskLike
        );
    }

    #[test]
    fn repeated_landmark_in_group_is_rejected() {
        let l = LandmarkStructure {
            surface_type: SurfaceType::SphereLike,
            landmarks: vec![0, 1, 2],
            groups: vec![vec![0, 1, 1]],
        };
        assert!(l.check_structure().is_err());
    }

    #[test]
    fn disk_landmarks_must_be_on_the_boundary() {
        let mesh = crate::mesh::fixtures::grid_disk(4);
        // Vertex 6 is interior in a 5x5 grid.
        let l = LandmarkStructure {
            surface_type: SurfaceType::DiskLike,
            landmarks: vec![0, 4, 24, 6],
            groups: vec![vec![0, 1, 2, 3]],
        };
        assert!(l.validate(&mesh).is_err());
        let ok = LandmarkStructure {
            landmarks: vec![0, 4, 24, 20],
            ..l
        };
        ok.validate(&mesh).unwrap();
    }
}
