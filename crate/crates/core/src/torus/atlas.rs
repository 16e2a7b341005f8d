use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{embed_checked, grid_symmetry, Chart, SamplingPlan, TorusEmbedding, WeightScheme};
use crate::error::{Error, Result};
use crate::geom::{Vec2, Vec3};
use crate::mesh::{build_four_cover, cut_along_path, CoverKind, CutSurface, LandmarkStructure, SurfaceType, TriangleMesh};

pub const ATLAS_VERSION: u32 = 1;

/// Harmonic residual accepted for a produced embedding.
const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Grid location of one landmark in one chart.
///
/// `node` is the grid cell whose lower-left corner is the cone point; `orbit`
/// is its image under the grid symmetry group and contains `node`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeNode {
    pub slot: usize,
    /// Index into the landmark list.
    pub landmark: usize,
    pub vertex: usize,
    pub uv: Vec2,
    pub node: [usize; 2],
    pub orbit: Vec<[usize; 2]>,
}

/// One chart of the atlas, built from one landmark group.
#[derive(Clone, Debug, PartialEq)]
pub struct AtlasChart {
    pub group: usize,
    pub embedding: TorusEmbedding,
    /// Cover vertex -> template vertex.
    pub projection: Vec<usize>,
    /// Torus coordinate of every template vertex.
    pub base_uv: Vec<Vec2>,
    pub tau: Vec<f64>,
    pub cones: Vec<ConeNode>,
    pub plan: SamplingPlan,
}

/// Per-group torus embeddings of a template mesh and the grid layout shared
/// by every chart.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartAtlas {
    pub n: usize,
    pub weight_scheme: WeightScheme,
    pub kind: CoverKind,
    pub landmarks: LandmarkStructure,
    pub vertex_count: usize,
    pub charts: Vec<AtlasChart>,
    /// Grid symmetry permutations, identity first.
    pub symmetry: Vec<Vec<usize>>,
}

impl ChartAtlas {
    pub fn build(
        template: &TriangleMesh,
        landmarks: &LandmarkStructure,
        n: usize,
        scheme: WeightScheme,
    ) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Config(format!("grid resolution {n} must be a power of two >= 4")));
        }
        landmarks.validate(template)?;
        let kind = match landmarks.surface_type {
            SurfaceType::SphereLike => CoverKind::Rotation,
            SurfaceType::DiskLike => CoverKind::Reflection,
        };
        let symmetry = grid_symmetry(kind, n);
        let mut charts = Vec::with_capacity(landmarks.group_count());
        for k in 0..landmarks.group_count() {
            let verts = landmarks.group_vertices(k);
            let cut = match kind {
                CoverKind::Rotation => cut_along_path(template, [verts[0], verts[1], verts[2]])?,
                CoverKind::Reflection => {
                    CutSurface::from_disk(template, [verts[0], verts[1], verts[2], verts[3]])?
                }
            };
            let cover = build_four_cover(&cut, kind)?;
            let embedding = embed_checked(&cover, scheme)?;
            let residual = embedding.harmonic_residual(&cover, scheme);
            if residual >= RESIDUAL_TOLERANCE {
                return Err(Error::Solve(format!("chart {k}: harmonic residual {residual:e}")));
            }
            let base_uv = cover.base_representative.iter().map(|&c| embedding.uv[c]).collect();
            let tau = compute_tau(template, &embedding)?;

            let mut cones = Vec::new();
            for (slot, &landmark) in landmarks.groups[k].iter().enumerate() {
                let i = cover
                    .cone_slot
                    .iter()
                    .position(|&s| s == slot)
                    .ok_or_else(|| Error::Stitch(format!("chart {k} has no cone for slot {slot}")))?;
                let uv = embedding.uv[cover.cone_points[i]];
                cones.push(cone_node(n, &symmetry, slot, landmark, verts[slot], uv));
            }
            let plan = SamplingPlan::build(&embedding, &cover.projection, n)?;
            charts.push(AtlasChart {
                group: k,
                embedding,
                projection: cover.projection,
                base_uv,
                tau,
                cones,
                plan,
            });
        }
        let atlas = Self {
            n,
            weight_scheme: scheme,
            kind,
            landmarks: landmarks.clone(),
            vertex_count: template.vertex_count(),
            charts,
            symmetry,
        };
        atlas.check_coverage()?;
        Ok(atlas)
    }

    pub fn chart_count(&self) -> usize {
        self.charts.len()
    }

    fn check_coverage(&self) -> Result<()> {
        for v in 0..self.vertex_count {
            let total: f64 = self.charts.iter().map(|c| c.tau[v]).sum();
            if !(total > 0.0) {
                return Err(Error::Coverage(format!("vertex {v} has zero total tau weight")));
            }
        }
        Ok(())
    }

    /// Push the coordinates of a mesh with template connectivity into every chart.
    pub fn push_positions(&self, vertices: &[Vec3]) -> Result<Vec<Chart>> {
        if vertices.len() != self.vertex_count {
            return Err(Error::Shape(format!(
                "mesh has {} vertices, atlas template has {}",
                vertices.len(),
                self.vertex_count
            )));
        }
        let flat: Vec<f64> = vertices.iter().flat_map(|p| p.iter().copied()).collect();
        Ok(self.charts.iter().map(|c| c.plan.push(&flat, 3)).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&AtlasFile::from(self)).expect("atlas serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: AtlasFile = serde_json::from_str(text)?;
        file.into_atlas()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn cone_node(n: usize, symmetry: &[Vec<usize>], slot: usize, landmark: usize, vertex: usize, uv: Vec2) -> ConeNode {
    let cell = |x: f64| ((x * n as f64).floor() as usize).min(n - 1);
    let node = [cell(uv[0]), cell(uv[1])];
    let mut orbit: Vec<[usize; 2]> = symmetry
        .iter()
        .map(|p| {
            let k = p[node[0] * n + node[1]];
            [k / n, k % n]
        })
        .collect();
    orbit.sort_unstable();
    orbit.dedup();
    ConeNode { slot, landmark, vertex, uv, node, orbit }
}

/// Ratio of torus area to surface area of every template vertex's 1-ring.
///
/// Faces `0..F` of the embedding must be the copy-0 images of the template's
/// faces, which is how covers are laid out.
pub fn compute_tau(template: &TriangleMesh, embedding: &TorusEmbedding) -> Result<Vec<f64>> {
    let areas: Vec<f64> = (0..template.face_count()).map(|f| embedding.signed_area(f).abs()).collect();
    tau_from_face_areas(template, &areas)
}

/// `tau(v) = sum of torus_areas over faces at v / sum of surface areas over faces at v`.
pub fn tau_from_face_areas(template: &TriangleMesh, torus_areas: &[f64]) -> Result<Vec<f64>> {
    let n = template.vertex_count();
    let mut torus = vec![0.0; n];
    let mut surface = vec![0.0; n];
    for (f, face) in template.faces().iter().enumerate() {
        let a = template.face_area(f);
        for &v in face {
            torus[v] += torus_areas[f];
            surface[v] += a;
        }
    }
    (0..n)
        .map(|v| {
            if surface[v] <= 0.0 || torus[v] <= 0.0 {
                Err(Error::ZeroArea(v))
            } else {
                Ok(torus[v] / surface[v])
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct AtlasFile {
    atlas_version: u32,
    n: usize,
    weight_scheme: WeightScheme,
    kind: CoverKind,
    landmarks: LandmarkStructure,
    vertex_count: usize,
    charts: Vec<ChartFile>,
}

#[derive(Serialize, Deserialize)]
struct ChartFile {
    group: usize,
    uv: Vec<f64>,
    faces: Vec<usize>,
    face_shift: Vec<i64>,
    cone_points: Vec<usize>,
    cone_uv: Vec<f64>,
    projection: Vec<usize>,
    base_uv: Vec<f64>,
    tau: Vec<f64>,
    cones: Vec<ConeNode>,
}

fn pairs(flat: &[f64]) -> Result<Vec<Vec2>> {
    if flat.len() % 2 != 0 {
        return Err(Error::Config("flat coordinate array has odd length".into()));
    }
    Ok(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

impl From<&ChartAtlas> for AtlasFile {
    fn from(a: &ChartAtlas) -> Self {
        let flat2 = |v: &[Vec2]| v.iter().flat_map(|p| p.iter().copied()).collect::<Vec<f64>>();
        AtlasFile {
            atlas_version: ATLAS_VERSION,
            n: a.n,
            weight_scheme: a.weight_scheme,
            kind: a.kind,
            landmarks: a.landmarks.clone(),
            vertex_count: a.vertex_count,
            charts: a
                .charts
                .iter()
                .map(|c| ChartFile {
                    group: c.group,
                    uv: flat2(&c.embedding.uv),
                    faces: c.embedding.faces.iter().flatten().copied().collect(),
                    face_shift: c.embedding.face_shift.iter().flatten().flatten().copied().collect(),
                    cone_points: c.embedding.cone_points.clone(),
                    cone_uv: flat2(&c.embedding.cone_uv),
                    projection: c.projection.clone(),
                    base_uv: flat2(&c.base_uv),
                    tau: c.tau.clone(),
                    cones: c.cones.clone(),
                })
                .collect(),
        }
    }
}

impl AtlasFile {
    fn into_atlas(self) -> Result<ChartAtlas> {
        if self.atlas_version != ATLAS_VERSION {
            return Err(Error::Config(format!("unsupported atlas_version {}", self.atlas_version)));
        }
        let n = self.n;
        let mut charts = Vec::with_capacity(self.charts.len());
        for c in self.charts {
            if c.faces.len() % 3 != 0 || c.face_shift.len() != 2 * c.faces.len() {
                return Err(Error::Config("atlas face arrays have inconsistent lengths".into()));
            }
            let faces: Vec<[usize; 3]> = c.faces.chunks_exact(3).map(|f| [f[0], f[1], f[2]]).collect();
            let face_shift = c
                .face_shift
                .chunks_exact(6)
                .map(|s| [[s[0], s[1]], [s[2], s[3]], [s[4], s[5]]])
                .collect();
            let embedding = TorusEmbedding {
                uv: pairs(&c.uv)?,
                faces,
                face_shift,
                cone_points: c.cone_points,
                cone_uv: pairs(&c.cone_uv)?,
            };
            if embedding.faces.iter().flatten().any(|&v| v >= embedding.uv.len())
                || c.projection.len() != embedding.uv.len()
                || c.projection.iter().any(|&v| v >= self.vertex_count)
            {
                return Err(Error::Config("atlas chart references missing vertices".into()));
            }
            let plan = SamplingPlan::build(&embedding, &c.projection, n)?;
            charts.push(AtlasChart {
                group: c.group,
                embedding,
                projection: c.projection,
                base_uv: pairs(&c.base_uv)?,
                tau: c.tau,
                cones: c.cones,
                plan,
            });
        }
        let atlas = ChartAtlas {
            n,
            weight_scheme: self.weight_scheme,
            kind: self.kind,
            landmarks: self.landmarks,
            vertex_count: self.vertex_count,
            charts,
            symmetry: grid_symmetry(self.kind, n),
        };
        atlas.check_coverage()?;
        Ok(atlas)
    }
}
