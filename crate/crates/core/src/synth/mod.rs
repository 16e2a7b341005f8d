//! A procedural genus-zero shape family with known attribute strengths.
//!
//! Every shape is a deformed icosphere, so all shapes share the template's
//! connectivity. Three attributes act radially or axially:
//!
//! * `bulge` inflates the equator,
//! * `elongation` stretches along the polar axis,
//! * `tilt` raises a lobe at 55 degrees from the north pole on the `+x` side.
//!
//! Geometric probes measure each attribute from the mesh alone and are
//! invariant to translation and uniform scale, so they also apply to meshes
//! decoded in normalized units.

mod pairs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::mesh::{fixtures, LandmarkStructure, SurfaceType, TriangleMesh};

pub use pairs::{make_pairs, sample_dataset, ManifestEntry, PairRecord, SamplingSpec};

/// Default template subdivision level (642 vertices).
pub const DEFAULT_LEVEL: u32 = 3;

const BULGE_GAIN: f64 = 0.5;
const ELONGATION_GAIN: f64 = 0.8;
const TILT_GAIN: f64 = 0.4;
const NUISANCE_GAIN: f64 = 0.02;
/// Angular radius of the lobe's compact support.
const LOBE_RADIUS: f64 = 0.6;
const LOBE_POLAR_DEG: f64 = 55.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Bulge,
    Elongation,
    Tilt,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Bulge, Attribute::Elongation, Attribute::Tilt];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Bulge => "bulge",
            Attribute::Elongation => "elongation",
            Attribute::Tilt => "tilt",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown attribute {name:?}")))
    }

    pub fn value(self, p: &ShapeParams) -> f64 {
        match self {
            Attribute::Bulge => p.bulge,
            Attribute::Elongation => p.elongation,
            Attribute::Tilt => p.tilt,
        }
    }

    pub fn probe(self, p: &Probes) -> f64 {
        match self {
            Attribute::Bulge => p.bulge,
            Attribute::Elongation => p.elongation,
            Attribute::Tilt => p.tilt,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub base_radius: f64,
    pub bulge: f64,
    pub elongation: f64,
    pub tilt: f64,
    /// Seed of the small smooth perturbation; `None` disables it.
    pub nuisance_seed: Option<u64>,
}

impl Default for ShapeParams {
    fn default() -> Self {
        Self { base_radius: 1.0, bulge: 0.0, elongation: 0.0, tilt: 0.0, nuisance_seed: None }
    }
}

impl ShapeParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(self.base_radius > 0.0) || !unit(self.bulge) || !unit(self.elongation) || !unit(self.tilt) {
            return Err(Error::Config(format!("shape parameters out of range: {self:?}")));
        }
        Ok(())
    }

    pub fn with(mut self, attribute: Attribute, value: f64) -> Self {
        match attribute {
            Attribute::Bulge => self.bulge = value,
            Attribute::Elongation => self.elongation = value,
            Attribute::Tilt => self.tilt = value,
        }
        self
    }
}

fn lobe_direction() -> Vec3 {
    let a = LOBE_POLAR_DEG.to_radians();
    [a.sin(), 0.0, a.cos()]
}

fn mirror_direction() -> Vec3 {
    let d = lobe_direction();
    [-d[0], d[1], d[2]]
}

fn angle(a: Vec3, b: Vec3) -> f64 {
    geom::dot(a, b).clamp(-1.0, 1.0).acos()
}

/// Compactly supported bump around the lobe direction, 1 at its center.
fn lobe_weight(p: Vec3) -> f64 {
    let t = angle(p, lobe_direction()) / LOBE_RADIUS;
    if t >= 1.0 {
        0.0
    } else {
        (1.0 - t * t).powi(2)
    }
}

/// Smooth field with values in `[-1, 1]`: a few random plane waves.
fn nuisance_field(seed: u64) -> impl Fn(Vec3) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(Vec3, f64, f64)> = (0..4)
        .map(|_| {
            let dir = geom::normalize([
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]);
            (dir, rng.random_range(-1.0..1.0), rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let total: f64 = waves.iter().map(|w| w.1.abs()).sum::<f64>().max(1e-12);
    move |p| waves.iter().map(|(d, a, ph)| a * (3.0 * geom::dot(*d, p) + ph).sin()).sum::<f64>() / total
}

/// Deform the unit icosphere of the given subdivision level.
pub fn make_shape(params: &ShapeParams, level: u32) -> TriangleMesh {
    let template = fixtures::icosphere(level);
    deform(&template, params)
}

/// Deform a unit-sphere template vertex by vertex; connectivity is untouched.
pub fn deform(template: &TriangleMesh, params: &ShapeParams) -> TriangleMesh {
    let nuisance = params.nuisance_seed.map(nuisance_field);
    let vertices = template
        .vertices()
        .iter()
        .map(|&p| {
            let z = p[2];
            let mut r = params.base_radius;
            if let Some(f) = &nuisance {
                r *= 1.0 + NUISANCE_GAIN * f(p);
            }
            r *= 1.0 + BULGE_GAIN * params.bulge * (1.0 - z * z).powi(3);
            r *= 1.0 + TILT_GAIN * params.tilt * lobe_weight(p);
            let q = geom::scale(p, r);
            [q[0], q[1], q[2] * (1.0 + ELONGATION_GAIN * params.elongation)]
        })
        .collect();
    template.with_vertices(vertices).expect("deformation keeps connectivity")
}

/// Part labels of the template: north cap, south cap, body, lobe.
pub const PART_COUNT: usize = 4;

pub fn part_labels(template: &TriangleMesh) -> Vec<u8> {
    template
        .vertices()
        .iter()
        .map(|&p| {
            if lobe_weight(p) > 0.0 {
                3
            } else if p[2] > 0.7 {
                0
            } else if p[2] < -0.7 {
                1
            } else {
                2
            }
        })
        .collect()
}

/// Template vertex sets the probes average over.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeBands {
    pub north: usize,
    pub south: usize,
    pub equator: Vec<usize>,
    pub caps: Vec<usize>,
    pub lobe: Vec<usize>,
    pub mirror: Vec<usize>,
}

impl ProbeBands {
    pub fn new(template: &TriangleMesh) -> Self {
        let v = template.vertices();
        let select = |f: &dyn Fn(Vec3) -> bool| (0..v.len()).filter(|&i| f(v[i])).collect::<Vec<_>>();
        Self {
            north: fixtures::nearest_vertex(template, [0.0, 0.0, 1.0]),
            south: fixtures::nearest_vertex(template, [0.0, 0.0, -1.0]),
            equator: select(&|p| p[2].abs() < 0.15 && lobe_weight(p) == 0.0),
            caps: select(&|p| p[2].abs() > 0.85 && lobe_weight(p) == 0.0),
            lobe: select(&|p| angle(p, lobe_direction()) < 0.3),
            mirror: select(&|p| angle(p, mirror_direction()) < 0.3),
        }
    }

    pub fn for_level(level: u32) -> Self {
        Self::new(&fixtures::icosphere(level))
    }
}

/// Geometric measurements of attribute strength.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probes {
    /// Equatorial over polar-cap distance from the polar axis.
    pub bulge: f64,
    /// Pole-to-pole length over polar-cap distance from the axis.
    pub elongation: f64,
    /// Lobe over mirrored-lobe distance from the axis.
    pub tilt: f64,
}

/// Measure a mesh with template connectivity. The polar axis is the line
/// through the two pole vertices.
pub fn probes(mesh: &TriangleMesh, bands: &ProbeBands) -> Probes {
    let v = mesh.vertices();
    let (n, s) = (v[bands.north], v[bands.south]);
    let axis = geom::normalize(geom::sub(n, s));
    let dist = |p: Vec3| {
        let d = geom::sub(p, s);
        geom::norm(geom::sub(d, geom::scale(axis, geom::dot(d, axis))))
    };
    let mean = |set: &[usize]| set.iter().map(|&i| dist(v[i])).sum::<f64>() / set.len() as f64;
    let caps = mean(&bands.caps);
    Probes {
        bulge: mean(&bands.equator) / caps,
        elongation: geom::distance(n, s) / caps,
        tilt: mean(&bands.lobe) / mean(&bands.mirror),
    }
}

/// Longest cross-section perimeter over horizontal slices.
pub fn girth(mesh: &TriangleMesh) -> f64 {
    let (lo, hi) = mesh.bounding_box();
    let v = mesh.vertices();
    let slices = 33;
    (1..slices)
        .map(|k| {
            let z = lo[2] + (hi[2] - lo[2]) * k as f64 / slices as f64;
            mesh.faces()
                .iter()
                .filter_map(|f| {
                    let mut pts = Vec::with_capacity(2);
                    for e in 0..3 {
                        let (a, b) = (v[f[e]], v[f[(e + 1) % 3]]);
                        if (a[2] < z) != (b[2] < z) {
                            let t = (z - a[2]) / (b[2] - a[2]);
                            pts.push(geom::add(a, geom::scale(geom::sub(b, a), t)));
                        }
                    }
                    (pts.len() == 2).then(|| geom::distance(pts[0], pts[1]))
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Six axis landmarks and four triplets chaining around the `+z` pole, with
/// the last triplet closing through `-z`.
pub fn desk_landmarks(template: &TriangleMesh) -> LandmarkStructure {
    let axes: [Vec3; 6] = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, -1.0],
    ];
    LandmarkStructure {
        surface_type: SurfaceType::SphereLike,
        landmarks: axes.iter().map(|&a| fixtures::nearest_vertex(template, a)).collect(),
        groups: vec![vec![0, 1, 2], vec![1, 3, 2], vec![3, 4, 2], vec![4, 0, 5]],
    }
}
