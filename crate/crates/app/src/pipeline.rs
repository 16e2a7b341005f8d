//! Inference on a trained model: generation, inversion, editing and
//! attribute transfer. Everything here reads an immutable [`Model`].

use std::path::Path;

use chartforge_core::chartset::{recover_scale_translation, reconstruct_mesh, Gauge, MultiChartTensor};
use chartforge_core::synth::DEFAULT_LEVEL;
use chartforge_core::torus::ChartAtlas;
use chartforge_core::TriangleMesh;
use chartforge_nn::losses::{encoder_loss, BoundEncoder};
use chartforge_nn::params::write_blob;
use chartforge_nn::train::FrozenGenerator;
use chartforge_nn::{Encoder, GridGeometry, ModelBundle, Tape};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::data::Family;
use crate::error::{Error, Result};

pub const ATLAS_FILE: &str = "atlas.json";

/// Default number of refinement steps after the encoder estimate.
pub const REFINE_STEPS: usize = 50;

pub struct Model {
    pub bundle: ModelBundle,
    pub family: Family,
    pub geometry: GridGeometry,
    /// Hex SHA-256 of the serialized parameters.
    pub hash: String,
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub mesh: TriangleMesh,
    pub r: Vec<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Inversion {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub mesh: TriangleMesh,
    /// Tensor reconstruction loss of the encoder estimate.
    pub residual: f64,
    /// Mean squared vertex distance, in shape coordinates, of the encoder estimate.
    pub shape_residual: f64,
    /// The same distance for the returned latents; never above `shape_residual`.
    pub refined_shape_residual: f64,
}

impl Model {
    pub fn new(bundle: ModelBundle, family: Family) -> Result<Self> {
        if family.atlas.n != bundle.net.n || family.atlas.chart_count() != bundle.net.charts {
            return Err(Error::Nn(chartforge_nn::Error::Config(format!(
                "model expects {} charts at n = {}, atlas has {} at n = {}",
                bundle.net.charts,
                bundle.net.n,
                family.atlas.chart_count(),
                family.atlas.n
            ))));
        }
        let geometry = GridGeometry::from_atlas(&family.atlas)?;
        let mut named = Vec::new();
        for (prefix, set) in [("generator", &bundle.generator.params), ("critic", &bundle.critic.params)]
            .into_iter()
            .chain(bundle.encoder.as_ref().map(|e| ("encoder", &e.params)))
        {
            named.extend(set.params.iter().map(|p| (format!("{prefix}.{}", p.name), p)));
        }
        let mut bytes = Vec::new();
        write_blob(&named, &mut bytes).map_err(Error::Nn)?;
        let hash = hex::encode(Sha256::digest(&bytes));
        Ok(Self { bundle, family, geometry, hash })
    }

    /// Load a checkpoint directory. Its `atlas.json` is used when present;
    /// otherwise the desk atlas is rebuilt for the model's grid size.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let bundle = ModelBundle::load(dir).map_err(|e| Error::ModelNotLoaded(format!("{}: {e}", dir.display())))?;
        let atlas_path = dir.join(ATLAS_FILE);
        let family = if atlas_path.exists() {
            Family::from_atlas(ChartAtlas::load(atlas_path)?, DEFAULT_LEVEL)?
        } else {
            Family::desk(bundle.net.n)?
        };
        Self::new(bundle, family)
    }

    pub fn latent_dim(&self) -> usize {
        self.bundle.net.latent_dim
    }

    pub fn attributes(&self) -> &[String] {
        self.bundle.attribute_names()
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize> {
        self.attributes().iter().position(|a| a == name).ok_or_else(|| Error::UnknownAttribute(name.into()))
    }

    fn encoder(&self) -> Result<&Encoder> {
        self.bundle.encoder.as_ref().ok_or_else(|| Error::ModelNotLoaded("the model has no trained encoder".into()))
    }

    /// Noise vector for a seed.
    pub fn noise(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.latent_dim()).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn check_r(&self, r: &[f64]) -> Result<()> {
        if r.len() != self.attributes().len() {
            return Err(Error::Range(format!("{} attribute values for {} attributes", r.len(), self.attributes().len())));
        }
        if let Some(x) = r.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
            return Err(Error::Range(format!("attribute value {x} is outside [-1, 1]")));
        }
        Ok(())
    }

    /// Normalized generator output for latent rows `[z | r]`.
    pub fn decode(&self, latents: &[f64]) -> Result<Vec<f64>> {
        Ok(self.bundle.generate(latents, &self.geometry)?)
    }

    /// Mesh from one normalized tensor, with chart 0 in normalized units.
    pub fn tensor_to_mesh(&self, tensor: &[f64]) -> Result<TriangleMesh> {
        let t = MultiChartTensor::from_data(self.bundle.net.charts, self.bundle.net.n, tensor.to_vec())?;
        let plain = recover_scale_translation(&t, &self.family.atlas, &Gauge::unit())?;
        Ok(reconstruct_mesh(&plain, &self.family.template, &self.family.atlas)?)
    }

    pub fn mesh_at(&self, r: &[f64], z: &[f64]) -> Result<TriangleMesh> {
        let latent: Vec<f64> = z.iter().chain(r).copied().collect();
        self.tensor_to_mesh(&self.decode(&latent)?)
    }

    pub fn generate(&self, r: &[f64], seed: u64) -> Result<Generated> {
        self.check_r(r)?;
        let mesh = self.mesh_at(r, &self.noise(seed))?;
        Ok(Generated { mesh, r: r.to_vec(), seed })
    }

    /// Normalized tensor of a mesh with template connectivity.
    pub fn encode_mesh(&self, mesh: &TriangleMesh) -> Result<Vec<f64>> {
        let t = &self.family.template;
        if mesh.vertex_count() != t.vertex_count() || mesh.faces() != t.faces() {
            return Err(Error::Connectivity(format!(
                "{} vertices / {} faces, template has {} / {}",
                mesh.vertex_count(),
                mesh.face_count(),
                t.vertex_count(),
                t.face_count()
            )));
        }
        Ok(self.family.encode(mesh)?.0)
    }

    /// Vertices centred and scaled to unit RMS radius, flattened. Generated
    /// meshes decode in normalized units, so inputs are compared in this frame.
    fn shape_coordinates(mesh: &TriangleMesh) -> Vec<f64> {
        let c = mesh.centroid();
        let centred: Vec<f64> = mesh.vertices().iter().flat_map(|p| (0..3).map(move |d| p[d] - c[d])).collect();
        let rms = (centred.iter().map(|v| v * v).sum::<f64>() / mesh.vertex_count() as f64).sqrt();
        centred.into_iter().map(|v| v / rms.max(f64::MIN_POSITIVE)).collect()
    }

    /// Shape coordinates of the meshes decoded from each latent row.
    fn decode_shapes(&self, latents: &[f64]) -> Result<Vec<Vec<f64>>> {
        let tensors = self.decode(latents)?;
        tensors.chunks(self.bundle.net.sample_len()).map(|t| Ok(Self::shape_coordinates(&self.tensor_to_mesh(t)?))).collect()
    }

    fn shape_loss(shape: &[f64], target: &[f64]) -> f64 {
        shape.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / target.len() as f64
    }

    /// Encoder estimate followed by up to `refine_steps` damped Gauss-Newton
    /// steps on the vertex distance between the decoded mesh and the input.
    ///
    /// Refinement works on meshes rather than tensors: a generated tensor's
    /// charts disagree slightly, so decoding and re-encoding it moves it, and
    /// the tensor distance is not minimized at the generating latent. A step
    /// is kept only if it lowers the vertex distance.
    pub fn invert(&self, mesh: &TriangleMesh, refine_steps: usize) -> Result<Inversion> {
        let x = self.encode_mesh(mesh)?;
        let len = x.len();
        let d = self.latent_dim();
        let generator = FrozenGenerator {
            generator: &self.bundle.generator,
            geometry: &self.geometry,
            landmark_consistency: self.bundle.landmark_consistency(),
        };
        let mut tape = Tape::new();
        let enc = BoundEncoder::bind(self.encoder()?, &mut tape, false);
        let loss = encoder_loss(&mut tape, &enc, &generator, &x, len)?;
        let residual = tape.scalar(loss);
        let mut latent = self.encoder()?.encode(&x)?;
        let width = latent.len();

        let target = Self::shape_coordinates(mesh);
        let mut shape = self.decode_shapes(&latent)?.pop().expect("one row");
        let mut current = Self::shape_loss(&shape, &target);
        let initial = current;
        let mut damping = 1e-3;
        let h = 1e-5;
        for _ in 0..refine_steps {
            let mut rows = Vec::with_capacity(width * width);
            for k in 0..width {
                let mut row = latent.clone();
                row[k] += h;
                rows.extend(row);
            }
            let probes = self.decode_shapes(&rows)?;
            let m = target.len();
            let jac = DMatrix::from_fn(m, width, |i, k| (probes[k][i] - shape[i]) / h);
            let err = DVector::from_iterator(m, shape.iter().zip(&target).map(|(a, b)| a - b));
            let jtj = jac.transpose() * &jac;
            let jte = jac.transpose() * err;
            let mut improved = false;
            while damping < 1e8 {
                let mut system = jtj.clone();
                for k in 0..width {
                    system[(k, k)] += damping * (jtj[(k, k)] + 1e-9);
                }
                let Some(step) = system.cholesky().map(|c| c.solve(&jte)) else {
                    damping *= 4.0;
                    continue;
                };
                let candidate: Vec<f64> = latent
                    .iter()
                    .zip(step.iter())
                    .enumerate()
                    .map(|(i, (v, s))| if i >= d { (v - s).clamp(-1.0, 1.0) } else { v - s })
                    .collect();
                let cand_shape = self.decode_shapes(&candidate)?.pop().expect("one row");
                let value = Self::shape_loss(&cand_shape, &target);
                if value < current {
                    latent = candidate;
                    shape = cand_shape;
                    current = value;
                    damping = (damping / 3.0).max(1e-9);
                    improved = true;
                    break;
                }
                damping *= 4.0;
            }
            if !improved {
                break;
            }
        }
        debug_assert!(current <= initial);
        let (z, r) = latent.split_at(d);
        let mesh = self.mesh_at(r, z)?;
        Ok(Inversion { r: r.to_vec(), z: z.to_vec(), mesh, residual, shape_residual: initial, refined_shape_residual: current })
    }

    /// Frames along `r_j` from the inverted value to `value`, endpoints included.
    pub fn edit(&self, mesh: &TriangleMesh, attribute: usize, value: f64, steps: usize, refine_steps: usize) -> Result<Vec<TriangleMesh>> {
        if attribute >= self.attributes().len() {
            return Err(Error::Range(format!("attribute index {attribute} for {} attributes", self.attributes().len())));
        }
        if !(-1.0..=1.0).contains(&value) {
            return Err(Error::Range(format!("attribute value {value} is outside [-1, 1]")));
        }
        if steps == 0 {
            return Err(Error::Range("an edit needs at least one frame".into()));
        }
        let inv = self.invert(mesh, refine_steps)?;
        let start = inv.r[attribute];
        (0..steps)
            .map(|t| {
                let f = if steps == 1 { 1.0 } else { t as f64 / (steps - 1) as f64 };
                let mut r = inv.r.clone();
                r[attribute] = if t + 1 == steps { value } else { start + f * (value - start) };
                if t == 0 && steps > 1 {
                    return Ok(inv.mesh.clone());
                }
                self.mesh_at(&r, &inv.z)
            })
            .collect()
    }

    /// Give `target` the reference's strength of one attribute.
    pub fn transfer(&self, reference: &TriangleMesh, target: &TriangleMesh, attribute: usize, refine_steps: usize) -> Result<TriangleMesh> {
        if attribute >= self.attributes().len() {
            return Err(Error::Range(format!("attribute index {attribute} for {} attributes", self.attributes().len())));
        }
        let value = self.invert(reference, refine_steps)?.r[attribute];
        let mut frames = self.edit(target, attribute, value, 2, refine_steps)?;
        Ok(frames.pop().expect("two frames"))
    }
}
