//! Synthetic dataset assembly: shapes, their normalized multi-chart tensors
//! and comparison pairs.

use chartforge_core::chartset::{encode_mesh, NormalizationMeta};
use chartforge_core::mesh::fixtures;
use chartforge_core::synth::{
    deform, desk_landmarks, make_pairs, probes, sample_dataset, Attribute, ProbeBands, Probes, SamplingSpec,
    ShapeParams, DEFAULT_LEVEL,
};
use chartforge_core::torus::{ChartAtlas, WeightScheme};
use chartforge_core::TriangleMesh;
use chartforge_nn::TrainData;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Template, atlas and probe bands shared by every shape of the family.
#[derive(Clone, Debug)]
pub struct Family {
    pub template: TriangleMesh,
    pub atlas: ChartAtlas,
    pub bands: ProbeBands,
}

impl Family {
    pub fn new(n: usize, level: u32, scheme: WeightScheme) -> Result<Self> {
        let template = fixtures::icosphere(level);
        let atlas = ChartAtlas::build(&template, &desk_landmarks(&template), n, scheme)?;
        let bands = ProbeBands::new(&template);
        Ok(Self { template, atlas, bands })
    }

    /// Family for a stored atlas built on the icosphere of `level`.
    pub fn from_atlas(atlas: ChartAtlas, level: u32) -> Result<Self> {
        let template = fixtures::icosphere(level);
        if atlas.vertex_count != template.vertex_count() {
            return Err(chartforge_core::Error::Shape(format!(
                "atlas was built for {} vertices, the level-{level} template has {}",
                atlas.vertex_count,
                template.vertex_count()
            ))
            .into());
        }
        let bands = ProbeBands::new(&template);
        Ok(Self { template, atlas, bands })
    }

    /// Four-chart family on the default template with uniform weights.
    pub fn desk(n: usize) -> Result<Self> {
        Self::new(n, DEFAULT_LEVEL, WeightScheme::Uniform)
    }

    pub fn shape(&self, params: &ShapeParams) -> TriangleMesh {
        deform(&self.template, params)
    }

    pub fn probes(&self, mesh: &TriangleMesh) -> Probes {
        probes(mesh, &self.bands)
    }

    /// Encode and normalize a mesh with template connectivity.
    pub fn encode(&self, mesh: &TriangleMesh) -> Result<(Vec<f64>, NormalizationMeta)> {
        let (tensor, meta) = encode_mesh(&self.atlas, mesh.vertices())?.normalize()?;
        Ok((tensor.data, meta))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct DataConfig {
    pub count: usize,
    pub pair_count: usize,
    /// Pairs contrast the top and bottom `margin` of each attribute's range.
    pub margin: f64,
    pub seed: u64,
    pub sampling: SamplingSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { count: 512, pair_count: 512, margin: 1.0 / 3.0, seed: 0, sampling: SamplingSpec::default() }
    }
}

pub struct Dataset {
    pub params: Vec<ShapeParams>,
    pub metas: Vec<NormalizationMeta>,
    pub data: TrainData,
}

pub fn build_dataset(family: &Family, attributes: &[Attribute], config: &DataConfig) -> Result<Dataset> {
    let params = sample_dataset(config.count, config.seed, &config.sampling);
    let pairs = make_pairs(&params, attributes, &config.sampling, config.pair_count, config.margin, config.seed ^ 0x5eed)?;
    let mut samples = Vec::new();
    let mut metas = Vec::with_capacity(params.len());
    for p in &params {
        let (x, meta) = family.encode(&family.shape(p))?;
        samples.extend(x);
        metas.push(meta);
    }
    let data = TrainData { n: family.atlas.n, charts: family.atlas.chart_count(), samples, pairs };
    Ok(Dataset { params, metas, data })
}
