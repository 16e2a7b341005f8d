//! Multi-chart tensors: assembly from charts, per-chart normalization,
//! scale/translation recovery from shared landmarks, template-fitting
//! reconstruction, and the `.mct` codec.

mod codec;
mod recover;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::TriangleMesh;
use crate::torus::{chart_value_at, Chart, ChartAtlas};

pub use codec::{decode_mct, encode_mct, read_mct, write_mct, HEADER_BYTES, MAGIC};
pub use recover::{landmark_values, recover_scale_translation, solve_scale_translation, Gauge, StSolution};

/// Channels per chart: the three surface coordinates.
pub const CHANNELS: usize = 3;

/// Per-chart statistics removed by [`MultiChartTensor::normalize`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartNorm {
    pub mean: [f64; 3],
    pub scale: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMeta {
    pub charts: Vec<ChartNorm>,
}

/// `3 * chart_count` channels of `n x n` values, chart-major.
///
/// `meta` is present exactly when the data are normalized, and then records
/// how to map each chart back to model units.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChartTensor {
    pub chart_count: usize,
    pub n: usize,
    pub data: Vec<f64>,
    pub meta: Option<NormalizationMeta>,
}

impl MultiChartTensor {
    pub fn zeros(chart_count: usize, n: usize) -> Self {
        Self { chart_count, n, data: vec![0.0; chart_count * CHANNELS * n * n], meta: None }
    }

    pub fn from_data(chart_count: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != chart_count * CHANNELS * n * n {
            return Err(Error::Shape(format!(
                "{} values do not fill {chart_count} charts of {n}x{n}",
                data.len()
            )));
        }
        Ok(Self { chart_count, n, data, meta: None })
    }

    pub fn is_normalized(&self) -> bool {
        self.meta.is_some()
    }

    pub fn chart_len(&self) -> usize {
        CHANNELS * self.n * self.n
    }

    pub fn chart_slice(&self, k: usize) -> &[f64] {
        &self.data[k * self.chart_len()..(k + 1) * self.chart_len()]
    }

    pub fn chart_slice_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.chart_len();
        &mut self.data[k * len..(k + 1) * len]
    }

    pub fn chart(&self, k: usize) -> Chart {
        Chart { channels: CHANNELS, n: self.n, data: self.chart_slice(k).to_vec() }
    }

    /// Index of channel `c` of chart `k` at node `(i, j)`.
    #[inline]
    pub fn index(&self, k: usize, c: usize, i: usize, j: usize) -> usize {
        ((k * CHANNELS + c) * self.n + i) * self.n + j
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Subtract each chart's per-channel mean and divide by its joint RMS.
    pub fn normalize(&self) -> Result<(MultiChartTensor, NormalizationMeta)> {
        let nn = self.n * self.n;
        let mut out = self.clone();
        let mut meta = NormalizationMeta::default();
        for k in 0..self.chart_count {
            let chart = out.chart_slice_mut(k);
            let mut mean = [0.0; 3];
            for (c, m) in mean.iter_mut().enumerate() {
                *m = chart[c * nn..(c + 1) * nn].iter().sum::<f64>() / nn as f64;
            }
            let mut sq = 0.0;
            for c in 0..CHANNELS {
                for x in &mut chart[c * nn..(c + 1) * nn] {
                    *x -= mean[c];
                    sq += *x * *x;
                }
            }
            let rms = (sq / (CHANNELS * nn) as f64).sqrt();
            if !(rms >= 1e-12) {
                return Err(Error::DegenerateChart(k));
            }
            for x in chart.iter_mut() {
                *x /= rms;
            }
            meta.charts.push(ChartNorm { mean, scale: rms });
        }
        out.meta = Some(meta.clone());
        Ok((out, meta))
    }

    /// Map every chart back through `x * scale + mean`.
    pub fn denormalize(&self, meta: &NormalizationMeta) -> Result<MultiChartTensor> {
        if meta.charts.len() != self.chart_count {
            return Err(Error::Shape(format!(
                "{} normalization records for {} charts",
                meta.charts.len(),
                self.chart_count
            )));
        }
        let nn = self.n * self.n;
        let mut out = self.clone();
        for (k, norm) in meta.charts.iter().enumerate() {
            let chart = out.chart_slice_mut(k);
            for c in 0..CHANNELS {
                for x in &mut chart[c * nn..(c + 1) * nn] {
                    *x = *x * norm.scale + norm.mean[c];
                }
            }
        }
        out.meta = None;
        Ok(out)
    }
}

/// Concatenate 3-channel charts in landmark-group order.
pub fn assemble(charts: &[Chart]) -> Result<MultiChartTensor> {
    let first = charts.first().ok_or_else(|| Error::Shape("no charts to assemble".into()))?;
    let n = first.n;
    let mut data = Vec::with_capacity(charts.len() * CHANNELS * n * n);
    for (k, c) in charts.iter().enumerate() {
        if c.n != n || c.channels != CHANNELS || c.data.len() != CHANNELS * n * n {
            return Err(Error::Shape(format!(
                "chart {k} is {}x{n}x{n}-incompatible ({} channels, n = {})",
                CHANNELS, c.channels, c.n
            )));
        }
        data.extend_from_slice(&c.data);
    }
    MultiChartTensor::from_data(charts.len(), n, data)
}

/// Push a mesh with template connectivity into every chart of the atlas and
/// write each landmark's exact position onto its grid orbit.
pub fn encode_mesh(atlas: &ChartAtlas, vertices: &[Vec3]) -> Result<MultiChartTensor> {
    let mut tensor = assemble(&atlas.push_positions(vertices)?)?;
    stamp_landmarks(&mut tensor, atlas, |k, slot| {
        vertices[atlas.charts[k].cones[slot].vertex]
    });
    Ok(tensor)
}

/// Overwrite every landmark orbit of every chart with `value(chart, slot)`.
pub fn stamp_landmarks(tensor: &mut MultiChartTensor, atlas: &ChartAtlas, value: impl Fn(usize, usize) -> Vec3) {
    for (k, chart) in atlas.charts.iter().enumerate() {
        for cone in &chart.cones {
            let v = value(k, cone.slot);
            for &[i, j] in &cone.orbit {
                for (c, &x) in v.iter().enumerate() {
                    let idx = tensor.index(k, c, i, j);
                    tensor.data[idx] = x;
                }
            }
        }
    }
}

/// Template fitting: every vertex is the tau-weighted blend of its bilinear
/// lookups in all charts.
pub fn reconstruct_mesh(tensor: &MultiChartTensor, template: &TriangleMesh, atlas: &ChartAtlas) -> Result<TriangleMesh> {
    template.with_vertices(reconstruct_positions(tensor, atlas)?)
}

pub fn reconstruct_positions(tensor: &MultiChartTensor, atlas: &ChartAtlas) -> Result<Vec<Vec3>> {
    if tensor.chart_count != atlas.chart_count() || tensor.n != atlas.n {
        return Err(Error::Shape(format!(
            "tensor has {} charts at n = {}, atlas has {} at n = {}",
            tensor.chart_count,
            tensor.n,
            atlas.chart_count(),
            atlas.n
        )));
    }
    let charts: Vec<Chart> = (0..tensor.chart_count).map(|k| tensor.chart(k)).collect();
    let mut out = Vec::with_capacity(atlas.vertex_count);
    for v in 0..atlas.vertex_count {
        let mut acc = [0.0; 3];
        let mut total = 0.0;
        for (chart, entry) in charts.iter().zip(&atlas.charts) {
            let w = entry.tau[v];
            if w == 0.0 {
                continue;
            }
            let x = chart_value_at(chart, entry.base_uv[v]);
            for c in 0..3 {
                acc[c] += w * x[c];
            }
            total += w;
        }
        if !(total > 0.0) {
            return Err(Error::Coverage(format!("vertex {v} has zero total tau weight")));
        }
        out.push(acc.map(|a| a / total));
    }
    Ok(out)
}
