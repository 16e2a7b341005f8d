use crate::error::{Error, Result};
use crate::geom;

use super::{Chart, TorusEmbedding};

/// Precomputed point location for every grid node: the base vertices of the
/// containing triangle and the node's barycentric weights in it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SamplingPlan {
    pub n: usize,
    pub nodes: Vec<([usize; 3], [f64; 3])>,
}

impl SamplingPlan {
    /// Locate every node `((i + 1/2) / n, (j + 1/2) / n)` in the embedding
    /// tiled 3x3 around the fundamental domain.
    pub fn build(embedding: &TorusEmbedding, projection: &[usize], n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::Config(format!("grid resolution {n} is below 4")));
        }
        let nf = n as f64;
        let mut best: Vec<Option<(f64, [usize; 3], [f64; 3])>> = vec![None; n * n];
        for f in 0..embedding.faces.len() {
            let corners = embedding.unwrapped_face(f);
            let (lo, hi) = bounds(&corners);
            if hi[0] - lo[0] >= 1.0 || hi[1] - lo[1] >= 1.0 {
                return Err(Error::Coverage(format!("face {f} spans a full period")));
            }
            let base = embedding.faces[f].map(|v| projection[v]);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    let tri = corners.map(|p| [p[0] + dx as f64, p[1] + dy as f64]);
                    let i_lo = ((lo[0] + dx as f64) * nf - 0.5).ceil().max(0.0) as usize;
                    let i_hi = ((hi[0] + dx as f64) * nf - 0.5).floor().min(nf - 1.0);
                    let j_lo = ((lo[1] + dy as f64) * nf - 0.5).ceil().max(0.0) as usize;
                    let j_hi = ((hi[1] + dy as f64) * nf - 0.5).floor().min(nf - 1.0);
                    if i_hi < 0.0 || j_hi < 0.0 {
                        continue;
                    }
                    for i in i_lo..=i_hi as usize {
                        for j in j_lo..=j_hi as usize {
                            let p = super::node_uv(n, i, j);
                            let w = geom::barycentric_2d(p, tri[0], tri[1], tri[2]);
                            let score = w[0].min(w[1]).min(w[2]);
                            if score < -1e-12 {
                                continue;
                            }
                            let slot = &mut best[i * n + j];
                            if slot.as_ref().is_none_or(|s| score > s.0) {
                                *slot = Some((score, base, w));
                            }
                        }
                    }
                }
            }
        }
        let mut nodes = Vec::with_capacity(n * n);
        for (k, b) in best.into_iter().enumerate() {
            let (_, verts, w) = b.ok_or_else(|| {
                Error::Coverage(format!("grid node ({}, {}) lies in no triangle", k / n, k % n))
            })?;
            nodes.push((verts, w));
        }
        Ok(Self { n, nodes })
    }

    /// Sample a per-vertex function with `channels` values per vertex, stored
    /// vertex-major.
    pub fn push(&self, values: &[f64], channels: usize) -> Chart {
        let mut chart = Chart::zeros(channels, self.n);
        let nn = self.n * self.n;
        for (k, (verts, w)) in self.nodes.iter().enumerate() {
            for c in 0..channels {
                // Anchored at one corner so constant functions push exactly.
                let v0 = values[verts[0] * channels + c];
                chart.data[c * nn + k] = v0
                    + w[1] * (values[verts[1] * channels + c] - v0)
                    + w[2] * (values[verts[2] * channels + c] - v0);
            }
        }
        chart
    }
}

fn bounds(p: &[[f64; 2]; 3]) -> ([f64; 2], [f64; 2]) {
    let mut lo = p[0];
    let mut hi = p[0];
    for q in &p[1..] {
        for d in 0..2 {
            lo[d] = lo[d].min(q[d]);
            hi[d] = hi[d].max(q[d]);
        }
    }
    (lo, hi)
}

/// Transfer a function on the base surface to an `n x n` chart through the
/// embedding: node values are barycentric blends over the containing triangle.
pub fn push_function(
    values: &[f64],
    channels: usize,
    embedding: &TorusEmbedding,
    projection: &[usize],
    n: usize,
) -> Result<Chart> {
    Ok(SamplingPlan::build(embedding, projection, n)?.push(values, channels))
}
